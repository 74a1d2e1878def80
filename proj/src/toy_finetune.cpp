#include "grovle/toy_finetune.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace grovle {

namespace {

constexpr double kKinkClearance = 1e-3;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

void check_phrase(std::span<const std::size_t> phrase, const Matrix& embeddings) {
    if (phrase.empty()) throw EmptyPhraseError();
    for (const std::size_t w : phrase) {
        if (w >= embeddings.rows()) throw DataError("phrase token index " + std::to_string(w) + " out of range");
    }
}

void check_params_fit(const Matrix& embeddings, const TaskModelParams& params) {
    if (embeddings.cols() != params.embed_dim()) {
        throw DataError("model expects " + std::to_string(params.embed_dim()) + "-d embeddings, table has " +
                        std::to_string(embeddings.cols()));
    }
}

// Intermediate values of one text-branch forward pass.
struct TextCache {
    std::vector<double> context;  // phrase mean
    std::vector<double> scores;   // attention only
    std::vector<double> pooled;
    std::vector<double> pre_relu;
    std::vector<double> hidden;
    std::vector<double> output;
};

void pool_average(std::span<const std::size_t> phrase, const Matrix& e, std::vector<double>& out) {
    out.assign(e.cols(), 0.0);
    for (const std::size_t w : phrase) {
        const auto row = e.row(w);
        for (std::size_t d = 0; d < out.size(); ++d) out[d] += row[d];
    }
    const double inv = 1.0 / static_cast<double>(phrase.size());
    for (double& v : out) v *= inv;
}

void forward_text(std::span<const std::size_t> phrase, const Matrix& e, const TaskModelParams& p, TextCache& c) {
    check_phrase(phrase, e);
    check_params_fit(e, p);
    const std::size_t dim = e.cols();
    pool_average(phrase, e, c.context);

    if (p.kind == ModelKind::average) {
        c.pooled = c.context;
        c.scores.clear();
    } else {
        const std::span<const double> word_w(p.attn_w.data(), dim);
        const std::span<const double> ctx_w(p.attn_w.data() + dim, dim);
        const double ctx_term = dot(ctx_w, c.context) + p.attn_b;
        c.scores.resize(phrase.size());
        for (std::size_t i = 0; i < phrase.size(); ++i) c.scores[i] = dot(word_w, e.row(phrase[i])) + ctx_term;
        const double peak = *std::max_element(c.scores.begin(), c.scores.end());
        double z = 0.0;
        for (double& s : c.scores) z += (s = std::exp(s - peak));
        for (double& s : c.scores) s /= z;
        c.pooled.assign(dim, 0.0);
        for (std::size_t i = 0; i < phrase.size(); ++i) {
            const auto row = e.row(phrase[i]);
            for (std::size_t d = 0; d < dim; ++d) c.pooled[d] += c.scores[i] * row[d];
        }
    }

    const std::size_t hid = p.hidden_dim();
    c.pre_relu = p.fc1_b;
    for (std::size_t d = 0; d < dim; ++d) {
        const auto w = p.fc1_w.row(d);
        for (std::size_t k = 0; k < hid; ++k) c.pre_relu[k] += c.pooled[d] * w[k];
    }
    c.hidden.resize(hid);
    for (std::size_t k = 0; k < hid; ++k) c.hidden[k] = std::max(0.0, c.pre_relu[k]);

    c.output = p.fc2_b;
    for (std::size_t k = 0; k < hid; ++k) {
        const auto w = p.fc2_w.row(k);
        for (std::size_t j = 0; j < c.output.size(); ++j) c.output[j] += c.hidden[k] * w[j];
    }
}

// Accumulates d(loss)/d(embeddings) and d(loss)/d(params) given d(loss)/d(output).
void backward_text(std::span<const std::size_t> phrase, const Matrix& e, const TaskModelParams& p,
                   const TextCache& c, std::span<const double> d_out, Matrix& d_emb, TaskModelParams& d_p) {
    const std::size_t dim = e.cols();
    const std::size_t hid = p.hidden_dim();

    std::vector<double> d_hidden(hid, 0.0);
    for (std::size_t k = 0; k < hid; ++k) {
        const auto w = p.fc2_w.row(k);
        auto gw = d_p.fc2_w.row(k);
        for (std::size_t j = 0; j < d_out.size(); ++j) {
            gw[j] += c.hidden[k] * d_out[j];
            d_hidden[k] += w[j] * d_out[j];
        }
    }
    for (std::size_t j = 0; j < d_out.size(); ++j) d_p.fc2_b[j] += d_out[j];

    std::vector<double> d_pre(hid);
    for (std::size_t k = 0; k < hid; ++k) d_pre[k] = c.pre_relu[k] > 0.0 ? d_hidden[k] : 0.0;
    for (std::size_t k = 0; k < hid; ++k) d_p.fc1_b[k] += d_pre[k];
    std::vector<double> d_pooled(dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) {
        const auto w = p.fc1_w.row(d);
        auto gw = d_p.fc1_w.row(d);
        for (std::size_t k = 0; k < hid; ++k) {
            gw[k] += c.pooled[d] * d_pre[k];
            d_pooled[d] += w[k] * d_pre[k];
        }
    }

    const double inv_n = 1.0 / static_cast<double>(phrase.size());
    if (p.kind == ModelKind::average) {
        for (const std::size_t w : phrase) {
            auto g = d_emb.row(w);
            for (std::size_t d = 0; d < dim; ++d) g[d] += d_pooled[d] * inv_n;
        }
        return;
    }

    // Softmax backward: d logit_i = s_i (d s_i - sum_j s_j d s_j).
    const std::size_t n = phrase.size();
    std::vector<double> d_logit(n);
    double mean_ds = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d_logit[i] = dot(d_pooled, e.row(phrase[i]));
        mean_ds += c.scores[i] * d_logit[i];
    }
    double sum_dl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d_logit[i] = c.scores[i] * (d_logit[i] - mean_ds);
        sum_dl += d_logit[i];
    }

    const std::span<const double> word_w(p.attn_w.data(), dim);
    const std::span<const double> ctx_w(p.attn_w.data() + dim, dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = e.row(phrase[i]);
        for (std::size_t d = 0; d < dim; ++d) d_p.attn_w[d] += d_logit[i] * row[d];
    }
    for (std::size_t d = 0; d < dim; ++d) d_p.attn_w[dim + d] += sum_dl * c.context[d];
    d_p.attn_b += sum_dl;

    for (std::size_t i = 0; i < n; ++i) {
        auto g = d_emb.row(phrase[i]);
        for (std::size_t d = 0; d < dim; ++d) {
            g[d] += c.scores[i] * d_pooled[d] + d_logit[i] * word_w[d] + sum_dl * ctx_w[d] * inv_n;
        }
    }
}

void backward_target(std::span<const double> features, std::span<const double> d_out, TaskModelParams& d_p) {
    for (std::size_t i = 0; i < features.size(); ++i) {
        auto gw = d_p.visual_w.row(i);
        for (std::size_t j = 0; j < d_out.size(); ++j) gw[j] += features[i] * d_out[j];
    }
    for (std::size_t j = 0; j < d_out.size(); ++j) d_p.visual_b[j] += d_out[j];
}

struct TripletGrad {
    double loss = 0.0;
    double hinge = 0.0;  // margin + d_pos - d_neg, before clamping
    double d_pos = 0.0;
    double d_neg = 0.0;
    std::vector<double> anchor, positive, negative;
};

TripletGrad triplet_with_grad(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                              double margin) {
    TripletGrad g;
    g.d_pos = std::sqrt(squared_distance(a, p));
    g.d_neg = std::sqrt(squared_distance(a, n));
    g.hinge = margin + g.d_pos - g.d_neg;
    g.anchor.assign(a.size(), 0.0);
    g.positive.assign(a.size(), 0.0);
    g.negative.assign(a.size(), 0.0);
    if (g.hinge <= 0.0) return g;
    g.loss = g.hinge;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double up = g.d_pos > 0.0 ? (a[j] - p[j]) / g.d_pos : 0.0;
        const double un = g.d_neg > 0.0 ? (a[j] - n[j]) / g.d_neg : 0.0;
        g.anchor[j] = up - un;
        g.positive[j] = -up;
        g.negative[j] = un;
    }
    return g;
}

void axpy_params(TaskModelParams& dst, TaskModelParams& src, double scale) {
    std::vector<double*> targets;
    dst.for_each_value([&](double& v) { targets.push_back(&v); });
    std::size_t i = 0;
    src.for_each_value([&](double& v) { *targets[i++] += scale * v; });
}

std::vector<double> collect_values(TaskModelParams& p) {
    std::vector<double> out;
    p.for_each_value([&](double v) { out.push_back(v); });
    return out;
}

void write_block(std::ostream& out, const std::string& name, std::size_t rows, std::size_t cols,
                 std::span<const double> values) {
    char buf[32];
    out << name << ' ' << rows << ' ' << cols << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
        out << name << ':' << r;
        for (std::size_t c = 0; c < cols; ++c) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, values[r * cols + c]);
            out << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
        }
        out << '\n';
    }
}

double parse_double(const std::string& field) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw DataError("cannot parse value '" + field + "'");
    }
    return v;
}

}  // namespace

ModelKind parse_model_kind(std::string_view name) {
    if (name == "average") return ModelKind::average;
    if (name == "self_attention" || name == "self-attention" || name == "attention") return ModelKind::self_attention;
    throw DataError("unknown model kind '" + std::string(name) + "' (expected average or self_attention)");
}

std::string_view to_string(ModelKind kind) { return kind == ModelKind::average ? "average" : "self_attention"; }

TaskModelParams TaskModelParams::zeros_like() const {
    TaskModelParams z;
    z.kind = kind;
    z.fc1_w = Matrix(fc1_w.rows(), fc1_w.cols());
    z.fc1_b.assign(fc1_b.size(), 0.0);
    z.fc2_w = Matrix(fc2_w.rows(), fc2_w.cols());
    z.fc2_b.assign(fc2_b.size(), 0.0);
    z.attn_w.assign(attn_w.size(), 0.0);
    z.visual_w = Matrix(visual_w.rows(), visual_w.cols());
    z.visual_b.assign(visual_b.size(), 0.0);
    return z;
}

void TaskModelParams::validate() const {
    const std::size_t d = embed_dim(), h = hidden_dim(), j = joint_dim();
    if (d == 0 || h == 0 || j == 0 || feature_dim() == 0) throw DataError("model dimensions must be positive");
    if (fc1_b.size() != h || fc2_w.rows() != h || fc2_b.size() != j || visual_w.cols() != j || visual_b.size() != j) {
        throw DataError("model parameter shapes are inconsistent");
    }
    if (attn_w.size() != (kind == ModelKind::self_attention ? 2 * d : 0)) {
        throw DataError("attention weights have the wrong size for this model kind");
    }
    auto copy = *this;
    copy.for_each_value([](double v) {
        if (!std::isfinite(v)) throw DataError("model parameters contain a non-finite value");
    });
}

TaskModelParams init_params(ModelKind kind, std::size_t embed_dim, std::size_t hidden_dim, std::size_t joint_dim,
                            std::size_t feature_dim, std::uint64_t seed) {
    if (embed_dim == 0 || hidden_dim == 0 || joint_dim == 0 || feature_dim == 0) {
        throw DataError("init_params: dimensions must be positive");
    }
    auto rng = make_rng(seed, 1);
    auto fill = [&rng](std::span<double> values, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : values) v = dist(rng);
    };

    TaskModelParams p;
    p.kind = kind;
    p.fc1_w = Matrix(embed_dim, hidden_dim);
    p.fc1_b.resize(hidden_dim);
    p.fc2_w = Matrix(hidden_dim, joint_dim);
    p.fc2_b.resize(joint_dim);
    p.visual_w = Matrix(feature_dim, joint_dim);
    p.visual_b.resize(joint_dim);
    fill(p.fc1_w.values(), embed_dim);
    fill(p.fc1_b, embed_dim);
    fill(p.fc2_w.values(), hidden_dim);
    fill(p.fc2_b, hidden_dim);
    if (kind == ModelKind::self_attention) {
        p.attn_w.resize(2 * embed_dim);
        fill(p.attn_w, 2 * embed_dim);
        std::span<double> bias(&p.attn_b, 1);
        fill(bias, 2 * embed_dim);
    }
    fill(p.visual_w.values(), feature_dim);
    fill(p.visual_b, feature_dim);
    return p;
}

void save_params(const TaskModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "kind=" << to_string(params.kind) << '\n';
    write_block(out, "fc1_w", params.fc1_w.rows(), params.fc1_w.cols(), params.fc1_w.values());
    write_block(out, "fc1_b", 1, params.fc1_b.size(), params.fc1_b);
    write_block(out, "fc2_w", params.fc2_w.rows(), params.fc2_w.cols(), params.fc2_w.values());
    write_block(out, "fc2_b", 1, params.fc2_b.size(), params.fc2_b);
    if (params.kind == ModelKind::self_attention) {
        write_block(out, "attn_w", 1, params.attn_w.size(), params.attn_w);
        write_block(out, "attn_b", 1, 1, std::span<const double>(&params.attn_b, 1));
    }
    write_block(out, "visual_w", params.visual_w.rows(), params.visual_w.cols(), params.visual_w.values());
    write_block(out, "visual_b", 1, params.visual_b.size(), params.visual_b);
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

TaskModelParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open params " + path.string());
    std::string line;
    if (!std::getline(in, line) || !line.starts_with("kind=")) throw DataError("params: missing 'kind=' header");
    TaskModelParams p;
    p.kind = parse_model_kind(line.substr(5));

    auto read_block = [&](const std::string& name) -> Matrix {
        std::string got;
        std::size_t rows = 0, cols = 0;
        if (!std::getline(in, line)) throw DataError("params: missing block " + name);
        std::istringstream header(line);
        if (!(header >> got >> rows >> cols) || got != name) throw DataError("params: expected block " + name);
        std::vector<double> values;
        values.reserve(rows * cols);
        for (std::size_t r = 0; r < rows; ++r) {
            if (!std::getline(in, line)) throw DataError("params: truncated block " + name);
            std::istringstream fields(line);
            std::string label, field;
            fields >> label;
            if (label != name + ":" + std::to_string(r)) throw DataError("params: unexpected row label '" + label + "'");
            std::size_t count = 0;
            while (fields >> field) {
                values.push_back(parse_double(field));
                ++count;
            }
            if (count != cols) throw DataError("params: row " + label + " has the wrong width");
        }
        return Matrix(rows, cols, std::move(values));
    };
    auto as_vector = [](const Matrix& m) { return std::vector<double>(m.values().begin(), m.values().end()); };

    p.fc1_w = read_block("fc1_w");
    p.fc1_b = as_vector(read_block("fc1_b"));
    p.fc2_w = read_block("fc2_w");
    p.fc2_b = as_vector(read_block("fc2_b"));
    if (p.kind == ModelKind::self_attention) {
        p.attn_w = as_vector(read_block("attn_w"));
        const Matrix b = read_block("attn_b");
        if (b.values().size() != 1) throw DataError("params: attn_b must be a single value");
        p.attn_b = b.values()[0];
    }
    p.visual_w = read_block("visual_w");
    p.visual_b = as_vector(read_block("visual_b"));
    p.validate();
    return p;
}

void ToyTask::validate(std::size_t vocab_size) const {
    if (samples.empty()) throw DataError("task '" + task_id + "' has no samples");
    const std::size_t features = feature_dim();
    if (features == 0) throw DataError("task '" + task_id + "' has empty target vectors");
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& sample = samples[s];
        if (sample.phrase.empty()) throw DataError("task '" + task_id + "' sample " + std::to_string(s) + " has an empty phrase");
        if (sample.target.size() != features) {
            throw DataError("task '" + task_id + "' sample " + std::to_string(s) + " has a target of the wrong size");
        }
        for (const std::size_t w : sample.phrase) {
            if (w >= vocab_size) throw DataError("task '" + task_id + "' references token index out of range");
        }
        for (const double v : sample.target) {
            if (!std::isfinite(v)) throw DataError("task '" + task_id + "' has a non-finite target value");
        }
    }
}

ToyTask load_toy_task(const std::filesystem::path& path, const EmbeddingSet& vocab, std::string task_id) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open task file " + path.string());
    ToyTask task{std::move(task_id), {}};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": missing TAB between phrase and features");
        }
        ToySample sample;
        std::istringstream words(line.substr(0, tab));
        std::string word;
        while (words >> word) {
            const auto idx = vocab.index_of(word);
            if (!idx) throw DataError(path.string() + ":" + std::to_string(line_no) + ": unknown token '" + word + "'");
            sample.phrase.push_back(*idx);
        }
        std::istringstream values(line.substr(tab + 1));
        std::string field;
        while (values >> field) sample.target.push_back(parse_double(field));
        task.samples.push_back(std::move(sample));
    }
    task.validate(vocab.size());
    return task;
}

void save_toy_task(const ToyTask& task, const EmbeddingSet& vocab, const std::filesystem::path& path) {
    task.validate(vocab.size());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    char buf[32];
    for (const auto& sample : task.samples) {
        for (std::size_t i = 0; i < sample.phrase.size(); ++i) out << (i ? " " : "") << vocab.token(sample.phrase[i]);
        out << '\t';
        for (std::size_t i = 0; i < sample.target.size(); ++i) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, sample.target[i]);
            out << (i ? " " : "") << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
        }
        out << '\n';
    }
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

ToyTask make_synthetic_task(const Matrix& embeddings, std::string task_id, const SyntheticTaskConfig& cfg) {
    if (embeddings.rows() == 0) throw DataError("synthetic task: empty embedding table");
    if (cfg.samples == 0 || cfg.feature_dim == 0) throw DataError("synthetic task: sizes must be positive");
    if (cfg.min_phrase == 0 || cfg.min_phrase > cfg.max_phrase) throw DataError("synthetic task: bad phrase length range");
    auto rng = make_rng(cfg.seed, 2);
    const std::size_t dim = embeddings.cols();
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix projection(cfg.feature_dim, dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (double& v : projection.values()) v = gauss(rng) * scale;

    std::uniform_int_distribution<std::size_t> length(cfg.min_phrase, cfg.max_phrase);
    std::uniform_int_distribution<std::size_t> word(0, embeddings.rows() - 1);
    ToyTask task{std::move(task_id), {}};
    std::vector<double> mean;
    for (std::size_t s = 0; s < cfg.samples; ++s) {
        ToySample sample;
        sample.phrase.resize(length(rng));
        for (auto& w : sample.phrase) w = word(rng);
        pool_average(sample.phrase, embeddings, mean);
        sample.target.resize(cfg.feature_dim);
        for (std::size_t f = 0; f < cfg.feature_dim; ++f) sample.target[f] = dot(projection.row(f), mean) + cfg.noise * gauss(rng);
        task.samples.push_back(std::move(sample));
    }
    return task;
}

std::vector<double> average_embedding_forward(std::span<const std::size_t> phrase, const Matrix& embeddings,
                                              const TaskModelParams& params) {
    if (params.kind != ModelKind::average) throw DataError("average_embedding_forward: params are for another model");
    TextCache cache;
    forward_text(phrase, embeddings, params, cache);
    return cache.output;
}

AttentionOutput self_attention_forward(std::span<const std::size_t> phrase, const Matrix& embeddings,
                                       const TaskModelParams& params) {
    if (params.kind != ModelKind::self_attention) throw DataError("self_attention_forward: params are for another model");
    TextCache cache;
    forward_text(phrase, embeddings, params, cache);
    return {std::move(cache.output), std::move(cache.scores)};
}

std::vector<double> encode_text(std::span<const std::size_t> phrase, const Matrix& embeddings,
                                const TaskModelParams& params) {
    TextCache cache;
    forward_text(phrase, embeddings, params, cache);
    return cache.output;
}

std::vector<double> encode_target(std::span<const double> features, const TaskModelParams& params) {
    if (features.size() != params.feature_dim()) throw DataError("target features have the wrong size");
    std::vector<double> out = params.visual_b;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto w = params.visual_w.row(i);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += features[i] * w[j];
    }
    return out;
}

std::vector<std::vector<double>> encode_texts(const ToyTask& task, const Matrix& embeddings,
                                              const TaskModelParams& params) {
    std::vector<std::vector<double>> out;
    out.reserve(task.samples.size());
    for (const auto& s : task.samples) out.push_back(encode_text(s.phrase, embeddings, params));
    return out;
}

std::vector<std::vector<double>> encode_targets(const ToyTask& task, const TaskModelParams& params) {
    std::vector<std::vector<double>> out;
    out.reserve(task.samples.size());
    for (const auto& s : task.samples) out.push_back(encode_target(s.target, params));
    return out;
}

double triplet_loss(std::span<const double> anchor, std::span<const double> positive, std::span<const double> negative,
                    double margin) {
    if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
        throw DataError("triplet_loss: dimension mismatch");
    }
    const double d_pos = std::sqrt(squared_distance(anchor, positive));
    const double d_neg = std::sqrt(squared_distance(anchor, negative));
    return std::max(0.0, margin + d_pos - d_neg);
}

double embedding_anchor_penalty(const Matrix& embeddings, const Matrix& reference, double alpha) {
    if (!embeddings.same_shape(reference)) throw DataError("embedding_anchor_penalty: shape mismatch");
    if (alpha == 0.0) return 0.0;
    return alpha * squared_distance(embeddings.values(), reference.values());
}

void TrainConfig::validate() const {
    if (!(margin >= 0.0)) throw DataError("train: margin must be nonnegative");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw DataError("train: learning rate must be nonnegative");
    if (epochs < 1) throw DataError("train: epochs must be at least 1");
    if (!(alpha_anchor >= 0.0)) throw DataError("train: anchor coefficient must be nonnegative");
    if (batch_size < 2) throw DataError("train: batch size must be at least 2 for within-batch negatives");
    if (joint_dim == 0) throw DataError("train: joint dimension must be positive");
}

TrainResult train_task(const Matrix& embeddings, const ToyTask& task, const TrainConfig& cfg, const FreezeState& freeze) {
    cfg.validate();
    task.validate(embeddings.rows());
    if (task.samples.size() < 2) throw DataError("train: task '" + task.task_id + "' needs at least two samples");
    if (freeze.dim() != embeddings.cols()) throw DataError("train: freeze state width differs from embeddings");

    const std::size_t dim = embeddings.cols();
    TrainResult result;
    result.embeddings = embeddings;
    result.params = init_params(cfg.model, dim, cfg.hidden_dim ? cfg.hidden_dim : dim, cfg.joint_dim,
                                task.feature_dim(), cfg.seed);
    Matrix& e = result.embeddings;
    TaskModelParams& params = result.params;

    std::vector<std::size_t> order(task.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(cfg.seed, 3);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::span<const std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t len = std::min(cfg.batch_size, order.size() - start);
        batches.emplace_back(order.data() + start, len);
    }
    if (batches.size() > 1 && batches.back().size() == 1) {
        const auto tail = batches.back();
        batches.pop_back();
        batches.back() = std::span<const std::size_t>(batches.back().data(), batches.back().size() + tail.size());
    }

    Matrix d_emb(e.rows(), dim);
    TextCache cache;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto batch = batches[b];
            const double inv_batch = 1.0 / static_cast<double>(batch.size());
            std::fill(d_emb.values().begin(), d_emb.values().end(), 0.0);
            TaskModelParams d_params = params.zeros_like();

            std::vector<std::vector<double>> targets;
            targets.reserve(batch.size());
            for (const std::size_t s : batch) targets.push_back(encode_target(task.samples[s].target, params));

            double triplet_sum = 0.0;
            for (std::size_t k = 0; k < batch.size(); ++k) {
                const auto& sample = task.samples[batch[k]];
                const std::size_t neg = (k + 1) % batch.size();
                forward_text(sample.phrase, e, params, cache);
                auto g = triplet_with_grad(cache.output, targets[k], targets[neg], cfg.margin);
                triplet_sum += g.loss;
                if (g.loss == 0.0) continue;
                for (auto* v : {&g.anchor, &g.positive, &g.negative}) {
                    for (double& x : *v) x *= inv_batch;
                }
                backward_text(sample.phrase, e, params, cache, g.anchor, d_emb, d_params);
                backward_target(sample.target, g.positive, d_params);
                backward_target(task.samples[batch[neg]].target, g.negative, d_params);
            }

            const double objective = triplet_sum * inv_batch + embedding_anchor_penalty(e, embeddings, cfg.alpha_anchor);
            if (!std::isfinite(objective)) {
                throw DataError("train: non-finite loss on task '" + task.task_id + "' at epoch " +
                                std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1));
            }
            epoch_sum += objective;

            if (cfg.alpha_anchor != 0.0) {
                auto g = d_emb.values();
                const auto cur = e.values();
                const auto ref = embeddings.values();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * cfg.alpha_anchor * (cur[i] - ref[i]);
            }
            mask_gradient_inplace(d_emb, freeze);
            auto ev = e.values();
            const auto gv = d_emb.values();
            for (std::size_t i = 0; i < ev.size(); ++i) ev[i] -= cfg.learning_rate * gv[i];
            axpy_params(params, d_params, -cfg.learning_rate);
        }
        result.loss_trace.push_back(epoch_sum / static_cast<double>(batches.size()));
    }
    return result;
}

double grad_check_loss(const GradCheckCase& c, Matrix* embedding_grad, TaskModelParams* param_grad) {
    TextCache cache;
    forward_text(c.phrase, c.embeddings, c.params, cache);
    const auto pos = encode_target(c.positive, c.params);
    const auto neg = encode_target(c.negative, c.params);
    auto g = triplet_with_grad(cache.output, pos, neg, c.margin);
    const double loss = g.loss + embedding_anchor_penalty(c.embeddings, c.reference, c.alpha);
    if (embedding_grad && param_grad) {
        *embedding_grad = Matrix(c.embeddings.rows(), c.embeddings.cols());
        *param_grad = c.params.zeros_like();
        if (g.loss > 0.0) {
            backward_text(c.phrase, c.embeddings, c.params, cache, g.anchor, *embedding_grad, *param_grad);
            backward_target(c.positive, g.positive, *param_grad);
            backward_target(c.negative, g.negative, *param_grad);
        }
        auto gv = embedding_grad->values();
        const auto cur = c.embeddings.values();
        const auto ref = c.reference.values();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += 2.0 * c.alpha * (cur[i] - ref[i]);
    }
    return loss;
}

GradCheckReport gradient_check(const GradCheckCase& c, double epsilon) {
    if (!(epsilon > 0.0)) throw DataError("gradient_check: epsilon must be positive");
    {
        TextCache cache;
        forward_text(c.phrase, c.embeddings, c.params, cache);
        for (const double z : cache.pre_relu) {
            if (std::abs(z) < kKinkClearance) throw BoundaryError("gradient_check: ReLU input too close to zero");
        }
        const auto pos = encode_target(c.positive, c.params);
        const auto neg = encode_target(c.negative, c.params);
        const auto g = triplet_with_grad(cache.output, pos, neg, c.margin);
        if (std::abs(g.hinge) < kKinkClearance || g.d_pos < kKinkClearance || g.d_neg < kKinkClearance) {
            throw BoundaryError("gradient_check: triplet hinge too close to its kink");
        }
    }

    Matrix d_emb;
    TaskModelParams d_params;
    grad_check_loss(c, &d_emb, &d_params);

    GradCheckReport report;
    auto record = [&](double analytic, double numeric) {
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        report.max_relative_error = std::max(report.max_relative_error, std::abs(analytic - numeric) / denom);
        ++report.entries_checked;
    };

    GradCheckCase probe = c;
    std::vector<std::size_t> rows(c.phrase.begin(), c.phrase.end());
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    for (const std::size_t r : rows) {
        for (std::size_t d = 0; d < c.embeddings.cols(); ++d) {
            const double saved = probe.embeddings(r, d);
            probe.embeddings(r, d) = saved + epsilon;
            const double up = grad_check_loss(probe, nullptr, nullptr);
            probe.embeddings(r, d) = saved - epsilon;
            const double down = grad_check_loss(probe, nullptr, nullptr);
            probe.embeddings(r, d) = saved;
            record(d_emb(r, d), (up - down) / (2.0 * epsilon));
        }
    }

    std::vector<double*> slots;
    probe.params.for_each_value([&](double& v) { slots.push_back(&v); });
    const auto analytic = collect_values(d_params);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const double saved = *slots[i];
        *slots[i] = saved + epsilon;
        const double up = grad_check_loss(probe, nullptr, nullptr);
        *slots[i] = saved - epsilon;
        const double down = grad_check_loss(probe, nullptr, nullptr);
        *slots[i] = saved;
        record(analytic[i], (up - down) / (2.0 * epsilon));
    }
    return report;
}

GradCheckCase random_grad_check_case(ModelKind kind, const GradCheckDims& dims, std::uint64_t seed) {
    if (dims.vocab == 0 || dims.max_phrase == 0) throw DataError("random_grad_check_case: sizes must be positive");
    auto rng = make_rng(seed, 4);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    GradCheckCase c;
    c.embeddings = Matrix(dims.vocab, dims.embed_dim);
    for (double& v : c.embeddings.values()) v = unit(rng);
    c.reference = c.embeddings;
    for (double& v : c.reference.values()) v += 0.1 * unit(rng);
    std::uniform_int_distribution<std::size_t> length(1, dims.max_phrase);
    std::uniform_int_distribution<std::size_t> word(0, dims.vocab - 1);
    c.phrase.resize(length(rng));
    for (auto& w : c.phrase) w = word(rng);
    c.positive.resize(dims.feature_dim);
    c.negative.resize(dims.feature_dim);
    for (double& v : c.positive) v = unit(rng);
    for (double& v : c.negative) v = unit(rng);
    c.params = init_params(kind, dims.embed_dim, dims.hidden_dim, dims.joint_dim, dims.feature_dim, rng());
    c.alpha = 0.01 + 0.5 * std::abs(unit(rng));

    // Pick the margin so the hinge is active by a clear amount.
    c.margin = 0.0;
    TextCache cache;
    forward_text(c.phrase, c.embeddings, c.params, cache);
    const double d_pos = std::sqrt(squared_distance(cache.output, encode_target(c.positive, c.params)));
    const double d_neg = std::sqrt(squared_distance(cache.output, encode_target(c.negative, c.params)));
    c.margin = std::max(0.0, d_neg - d_pos) + 0.2 + 0.8 * std::abs(unit(rng));
    return c;
}

GradCheckReport gradient_check(ModelKind kind, const GradCheckDims& dims, std::uint64_t seed, double epsilon,
                               int max_retries) {
    for (int attempt = 0; attempt < max_retries; ++attempt) {
        const auto c = random_grad_check_case(kind, dims, seed * 7919 + static_cast<std::uint64_t>(attempt));
        try {
            return gradient_check(c, epsilon);
        } catch (const BoundaryError&) {
        }
    }
    throw BoundaryError("gradient_check: every draw landed near a kink after " + std::to_string(max_retries) + " tries");
}

}  // namespace grovle
