#include "grovle/relation_graph.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "grovle/error.hpp"

namespace grovle {

namespace {

std::unordered_map<std::string_view, std::size_t> index_vocab(std::span<const std::string> vocab) {
    std::unordered_map<std::string_view, std::size_t> index;
    index.reserve(vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], i);
    return index;
}

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

}  // namespace

RelationGraph::RelationGraph(std::size_t n, std::vector<Edge> edges) : n_(n) {
    for (auto& e : edges) {
        if (e.i >= n || e.j >= n) throw DataError("edge index out of range");
        if (e.i == e.j) throw DataError("self-loop on index " + std::to_string(e.i));
        if (!(e.weight > 0.0) || !std::isfinite(e.weight)) throw DataError("edge weight must be positive and finite");
        if (e.i > e.j) std::swap(e.i, e.j);
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
        return a.i != b.i ? a.i < b.i : (a.j != b.j ? a.j < b.j : a.weight > b.weight);
    });
    // Sorting puts the heaviest copy of each pair first.
    auto last = std::unique(edges.begin(), edges.end(),
                            [](const Edge& a, const Edge& b) { return a.i == b.i && a.j == b.j; });
    edges.erase(last, edges.end());
    edges_ = std::move(edges);

    offsets_.assign(n_ + 1, 0);
    for (const auto& e : edges_) {
        ++offsets_[e.i + 1];
        ++offsets_[e.j + 1];
    }
    for (std::size_t i = 0; i < n_; ++i) offsets_[i + 1] += offsets_[i];
    neighbors_.resize(2 * edges_.size());
    weights_.resize(2 * edges_.size());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (const auto& e : edges_) {
        neighbors_[fill[e.i]] = e.j;
        weights_[fill[e.i]++] = e.weight;
        neighbors_[fill[e.j]] = e.i;
        weights_[fill[e.j]++] = e.weight;
    }
}

bool RelationGraph::has_edge(std::size_t i, std::size_t j) const { return weight(i, j) > 0.0; }

double RelationGraph::weight(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    auto it = std::lower_bound(edges_.begin(), edges_.end(), std::pair{i, j}, [](const Edge& e, const auto& key) {
        return e.i != key.first ? e.i < key.first : e.j < key.second;
    });
    return it != edges_.end() && it->i == i && it->j == j ? it->weight : 0.0;
}

bool RelationGraph::operator==(const RelationGraph& other) const {
    return n_ == other.n_ && std::equal(edges_.begin(), edges_.end(), other.edges_.begin(), other.edges_.end(),
                                        [](const Edge& a, const Edge& b) {
                                            return a.i == b.i && a.j == b.j && a.weight == b.weight;
                                        });
}

RelationGraph merge_graphs(const RelationGraph& a, const RelationGraph& b) {
    if (a.node_count() != b.node_count()) {
        throw DataError("merge_graphs: vocabulary sizes differ (" + std::to_string(a.node_count()) + " vs " +
                        std::to_string(b.node_count()) + ")");
    }
    std::vector<Edge> edges(a.edges().begin(), a.edges().end());
    edges.insert(edges.end(), b.edges().begin(), b.edges().end());
    return RelationGraph(a.node_count(), std::move(edges));
}

RelationGraph read_lexicon_graph(std::istream& in, std::span<const std::string> vocab) {
    if (vocab.empty()) throw DataError("lexicon graph: empty vocabulary");
    const auto index = index_vocab(vocab);
    std::vector<Edge> edges;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream fields(line);
        std::string head;
        if (!(fields >> head)) continue;
        const auto h = index.find(head);
        if (h == index.end()) continue;
        std::string word;
        while (fields >> word) {
            const auto w = index.find(word);
            if (w != index.end() && w->second != h->second) edges.push_back({h->second, w->second, 1.0});
        }
    }
    if (in.bad()) throw IoError("lexicon read failed");
    return RelationGraph(vocab.size(), std::move(edges));
}

RelationGraph load_lexicon_graph(const std::filesystem::path& path, std::span<const std::string> vocab) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon " + path.string());
    return read_lexicon_graph(in, vocab);
}

void save_graph(const RelationGraph& graph, std::span<const std::string> vocab, const std::filesystem::path& path) {
    if (vocab.size() != graph.node_count()) throw DataError("save_graph: vocabulary size mismatch");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    char buf[32];
    for (const auto& e : graph.edges()) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, e.weight);
        out << vocab[e.i] << ' ' << vocab[e.j] << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf))
            << '\n';
    }
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

RelationGraph load_graph(const std::filesystem::path& path, std::span<const std::string> vocab) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open graph " + path.string());
    const auto index = index_vocab(vocab);
    std::vector<Edge> edges;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string a, b, extra;
        double w = 1.0;
        if (!(fields >> a)) continue;
        if (!(fields >> b >> w) || (fields >> extra)) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 'token token beta'");
        }
        const auto ia = index.find(a);
        const auto ib = index.find(b);
        if (ia == index.end() || ib == index.end()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": token not in vocabulary");
        }
        edges.push_back({ia->second, ib->second, w});
    }
    return RelationGraph(vocab.size(), std::move(edges));
}

TokenizerConfig load_stopwords(const std::filesystem::path& path, bool lowercase) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open stopword list " + path.string());
    TokenizerConfig cfg;
    cfg.lowercase = lowercase;
    std::string word;
    while (in >> word) {
        if (lowercase) {
            std::transform(word.begin(), word.end(), word.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        }
        cfg.stopwords.insert(word);
    }
    return cfg;
}

std::set<std::string> tokenize_sample(std::string_view text, const TokenizerConfig& cfg) {
    std::set<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
        std::string token;
        while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
            const auto c = static_cast<unsigned char>(text[i++]);
            token.push_back(cfg.lowercase ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
        }
        if (!token.empty() && !cfg.stopwords.contains(token)) tokens.insert(std::move(token));
    }
    return tokens;
}

TokenPair make_pair_key(std::string_view a, std::string_view b) {
    return a < b ? TokenPair{std::string(a), std::string(b)} : TokenPair{std::string(b), std::string(a)};
}

void CooccurrenceCounter::add_sample(std::string_view text) {
    const auto tokens = tokenize_sample(text, cfg_);
    // std::set iterates in sorted order, so (a, b) is already a normalized key.
    for (auto a = tokens.begin(); a != tokens.end(); ++a) {
        for (auto b = std::next(a); b != tokens.end(); ++b) ++counts_[{*a, *b}];
    }
}

void CooccurrenceCounter::merge(const CooccurrenceCounter& other) {
    for (const auto& [pair, count] : other.counts_) counts_[pair] += count;
}

CooccurrenceStats CooccurrenceCounter::finalize(std::uint64_t min_count) const {
    CooccurrenceStats stats;
    for (const auto& [pair, count] : counts_) {
        if (count < min_count) continue;
        stats.pair_count.emplace(pair, count);
        stats.participation[pair.first] += count;
        stats.participation[pair.second] += count;
        stats.total_pairs += count;
    }
    return stats;
}

CooccurrenceStats accumulate_cooccurrence(std::istream& corpus, const TokenizerConfig& cfg, std::uint64_t min_count) {
    CooccurrenceCounter counter(cfg);
    std::string line;
    while (std::getline(corpus, line)) counter.add_sample(line);
    if (corpus.bad()) throw IoError("corpus read failed");
    return counter.finalize(min_count);
}

CooccurrenceStats accumulate_cooccurrence(std::span<const std::string> samples, const TokenizerConfig& cfg,
                                          std::uint64_t min_count, unsigned workers) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(samples.size(), 1))));
    std::vector<CooccurrenceCounter> shards(workers, CooccurrenceCounter(cfg));
    const std::size_t chunk = (samples.size() + workers - 1) / workers;
    {
        std::vector<std::jthread> threads;
        for (unsigned w = 0; w < workers; ++w) {
            threads.emplace_back([&, w] {
                const std::size_t begin = std::min(samples.size(), w * chunk);
                const std::size_t end = std::min(samples.size(), begin + chunk);
                for (std::size_t s = begin; s < end; ++s) shards[w].add_sample(samples[s]);
            });
        }
    }
    for (unsigned w = 1; w < workers; ++w) shards[0].merge(shards[w]);
    return shards[0].finalize(min_count);
}

double pmi_score(const CooccurrenceStats& stats, std::string_view a, std::string_view b) {
    const auto it = stats.pair_count.find(make_pair_key(a, b));
    if (it == stats.pair_count.end()) {
        throw DataError("pmi_score: pair (" + std::string(a) + ", " + std::string(b) + ") not in statistics");
    }
    const double pa = static_cast<double>(stats.participation.at(it->first.first));
    const double pb = static_cast<double>(stats.participation.at(it->first.second));
    // Integer-valued products stay exact below 2^53, leaving one rounding in
    // the ratio; equal ratios therefore give equal scores.
    const double numerator = static_cast<double>(it->second) * static_cast<double>(stats.total_pairs);
    return std::log(numerator / (pa * pb));
}

RelationGraph build_pmi_graph(const CooccurrenceStats& stats, std::size_t top_k, std::span<const std::string> vocab) {
    if (vocab.empty()) throw DataError("build_pmi_graph: empty vocabulary");
    if (top_k == 0) throw DataError("build_pmi_graph: top_k must be positive");
    const auto index = index_vocab(vocab);

    // Per word: (pmi, partner index).
    std::vector<std::vector<std::pair<double, std::size_t>>> candidates(vocab.size());
    for (const auto& [pair, count] : stats.pair_count) {
        const auto ia = index.find(pair.first);
        const auto ib = index.find(pair.second);
        if (ia == index.end() || ib == index.end()) continue;
        const double score = pmi_score(stats, pair.first, pair.second);
        candidates[ia->second].emplace_back(score, ib->second);
        candidates[ib->second].emplace_back(score, ia->second);
    }

    std::vector<Edge> edges;
    for (std::size_t w = 0; w < candidates.size(); ++w) {
        auto& list = candidates[w];
        const std::size_t keep = std::min(top_k, list.size());
        std::partial_sort(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(keep), list.end(),
                          [](const auto& x, const auto& y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
        for (std::size_t r = 0; r < keep; ++r) edges.push_back({w, list[r].second, 1.0});
    }
    return RelationGraph(vocab.size(), std::move(edges));
}

}  // namespace grovle
