#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "grovle/embed_store.hpp"
#include "grovle/evaluator.hpp"
#include "grovle/freeze_scheduler.hpp"
#include "grovle/relation_graph.hpp"
#include "grovle/retrofitter.hpp"
#include "grovle/toy_finetune.hpp"
#include "oracles.hpp"

using namespace grovle;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass;
    std::string detail;
};

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix m(rows, cols);
    for (double& v : m.values()) v = g(rng);
    return m;
}

std::vector<std::string> make_vocab(std::size_t n) {
    std::vector<std::string> vocab;
    vocab.reserve(n);
    for (std::size_t i = 0; i < n; ++i) vocab.push_back("w" + std::to_string(i));
    return vocab;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

Outcome retrofit_matches_dense_solve() {
    const auto start = Clock::now();
    std::mt19937_64 rng(101);
    double worst = 0.0;
    int instances = 0;
    for (int t = 0; t < 120; ++t) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 50)(rng);
        const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        const std::size_t m = std::uniform_int_distribution<std::size_t>(0, 3 * n)(rng);
        const auto mode = t % 2 == 0 ? AlphaMode::degree : AlphaMode::unit;
        const auto edges = oracle::random_edges(n, m, rng, t % 3 == 0);
        const Matrix qhat = random_matrix(n, d, rng);
        RetrofitConfig cfg;
        cfg.beta = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
        cfg.alpha_mode = mode;
        cfg.iterations = 1'000'000;
        cfg.tolerance = 1e-12;
        const auto result = retrofit(EmbeddingSet(make_vocab(n), qhat), RelationGraph(n, edges), cfg);
        const Matrix dense = oracle::dense_retrofit(qhat, n, edges, cfg.beta, mode);
        worst = std::max(worst, oracle::max_abs_diff(result.embeddings.vectors(), dense));
        ++instances;
    }
    const double elapsed = seconds_since(start);
    return {worst < 1e-6 && elapsed < 10.0,
            std::to_string(instances) + " instances, max abs diff " + fmt(worst) + ", " + fmt(elapsed) + " s"};
}

Outcome closed_form_fixture() {
    RetrofitConfig cfg;
    cfg.iterations = 10'000;
    cfg.tolerance = 1e-12;
    const auto result = retrofit(EmbeddingSet({"a", "b"}, Matrix(2, 1, {0.0, 3.0})), RelationGraph(2, {{0, 1}}), cfg);
    const double a = result.embeddings.vectors()(0, 0), b = result.embeddings.vectors()(1, 0);
    const double err = std::max(std::abs(a - 1.0), std::abs(b - 2.0));
    return {err < 1e-9, "q = (" + fmt(a) + ", " + fmt(b) + "), error " + fmt(err)};
}

Outcome monotone_objective() {
    std::mt19937_64 rng(303);
    int violations = 0;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 60)(rng);
        const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
        const auto edges = oracle::random_edges(n, 2 * n, rng, t % 2 == 1);
        const RelationGraph graph(n, edges);
        const Matrix qhat = random_matrix(n, d, rng);
        RetrofitConfig cfg;
        cfg.alpha_mode = t % 2 == 0 ? AlphaMode::degree : AlphaMode::unit;
        std::vector<double> trace{retrofit_objective(qhat, qhat, graph, cfg)};
        const auto result = retrofit(EmbeddingSet(make_vocab(n), qhat), graph, cfg);
        trace.insert(trace.end(), result.objective_trace.begin(), result.objective_trace.end());
        for (std::size_t s = 1; s < trace.size(); ++s) {
            const double rise = (trace[s] - trace[s - 1]) / std::max(std::abs(trace[s - 1]), 1e-300);
            worst = std::max(worst, rise);
            if (rise > 1e-12) ++violations;
        }
    }
    return {violations == 0, "100 instances x 10 sweeps, violations " + std::to_string(violations) +
                                 ", largest relative rise " + fmt(worst)};
}

Outcome pmi_graph_oracle() {
    std::mt19937_64 rng(404);
    const std::size_t top_ks[] = {1, 2, 3, 10};
    int mismatches = 0;
    int corpora = 0;
    for (int t = 0; t < 80; ++t) {
        const std::size_t vocab_size = std::uniform_int_distribution<std::size_t>(2, 30)(rng);
        const std::size_t samples = std::uniform_int_distribution<std::size_t>(1, 100)(rng);
        const std::uint64_t min_count = 1 + static_cast<std::uint64_t>(t % 3);
        const std::size_t top_k = top_ks[(t / 3) % 4];
        // Corpus words include a few outside the vocabulary.
        const auto corpus_words = make_vocab(vocab_size + 3);
        const std::vector<std::string> vocab(corpus_words.begin(), corpus_words.begin() + static_cast<long>(vocab_size));
        std::uniform_int_distribution<std::size_t> word(0, corpus_words.size() - 1);
        std::uniform_int_distribution<std::size_t> length(0, 7);
        std::vector<std::string> lines;
        std::vector<std::vector<std::string>> tokens;
        for (std::size_t s = 0; s < samples; ++s) {
            std::vector<std::string> sample;
            std::string line;
            for (std::size_t k = length(rng); k > 0; --k) {
                sample.push_back(corpus_words[word(rng)]);
                line += (line.empty() ? "" : " ") + sample.back();
            }
            tokens.push_back(sample);
            lines.push_back(line);
        }
        const auto stats = accumulate_cooccurrence(lines, TokenizerConfig{}, min_count, 1 + t % 2);
        const auto graph = build_pmi_graph(stats, top_k, vocab);
        if (oracle::edge_set(graph) != oracle::brute_pmi_graph(tokens, min_count, top_k, vocab)) ++mismatches;
        ++corpora;
    }
    return {mismatches == 0, std::to_string(corpora) + " corpora, mismatches " + std::to_string(mismatches)};
}

Outcome freeze_arithmetic() {
    const std::vector<TaskSpec> five{{"a", 1}, {"b", 1}, {"c", 1}, {"d", 1}, {"e", 1}};
    const auto plan = freeze_budget(300, five);
    const std::vector<TaskSpec> with_pair{{"a", 2}, {"b", 1}, {"c", 1}, {"d", 1}, {"e", 1}};
    const auto split = freeze_budget(300, with_pair).tasks.front().dataset_budgets;

    std::mt19937_64 rng(505);
    const Matrix before = random_matrix(40, 300, rng);
    FreezeState state(300);
    for (const auto& task : plan.tasks) {
        const Matrix after = random_matrix(40, 300, rng);
        const auto ranking = rank_by_variance(before, after, state.free_features());
        state = freeze_top(state, ranking, task.budget, task.task_id);
    }
    const bool ok = plan.per_task_budget == 60 && split == std::vector<std::size_t>{30, 30} &&
                    state.frozen_count() == 300;
    return {ok, "K " + std::to_string(plan.per_task_budget) + ", split " + std::to_string(split.at(0)) + "/" +
                    std::to_string(split.at(1)) + ", frozen after 5 tasks " + std::to_string(state.frozen_count())};
}

Outcome frozen_columns_immutable() {
    int runs_with_frozen_change = 0;
    bool free_changed = false;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(600 + seed);
        const std::size_t d = 10;
        const Matrix table = random_matrix(20, d, rng);
        SyntheticTaskConfig task_cfg;
        task_cfg.samples = 24;
        task_cfg.feature_dim = 6;
        task_cfg.seed = seed;
        const auto task = make_synthetic_task(table, "t", task_cfg);

        std::vector<std::size_t> frozen;
        std::bernoulli_distribution coin(0.5);
        for (std::size_t f = 0; f < d; ++f) {
            if (coin(rng)) frozen.push_back(f);
        }
        FreezeState state(d);
        state.freeze(frozen, "mask");

        TrainConfig cfg;
        cfg.model = seed % 2 == 0 ? ModelKind::average : ModelKind::self_attention;
        cfg.learning_rate = 0.05;
        cfg.epochs = 5;
        cfg.batch_size = 8;
        cfg.joint_dim = 8;
        cfg.seed = seed;
        const auto result = train_task(table, task, cfg, state);
        bool frozen_same = true;
        for (std::size_t r = 0; r < table.rows(); ++r) {
            for (std::size_t f = 0; f < d; ++f) {
                const bool same = std::bit_cast<std::uint64_t>(table(r, f)) ==
                                  std::bit_cast<std::uint64_t>(result.embeddings(r, f));
                if (state.is_frozen(f) && !same) frozen_same = false;
                if (!state.is_frozen(f) && !same) free_changed = true;
            }
        }
        if (!frozen_same) ++runs_with_frozen_change;
    }
    return {runs_with_frozen_change == 0 && free_changed,
            "20 runs, runs with a frozen change " + std::to_string(runs_with_frozen_change) +
                ", free columns changed " + (free_changed ? "yes" : "no")};
}

Outcome gradient_checks() {
    double worst[2] = {0.0, 0.0};
    int checked[2] = {0, 0};
    const ModelKind kinds[] = {ModelKind::average, ModelKind::self_attention};
    for (int k = 0; k < 2; ++k) {
        for (std::uint64_t seed = 0; seed < 25; ++seed) {
            GradCheckDims dims;
            dims.embed_dim = 3 + seed % 6;
            dims.hidden_dim = 2 + seed % 5;
            dims.joint_dim = 2 + seed % 4;
            dims.feature_dim = 2 + seed % 5;
            const auto report = gradient_check(kinds[k], dims, 700 + seed);
            worst[k] = std::max(worst[k], report.max_relative_error);
            ++checked[k];
        }
    }
    return {worst[0] < 1e-4 && worst[1] < 1e-4,
            "average " + std::to_string(checked[0]) + " configs max rel err " + fmt(worst[0]) + "; self-attention " +
                std::to_string(checked[1]) + " configs max rel err " + fmt(worst[1])};
}

struct ForgettingRun {
    double before_second;
    double with_freeze;
    double without_freeze;
};

ForgettingRun forgetting_run(std::uint64_t seed) {
    std::mt19937_64 rng(800 + seed);
    const std::size_t vocab = 40, d = 16;
    Matrix table = random_matrix(vocab, d, rng);
    // Rows of roughly unit norm.
    for (double& v : table.values()) v *= 0.25;

    SyntheticTaskConfig first_cfg;
    first_cfg.samples = 48;
    first_cfg.feature_dim = 8;
    first_cfg.seed = 2 * seed;
    SyntheticTaskConfig second_cfg = first_cfg;
    second_cfg.seed = 2 * seed + 1;
    const auto first = make_synthetic_task(table, "first", first_cfg);
    const auto second = make_synthetic_task(table, "second", second_cfg);

    TrainConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.epochs = 100;
    cfg.margin = 1.0;
    cfg.batch_size = 8;
    cfg.joint_dim = 16;
    cfg.seed = seed;
    const auto plan = freeze_budget(d, std::vector<TaskSpec>{{"first", 1}, {"second", 1}});

    const FreezeState none(d);
    const auto after_first = train_task(table, first, cfg, none);
    const auto ranking = rank_by_variance(table, after_first.embeddings, none.free_features());
    const FreezeState frozen = freeze_top(none, ranking, plan.per_task_budget, "first");

    auto first_recall = [&](const Matrix& embeddings) {
        return retrieval_recall(encode_texts(first, embeddings, after_first.params),
                                encode_targets(first, after_first.params))
            .mean_recall;
    };
    cfg.seed = seed + 1000;
    const auto with = train_task(after_first.embeddings, second, cfg, frozen);
    const auto without = train_task(after_first.embeddings, second, cfg, none);
    return {first_recall(after_first.embeddings), first_recall(with.embeddings), first_recall(without.embeddings)};
}

Outcome forgetting_mitigation() {
    const int seeds = 12;
    double before = 0.0, with = 0.0, without = 0.0;
    for (int s = 0; s < seeds; ++s) {
        const auto run = forgetting_run(static_cast<std::uint64_t>(s));
        before += run.before_second;
        with += run.with_freeze;
        without += run.without_freeze;
    }
    before /= seeds;
    with /= seeds;
    without /= seeds;
    return {with >= without, std::to_string(seeds) + " seeds, task-1 mean recall before task 2 " + fmt(before) +
                                 ", after task 2 with freezing " + fmt(with) + ", without freezing " + fmt(without)};
}

Outcome neighbor_cohesion_increases() {
    std::mt19937_64 rng(909);
    const std::size_t n = 500;
    const EmbeddingSet original(make_vocab(n), random_matrix(n, 25, rng));
    const RelationGraph graph(n, oracle::random_edges(n, 2000, rng));
    const auto before = neighbor_cohesion(original, graph);
    const auto after = neighbor_cohesion(retrofit(original, graph, RetrofitConfig{}).embeddings, graph);
    return {after.mean_edge_cosine > before.mean_edge_cosine,
            "mean edge cosine " + fmt(before.mean_edge_cosine) + " -> " + fmt(after.mean_edge_cosine)};
}

Outcome large_retrofit_runtime() {
    std::mt19937_64 rng(1010);
    const std::size_t n = 100'000, d = 300, m = 1'000'000;
    std::vector<Edge> edges;
    edges.reserve(m);
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(m);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (edges.size() < m) {
        std::size_t i = pick(rng), j = pick(rng);
        if (i == j) continue;
        if (i > j) std::swap(i, j);
        if (seen.insert(i * n + j).second) edges.push_back({i, j});
    }
    const RelationGraph graph(n, std::move(edges));
    EmbeddingSet qhat(make_vocab(n), random_matrix(n, d, rng));
    const auto start = Clock::now();
    const auto result = retrofit(qhat, graph, RetrofitConfig{});
    const double elapsed = seconds_since(start);
    return {elapsed < 60.0 && result.sweeps_run == 10,
            std::to_string(n) + " words x " + std::to_string(d) + "-D, " + std::to_string(graph.edge_count()) +
                " edges, 10 sweeps in " + fmt(elapsed) + " s"};
}

Outcome io_roundtrip() {
    std::mt19937_64 rng(1111);
    const std::size_t n = 10'000, d = 50;
    Matrix m = random_matrix(n, d, rng);
    for (double& v : m.values()) v = static_cast<float>(v * std::pow(10.0, std::uniform_int_distribution<int>(-6, 6)(rng)));
    const EmbeddingSet set(make_vocab(n), m);
    const auto dir = std::filesystem::temp_directory_path() /
                     ("grovle_acceptance_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(dir);
    save_embeddings(set, dir / "a.txt", EmbeddingFormat::text);
    const auto from_text = load_embeddings(dir / "a.txt", EmbeddingFormat::text);
    save_embeddings(from_text, dir / "a.bin", EmbeddingFormat::binary);
    const auto from_bin = load_embeddings(dir / "a.bin", EmbeddingFormat::binary);
    save_embeddings(from_bin, dir / "b.txt", EmbeddingFormat::text);
    const auto back = load_embeddings(dir / "b.txt", EmbeddingFormat::text);
    std::filesystem::remove_all(dir);
    const bool ok = from_text == set && from_bin == set && back == set;
    return {ok, std::to_string(n) + " words x " + std::to_string(d) + "-D text -> binary -> text " +
                    (ok ? "bit-exact" : "differs")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"retrofit matches dense solve", retrofit_matches_dense_solve},
        {"closed-form two-word fixture", closed_form_fixture},
        {"monotone objective", monotone_objective},
        {"pmi graph matches brute force", pmi_graph_oracle},
        {"freeze arithmetic", freeze_arithmetic},
        {"frozen columns immutable", frozen_columns_immutable},
        {"gradient checks", gradient_checks},
        {"freezing mitigates forgetting", forgetting_mitigation},
        {"neighbor cohesion increases", neighbor_cohesion_increases},
        {"large retrofit runtime", large_retrofit_runtime},
        {"text/binary roundtrip", io_roundtrip},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome outcome;
        try {
            outcome = criteria[i].second();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        if (!outcome.pass) ++failures;
        std::cout << (outcome.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": "
                  << outcome.detail << std::endl;
    }
    std::cout << criteria.size() - static_cast<std::size_t>(failures) << "/" << criteria.size() << " criteria passed\n";
    return failures == 0 ? 0 : 1;
}
