#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "grovle/error.hpp"
#include "grovle/evaluator.hpp"
#include "grovle/retrofitter.hpp"
#include "oracles.hpp"

using namespace grovle;

namespace {

std::vector<std::vector<double>> random_points(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<std::vector<double>> out(n, std::vector<double>(dim));
    for (auto& v : out) {
        for (double& x : v) x = g(rng);
    }
    return out;
}

}  // namespace

TEST_CASE("neighbor cohesion") {
    const EmbeddingSet same({"a", "b", "c"}, Matrix(3, 2, 1.0));
    const auto r = neighbor_cohesion(same, RelationGraph(3, {{0, 1}, {1, 2}}));
    CHECK(r.mean_edge_cosine == doctest::Approx(1.0));
    CHECK(r.median_edge_cosine == doctest::Approx(1.0));
    CHECK(r.edge_count == 2);

    const EmbeddingSet ortho({"a", "b"}, Matrix(2, 2, {1, 0, 0, 1}));
    CHECK(neighbor_cohesion(ortho, RelationGraph(2, {{0, 1}})).mean_edge_cosine == doctest::Approx(0.0));
    CHECK_THROWS_AS(neighbor_cohesion(ortho, RelationGraph(2, {})), DataError);
    CHECK_THROWS_AS(neighbor_cohesion(ortho, RelationGraph(3, {{0, 1}})), DataError);

    const EmbeddingSet three({"a", "b", "c", "d"}, Matrix(4, 2, {1, 0, 1, 0, 0, 1, -1, 0}));
    const auto m = neighbor_cohesion(three, RelationGraph(4, {{0, 1}, {0, 2}, {0, 3}}));
    CHECK(m.median_edge_cosine == doctest::Approx(0.0));
    CHECK(m.mean_edge_cosine == doctest::Approx(0.0));
}

TEST_CASE("cohesion rises after retrofitting") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 5; ++trial) {
        Matrix m(40, 5);
        for (double& v : m.values()) v = g(rng);
        std::vector<std::string> vocab;
        for (int i = 0; i < 40; ++i) vocab.push_back("w" + std::to_string(i));
        const EmbeddingSet set(vocab, m);
        const RelationGraph graph(40, oracle::random_edges(40, 60, rng));
        const auto before = neighbor_cohesion(set, graph);
        const auto after = neighbor_cohesion(retrofit(set, graph, RetrofitConfig{}).embeddings, graph);
        CHECK(after.mean_edge_cosine > before.mean_edge_cosine);
    }
}

TEST_CASE("retrieval recall basics") {
    const std::vector<std::vector<double>> pts{{0, 0}, {1, 0}, {0, 1}, {5, 5}, {3, 1}, {2, 2},
                                               {4, 0}, {0, 4}, {6, 1}, {1, 6}, {7, 7}};
    const auto perfect = retrieval_recall(pts, pts);
    CHECK(perfect.text_to_target == std::vector<double>{1, 1, 1});
    CHECK(perfect.target_to_text == std::vector<double>{1, 1, 1});
    CHECK(perfect.mean_recall == 1.0);

    const std::vector<std::vector<double>> a{{0.0}, {10.0}}, swapped{{10.0}, {0.0}};
    const std::vector<std::size_t> ks{1, 2};
    const auto r = retrieval_recall(a, swapped, ks);
    CHECK(r.text_to_target == std::vector<double>{0, 1});
    CHECK(r.target_to_text == std::vector<double>{0, 1});
    CHECK(r.mean_recall == 0.5);

    CHECK_THROWS_AS(retrieval_recall(a, swapped, std::vector<std::size_t>{3}), DataError);
    CHECK_THROWS_AS(retrieval_recall(a, pts), DataError);
}

TEST_CASE("ties in distance resolve to the lower gallery index") {
    const std::vector<std::vector<double>> q{{0.0}, {0.0}}, g{{1.0}, {-1.0}};
    const auto r = retrieval_recall(q, g, std::vector<std::size_t>{1});
    CHECK(r.text_to_target == std::vector<double>{0.5});
}

TEST_CASE("recall matches the exhaustive-sort oracle") {
    std::mt19937_64 rng(14);
    const std::vector<std::size_t> ks{1, 5, 10};
    for (int trial = 0; trial < 20; ++trial) {
        auto text = random_points(20, 4, rng);
        auto target = random_points(20, 4, rng);
        for (std::size_t i = 0; i < 20; ++i) {
            for (std::size_t d = 0; d < 4; ++d) target[i][d] = 0.7 * text[i][d] + 0.6 * target[i][d];
        }
        const auto r = retrieval_recall(text, target, ks);
        CHECK(r.text_to_target == oracle::brute_recall(text, target, ks));
        CHECK(r.target_to_text == oracle::brute_recall(target, text, ks));
        for (std::size_t i = 1; i < ks.size(); ++i) CHECK(r.text_to_target[i] >= r.text_to_target[i - 1]);
        CHECK(r.mean_recall >= 0.0);
        CHECK(r.mean_recall <= 1.0);
    }
}

TEST_CASE("property: recall is invariant under a shared rigid motion") {
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> angle(0.0, 6.283185307179586);
    for (int trial = 0; trial < 20; ++trial) {
        const auto text = random_points(15, 2, rng);
        auto target = random_points(15, 2, rng);
        for (std::size_t i = 0; i < 15; ++i) {
            for (std::size_t d = 0; d < 2; ++d) target[i][d] = text[i][d] + 0.8 * target[i][d];
        }
        const double t = angle(rng), c = std::cos(t), s = std::sin(t);
        auto move = [&](std::vector<std::vector<double>> pts) {
            for (auto& p : pts) p = {c * p[0] - s * p[1] + 3.0, s * p[0] + c * p[1] - 1.0};
            return pts;
        };
        const auto base = retrieval_recall(text, target);
        const auto moved = retrieval_recall(move(text), move(target));
        CHECK(base.text_to_target == moved.text_to_target);
        CHECK(base.target_to_text == moved.target_to_text);
    }
}

TEST_CASE("drift report") {
    const EmbeddingSet before({"a", "b"}, Matrix(2, 2, 0.0));
    const auto none = drift_report(before, before);
    CHECK(none.displacement == std::vector<double>{0, 0});
    CHECK(none.moved == 0);
    const auto one = drift_report(before, before.with_vectors(Matrix(2, 2, {3, 4, 0, 0})));
    CHECK(one.displacement[0] == 5.0);
    CHECK(one.max == 5.0);
    CHECK(one.moved == 1);
    CHECK(one.mean == 2.5);
    CHECK(drift_report(before, retrofit(before, RelationGraph(2, {}), RetrofitConfig{}).embeddings).moved == 0);
    CHECK_THROWS_AS(drift_report(before, EmbeddingSet({"a"}, Matrix(1, 2))), DataError);
}

TEST_CASE("csv layouts") {
    std::ostringstream cohesion, recall, drift;
    write_cohesion_csv({0.5, 0.25, 3}, cohesion);
    CHECK(cohesion.str() == "edge_count,mean_edge_cosine,median_edge_cosine\n3,0.5,0.25\n");
    RecallReport r{{1, 5}, {0.5, 1.0}, {0.25, 1.0}, 0.6875};
    write_recall_csv(r, recall);
    CHECK(recall.str() ==
          "direction,k,recall\ntext_to_target,1,0.5\ntext_to_target,5,1\ntarget_to_text,1,0.25\n"
          "target_to_text,5,1\nmean,,0.6875\n");
    DriftReport d{{0.0, 5.0}, 2.5, 5.0, 1};
    write_drift_csv(d, std::vector<std::string>{"a", "b"}, drift);
    CHECK(drift.str() == "token,displacement\na,0\nb,5\n");
}
