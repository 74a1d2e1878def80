#pragma once

// Independent reference computations used only by the tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "grovle/matrix.hpp"
#include "grovle/relation_graph.hpp"
#include "grovle/retrofitter.hpp"

namespace oracle {

// Solves (diag(alpha) + L_beta) Q = diag(alpha) Qhat densely. Words with no
// edges and alpha = 0 keep their original vector.
inline grovle::Matrix dense_retrofit(const grovle::Matrix& qhat, std::size_t n,
                                     const std::vector<grovle::Edge>& edges, double beta,
                                     grovle::AlphaMode mode) {
    std::vector<double> degree(n, 0.0);
    for (const auto& e : edges) {
        degree[e.i] += 1.0;
        degree[e.j] += 1.0;
    }
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::MatrixXd rhs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(qhat.cols()));
    for (const auto& e : edges) {
        const auto i = static_cast<Eigen::Index>(e.i), j = static_cast<Eigen::Index>(e.j);
        const double w = beta * e.weight;
        a(i, i) += w;
        a(j, j) += w;
        a(i, j) -= w;
        a(j, i) -= w;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double alpha = mode == grovle::AlphaMode::degree ? degree[i] : 1.0;
        const auto ii = static_cast<Eigen::Index>(i);
        if (alpha == 0.0 && degree[i] == 0.0) {
            a(ii, ii) = 1.0;
            for (std::size_t d = 0; d < qhat.cols(); ++d) rhs(ii, static_cast<Eigen::Index>(d)) = qhat(i, d);
            continue;
        }
        a(ii, ii) += alpha;
        for (std::size_t d = 0; d < qhat.cols(); ++d) rhs(ii, static_cast<Eigen::Index>(d)) = alpha * qhat(i, d);
    }
    const Eigen::MatrixXd sol = a.fullPivLu().solve(rhs);
    grovle::Matrix out(n, qhat.cols());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < qhat.cols(); ++d) out(i, d) = sol(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
    }
    return out;
}

inline std::vector<grovle::Edge> random_edges(std::size_t n, std::size_t count, std::mt19937_64& rng,
                                              bool random_weights = false) {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    std::vector<grovle::Edge> edges;
    if (n < 2) return edges;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::uniform_real_distribution<double> weight(0.25, 2.0);
    const std::size_t max_edges = n * (n - 1) / 2;
    while (edges.size() < std::min(count, max_edges)) {
        std::size_t i = pick(rng), j = pick(rng);
        if (i == j) continue;
        if (i > j) std::swap(i, j);
        if (!seen.insert({i, j}).second) continue;
        edges.push_back({i, j, random_weights ? weight(rng) : 1.0});
    }
    return edges;
}

// Edge set as sorted (i, j) pairs with i < j.
using EdgeSet = std::set<std::pair<std::size_t, std::size_t>>;

inline EdgeSet edge_set(const grovle::RelationGraph& g) {
    EdgeSet out;
    for (const auto& e : g.edges()) out.insert({e.i, e.j});
    return out;
}

// Counts pairs from already-tokenized samples, thresholds, and links each
// word to its top_k partners. PMI comparisons are exact: for a fixed word w,
// pmi(w,x) > pmi(w,y)  <=>  count(w,x) * part(y) > count(w,y) * part(x).
inline EdgeSet brute_pmi_graph(const std::vector<std::vector<std::string>>& samples, std::uint64_t min_count,
                               std::size_t top_k, const std::vector<std::string>& vocab) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> raw;
    for (const auto& sample : samples) {
        std::vector<std::string> uniq = sample;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        for (std::size_t a = 0; a < uniq.size(); ++a) {
            for (std::size_t b = a + 1; b < uniq.size(); ++b) raw[{uniq[a], uniq[b]}] += 1;
        }
    }
    std::map<std::pair<std::string, std::string>, std::uint64_t> kept;
    std::map<std::string, std::uint64_t> part;
    for (const auto& [p, c] : raw) {
        if (c < min_count) continue;
        kept[p] = c;
        part[p.first] += c;
        part[p.second] += c;
    }
    auto index = [&](const std::string& w) -> long {
        for (std::size_t i = 0; i < vocab.size(); ++i) {
            if (vocab[i] == w) return static_cast<long>(i);
        }
        return -1;
    };
    EdgeSet out;
    for (std::size_t w = 0; w < vocab.size(); ++w) {
        struct Cand {
            std::size_t partner;
            std::uint64_t count;
            std::uint64_t part;
        };
        std::vector<Cand> cands;
        for (const auto& [p, c] : kept) {
            std::string other;
            if (p.first == vocab[w]) other = p.second;
            else if (p.second == vocab[w]) other = p.first;
            else continue;
            const long j = index(other);
            if (j < 0) continue;
            cands.push_back({static_cast<std::size_t>(j), c, part[other]});
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
            const unsigned __int128 lhs = static_cast<unsigned __int128>(x.count) * y.part;
            const unsigned __int128 rhs = static_cast<unsigned __int128>(y.count) * x.part;
            if (lhs != rhs) return lhs > rhs;
            return x.partner < y.partner;
        });
        for (std::size_t r = 0; r < std::min(top_k, cands.size()); ++r) {
            out.insert({std::min(w, cands[r].partner), std::max(w, cands[r].partner)});
        }
    }
    return out;
}

// Recall@k by fully sorting the gallery for every query.
inline std::vector<double> brute_recall(const std::vector<std::vector<double>>& queries,
                                        const std::vector<std::vector<double>>& gallery,
                                        const std::vector<std::size_t>& ks) {
    std::vector<double> hits(ks.size(), 0.0);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            double d = 0.0;
            for (std::size_t k = 0; k < queries[q].size(); ++k) d += (queries[q][k] - gallery[g][k]) * (queries[q][k] - gallery[g][k]);
            order.emplace_back(d, g);
        }
        std::sort(order.begin(), order.end());
        std::size_t pos = 0;
        while (order[pos].second != q) ++pos;
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (pos < ks[i]) hits[i] += 1.0;
        }
    }
    for (double& h : hits) h /= static_cast<double>(queries.size());
    return hits;
}

inline double max_abs_diff(const grovle::Matrix& a, const grovle::Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

}  // namespace oracle
