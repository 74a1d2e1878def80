#include "grovle/retrofitter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "grovle/error.hpp"

namespace grovle {

namespace {

void check_shapes(const Matrix& q, const Matrix& qhat, const RelationGraph& graph) {
    if (!q.same_shape(qhat)) throw DataError("retrofit: working and original tables differ in shape");
    if (graph.node_count() != q.rows()) {
        throw DataError("retrofit: graph has " + std::to_string(graph.node_count()) + " nodes, vocabulary has " +
                        std::to_string(q.rows()));
    }
}

double alpha_for(const RelationGraph& graph, std::size_t i, AlphaMode mode) {
    return mode == AlphaMode::degree ? static_cast<double>(graph.degree(i)) : 1.0;
}

}  // namespace

AlphaMode parse_alpha_mode(std::string_view name) {
    if (name == "degree") return AlphaMode::degree;
    if (name == "unit") return AlphaMode::unit;
    throw DataError("unknown alpha mode '" + std::string(name) + "' (expected degree or unit)");
}

std::string_view to_string(AlphaMode mode) { return mode == AlphaMode::degree ? "degree" : "unit"; }

void RetrofitConfig::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw DataError("retrofit: beta must be positive");
    if (iterations < 1) throw DataError("retrofit: iterations must be at least 1");
    if (tolerance && !(*tolerance >= 0.0)) throw DataError("retrofit: tolerance must be nonnegative");
}

double retrofit_objective(const Matrix& q, const Matrix& qhat, const RelationGraph& graph, const RetrofitConfig& cfg) {
    check_shapes(q, qhat, graph);
    double total = 0.0;
    for (std::size_t i = 0; i < q.rows(); ++i) {
        const double alpha = alpha_for(graph, i, cfg.alpha_mode);
        if (alpha != 0.0) total += alpha * squared_distance(q.row(i), qhat.row(i));
    }
    for (const auto& e : graph.edges()) total += cfg.beta * e.weight * squared_distance(q.row(e.i), q.row(e.j));
    return total;
}

double retrofit_sweep(Matrix& q, const Matrix& qhat, const RelationGraph& graph, const RetrofitConfig& cfg,
                      std::span<const std::size_t> order) {
    check_shapes(q, qhat, graph);
    const std::size_t dim = q.cols();
    std::vector<double> next(dim);
    double max_move = 0.0;
    for (const std::size_t i : order) {
        if (i >= q.rows()) throw DataError("retrofit_sweep: order index out of range");
        const auto nbrs = graph.neighbors(i);
        if (nbrs.empty()) continue;  // pinned at qhat_i
        const auto weights = graph.neighbor_weights(i);
        const double alpha = alpha_for(graph, i, cfg.alpha_mode);

        const auto orig = qhat.row(i);
        for (std::size_t d = 0; d < dim; ++d) next[d] = alpha * orig[d];
        double denom = alpha;
        for (std::size_t k = 0; k < nbrs.size(); ++k) {
            const double w = cfg.beta * weights[k];
            const auto nb = q.row(nbrs[k]);
            for (std::size_t d = 0; d < dim; ++d) next[d] += w * nb[d];
            denom += w;
        }
        auto row = q.row(i);
        double move = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            const double v = next[d] / denom;
            move += (v - row[d]) * (v - row[d]);
            row[d] = v;
        }
        max_move = std::max(max_move, std::sqrt(move));
    }
    return max_move;
}

double retrofit_sweep(Matrix& q, const Matrix& qhat, const RelationGraph& graph, const RetrofitConfig& cfg) {
    std::vector<std::size_t> order(q.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    return retrofit_sweep(q, qhat, graph, cfg, order);
}

RetrofitResult retrofit(const EmbeddingSet& qhat, const RelationGraph& graph, const RetrofitConfig& cfg) {
    cfg.validate();
    const Matrix& original = qhat.vectors();
    Matrix q = original;
    check_shapes(q, original, graph);

    RetrofitResult result;
    for (int sweep = 0; sweep < cfg.iterations; ++sweep) {
        const double moved = retrofit_sweep(q, original, graph, cfg);
        if (!std::isfinite(moved)) throw DataError("retrofit: non-finite values after sweep " + std::to_string(sweep + 1));
        result.objective_trace.push_back(retrofit_objective(q, original, graph, cfg));
        result.sweeps_run = sweep + 1;
        if (cfg.tolerance && moved < *cfg.tolerance) break;
    }
    result.embeddings = qhat.with_vectors(std::move(q));
    return result;
}

void save_objective_trace(std::span<const double> trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "sweep,objective\n" << std::setprecision(17);
    for (std::size_t s = 0; s < trace.size(); ++s) out << s + 1 << ',' << trace[s] << '\n';
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace grovle
