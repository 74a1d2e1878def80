#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "grovle/embed_store.hpp"
#include "grovle/matrix.hpp"
#include "grovle/relation_graph.hpp"

namespace grovle {

// degree: alpha_i = number of neighbors of word i (isolated words are pinned).
// unit:   alpha_i = 1 for every word.
enum class AlphaMode { degree, unit };

AlphaMode parse_alpha_mode(std::string_view name);
std::string_view to_string(AlphaMode mode);

struct RetrofitConfig {
    double beta = 1.0;  // global multiplier on every edge weight
    AlphaMode alpha_mode = AlphaMode::degree;
    int iterations = 10;
    // Stop once a sweep moves no word by more than this (Euclidean).
    std::optional<double> tolerance;

    void validate() const;
};

struct RetrofitResult {
    EmbeddingSet embeddings;
    std::vector<double> objective_trace;  // one value per completed sweep
    int sweeps_run = 0;
};

// sum_i alpha_i |q_i - qhat_i|^2 + sum_{(i,j) in E} beta_ij |q_i - q_j|^2
double retrofit_objective(const Matrix& q, const Matrix& qhat, const RelationGraph& graph,
                          const RetrofitConfig& cfg);

// One in-place coordinate sweep in ascending index order. Each connected
// word is set to the exact minimizer of the objective over its own vector:
//   q_i <- (sum_j beta_ij q_j + alpha_i qhat_i) / (sum_j beta_ij + alpha_i)
// Returns the largest displacement of any single word.
double retrofit_sweep(Matrix& q, const Matrix& qhat, const RelationGraph& graph, const RetrofitConfig& cfg);

// Same update visiting words in `order` (a permutation of [0, n)).
double retrofit_sweep(Matrix& q, const Matrix& qhat, const RelationGraph& graph, const RetrofitConfig& cfg,
                      std::span<const std::size_t> order);

RetrofitResult retrofit(const EmbeddingSet& qhat, const RelationGraph& graph, const RetrofitConfig& cfg);

void save_objective_trace(std::span<const double> trace, const std::filesystem::path& path);

}  // namespace grovle
