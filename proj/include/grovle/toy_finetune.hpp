#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grovle/embed_store.hpp"
#include "grovle/error.hpp"
#include "grovle/freeze_scheduler.hpp"
#include "grovle/matrix.hpp"

namespace grovle {

enum class ModelKind { average, self_attention };

ModelKind parse_model_kind(std::string_view name);
std::string_view to_string(ModelKind kind);

// Text branch: pooled phrase embedding (D) -> fc1 (D x H) -> ReLU -> fc2 (H x J).
// Visual branch: target features (V_in) -> visual (V_in x J).
// Self-attention pooling scores word i by attn . [w_i ; C] + attn_bias where
// C is the phrase mean; attn holds the word half followed by the context half.
struct TaskModelParams {
    ModelKind kind = ModelKind::average;
    Matrix fc1_w;
    std::vector<double> fc1_b;
    Matrix fc2_w;
    std::vector<double> fc2_b;
    std::vector<double> attn_w;  // 2D entries, empty for the average model
    double attn_b = 0.0;
    Matrix visual_w;
    std::vector<double> visual_b;

    std::size_t embed_dim() const { return fc1_w.rows(); }
    std::size_t hidden_dim() const { return fc1_w.cols(); }
    std::size_t joint_dim() const { return fc2_w.cols(); }
    std::size_t feature_dim() const { return visual_w.rows(); }

    // Zero-filled parameters of the same shape, used as a gradient buffer.
    TaskModelParams zeros_like() const;
    // Visits every scalar parameter in a fixed order.
    template <class F>
    void for_each_value(F&& f);
    void validate() const;
    bool operator==(const TaskModelParams&) const = default;
};

// Symmetric uniform init scaled by 1/sqrt(fan_in).
TaskModelParams init_params(ModelKind kind, std::size_t embed_dim, std::size_t hidden_dim, std::size_t joint_dim,
                            std::size_t feature_dim, std::uint64_t seed);

void save_params(const TaskModelParams& params, const std::filesystem::path& path);
TaskModelParams load_params(const std::filesystem::path& path);

struct ToySample {
    std::vector<std::size_t> phrase;  // vocabulary indices
    std::vector<double> target;       // visual features, V_in entries
};

struct ToyTask {
    std::string task_id;
    std::vector<ToySample> samples;

    std::size_t feature_dim() const { return samples.empty() ? 0 : samples.front().target.size(); }
    void validate(std::size_t vocab_size) const;
};

// Lines "token token ... <TAB> v1 v2 ... vV". Tokens must be in the vocabulary.
ToyTask load_toy_task(const std::filesystem::path& path, const EmbeddingSet& vocab, std::string task_id);
void save_toy_task(const ToyTask& task, const EmbeddingSet& vocab, const std::filesystem::path& path);

struct SyntheticTaskConfig {
    std::size_t samples = 64;
    std::size_t feature_dim = 16;
    std::size_t min_phrase = 1;
    std::size_t max_phrase = 4;
    double noise = 0.05;
    std::uint64_t seed = 0;
};

// Phrases drawn uniformly from the vocabulary; each target is a fixed random
// projection of the phrase mean plus Gaussian noise.
ToyTask make_synthetic_task(const Matrix& embeddings, std::string task_id, const SyntheticTaskConfig& cfg);

// Thrown where the forward pass needs a nonempty phrase.
class EmptyPhraseError : public DataError {
public:
    EmptyPhraseError() : DataError("phrase must contain at least one word") {}
};

std::vector<double> average_embedding_forward(std::span<const std::size_t> phrase, const Matrix& embeddings,
                                              const TaskModelParams& params);

struct AttentionOutput {
    std::vector<double> output;
    std::vector<double> scores;  // softmax over the phrase
};

AttentionOutput self_attention_forward(std::span<const std::size_t> phrase, const Matrix& embeddings,
                                       const TaskModelParams& params);

// Dispatches on params.kind.
std::vector<double> encode_text(std::span<const std::size_t> phrase, const Matrix& embeddings,
                                const TaskModelParams& params);
std::vector<double> encode_target(std::span<const double> features, const TaskModelParams& params);

std::vector<std::vector<double>> encode_texts(const ToyTask& task, const Matrix& embeddings,
                                              const TaskModelParams& params);
std::vector<std::vector<double>> encode_targets(const ToyTask& task, const TaskModelParams& params);

// max(0, margin + |anchor - positive| - |anchor - negative|)
double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, double margin);

// alpha * sum_i |e_i - e0_i|^2
double embedding_anchor_penalty(const Matrix& embeddings, const Matrix& reference, double alpha);

struct TrainConfig {
    ModelKind model = ModelKind::average;
    double margin = 0.1;
    double learning_rate = 0.01;
    int epochs = 10;
    std::uint64_t seed = 0;
    double alpha_anchor = 1e-4;
    std::size_t batch_size = 16;
    std::size_t hidden_dim = 0;  // 0 selects the embedding dimension
    std::size_t joint_dim = 64;

    void validate() const;
};

struct TrainResult {
    Matrix embeddings;
    TaskModelParams params;
    std::vector<double> loss_trace;  // mean batch objective per epoch
};

// Seeded mini-batch gradient descent on the within-batch triplet loss plus
// the anchor penalty toward the incoming table. Embedding gradients are
// masked by `freeze`; model parameters always train.
//
// The seed fixes the parameter init and a sample permutation drawn once;
// batches are consecutive slices of that permutation and each sample's
// negative is the target of the next sample in its batch (cyclically).
TrainResult train_task(const Matrix& embeddings, const ToyTask& task, const TrainConfig& cfg,
                       const FreezeState& freeze);

// Full single-example objective used by the gradient checker.
struct GradCheckCase {
    std::vector<std::size_t> phrase;
    std::vector<double> positive;  // visual features
    std::vector<double> negative;
    Matrix embeddings;
    Matrix reference;  // anchor target
    TaskModelParams params;
    double margin = 0.1;
    double alpha = 1e-4;
};

// Analytic loss and gradients. `embedding_grad` covers the whole table.
double grad_check_loss(const GradCheckCase& c, Matrix* embedding_grad, TaskModelParams* param_grad);

// Thrown when a case sits too close to a hinge or ReLU kink for finite
// differences to be meaningful.
class BoundaryError : public DataError {
public:
    using DataError::DataError;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t entries_checked = 0;
};

// Central differences over every embedding entry of the phrase rows and every
// model parameter. Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport gradient_check(const GradCheckCase& c, double epsilon = 1e-5);

struct GradCheckDims {
    std::size_t vocab = 12;
    std::size_t embed_dim = 6;
    std::size_t hidden_dim = 5;
    std::size_t joint_dim = 4;
    std::size_t feature_dim = 5;
    std::size_t max_phrase = 5;
};

GradCheckCase random_grad_check_case(ModelKind kind, const GradCheckDims& dims, std::uint64_t seed);

// Draws random cases from `seed` until one is clear of every kink, then
// checks it. Throws BoundaryError after `max_retries` failed draws.
GradCheckReport gradient_check(ModelKind kind, const GradCheckDims& dims, std::uint64_t seed,
                               double epsilon = 1e-5, int max_retries = 20);

template <class F>
void TaskModelParams::for_each_value(F&& f) {
    for (double& v : fc1_w.values()) f(v);
    for (double& v : fc1_b) f(v);
    for (double& v : fc2_w.values()) f(v);
    for (double& v : fc2_b) f(v);
    for (double& v : attn_w) f(v);
    if (kind == ModelKind::self_attention) f(attn_b);
    for (double& v : visual_w.values()) f(v);
    for (double& v : visual_b) f(v);
}

}  // namespace grovle
