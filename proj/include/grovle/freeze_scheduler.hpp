#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grovle/matrix.hpp"

namespace grovle {

struct TaskSpec {
    std::string task_id;
    std::size_t dataset_count = 1;
};

struct TaskBudget {
    std::string task_id;
    std::size_t budget = 0;                   // K for this task
    std::vector<std::size_t> dataset_budgets;  // sums to budget
};

struct FreezePlan {
    std::size_t dim = 0;
    std::size_t per_task_budget = 0;  // floor(D / T)
    std::vector<TaskBudget> tasks;

    std::size_t total_budget() const { return per_task_budget * tasks.size(); }
};

// K = floor(D / T) per task, split across a task's datasets as evenly as
// possible with the remainder going to its earliest datasets. Features left
// over by the floor division are never frozen.
FreezePlan freeze_budget(std::size_t dim, std::span<const TaskSpec> tasks);

// What "variance of a feature" is measured on.
enum class VarianceSource {
    delta,  // after - before, per word
    value,  // the post-task values themselves
};

VarianceSource parse_variance_source(std::string_view name);

// Candidate features ordered by population variance across vocabulary rows,
// descending; ties by ascending feature index.
std::vector<std::size_t> rank_by_variance(const Matrix& before, const Matrix& after,
                                          std::span<const std::size_t> candidates,
                                          VarianceSource source = VarianceSource::delta);

class FreezeState {
public:
    struct Entry {
        std::string task_id;
        std::vector<std::size_t> features;
        bool operator==(const Entry&) const = default;
    };

    FreezeState() = default;
    explicit FreezeState(std::size_t dim) : dim_(dim), owner_(dim) {}

    std::size_t dim() const { return dim_; }
    bool is_frozen(std::size_t feature) const { return owner_.at(feature).has_value(); }
    const std::optional<std::string>& owner(std::size_t feature) const { return owner_.at(feature); }
    std::size_t frozen_count() const;
    std::vector<std::size_t> free_features() const;
    const std::vector<Entry>& history() const { return history_; }

    // Marks `features` frozen by `task_id` and appends one history entry
    // (none when `features` is empty). Throws if a feature is already frozen
    // or out of range, or if `task_id` already owns a history entry.
    void freeze(std::span<const std::size_t> features, const std::string& task_id);

    bool operator==(const FreezeState&) const = default;

private:
    std::size_t dim_ = 0;
    std::vector<std::optional<std::string>> owner_;
    std::vector<Entry> history_;
};

// Freezes the first `count` entries of `ranking` under `task_id`.
FreezeState freeze_top(const FreezeState& state, std::span<const std::size_t> ranking, std::size_t count,
                       const std::string& task_id);

// Zeroes gradient columns of frozen features.
Matrix mask_gradient(const Matrix& grad, const FreezeState& state);
void mask_gradient_inplace(Matrix& grad, const FreezeState& state);

// "dim=D" header, then "feature_index task_id" lines in history order.
void save_freeze_state(const FreezeState& state, const std::filesystem::path& path);
FreezeState load_freeze_state(const std::filesystem::path& path);

}  // namespace grovle
