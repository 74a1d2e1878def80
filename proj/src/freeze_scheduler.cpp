#include "grovle/freeze_scheduler.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "grovle/embed_store.hpp"
#include "grovle/error.hpp"

namespace grovle {

FreezePlan freeze_budget(std::size_t dim, std::span<const TaskSpec> tasks) {
    if (tasks.empty()) throw DataError("freeze_budget: no tasks");
    if (dim < tasks.size()) {
        throw DataError("freeze_budget: dimension " + std::to_string(dim) + " is smaller than the task count " +
                        std::to_string(tasks.size()));
    }
    FreezePlan plan;
    plan.dim = dim;
    plan.per_task_budget = dim / tasks.size();
    for (const auto& task : tasks) {
        if (task.dataset_count == 0) throw DataError("freeze_budget: task '" + task.task_id + "' has no datasets");
        TaskBudget tb{task.task_id, plan.per_task_budget, {}};
        const std::size_t share = plan.per_task_budget / task.dataset_count;
        const std::size_t remainder = plan.per_task_budget % task.dataset_count;
        for (std::size_t d = 0; d < task.dataset_count; ++d) tb.dataset_budgets.push_back(share + (d < remainder ? 1 : 0));
        plan.tasks.push_back(std::move(tb));
    }
    return plan;
}

VarianceSource parse_variance_source(std::string_view name) {
    if (name == "delta") return VarianceSource::delta;
    if (name == "value") return VarianceSource::value;
    throw DataError("unknown variance source '" + std::string(name) + "' (expected delta or value)");
}

std::vector<std::size_t> rank_by_variance(const Matrix& before, const Matrix& after,
                                          std::span<const std::size_t> candidates, VarianceSource source) {
    if (!before.same_shape(after)) throw DataError("rank_by_variance: tables differ in shape");
    if (candidates.empty()) throw DataError("rank_by_variance: empty candidate set");
    const std::size_t rows = before.rows();

    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(candidates.size());
    for (const std::size_t f : candidates) {
        if (f >= before.cols()) throw DataError("rank_by_variance: feature index out of range");
        auto sample = [&](std::size_t r) {
            return source == VarianceSource::delta ? after(r, f) - before(r, f) : after(r, f);
        };
        double mean = 0.0;
        for (std::size_t r = 0; r < rows; ++r) mean += sample(r);
        mean = rows ? mean / static_cast<double>(rows) : 0.0;
        double var = 0.0;
        for (std::size_t r = 0; r < rows; ++r) var += (sample(r) - mean) * (sample(r) - mean);
        var = rows ? var / static_cast<double>(rows) : 0.0;
        scored.emplace_back(var, f);
    }
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });

    std::vector<std::size_t> ranking;
    ranking.reserve(scored.size());
    for (const auto& [var, f] : scored) ranking.push_back(f);
    return ranking;
}

std::size_t FreezeState::frozen_count() const {
    return static_cast<std::size_t>(std::count_if(owner_.begin(), owner_.end(), [](const auto& o) { return o.has_value(); }));
}

std::vector<std::size_t> FreezeState::free_features() const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < dim_; ++f) {
        if (!owner_[f]) out.push_back(f);
    }
    return out;
}

void FreezeState::freeze(std::span<const std::size_t> features, const std::string& task_id) {
    if (features.empty()) return;
    if (!is_valid_token(task_id)) throw DataError("freeze: task id must be non-empty without whitespace");
    if (std::any_of(history_.begin(), history_.end(), [&](const Entry& e) { return e.task_id == task_id; })) {
        throw DataError("freeze: task '" + task_id + "' already has a frozen set");
    }
    std::vector<std::size_t> seen;
    for (const std::size_t f : features) {
        if (f >= dim_) throw DataError("freeze: feature " + std::to_string(f) + " out of range");
        if (owner_[f] || std::find(seen.begin(), seen.end(), f) != seen.end()) {
            throw DataError("freeze: feature " + std::to_string(f) + " is already frozen");
        }
        seen.push_back(f);
    }
    for (const std::size_t f : features) owner_[f] = task_id;
    history_.push_back({task_id, std::vector<std::size_t>(features.begin(), features.end())});
}

FreezeState freeze_top(const FreezeState& state, std::span<const std::size_t> ranking, std::size_t count,
                       const std::string& task_id) {
    if (count > ranking.size()) {
        throw DataError("freeze_top: asked to freeze " + std::to_string(count) + " features from a ranking of " +
                        std::to_string(ranking.size()));
    }
    FreezeState next = state;
    next.freeze(ranking.first(count), task_id);
    return next;
}

void mask_gradient_inplace(Matrix& grad, const FreezeState& state) {
    if (grad.cols() != state.dim()) throw DataError("mask_gradient: gradient width differs from freeze state");
    const auto frozen = [&] {
        std::vector<std::size_t> out;
        for (std::size_t f = 0; f < state.dim(); ++f) {
            if (state.is_frozen(f)) out.push_back(f);
        }
        return out;
    }();
    if (frozen.empty()) return;
    for (std::size_t r = 0; r < grad.rows(); ++r) {
        auto row = grad.row(r);
        for (const std::size_t f : frozen) row[f] = 0.0;
    }
}

Matrix mask_gradient(const Matrix& grad, const FreezeState& state) {
    Matrix out = grad;
    mask_gradient_inplace(out, state);
    return out;
}

void save_freeze_state(const FreezeState& state, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "dim=" << state.dim() << '\n';
    for (const auto& entry : state.history()) {
        for (const std::size_t f : entry.features) out << f << ' ' << entry.task_id << '\n';
    }
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

FreezeState load_freeze_state(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open freeze state " + path.string());
    std::string line;
    if (!std::getline(in, line) || !line.starts_with("dim=")) throw DataError("freeze state: missing 'dim=' header");
    std::size_t dim = 0;
    try {
        std::size_t used = 0;
        dim = std::stoul(line.substr(4), &used);
        if (used != line.size() - 4) throw DataError("");
    } catch (const std::exception&) {
        throw DataError("freeze state: malformed header '" + line + "'");
    }

    FreezeState state(dim);
    std::string current;
    std::vector<std::size_t> group;
    auto flush = [&] {
        state.freeze(group, current);
        group.clear();
    };
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        long long feature = -1;
        std::string task, extra;
        if (!(fields >> feature)) continue;
        if (feature < 0 || !(fields >> task) || (fields >> extra)) {
            throw DataError("freeze state line " + std::to_string(line_no) + ": expected 'feature_index task_id'");
        }
        if (task != current && !group.empty()) flush();
        current = task;
        group.push_back(static_cast<std::size_t>(feature));
    }
    if (!group.empty()) flush();
    return state;
}

}  // namespace grovle
