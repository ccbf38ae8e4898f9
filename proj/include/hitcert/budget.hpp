#ifndef HITCERT_BUDGET_HPP
#define HITCERT_BUDGET_HPP

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "core.hpp"
#include "nested.hpp"

namespace hitcert {

/// Outcome of the budget sweep. estimated_positives follows the fraction
/// convention: P(alpha) = (1 - alpha) - empty_fraction - deleted_fraction,
/// where the fractions are over the number of inputs. Negative estimates
/// are reported, not clipped.
struct BudgetPlan {
    std::vector<double> alpha_grid;
    std::size_t total_budget = 0;
    std::size_t per_input_cap = 0;

    struct SweepRow {
        double alpha = 0.0;
        std::size_t total_cost_before_deletion = 0;
        std::size_t total_cost = 0;
        double empty_fraction = 0.0;
        double deleted_fraction = 0.0;
        double estimated_positives = 0.0;
    };
    std::vector<SweepRow> sweep;

    double chosen_alpha = 0.0;
    double estimated_positives = 0.0;
    double empty_fraction = 0.0;
    double deleted_fraction = 0.0;
    /// Per input: surviving shortlist (original candidate indices); empty
    /// for inputs that were never certified or whose set was deleted.
    std::vector<std::vector<std::size_t>> chosen_sets;
    std::vector<bool> deleted; // per input, at the chosen alpha
    bool exhausted_budget_warning = false; // every nonempty set was deleted
};

namespace budget_detail {

struct LevelOutcome {
    BudgetPlan::SweepRow row;
    std::vector<bool> deleted;
};

/// Deletion pass for one alpha: drop the largest sets (ties toward the
/// earlier input) until the total size fits, then score the level.
inline LevelOutcome evaluate_level(const std::vector<std::size_t>& sizes, double alpha,
                                   std::size_t total_budget) {
    const std::size_t T = sizes.size();
    std::size_t cost = 0, empties = 0;
    for (std::size_t s : sizes) {
        cost += s;
        if (s == 0) ++empties;
    }

    LevelOutcome out;
    out.row.alpha = alpha;
    out.row.total_cost_before_deletion = cost;
    out.deleted.assign(T, false);

    std::size_t n_deleted = 0;
    if (cost > total_budget) {
        std::vector<std::size_t> order(T);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            if (sizes[x] != sizes[y]) return sizes[x] > sizes[y];
            return x < y;
        });
        for (std::size_t t : order) {
            if (cost <= total_budget) break;
            if (sizes[t] == 0) break;
            cost -= sizes[t];
            out.deleted[t] = true;
            ++n_deleted;
        }
    }

    out.row.total_cost = cost;
    out.row.empty_fraction = static_cast<double>(empties) / static_cast<double>(T);
    out.row.deleted_fraction = static_cast<double>(n_deleted) / static_cast<double>(T);
    out.row.estimated_positives = (1.0 - alpha) - out.row.empty_fraction - out.row.deleted_fraction;
    return out;
}

} // namespace budget_detail

/// Spreads a fixed validation budget across many inputs: for each alpha in
/// the grid, run the design procedure per input, delete the largest
/// surviving sets (ties broken toward the earlier input) until the total
/// size fits the budget, and score the level by
/// (1 - alpha) - empty_fraction - deleted_fraction. The alpha with the
/// highest score wins; ties go to the smaller alpha. Heuristic only.
inline BudgetPlan allocate(const LabeledPool& pool, const std::vector<CandidateBatch>& inputs,
                           const ScoreStatistic& stat, const std::vector<WeightFn>& wfn_per_input,
                           const std::vector<double>& alpha_grid, std::size_t total_budget,
                           std::size_t B, RngStream rng) {
    if (inputs.empty()) throw InputError("allocate: no inputs");
    if (alpha_grid.empty()) throw InputError("allocate: empty alpha grid");
    for (double a : alpha_grid)
        if (!(a > 0.0 && a < 1.0)) throw InputError("allocate: alphas must lie in (0, 1)");
    if (total_budget < 1) throw InputError("allocate: total budget must be at least 1");
    if (wfn_per_input.size() != inputs.size())
        throw InputError("allocate: need one weight function per input");

    const std::size_t T = inputs.size();
    std::size_t cap = 0;
    for (const auto& b : inputs) cap = std::max(cap, b.size());

    // One profile per input; the threshold sweep reuses it across alphas.
    std::vector<std::vector<double>> monotone(T);
    for (std::size_t t = 0; t < T; ++t) {
        auto [profile, outcome] = design(pool, inputs[t], stat, wfn_per_input[t],
                                         alpha_grid.front(), B, rng.substream(t));
        (void)outcome;
        monotone[t] = profile.monotone;
    }

    BudgetPlan plan;
    plan.alpha_grid = alpha_grid;
    plan.total_budget = total_budget;
    plan.per_input_cap = cap;

    double best_score = -std::numeric_limits<double>::infinity();
    double best_alpha = std::numeric_limits<double>::infinity();
    std::size_t best_row = 0;
    std::vector<std::vector<std::size_t>> best_sets;
    std::vector<bool> best_deleted;
    bool best_warning = false;

    for (std::size_t a = 0; a < alpha_grid.size(); ++a) {
        const double alpha = alpha_grid[a];
        std::vector<std::size_t> sizes(T);
        for (std::size_t t = 0; t < T; ++t) sizes[t] = first_crossing(monotone[t], alpha);

        budget_detail::LevelOutcome level = budget_detail::evaluate_level(sizes, alpha,
                                                                          total_budget);
        plan.sweep.push_back(level.row);

        if (level.row.estimated_positives > best_score ||
            (level.row.estimated_positives == best_score && alpha < best_alpha)) {
            best_score = level.row.estimated_positives;
            best_alpha = alpha;
            best_row = a;
            best_sets.assign(T, {});
            std::size_t n_deleted = 0, empties = 0;
            for (std::size_t t = 0; t < T; ++t) {
                if (level.deleted[t]) ++n_deleted;
                if (sizes[t] == 0) ++empties;
                if (!level.deleted[t])
                    for (std::size_t j = 0; j < sizes[t]; ++j) best_sets[t].push_back(j);
            }
            best_deleted = level.deleted;
            best_warning = n_deleted > 0 && n_deleted + empties == T;
        }
    }

    plan.chosen_alpha = alpha_grid[best_row];
    plan.estimated_positives = plan.sweep[best_row].estimated_positives;
    plan.empty_fraction = plan.sweep[best_row].empty_fraction;
    plan.deleted_fraction = plan.sweep[best_row].deleted_fraction;
    plan.chosen_sets = std::move(best_sets);
    plan.deleted = std::move(best_deleted);
    plan.exhausted_budget_warning = best_warning;
    return plan;
}

inline BudgetPlan allocate(const LabeledPool& pool, const std::vector<CandidateBatch>& inputs,
                           const ScoreStatistic& stat, const WeightFn& shared_wfn,
                           const std::vector<double>& alpha_grid, std::size_t total_budget,
                           std::size_t B, RngStream rng) {
    std::vector<WeightFn> per_input(inputs.size(), shared_wfn);
    return allocate(pool, inputs, stat, per_input, alpha_grid, total_budget, B, rng);
}

} // namespace hitcert

#endif // HITCERT_BUDGET_HPP
