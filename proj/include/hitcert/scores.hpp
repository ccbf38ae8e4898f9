#ifndef HITCERT_SCORES_HPP
#define HITCERT_SCORES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"

namespace hitcert {

enum class ScoreKind { MaxPool, SumPred, RankSum, LogLikelihoodRatio };

inline std::string to_string(ScoreKind kind) {
    switch (kind) {
        case ScoreKind::MaxPool: return "max";
        case ScoreKind::SumPred: return "sum";
        case ScoreKind::RankSum: return "ranksum";
        case ScoreKind::LogLikelihoodRatio: return "llr";
    }
    return "?";
}

inline ScoreKind parse_score_kind(const std::string& name) {
    if (name == "max") return ScoreKind::MaxPool;
    if (name == "sum") return ScoreKind::SumPred;
    if (name == "ranksum") return ScoreKind::RankSum;
    if (name == "llr") return ScoreKind::LogLikelihoodRatio;
    throw InputError("unknown score kind '" + name + "' (expected max, sum, ranksum or llr)");
}

/// Conformity score over a pooled arrangement. All shipped statistics are
/// symmetric in the test-position entries, so a score is fully determined
/// by (pooled predictor scores, set of test positions). Each statistic is
/// a per-element transform followed by max or sum over the test positions,
/// which lets the p-value engine cache the transform across permutation
/// draws.
class ScoreStatistic {
public:
    explicit ScoreStatistic(ScoreKind kind, double clamp_epsilon = 1e-12)
        : kind_(kind), clamp_epsilon_(clamp_epsilon) {
        if (!(clamp_epsilon > 0.0 && clamp_epsilon < 0.5))
            throw InputError("ScoreStatistic: clamp_epsilon must lie in (0, 0.5)");
    }

    ScoreKind kind() const { return kind_; }
    double clamp_epsilon() const { return clamp_epsilon_; }
    bool combine_is_max() const { return kind_ == ScoreKind::MaxPool; }

    /// Per-element table over the pooled scores. RankSum resolves ties by
    /// average rank (ranks ascending, 1-based); the log-likelihood ratio
    /// clamps predictions into [eps, 1-eps] before log(mu/(1-mu)).
    std::vector<double> prepare(std::span<const double> pooled) const {
        const std::size_t m = pooled.size();
        std::vector<double> table(m);
        switch (kind_) {
            case ScoreKind::MaxPool:
            case ScoreKind::SumPred:
                std::copy(pooled.begin(), pooled.end(), table.begin());
                break;
            case ScoreKind::RankSum: {
                std::vector<std::size_t> order(m);
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    return pooled[a] < pooled[b];
                });
                std::size_t i = 0;
                while (i < m) {
                    std::size_t j = i;
                    while (j + 1 < m && pooled[order[j + 1]] == pooled[order[i]]) ++j;
                    // ranks i+1 .. j+1 share the average rank
                    const double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
                    for (std::size_t r = i; r <= j; ++r) table[order[r]] = avg;
                    i = j + 1;
                }
                break;
            }
            case ScoreKind::LogLikelihoodRatio:
                for (std::size_t i = 0; i < m; ++i) {
                    const double mu = pooled[i];
                    if (!(mu >= 0.0 && mu <= 1.0))
                        throw InputError("llr score: pooled score " + std::to_string(mu) +
                                         " at index " + std::to_string(i) +
                                         " lies outside [0, 1]");
                    // evaluate on the side nearer zero, where the clamp is
                    // exact (1 - mu loses no precision for mu >= 0.5), so
                    // llr(mu) == -llr(1 - mu) holds to the last bit
                    if (mu <= 0.5) {
                        const double c = std::max(clamp_epsilon_, mu);
                        table[i] = std::log(c / (1.0 - c));
                    } else {
                        const double c = std::max(clamp_epsilon_, 1.0 - mu);
                        table[i] = -std::log(c / (1.0 - c));
                    }
                }
                break;
        }
        return table;
    }

    /// V for the arrangement placing `test_positions` in the test block.
    double evaluate(std::span<const double> pooled,
                    std::span<const std::size_t> test_positions) const {
        const std::size_t m = pooled.size();
        const std::size_t k = test_positions.size();
        if (k == 0 || k > m)
            throw InputError("ScoreStatistic::evaluate: need 1 <= k <= pooled size");
        std::vector<bool> seen(m, false);
        for (std::size_t pos : test_positions) {
            if (pos >= m)
                throw InputError("ScoreStatistic::evaluate: test position " +
                                 std::to_string(pos) + " out of range");
            if (seen[pos])
                throw InputError("ScoreStatistic::evaluate: duplicate test position " +
                                 std::to_string(pos));
            seen[pos] = true;
        }
        const std::vector<double> table = prepare(pooled);
        return combine(table, test_positions);
    }

    /// Combine step over a prepared table; positions are assumed valid.
    /// Values are reduced in sorted order so that equal test multisets give
    /// bitwise-equal scores: the tie in 1{V(identity) <= V(draw)} must fire
    /// whenever a draw occupies the test block with the same elements in
    /// any order, and floating-point addition is not associative.
    double combine(std::span<const double> table,
                   std::span<const std::size_t> test_positions) const {
        std::vector<double> values;
        values.reserve(test_positions.size());
        for (std::size_t pos : test_positions) values.push_back(table[pos]);
        return combine_values(values);
    }

    /// Reduces a buffer of test-block values (sorted in place).
    double combine_values(std::vector<double>& values) const {
        if (combine_is_max()) {
            double v = values.front();
            for (double x : values) v = std::max(v, x);
            return v;
        }
        std::sort(values.begin(), values.end());
        double v = 0.0;
        for (double x : values) v += x;
        return v;
    }

private:
    ScoreKind kind_;
    double clamp_epsilon_;
};

} // namespace hitcert

#endif // HITCERT_SCORES_HPP
