#ifndef HITCERT_PVALUE_HPP
#define HITCERT_PVALUE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"
#include "scores.hpp"
#include "weights.hpp"

namespace hitcert {

struct CertificationResult {
    double p_value = 1.0;
    bool certified = false;
    double alpha = 0.0;
    std::size_t k = 0;
    std::size_t b_used = 0;
};

/// How random rearrangements are drawn. All shipped scores depend only on
/// the multiset of test occupants, so a uniform k-subset of the pooled
/// elements is distributed like the test block of a uniform permutation;
/// Subset exploits that. FullPermutation draws whole permutations and is
/// kept for the reduction-soundness check.
enum class PermutationSampler { Subset, FullPermutation };

/// One sampled rearrangement: which pooled elements occupy the test block,
/// and the product of their weights.
struct PermutationDraw {
    std::vector<std::size_t> test_occupants;
    double joint_weight = 1.0;
};

/// Raised when exact enumeration would exceed the configured subset cap.
class EnumerationCapError : public InputError {
public:
    using InputError::InputError;
};

namespace detail {

/// Working arrays for one certification instance: inactive calibration
/// rows followed by the first k batch rows.
struct PooledInstance {
    std::vector<double> scores;
    std::vector<double> weights;
    std::size_t n0 = 0;
    std::size_t k = 0;
    std::size_t size() const { return n0 + k; }
};

inline PooledInstance make_pooled(const LabeledPool& pool, const CandidateBatch& batch,
                                  std::size_t k, const WeightFn& wfn,
                                  bool normalize_weights = true) {
    if (pool.dimension() != batch.dimension())
        throw InputError("certification: pool dimension " + std::to_string(pool.dimension()) +
                         " does not match batch dimension " + std::to_string(batch.dimension()));
    if (pool.inactive_count() == 0)
        throw InputError("certification: calibration pool has no inactive rows (n0 = 0)");
    if (k == 0 || k > batch.size())
        throw InputError("certification: prefix size k = " + std::to_string(k) +
                         " outside [1, " + std::to_string(batch.size()) + "]");
    const std::vector<double>& pool_scores = pool.predictor_scores();

    PooledInstance inst;
    inst.n0 = pool.inactive_count();
    inst.k = k;
    inst.scores.reserve(inst.size());
    inst.weights.reserve(inst.size());
    for (std::size_t i : pool.inactive_indices()) {
        inst.scores.push_back(pool_scores[i]);
        inst.weights.push_back(wfn.pool_row_weight(pool, i));
    }
    for (std::size_t j = 0; j < k; ++j) {
        inst.scores.push_back(batch.predictor_scores()[j]);
        inst.weights.push_back(wfn.batch_row_weight(batch, j));
    }
    double max_w = 0.0;
    for (double w : inst.weights) {
        if (!(w > 0.0) || !std::isfinite(w))
            throw InputError("certification: weights must be positive and finite, got " +
                             std::to_string(w));
        max_w = std::max(max_w, w);
    }
    if (normalize_weights)
        for (double& w : inst.weights) w /= max_w;
    return inst;
}

inline double product_over(std::span<const double> values, std::span<const std::uint32_t> idx,
                           std::size_t count) {
    double p = 1.0;
    for (std::size_t j = 0; j < count; ++j) p *= values[idx[j]];
    return p;
}

/// C(m, k) saturated at cap + 1.
inline std::uint64_t subset_count_capped(std::size_t m, std::size_t k, std::uint64_t cap) {
    long double c = 1.0L;
    for (std::size_t i = 1; i <= k; ++i) {
        c = c * static_cast<long double>(m - k + i) / static_cast<long double>(i);
        if (c > static_cast<long double>(cap) + 0.5L) return cap + 1;
    }
    return static_cast<std::uint64_t>(c + 0.5L);
}

} // namespace detail

/// Randomized certification p-value for the first k candidates:
///
///   p = sum_{b=0..B} w(pi_b) * 1{V(pi_0) <= V(pi_b)} / sum_{b=0..B} w(pi_b)
///
/// where pi_0 is the identity arrangement (the actual data), pi_1..pi_B are
/// uniform random rearrangements of the pooled elements, w(pi) is the
/// product of weights of the elements pi places in the test block, and ties
/// count toward the numerator. The identity term appears in both sums, so
/// p is bounded away from zero; thresholding p <= alpha bounds the
/// false-certification rate by alpha when the weights are the exact density
/// ratio, for any B and any score.
inline CertificationResult randomized_pvalue(const LabeledPool& pool, const CandidateBatch& batch,
                                             std::size_t k, const ScoreStatistic& stat,
                                             const WeightFn& wfn, double alpha, std::size_t B,
                                             RngStream rng,
                                             PermutationSampler sampler = PermutationSampler::Subset) {
    if (B < 1) throw InputError("randomized_pvalue: B must be at least 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
    const detail::PooledInstance inst = detail::make_pooled(pool, batch, k, wfn);
    const std::size_t m = inst.size();
    const std::vector<double> table = stat.prepare(inst.scores);

    // identity arrangement: batch rows sit in the test block
    std::vector<double> values(table.begin() + static_cast<long>(inst.n0), table.end());
    const double v0 = stat.combine_values(values);
    double w0 = 1.0;
    for (std::size_t p = inst.n0; p < m; ++p) w0 *= inst.weights[p];

    std::vector<std::uint32_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::uint32_t{0});
    double num = w0; // b = 0 indicator always fires
    double den = w0;
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t first;
        if (sampler == PermutationSampler::Subset) {
            rng.partial_shuffle(idx, inst.k);
            first = 0;
        } else {
            rng.partial_shuffle(idx, m);
            first = inst.n0;
        }
        values.clear();
        double wb = 1.0;
        for (std::size_t j = 0; j < inst.k; ++j) {
            const std::uint32_t e = idx[first + j];
            values.push_back(table[e]);
            wb *= inst.weights[e];
        }
        const double vb = stat.combine_values(values);
        den += wb;
        if (v0 <= vb) num += wb;
    }

    CertificationResult result;
    result.p_value = num / den;
    result.alpha = alpha;
    result.certified = result.p_value <= alpha;
    result.k = inst.k;
    result.b_used = B;
    return result;
}

/// Exact certification p-value by enumerating every k-subset of the pooled
/// elements. Symmetric scores collapse the permutation sum to subsets: the
/// permutation count per subset is constant and cancels. Enumeration is
/// refused above `subset_cap` subsets; use the randomized variant there.
inline CertificationResult deterministic_pvalue(const LabeledPool& pool,
                                                const CandidateBatch& batch, std::size_t k,
                                                const ScoreStatistic& stat, const WeightFn& wfn,
                                                double alpha,
                                                std::uint64_t subset_cap = 2'000'000) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
    const detail::PooledInstance inst = detail::make_pooled(pool, batch, k, wfn);
    const std::size_t m = inst.size();
    const std::uint64_t n_subsets = detail::subset_count_capped(m, inst.k, subset_cap);
    if (n_subsets > subset_cap)
        throw EnumerationCapError("deterministic_pvalue: C(" + std::to_string(m) + ", " +
                                  std::to_string(inst.k) + ") exceeds the enumeration cap of " +
                                  std::to_string(subset_cap) + " subsets; use the randomized variant");

    const std::vector<double> table = stat.prepare(inst.scores);
    const bool use_max = stat.combine_is_max();

    double v0 = use_max ? -std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t p = inst.n0; p < m; ++p)
        v0 = use_max ? std::max(v0, table[p]) : v0 + table[p];

    std::vector<std::size_t> comb(inst.k);
    std::iota(comb.begin(), comb.end(), std::size_t{0});
    double num = 0.0, den = 0.0;
    while (true) {
        double vb = use_max ? -std::numeric_limits<double>::infinity() : 0.0;
        double wb = 1.0;
        for (std::size_t e : comb) {
            vb = use_max ? std::max(vb, table[e]) : vb + table[e];
            wb *= inst.weights[e];
        }
        den += wb;
        if (v0 <= vb) num += wb;

        // next combination in lexicographic order
        std::size_t pos = inst.k;
        while (pos > 0 && comb[pos - 1] == m - inst.k + pos - 1) --pos;
        if (pos == 0) break;
        ++comb[pos - 1];
        for (std::size_t q = pos; q < inst.k; ++q) comb[q] = comb[q - 1] + 1;
    }

    CertificationResult result;
    result.p_value = num / den;
    result.alpha = alpha;
    result.certified = result.p_value <= alpha;
    result.k = inst.k;
    result.b_used = static_cast<std::size_t>(n_subsets);
    return result;
}

/// Weighted conformal p-value for a single candidate against the inactive
/// calibration rows. Larger predictor score means stronger evidence, so
/// the calibration indicator fires on scores at or above the candidate's:
///
///   p = (w(x) + sum_{i in I0} w(X_i) * 1{mu_i >= mu(x)}) / (w(x) + sum_{i in I0} w(X_i))
inline double one_sample_pvalue_weighted(std::span<const double> calibration_scores,
                                         std::span<const double> calibration_weights,
                                         double candidate_score, double candidate_weight) {
    if (calibration_scores.size() != calibration_weights.size())
        throw InputError("one_sample_pvalue: score/weight length mismatch");
    if (calibration_scores.empty()) throw InputError("one_sample_pvalue: empty calibration");
    if (!(candidate_weight > 0.0) || !std::isfinite(candidate_weight))
        throw InputError("one_sample_pvalue: candidate weight must be positive and finite");
    double num = candidate_weight;
    double den = candidate_weight;
    for (std::size_t i = 0; i < calibration_scores.size(); ++i) {
        const double w = calibration_weights[i];
        if (!(w > 0.0) || !std::isfinite(w))
            throw InputError("one_sample_pvalue: weights must be positive and finite");
        den += w;
        if (calibration_scores[i] >= candidate_score) num += w;
    }
    return num / den;
}

inline double one_sample_pvalue(const LabeledPool& pool, const CandidateBatch& batch,
                                std::size_t j, const WeightFn& wfn) {
    if (j >= batch.size()) throw InputError("one_sample_pvalue: candidate index out of range");
    if (pool.inactive_count() == 0)
        throw InputError("one_sample_pvalue: calibration pool has no inactive rows");
    const std::vector<double>& pool_scores = pool.predictor_scores();
    std::vector<double> cal_scores, cal_weights;
    cal_scores.reserve(pool.inactive_count());
    cal_weights.reserve(pool.inactive_count());
    for (std::size_t i : pool.inactive_indices()) {
        cal_scores.push_back(pool_scores[i]);
        cal_weights.push_back(wfn.pool_row_weight(pool, i));
    }
    return one_sample_pvalue_weighted(cal_scores, cal_weights, batch.predictor_scores()[j],
                                      wfn.batch_row_weight(batch, j));
}

inline double one_sample_pvalue(const LabeledPool& pool, const FeatureVector& candidate,
                                double candidate_score, const WeightFn& wfn) {
    if (pool.inactive_count() == 0)
        throw InputError("one_sample_pvalue: calibration pool has no inactive rows");
    const std::vector<double>& pool_scores = pool.predictor_scores();
    std::vector<double> cal_scores, cal_weights;
    cal_scores.reserve(pool.inactive_count());
    cal_weights.reserve(pool.inactive_count());
    for (std::size_t i : pool.inactive_indices()) {
        cal_scores.push_back(pool_scores[i]);
        cal_weights.push_back(wfn.pool_row_weight(pool, i));
    }
    return one_sample_pvalue_weighted(cal_scores, cal_weights, candidate_score, wfn(candidate));
}

/// Draw B rearrangements (plus the identity at index 0) for an instance,
/// exposing occupant lists and joint weights. Used by the robustness-gap
/// diagnostic, which must evaluate two weight functions on the same draws.
inline std::vector<PermutationDraw> sample_permutation_draws(
    const detail::PooledInstance& inst, std::size_t B, RngStream rng,
    PermutationSampler sampler = PermutationSampler::Subset) {
    const std::size_t m = inst.size();
    std::vector<PermutationDraw> draws;
    draws.reserve(B + 1);

    PermutationDraw identity;
    identity.test_occupants.resize(inst.k);
    std::iota(identity.test_occupants.begin(), identity.test_occupants.end(), inst.n0);
    identity.joint_weight = 1.0;
    for (std::size_t e : identity.test_occupants) identity.joint_weight *= inst.weights[e];
    draws.push_back(std::move(identity));

    std::vector<std::uint32_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::uint32_t{0});
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t first, count = inst.k;
        if (sampler == PermutationSampler::Subset) {
            rng.partial_shuffle(idx, inst.k);
            first = 0;
        } else {
            rng.partial_shuffle(idx, m);
            first = inst.n0;
        }
        PermutationDraw d;
        d.test_occupants.resize(count);
        d.joint_weight = 1.0;
        for (std::size_t j = 0; j < count; ++j) {
            d.test_occupants[j] = idx[first + j];
            d.joint_weight *= inst.weights[idx[first + j]];
        }
        draws.push_back(std::move(d));
    }
    return draws;
}

} // namespace hitcert

#endif // HITCERT_PVALUE_HPP
