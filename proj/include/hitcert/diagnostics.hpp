#ifndef HITCERT_DIAGNOSTICS_HPP
#define HITCERT_DIAGNOSTICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "nested.hpp"
#include "pvalue.hpp"
#include "weights.hpp"

namespace hitcert {

/// KL divergence of a p-value sample from Uniform(0,1), estimated on a
/// fixed 20-bin histogram with add-one smoothing. The estimator is pinned
/// so numbers are comparable across runs of this artifact.
inline double kl_from_uniform(const std::vector<double>& pvalues, std::size_t bins = 20) {
    if (bins < 2) throw InputError("kl_from_uniform: need at least 2 bins");
    std::vector<double> counts(bins, 0.0);
    for (double p : pvalues) {
        if (!(p >= 0.0 && p <= 1.0))
            throw InputError("kl_from_uniform: p-value outside [0, 1]");
        std::size_t b = static_cast<std::size_t>(p * static_cast<double>(bins));
        if (b >= bins) b = bins - 1;
        counts[b] += 1.0;
    }
    const double total = static_cast<double>(pvalues.size()) + static_cast<double>(bins);
    double kl = 0.0;
    for (double c : counts) {
        const double prob = (c + 1.0) / total;
        kl += prob * std::log(prob * static_cast<double>(bins));
    }
    return kl;
}

// ---------------------------------------------------------------------------
// Balance check
// ---------------------------------------------------------------------------

struct BalanceReport {
    std::vector<double> per_feature_imbalance_before;
    std::vector<double> per_feature_imbalance_after;
    // self-normalized weighted mean (sum w f / sum w); the headline "after"
    // uses the unnormalized (1/n0) sum w f form
    std::vector<double> per_feature_imbalance_after_self_normalized;
    double cosine_distance_before = 0.0;
    double cosine_distance_after = 0.0;
};

namespace detail {

inline double cosine_distance(const std::vector<double>& u, const std::vector<double>& v) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 && nv == 0.0) return 0.0;
    if (nu == 0.0 || nv == 0.0) return 1.0;
    return 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
}

} // namespace detail

/// Compares weighted calibration means of feature maps against raw test
/// means: |(1/n0) sum_{i in I0} w(X_i) f(X_i) - (1/k) sum_j f(X_{n+j})|,
/// before (w = 1) and after (supplied w). Defaults to coordinate
/// projections. Well-estimated density-ratio weights shrink the gap.
inline BalanceReport balance_check(
    const LabeledPool& pool, const CandidateBatch& batch, const WeightFn& wfn,
    const std::vector<std::function<double(const FeatureVector&)>>& feature_maps = {}) {
    if (pool.inactive_count() == 0)
        throw InputError("balance_check: calibration pool has no inactive rows");

    std::vector<std::function<double(const FeatureVector&)>> maps = feature_maps;
    if (maps.empty()) {
        for (std::size_t c = 0; c < pool.dimension(); ++c)
            maps.push_back([c](const FeatureVector& x) { return x[c]; });
    }

    const std::size_t nf = maps.size();
    std::vector<double> cal_plain(nf, 0.0), cal_weighted(nf, 0.0), test_mean(nf, 0.0);
    double weight_sum = 0.0;
    std::vector<double> cal_self(nf, 0.0);

    for (std::size_t i : pool.inactive_indices()) {
        const double w = wfn.pool_row_weight(pool, i);
        weight_sum += w;
        for (std::size_t f = 0; f < nf; ++f) {
            const double v = maps[f](pool.feature(i));
            cal_plain[f] += v;
            cal_weighted[f] += w * v;
        }
    }
    const double n0 = static_cast<double>(pool.inactive_count());
    for (std::size_t f = 0; f < nf; ++f) {
        cal_self[f] = cal_weighted[f] / weight_sum;
        cal_plain[f] /= n0;
        cal_weighted[f] /= n0;
    }
    for (std::size_t j = 0; j < batch.size(); ++j)
        for (std::size_t f = 0; f < nf; ++f) test_mean[f] += maps[f](batch.feature(j));
    for (std::size_t f = 0; f < nf; ++f) test_mean[f] /= static_cast<double>(batch.size());

    BalanceReport report;
    report.per_feature_imbalance_before.resize(nf);
    report.per_feature_imbalance_after.resize(nf);
    report.per_feature_imbalance_after_self_normalized.resize(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        report.per_feature_imbalance_before[f] = std::abs(cal_plain[f] - test_mean[f]);
        report.per_feature_imbalance_after[f] = std::abs(cal_weighted[f] - test_mean[f]);
        report.per_feature_imbalance_after_self_normalized[f] =
            std::abs(cal_self[f] - test_mean[f]);
    }
    report.cosine_distance_before = detail::cosine_distance(cal_plain, test_mean);
    report.cosine_distance_after = detail::cosine_distance(cal_weighted, test_mean);
    return report;
}

// ---------------------------------------------------------------------------
// Validation shift
// ---------------------------------------------------------------------------

struct ValidationShiftReport {
    std::vector<std::string> pseudo_test_groups;
    std::size_t n_pseudo_calibration = 0;
    std::size_t n_pseudo_test_null = 0;
    double bandwidth_p = 0.0;
    double bandwidth_q = 0.0;
    double kl_weighted = 0.0;
    double kl_unweighted = 0.0;
    std::vector<double> alpha_grid;
    std::vector<double> error_weighted;   // fraction of null p-values <= alpha
    std::vector<double> error_unweighted;
    std::vector<double> pvalues_weighted;
    std::vector<double> pvalues_unweighted;
};

/// Creates an artificial shift inside the labeled data: rows belonging to
/// the `top_groups` most frequent groups become the pseudo-test fold, the
/// rest the pseudo-calibration fold. KDE ratio weights are fitted across
/// the folds and each inactive pseudo-test row is scored with a size-1
/// certification p-value, with and without weighting. Near-uniform
/// weighted p-values indicate the estimation pipeline handles the shift.
inline ValidationShiftReport validation_shift(const LabeledPool& pool,
                                              const std::vector<std::string>& group_key,
                                              std::size_t top_groups, const ScoreStatistic& stat,
                                              const std::vector<double>& bandwidth_grid,
                                              const std::vector<double>& alpha_grid,
                                              std::size_t B, RngStream rng, int folds = 5) {
    if (group_key.size() != pool.size())
        throw InputError("validation_shift: group key count does not match pool rows");
    if (top_groups == 0) throw InputError("validation_shift: top_groups must be positive");

    std::map<std::string, std::size_t> freq;
    for (const auto& g : group_key) ++freq[g];
    if (freq.size() < 2)
        throw InputError("validation_shift: need at least 2 distinct groups, got " +
                         std::to_string(freq.size()));
    if (top_groups >= freq.size())
        throw InputError("validation_shift: top_groups must leave at least one group "
                         "for the pseudo-calibration fold");

    std::vector<std::pair<std::string, std::size_t>> by_count(freq.begin(), freq.end());
    std::sort(by_count.begin(), by_count.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> test_groups;
    for (std::size_t g = 0; g < top_groups; ++g) test_groups.push_back(by_count[g].first);
    auto in_test = [&](const std::string& g) {
        return std::find(test_groups.begin(), test_groups.end(), g) != test_groups.end();
    };

    const std::vector<double>& scores = pool.predictor_scores();
    std::vector<FeatureVector> cal_feats, test_feats;
    std::vector<int> cal_labels;
    std::vector<double> cal_scores;
    std::vector<FeatureVector> null_feats;
    std::vector<double> null_scores;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (in_test(group_key[i])) {
            test_feats.push_back(pool.feature(i));
            if (pool.labels()[i] == 0) {
                null_feats.push_back(pool.feature(i));
                null_scores.push_back(scores[i]);
            }
        } else {
            cal_feats.push_back(pool.feature(i));
            cal_labels.push_back(pool.labels()[i]);
            cal_scores.push_back(scores[i]);
        }
    }
    if (cal_feats.empty()) throw InputError("validation_shift: pseudo-calibration fold is empty");
    LabeledPool pseudo_pool(cal_feats, cal_labels, cal_scores);
    if (pseudo_pool.inactive_count() == 0)
        throw InputError("validation_shift: pseudo-calibration fold has an empty inactive set");
    if (null_feats.empty())
        throw InputError("validation_shift: pseudo-test fold has no inactive rows");

    const KdeRatioModel model =
        build_ratio_model(cal_feats, test_feats, bandwidth_grid, folds, rng.substream(0));
    const WeightFn kde_w = WeightFn::kde_ratio(model);
    const WeightFn uni_w = WeightFn::uniform();

    ValidationShiftReport report;
    report.pseudo_test_groups = test_groups;
    report.n_pseudo_calibration = pseudo_pool.size();
    report.n_pseudo_test_null = null_feats.size();
    report.bandwidth_p = model.bandwidth_p();
    report.bandwidth_q = model.bandwidth_q();

    for (std::size_t j = 0; j < null_feats.size(); ++j) {
        CandidateBatch one({null_feats[j]}, {null_scores[j]});
        RngStream sub = rng.substream(j + 1);
        report.pvalues_weighted.push_back(
            randomized_pvalue(pseudo_pool, one, 1, stat, kde_w, 0.5, B, sub).p_value);
        report.pvalues_unweighted.push_back(
            randomized_pvalue(pseudo_pool, one, 1, stat, uni_w, 0.5, B, sub).p_value);
    }

    report.kl_weighted = kl_from_uniform(report.pvalues_weighted);
    report.kl_unweighted = kl_from_uniform(report.pvalues_unweighted);
    report.alpha_grid = alpha_grid;
    for (double a : alpha_grid) {
        auto rate = [a](const std::vector<double>& ps) {
            std::size_t c = 0;
            for (double p : ps) c += (p <= a) ? 1 : 0;
            return static_cast<double>(c) / static_cast<double>(ps.size());
        };
        report.error_weighted.push_back(rate(report.pvalues_weighted));
        report.error_unweighted.push_back(rate(report.pvalues_unweighted));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Sensitivity sweep
// ---------------------------------------------------------------------------

struct SensitivityRow {
    double gamma = 1.0;
    double kl_from_uniform_of_null_pvalues = 0.0;
    std::vector<double> error_rate;      // per alpha; needs hidden labels
    std::vector<double> rejection_rate;  // per alpha: fraction of empty outcomes
    std::vector<std::size_t> decision_flips; // per alpha, vs the gamma = 1 row
    std::size_t worst_case_decision_flips = 0;
};

struct SensitivityReport {
    std::vector<double> alpha_grid;
    std::vector<SensitivityRow> rows;
    std::size_t base_row = 0; // index of gamma = 1
};

/// Reruns the design procedure under power-transformed weights w^gamma on
/// a shared set of inputs, reusing substream t for input t so every gamma
/// sees identical permutation draws. hidden_labels (when supplied, one
/// vector per batch) unlock the error rate and restrict the KL statistic
/// to all-null batches; otherwise the KL uses every batch's full-batch
/// p-value and error rates are empty.
inline SensitivityReport sensitivity_sweep(
    const LabeledPool& pool, const std::vector<CandidateBatch>& batch_set,
    const WeightFn& base_wfn, const std::vector<double>& gamma_grid, const ScoreStatistic& stat,
    const std::vector<double>& alpha_grid, std::size_t B, RngStream rng,
    const std::vector<std::vector<int>>& hidden_labels = {}) {
    if (gamma_grid.empty()) throw InputError("sensitivity_sweep: empty gamma grid");
    if (std::find(gamma_grid.begin(), gamma_grid.end(), 1.0) == gamma_grid.end())
        throw InputError("sensitivity_sweep: gamma grid must contain 1");
    if (batch_set.empty()) throw InputError("sensitivity_sweep: empty batch set");
    if (alpha_grid.empty()) throw InputError("sensitivity_sweep: empty alpha grid");
    if (!hidden_labels.empty() && hidden_labels.size() != batch_set.size())
        throw InputError("sensitivity_sweep: hidden label count does not match batch set");

    const std::size_t T = batch_set.size();
    const std::size_t nA = alpha_grid.size();

    SensitivityReport report;
    report.alpha_grid = alpha_grid;

    // n_hat per (gamma, batch, alpha), derived from one profile per (gamma, batch)
    std::vector<std::vector<std::vector<std::size_t>>> n_hat(gamma_grid.size());
    std::vector<std::vector<double>> full_p(gamma_grid.size());
    for (std::size_t g = 0; g < gamma_grid.size(); ++g) {
        const WeightFn wfn = power_transform(base_wfn, gamma_grid[g]);
        n_hat[g].resize(T);
        full_p[g].resize(T);
        for (std::size_t t = 0; t < T; ++t) {
            auto [profile, outcome] =
                design(pool, batch_set[t], stat, wfn, alpha_grid.front(), B, rng.substream(t));
            (void)outcome;
            full_p[g][t] = profile.raw.back();
            n_hat[g][t].resize(nA);
            for (std::size_t a = 0; a < nA; ++a)
                n_hat[g][t][a] = first_crossing(profile.monotone, alpha_grid[a]);
        }
    }

    std::size_t base = gamma_grid.size();
    for (std::size_t g = 0; g < gamma_grid.size(); ++g)
        if (gamma_grid[g] == 1.0) {
            base = g;
            break;
        }
    report.base_row = base;

    for (std::size_t g = 0; g < gamma_grid.size(); ++g) {
        SensitivityRow row;
        row.gamma = gamma_grid[g];

        std::vector<double> null_ps;
        for (std::size_t t = 0; t < T; ++t) {
            if (hidden_labels.empty()) {
                null_ps.push_back(full_p[g][t]);
            } else {
                const auto& labels = hidden_labels[t];
                if (std::all_of(labels.begin(), labels.end(), [](int y) { return y == 0; }))
                    null_ps.push_back(full_p[g][t]);
            }
        }
        row.kl_from_uniform_of_null_pvalues =
            null_ps.empty() ? 0.0 : kl_from_uniform(null_ps);

        for (std::size_t a = 0; a < nA; ++a) {
            std::size_t empty = 0, flips = 0, errors = 0, labeled = 0;
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t nh = n_hat[g][t][a];
                if (nh == 0) ++empty;
                if ((nh > 0) != (n_hat[base][t][a] > 0)) ++flips;
                if (!hidden_labels.empty()) {
                    ++labeled;
                    if (nh > 0) {
                        bool hit = false;
                        for (std::size_t j = 0; j < nh; ++j)
                            if (hidden_labels[t][j] == 1) hit = true;
                        if (!hit) ++errors;
                    }
                }
            }
            row.rejection_rate.push_back(static_cast<double>(empty) / static_cast<double>(T));
            row.decision_flips.push_back(flips);
            if (labeled > 0)
                row.error_rate.push_back(static_cast<double>(errors) /
                                         static_cast<double>(labeled));
        }
        row.worst_case_decision_flips =
            *std::max_element(row.decision_flips.begin(), row.decision_flips.end());
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Robustness gap
// ---------------------------------------------------------------------------

/// One-instance evaluation of the estimation-error inflation bound for
/// p-values built from estimated weights. Over the same B+1 draws the true
/// and estimated joint weights are compared; the inflation term vanishes
/// when they agree on every draw.
struct RobustnessGap {
    double t = 0.0;
    bool cutoff_defined = false;
    double v_hat = 0.0;    // score cutoff of the rejection region {V >= v_hat}
    double t_hat = 0.0;    // estimated-weight p-value at the cutoff
    double delta_plus = 0.0;
    double delta_minus = 0.0;
    double bound = 0.0;    // t + (t_hat * delta_plus + (1 - t_hat) * delta_minus) / sum true weights
    double p_estimated = 1.0; // p-value of the identity draw under estimated weights
    double p_true = 1.0;      // same draws, true weights
};

inline RobustnessGap robustness_gap(const LabeledPool& pool, const CandidateBatch& batch,
                                    std::size_t k, const ScoreStatistic& stat,
                                    const WeightFn& true_wfn, const WeightFn& est_wfn, double t,
                                    std::size_t B, RngStream rng) {
    if (!(t > 0.0 && t < 1.0)) throw InputError("robustness_gap: t must lie in (0, 1)");
    // raw (unnormalized) weights: the bound's terms are not scale-free
    const detail::PooledInstance true_inst = detail::make_pooled(pool, batch, k, true_wfn, false);
    const detail::PooledInstance est_inst = detail::make_pooled(pool, batch, k, est_wfn, false);

    const std::vector<double> table = stat.prepare(true_inst.scores);
    const std::vector<PermutationDraw> draws = sample_permutation_draws(true_inst, B, rng);

    const std::size_t n_draws = draws.size();
    std::vector<double> v(n_draws), w_true(n_draws), w_est(n_draws);
    for (std::size_t b = 0; b < n_draws; ++b) {
        v[b] = stat.combine(table, draws[b].test_occupants);
        w_true[b] = draws[b].joint_weight;
        double we = 1.0;
        for (std::size_t e : draws[b].test_occupants) we *= est_inst.weights[e];
        w_est[b] = we;
    }
    const double sum_true = std::accumulate(w_true.begin(), w_true.end(), 0.0);
    const double sum_est = std::accumulate(w_est.begin(), w_est.end(), 0.0);

    auto p_at = [&](double cutoff, const std::vector<double>& w, double total) {
        double num = 0.0;
        for (std::size_t b = 0; b < n_draws; ++b)
            if (cutoff <= v[b]) num += w[b];
        return num / total;
    };

    RobustnessGap gap;
    gap.t = t;
    gap.p_estimated = p_at(v[0], w_est, sum_est);
    gap.p_true = p_at(v[0], w_true, sum_true);

    // rejection region {V >= v_hat}: v_hat is the smallest drawn score whose
    // estimated-weight p-value still clears t, so t_hat is the largest
    // attainable estimated p-value <= t
    std::vector<std::size_t> order(n_draws);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    double suffix_est = 0.0;
    bool found = false;
    double v_hat = 0.0, t_hat = 0.0;
    for (std::size_t r = 0; r < n_draws; ++r) {
        suffix_est += w_est[order[r]];
        // extend through ties so the suffix mass matches p_at(v[order[r]])
        while (r + 1 < n_draws && v[order[r + 1]] == v[order[r]]) {
            ++r;
            suffix_est += w_est[order[r]];
        }
        const double p_here = suffix_est / sum_est;
        if (p_here <= t) {
            found = true;
            v_hat = v[order[r]];
            t_hat = p_here;
        } else {
            break; // p grows as the cutoff drops; nothing further qualifies
        }
    }

    if (!found) {
        gap.cutoff_defined = false;
        gap.bound = t;
        return gap;
    }
    gap.cutoff_defined = true;
    gap.v_hat = v_hat;
    gap.t_hat = t_hat;

    double delta_plus = 0.0, delta_minus = 0.0;
    for (std::size_t b = 0; b < n_draws; ++b) {
        const double diff = w_est[b] - w_true[b];
        if (v[b] < v_hat) {
            if (diff > 0.0) delta_plus += diff;
        } else {
            if (diff < 0.0) delta_minus += -diff;
        }
    }
    gap.delta_plus = delta_plus;
    gap.delta_minus = delta_minus;
    gap.bound = t + (t_hat * delta_plus + (1.0 - t_hat) * delta_minus) / sum_true;
    return gap;
}

} // namespace hitcert

#endif // HITCERT_DIAGNOSTICS_HPP
