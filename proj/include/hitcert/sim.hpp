#ifndef HITCERT_SIM_HPP
#define HITCERT_SIM_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "baselines.hpp"
#include "budget.hpp"
#include "core.hpp"
#include "diagnostics.hpp"
#include "nested.hpp"
#include "parallel.hpp"
#include "pvalue.hpp"
#include "rng.hpp"
#include "weights.hpp"

namespace hitcert::sim {

/// Synthetic population with a known density ratio and label model:
/// calibration features are N(0, I_d), generated features N(shift_mu, I_d),
/// and P(Y = 1 | X = x) = logistic(label_coef . x + label_intercept) under
/// both, so the covariate-shift assumption holds by construction and the
/// exact weight is w(x) = exp(shift_mu . x - |shift_mu|^2 / 2).
struct SyntheticSpec {
    std::size_t dimension = 2;
    FeatureVector shift_mu = {1.0, 0.0};
    FeatureVector label_coef = {2.0, 1.0};
    double label_intercept = -1.0;
    std::size_t n_calibration = 200;
    std::size_t batch_size = 5;
    std::size_t trials = 2000;
    std::vector<double> alpha_grid = {0.05, 0.1, 0.2, 0.3, 0.5};
    std::uint64_t seed = 987654321;

    void validate() const {
        if (dimension == 0) throw InputError("SyntheticSpec: dimension must be positive");
        if (shift_mu.size() != dimension || label_coef.size() != dimension)
            throw InputError("SyntheticSpec: shift_mu and label_coef must have length d");
        if (n_calibration == 0 || batch_size == 0 || trials == 0)
            throw InputError("SyntheticSpec: counts must be positive");
        for (double a : alpha_grid)
            if (!(a > 0.0 && a < 1.0))
                throw InputError("SyntheticSpec: alphas must lie in (0, 1)");
    }
};

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double hit_probability(const SyntheticSpec& spec, const FeatureVector& x) {
    double z = spec.label_intercept;
    for (std::size_t c = 0; c < spec.dimension; ++c) z += spec.label_coef[c] * x[c];
    return logistic(z);
}

inline WeightFn analytic_weight(const SyntheticSpec& spec) {
    return WeightFn::analytic_gaussian_shift(spec.shift_mu);
}

namespace detail {

inline FeatureVector draw_p(const SyntheticSpec& spec, RngStream& rng) {
    FeatureVector x(spec.dimension);
    for (double& v : x) v = rng.next_gaussian();
    return x;
}

inline FeatureVector draw_q(const SyntheticSpec& spec, RngStream& rng) {
    FeatureVector x = draw_p(spec, rng);
    for (std::size_t c = 0; c < spec.dimension; ++c) x[c] += spec.shift_mu[c];
    return x;
}

} // namespace detail

/// Hidden labels are evaluation-only: they never reach the inference path,
/// which sees just features and predictor scores.
struct GeneratedInstance {
    LabeledPool pool;
    CandidateBatch batch;
    std::vector<int> hidden_labels;
};

enum class BatchLaw {
    Mixed, ///< candidates i.i.d. from Q, labels from the logistic model
    Null   ///< candidates i.i.d. from Q conditioned on Y = 0 (rejection sampling)
};

inline GeneratedInstance generate(const SyntheticSpec& spec, RngStream& rng,
                                  BatchLaw law = BatchLaw::Mixed) {
    spec.validate();

    std::vector<FeatureVector> cal_feats;
    std::vector<int> cal_labels;
    std::vector<double> cal_scores;
    // resample whole pools without inactive rows: the guarantee is
    // conditional on labels, so this conditioning is harmless
    do {
        cal_feats.clear();
        cal_labels.clear();
        cal_scores.clear();
        for (std::size_t i = 0; i < spec.n_calibration; ++i) {
            FeatureVector x = detail::draw_p(spec, rng);
            const double prob = hit_probability(spec, x);
            cal_labels.push_back(rng.next_unit() < prob ? 1 : 0);
            cal_scores.push_back(prob);
            cal_feats.push_back(std::move(x));
        }
    } while (std::none_of(cal_labels.begin(), cal_labels.end(), [](int y) { return y == 0; }));

    std::vector<FeatureVector> batch_feats;
    std::vector<double> batch_scores;
    std::vector<int> hidden;
    while (batch_feats.size() < spec.batch_size) {
        FeatureVector x = detail::draw_q(spec, rng);
        const double prob = hit_probability(spec, x);
        const int y = rng.next_unit() < prob ? 1 : 0;
        if (law == BatchLaw::Null && y != 0) continue;
        batch_scores.push_back(prob);
        hidden.push_back(y);
        batch_feats.push_back(std::move(x));
    }

    return GeneratedInstance{LabeledPool(std::move(cal_feats), std::move(cal_labels),
                                         std::move(cal_scores)),
                             CandidateBatch(std::move(batch_feats), std::move(batch_scores)),
                             std::move(hidden)};
}

/// Pool with exactly n0 inactive and n1 active rows, drawn by rejection
/// from the conditional feature laws. Keeps exact-enumeration instances
/// small without touching the conditional distribution.
inline GeneratedInstance generate_fixed_counts(const SyntheticSpec& spec, std::size_t n0,
                                               std::size_t n1, RngStream& rng,
                                               BatchLaw law = BatchLaw::Mixed) {
    spec.validate();
    if (n0 == 0) throw InputError("generate_fixed_counts: need at least one inactive row");

    std::vector<FeatureVector> cal_feats;
    std::vector<int> cal_labels;
    std::vector<double> cal_scores;
    std::size_t have0 = 0, have1 = 0;
    while (have0 < n0 || have1 < n1) {
        FeatureVector x = detail::draw_p(spec, rng);
        const double prob = hit_probability(spec, x);
        const int y = rng.next_unit() < prob ? 1 : 0;
        if (y == 0 && have0 < n0)
            ++have0;
        else if (y == 1 && have1 < n1)
            ++have1;
        else
            continue;
        cal_labels.push_back(y);
        cal_scores.push_back(prob);
        cal_feats.push_back(std::move(x));
    }

    std::vector<FeatureVector> batch_feats;
    std::vector<double> batch_scores;
    std::vector<int> hidden;
    while (batch_feats.size() < spec.batch_size) {
        FeatureVector x = detail::draw_q(spec, rng);
        const double prob = hit_probability(spec, x);
        const int y = rng.next_unit() < prob ? 1 : 0;
        if (law == BatchLaw::Null && y != 0) continue;
        batch_scores.push_back(prob);
        hidden.push_back(y);
        batch_feats.push_back(std::move(x));
    }
    return GeneratedInstance{LabeledPool(std::move(cal_feats), std::move(cal_labels),
                                         std::move(cal_scores)),
                             CandidateBatch(std::move(batch_feats), std::move(batch_scores)),
                             std::move(hidden)};
}

enum class CorruptionMode { None, Noisy, Inverse };

inline std::string to_string(CorruptionMode m) {
    switch (m) {
        case CorruptionMode::None: return "none";
        case CorruptionMode::Noisy: return "noisy";
        case CorruptionMode::Inverse: return "inverse";
    }
    return "?";
}

/// Degrades predictor scores: Noisy replaces p by (p + N(0,1)) / 2 clamped
/// into [0, 1]; Inverse replaces p by 1 - p (an involution).
inline std::vector<double> corrupt_predictor(const std::vector<double>& scores,
                                             CorruptionMode mode, RngStream& rng) {
    std::vector<double> out = scores;
    switch (mode) {
        case CorruptionMode::None:
            break;
        case CorruptionMode::Noisy:
            for (double& p : out)
                p = std::clamp((p + rng.next_gaussian()) / 2.0, 0.0, 1.0);
            break;
        case CorruptionMode::Inverse:
            for (double& p : out) {
                if (!(p >= 0.0 && p <= 1.0))
                    throw InputError("corrupt_predictor: Inverse needs scores in [0, 1]");
                p = 1.0 - p;
            }
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo experiments
// ---------------------------------------------------------------------------

inline double mc_standard_error(double rate, std::size_t trials) {
    return std::sqrt(rate * (1.0 - rate) / static_cast<double>(trials));
}

struct AlphaRow {
    double alpha = 0.0;
    double empirical_error = 0.0;
    double power_or_rejection = 0.0;
    double mean_set_size = 0.0;
    double empty_fraction = 0.0;
    double mc_standard_error = 0.0;
};

struct ExperimentReport {
    std::string experiment;
    std::string method;
    std::vector<AlphaRow> per_alpha;
    std::vector<double> pvalues; // one per trial, when the experiment yields one
};

enum class NullMethod { ConfidenceRand, ConfidenceDet, Unweighted, Bonferroni };

inline std::string to_string(NullMethod m) {
    switch (m) {
        case NullMethod::ConfidenceRand: return "weighted_randomized";
        case NullMethod::ConfidenceDet: return "weighted_deterministic";
        case NullMethod::Unweighted: return "unweighted";
        case NullMethod::Bonferroni: return "bonferroni";
    }
    return "?";
}

// substream salts; every experiment family draws from its own branch
inline constexpr std::uint64_t kNullSalt = 101;
inline constexpr std::uint64_t kDesignSalt = 102;
inline constexpr std::uint64_t kAblationSalt = 103;
inline constexpr std::uint64_t kSensitivitySalt = 104;
inline constexpr std::uint64_t kBudgetSalt = 105;
inline constexpr std::uint64_t kPredictorSalt = 106;
inline constexpr std::uint64_t kDetSalt = 107;
inline constexpr std::uint64_t kGapSalt = 108;

namespace detail {

struct TrialStreams {
    RngStream data;
    RngStream corrupt;
    RngStream mc;
};

inline TrialStreams trial_streams(const SyntheticSpec& spec, std::uint64_t salt,
                                  std::size_t trial) {
    RngStream base = RngStream(spec.seed, salt).substream(trial);
    return TrialStreams{base.substream(0), base.substream(1), base.substream(2)};
}

inline GeneratedInstance corrupted(GeneratedInstance inst, CorruptionMode mode, RngStream& rng) {
    if (mode == CorruptionMode::None) return inst;
    std::vector<double> pool_scores = corrupt_predictor(inst.pool.predictor_scores(), mode, rng);
    std::vector<double> batch_scores = corrupt_predictor(inst.batch.predictor_scores(), mode, rng);
    return GeneratedInstance{inst.pool.with_predictor_scores(std::move(pool_scores)),
                             inst.batch.with_predictor_scores(std::move(batch_scores)),
                             std::move(inst.hidden_labels)};
}

} // namespace detail

/// Null-batch certification: every candidate batch is drawn from the
/// conditional law given no hit, so empirical P(p <= alpha) directly
/// checks the super-uniformity of the certification p-value.
inline ExperimentReport run_null_experiment(const SyntheticSpec& spec, NullMethod method,
                                            const ScoreStatistic& stat, std::size_t B,
                                            unsigned threads = 1,
                                            CorruptionMode corruption = CorruptionMode::None,
                                            std::uint64_t salt = kNullSalt) {
    spec.validate();
    std::vector<double> ps = run_trials<double>(spec.trials, threads, [&](std::size_t trial) {
        auto streams = detail::trial_streams(spec, salt, trial);
        GeneratedInstance inst = detail::corrupted(
            generate(spec, streams.data, BatchLaw::Null), corruption, streams.corrupt);
        const WeightFn w = analytic_weight(spec);
        const std::size_t N = inst.batch.size();
        switch (method) {
            case NullMethod::ConfidenceRand:
                return randomized_pvalue(inst.pool, inst.batch, N, stat, w, 0.5, B, streams.mc)
                    .p_value;
            case NullMethod::ConfidenceDet:
                return deterministic_pvalue(inst.pool, inst.batch, N, stat, w, 0.5).p_value;
            case NullMethod::Unweighted:
                return randomized_pvalue(inst.pool, inst.batch, N, stat, WeightFn::uniform(), 0.5,
                                         B, streams.mc)
                    .p_value;
            case NullMethod::Bonferroni: {
                double pmin = 1.0;
                for (std::size_t j = 0; j < N; ++j)
                    pmin = std::min(pmin, one_sample_pvalue(inst.pool, inst.batch, j, w));
                return std::min(1.0, static_cast<double>(N) * pmin);
            }
        }
        return 1.0;
    });

    ExperimentReport report;
    report.experiment = "null";
    report.method = to_string(method);
    report.pvalues = ps;
    for (double a : spec.alpha_grid) {
        AlphaRow row;
        row.alpha = a;
        std::size_t c = 0;
        for (double p : ps) c += (p <= a) ? 1 : 0;
        row.empirical_error = static_cast<double>(c) / static_cast<double>(ps.size());
        row.power_or_rejection = row.empirical_error;
        row.empty_fraction = 1.0 - row.empirical_error;
        row.mean_set_size = static_cast<double>(spec.batch_size) * row.empirical_error;
        row.mc_standard_error = mc_standard_error(row.empirical_error, ps.size());
        report.per_alpha.push_back(row);
    }
    return report;
}

/// Mixed-population design: per trial, run the nested procedure and score
/// the error event {nonempty shortlist with no hidden hit} at each alpha.
inline ExperimentReport run_design_experiment(const SyntheticSpec& spec,
                                              const ScoreStatistic& stat, std::size_t B,
                                              unsigned threads = 1,
                                              CorruptionMode corruption = CorruptionMode::None,
                                              std::uint64_t salt = kDesignSalt) {
    spec.validate();
    struct Trial {
        std::vector<double> monotone;
        std::vector<int> hidden;
    };
    std::vector<Trial> trials = run_trials<Trial>(spec.trials, threads, [&](std::size_t trial) {
        auto streams = detail::trial_streams(spec, salt, trial);
        GeneratedInstance inst = detail::corrupted(generate(spec, streams.data), corruption,
                                                   streams.corrupt);
        auto [profile, outcome] = design(inst.pool, inst.batch, stat, analytic_weight(spec),
                                         spec.alpha_grid.front(), B, streams.mc);
        (void)outcome;
        return Trial{std::move(profile.monotone), std::move(inst.hidden_labels)};
    });

    ExperimentReport report;
    report.experiment = "design";
    report.method = "weighted_randomized";
    for (const Trial& t : trials) report.pvalues.push_back(t.monotone.back());
    for (double a : spec.alpha_grid) {
        AlphaRow row;
        row.alpha = a;
        std::size_t errors = 0, nonempty = 0, with_hit = 0, detected = 0;
        std::size_t total_size = 0;
        for (const Trial& t : trials) {
            const std::size_t nh = first_crossing(t.monotone, a);
            const bool batch_has_hit =
                std::any_of(t.hidden.begin(), t.hidden.end(), [](int y) { return y == 1; });
            if (batch_has_hit) {
                ++with_hit;
                if (nh > 0) ++detected;
            }
            if (nh > 0) {
                ++nonempty;
                total_size += nh;
                bool hit = false;
                for (std::size_t j = 0; j < nh; ++j)
                    if (t.hidden[j] == 1) hit = true;
                if (!hit) ++errors;
            }
        }
        const double T = static_cast<double>(trials.size());
        row.empirical_error = static_cast<double>(errors) / T;
        row.power_or_rejection =
            with_hit == 0 ? 0.0 : static_cast<double>(detected) / static_cast<double>(with_hit);
        row.empty_fraction = 1.0 - static_cast<double>(nonempty) / T;
        row.mean_set_size =
            nonempty == 0 ? 0.0 : static_cast<double>(total_size) / static_cast<double>(nonempty);
        row.mc_standard_error = mc_standard_error(row.empirical_error, trials.size());
        report.per_alpha.push_back(row);
    }
    return report;
}

/// Certification with and without shift adjustment on identical draws: the
/// weighted p-value stays valid while the unweighted one breaks under an
/// adversarial shift.
struct AblationReport {
    ExperimentReport weighted;
    ExperimentReport unweighted;
};

inline AblationReport run_ablation_experiment(const SyntheticSpec& spec,
                                              const ScoreStatistic& stat, std::size_t B,
                                              unsigned threads = 1,
                                              std::uint64_t salt = kAblationSalt) {
    spec.validate();
    struct Pair {
        double weighted, unweighted;
    };
    std::vector<Pair> ps = run_trials<Pair>(spec.trials, threads, [&](std::size_t trial) {
        auto streams = detail::trial_streams(spec, salt, trial);
        GeneratedInstance inst = generate(spec, streams.data, BatchLaw::Null);
        const std::size_t N = inst.batch.size();
        // identical permutation draws for the two weightings
        const double pw = randomized_pvalue(inst.pool, inst.batch, N, stat, analytic_weight(spec),
                                            0.5, B, streams.mc)
                              .p_value;
        const double pu = randomized_pvalue(inst.pool, inst.batch, N, stat, WeightFn::uniform(),
                                            0.5, B, streams.mc)
                              .p_value;
        return Pair{pw, pu};
    });

    AblationReport out;
    out.weighted.experiment = out.unweighted.experiment = "ablation";
    out.weighted.method = "weighted_randomized";
    out.unweighted.method = "unweighted";
    for (const Pair& p : ps) {
        out.weighted.pvalues.push_back(p.weighted);
        out.unweighted.pvalues.push_back(p.unweighted);
    }
    for (double a : spec.alpha_grid) {
        auto fill = [&](ExperimentReport& rep, bool weighted) {
            AlphaRow row;
            row.alpha = a;
            std::size_t c = 0;
            for (const Pair& p : ps) c += ((weighted ? p.weighted : p.unweighted) <= a) ? 1 : 0;
            row.empirical_error = static_cast<double>(c) / static_cast<double>(ps.size());
            row.power_or_rejection = row.empirical_error;
            row.empty_fraction = 1.0 - row.empirical_error;
            row.mean_set_size = static_cast<double>(spec.batch_size) * row.empirical_error;
            row.mc_standard_error = mc_standard_error(row.empirical_error, ps.size());
            rep.per_alpha.push_back(row);
        };
        fill(out.weighted, true);
        fill(out.unweighted, false);
    }
    return out;
}

/// Certification power on mixed batches (fraction of batches containing a
/// hit that get certified), for predictor-quality comparisons.
inline ExperimentReport run_power_experiment(const SyntheticSpec& spec, const ScoreStatistic& stat,
                                             std::size_t B, unsigned threads = 1,
                                             CorruptionMode corruption = CorruptionMode::None,
                                             std::uint64_t salt = kPredictorSalt) {
    spec.validate();
    struct Trial {
        double p;
        bool has_hit;
    };
    std::vector<Trial> ts = run_trials<Trial>(spec.trials, threads, [&](std::size_t trial) {
        auto streams = detail::trial_streams(spec, salt, trial);
        GeneratedInstance inst = detail::corrupted(generate(spec, streams.data), corruption,
                                                   streams.corrupt);
        const std::size_t N = inst.batch.size();
        const double p = randomized_pvalue(inst.pool, inst.batch, N, stat, analytic_weight(spec),
                                           0.5, B, streams.mc)
                             .p_value;
        const bool has_hit = std::any_of(inst.hidden_labels.begin(), inst.hidden_labels.end(),
                                         [](int y) { return y == 1; });
        return Trial{p, has_hit};
    });

    ExperimentReport report;
    report.experiment = "power";
    report.method = to_string(corruption);
    for (const Trial& t : ts) report.pvalues.push_back(t.p);
    for (double a : spec.alpha_grid) {
        AlphaRow row;
        row.alpha = a;
        std::size_t with_hit = 0, detected = 0, no_hit = 0, false_cert = 0;
        for (const Trial& t : ts) {
            if (t.has_hit) {
                ++with_hit;
                if (t.p <= a) ++detected;
            } else {
                ++no_hit;
                if (t.p <= a) ++false_cert;
            }
        }
        row.power_or_rejection =
            with_hit == 0 ? 0.0 : static_cast<double>(detected) / static_cast<double>(with_hit);
        row.empirical_error =
            no_hit == 0 ? 0.0 : static_cast<double>(false_cert) / static_cast<double>(no_hit);
        row.empty_fraction = 0.0;
        row.mean_set_size = 0.0;
        row.mc_standard_error = mc_standard_error(row.power_or_rejection, std::max<std::size_t>(with_hit, 1));
        report.per_alpha.push_back(row);
    }
    return report;
}

/// Sensitivity sweep on harness data: one shared pool, n_inputs mixed
/// batches with hidden labels, weights perturbed as w^gamma.
inline SensitivityReport run_sensitivity_harness(const SyntheticSpec& spec,
                                                 const ScoreStatistic& stat, std::size_t B,
                                                 std::size_t n_inputs,
                                                 const std::vector<double>& gamma_grid,
                                                 std::uint64_t salt = kSensitivitySalt) {
    spec.validate();
    RngStream base(spec.seed, salt);
    RngStream data = base.substream(0);
    GeneratedInstance first = generate(spec, data);
    std::vector<CandidateBatch> batches;
    std::vector<std::vector<int>> hidden;
    batches.push_back(first.batch);
    hidden.push_back(first.hidden_labels);
    for (std::size_t t = 1; t < n_inputs; ++t) {
        std::vector<FeatureVector> feats;
        std::vector<double> scores;
        std::vector<int> labels;
        while (feats.size() < spec.batch_size) {
            FeatureVector x = detail::draw_q(spec, data);
            const double prob = hit_probability(spec, x);
            labels.push_back(data.next_unit() < prob ? 1 : 0);
            scores.push_back(prob);
            feats.push_back(std::move(x));
        }
        batches.emplace_back(std::move(feats), std::move(scores));
        hidden.push_back(std::move(labels));
    }
    return sensitivity_sweep(first.pool, batches, analytic_weight(spec), gamma_grid, stat,
                             spec.alpha_grid, B, base.substream(1), hidden);
}

/// One budget level of the allocation harness: repeats x (fresh pool +
/// n_inputs mixed batches), allocate, then compare the estimated positive
/// fraction against the realized fraction of inputs whose surviving set
/// contains a true hit.
struct BudgetHarnessResult {
    std::size_t total_budget = 0;
    std::size_t repeats = 0;
    double mean_estimated = 0.0;
    double mean_realized = 0.0;
    double se_realized = 0.0;
    double mean_chosen_alpha = 0.0;
};

inline BudgetHarnessResult run_budget_level(const SyntheticSpec& spec, const ScoreStatistic& stat,
                                            std::size_t B, std::size_t n_inputs,
                                            const std::vector<double>& alpha_grid,
                                            std::size_t total_budget, std::size_t repeats,
                                            unsigned threads = 1,
                                            std::uint64_t salt = kBudgetSalt) {
    spec.validate();
    struct Repeat {
        double estimated, realized, alpha;
    };
    std::vector<Repeat> rs = run_trials<Repeat>(repeats, threads, [&](std::size_t rep) {
        RngStream base = RngStream(spec.seed, salt).substream(rep);
        RngStream data = base.substream(0);
        GeneratedInstance first = generate(spec, data);
        std::vector<CandidateBatch> batches;
        std::vector<std::vector<int>> hidden;
        batches.push_back(first.batch);
        hidden.push_back(first.hidden_labels);
        for (std::size_t t = 1; t < n_inputs; ++t) {
            std::vector<FeatureVector> feats;
            std::vector<double> scores;
            std::vector<int> labels;
            while (feats.size() < spec.batch_size) {
                FeatureVector x = detail::draw_q(spec, data);
                const double prob = hit_probability(spec, x);
                labels.push_back(data.next_unit() < prob ? 1 : 0);
                scores.push_back(prob);
                feats.push_back(std::move(x));
            }
            batches.emplace_back(std::move(feats), std::move(scores));
            hidden.push_back(std::move(labels));
        }
        const BudgetPlan plan = allocate(first.pool, batches, stat, analytic_weight(spec),
                                         alpha_grid, total_budget, B, base.substream(1));
        std::size_t hits = 0;
        for (std::size_t t = 0; t < batches.size(); ++t) {
            bool hit = false;
            for (std::size_t j : plan.chosen_sets[t])
                if (hidden[t][j] == 1) hit = true;
            if (hit) ++hits;
        }
        return Repeat{plan.estimated_positives,
                      static_cast<double>(hits) / static_cast<double>(n_inputs),
                      plan.chosen_alpha};
    });

    BudgetHarnessResult out;
    out.total_budget = total_budget;
    out.repeats = repeats;
    for (const Repeat& r : rs) {
        out.mean_estimated += r.estimated;
        out.mean_realized += r.realized;
        out.mean_chosen_alpha += r.alpha;
    }
    const double R = static_cast<double>(repeats);
    out.mean_estimated /= R;
    out.mean_realized /= R;
    out.mean_chosen_alpha /= R;
    double var = 0.0;
    for (const Repeat& r : rs) {
        const double d = r.realized - out.mean_realized;
        var += d * d;
    }
    out.se_realized = repeats > 1 ? std::sqrt(var / (R * (R - 1.0))) : 0.0;
    return out;
}

/// Estimation-error inflation on the null harness: per trial, evaluate the
/// estimated-weight p-value and its bound on shared draws; compare the
/// exceedance rate against the trial-averaged bound.
struct GapExperimentRow {
    double t = 0.0;
    double exceedance = 0.0;
    double mean_bound = 0.0;
    double se = 0.0;
};

inline std::vector<GapExperimentRow> run_gap_experiment(const SyntheticSpec& spec,
                                                        const ScoreStatistic& stat, std::size_t B,
                                                        double corrupt_gamma,
                                                        const std::vector<double>& t_grid,
                                                        unsigned threads = 1,
                                                        std::uint64_t salt = kGapSalt) {
    spec.validate();
    struct Trial {
        std::vector<double> p_est;
        std::vector<double> bound;
    };
    std::vector<Trial> ts = run_trials<Trial>(spec.trials, threads, [&](std::size_t trial) {
        auto streams = detail::trial_streams(spec, salt, trial);
        GeneratedInstance inst = generate(spec, streams.data, BatchLaw::Null);
        const WeightFn true_w = analytic_weight(spec);
        const WeightFn est_w = power_transform(true_w, corrupt_gamma);
        Trial out;
        for (std::size_t ti = 0; ti < t_grid.size(); ++ti) {
            const RobustnessGap gap =
                robustness_gap(inst.pool, inst.batch, inst.batch.size(), stat, true_w, est_w,
                               t_grid[ti], B, streams.mc.substream(ti));
            out.p_est.push_back(gap.p_estimated);
            out.bound.push_back(gap.bound);
        }
        return out;
    });

    std::vector<GapExperimentRow> rows;
    for (std::size_t ti = 0; ti < t_grid.size(); ++ti) {
        GapExperimentRow row;
        row.t = t_grid[ti];
        std::size_t c = 0;
        double bound_sum = 0.0;
        for (const Trial& tr : ts) {
            c += (tr.p_est[ti] <= t_grid[ti]) ? 1 : 0;
            bound_sum += tr.bound[ti];
        }
        row.exceedance = static_cast<double>(c) / static_cast<double>(ts.size());
        row.mean_bound = bound_sum / static_cast<double>(ts.size());
        row.se = mc_standard_error(row.exceedance, ts.size());
        rows.push_back(row);
    }
    return rows;
}

} // namespace hitcert::sim

#endif // HITCERT_SIM_HPP
