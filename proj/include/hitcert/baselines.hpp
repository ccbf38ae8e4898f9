#ifndef HITCERT_BASELINES_HPP
#define HITCERT_BASELINES_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "nested.hpp"
#include "pvalue.hpp"

namespace hitcert {

enum class BaselineMethod { Bonferroni, CertificationOnly, Unweighted, Heuristic };

inline std::string to_string(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::Bonferroni: return "bonferroni";
        case BaselineMethod::CertificationOnly: return "certonly";
        case BaselineMethod::Unweighted: return "unweighted";
        case BaselineMethod::Heuristic: return "heuristic";
    }
    return "?";
}

inline BaselineMethod parse_baseline_method(const std::string& name) {
    if (name == "bonferroni") return BaselineMethod::Bonferroni;
    if (name == "certonly") return BaselineMethod::CertificationOnly;
    if (name == "unweighted") return BaselineMethod::Unweighted;
    if (name == "heuristic") return BaselineMethod::Heuristic;
    throw InputError("unknown baseline method '" + name + "'");
}

struct BaselineOutcome {
    BaselineMethod method = BaselineMethod::Bonferroni;
    std::vector<std::size_t> selected_indices;
    std::optional<std::size_t> n_required; // Heuristic only
    bool certified = false;
    std::vector<double> per_candidate_p;   // Bonferroni only
};

/// Tests each candidate alone with the weighted one-sample conformal
/// p-value and selects those at or below alpha / N.
inline BaselineOutcome bonferroni(const LabeledPool& pool, const CandidateBatch& batch,
                                  const WeightFn& wfn, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("bonferroni: alpha must lie in (0, 1)");
    BaselineOutcome out;
    out.method = BaselineMethod::Bonferroni;
    const double threshold = alpha / static_cast<double>(batch.size());
    out.per_candidate_p.reserve(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const double p = one_sample_pvalue(pool, batch, j, wfn);
        out.per_candidate_p.push_back(p);
        if (p <= threshold) out.selected_indices.push_back(j);
    }
    out.certified = !out.selected_indices.empty();
    return out;
}

/// Certifies the full batch without pruning; selects everything or nothing.
/// Draws from substream N so its p-value matches the last prefix of a
/// design run handed the same stream.
inline BaselineOutcome certification_only(const LabeledPool& pool, const CandidateBatch& batch,
                                          const ScoreStatistic& stat, const WeightFn& wfn,
                                          double alpha, std::size_t B, RngStream rng) {
    BaselineOutcome out;
    out.method = BaselineMethod::CertificationOnly;
    const std::size_t N = batch.size();
    const CertificationResult r =
        randomized_pvalue(pool, batch, N, stat, wfn, alpha, B, rng.substream(N));
    out.certified = r.certified;
    if (out.certified) {
        out.selected_indices.resize(N);
        for (std::size_t j = 0; j < N; ++j) out.selected_indices[j] = j;
    }
    return out;
}

/// Smallest n with (1 - p_hat)^n <= alpha, boundary counting as success:
/// ceil(log(alpha) / log(1 - p_hat)) with a local search to absorb
/// floating-point noise at exact boundaries. No certification; the rule
/// breaks error control as soon as p_hat is unreliable.
inline std::size_t heuristic_batch_size(double p_hat, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("heuristic: alpha must lie in (0, 1)");
    if (!(p_hat > 0.0 && p_hat < 1.0))
        throw InputError("heuristic: p_hat must lie strictly in (0, 1); for degenerate "
                         "predictions use the certification procedure instead");
    const double miss = 1.0 - p_hat;
    const double guess = std::ceil(std::log(alpha) / std::log(miss));
    std::size_t n = guess < 1.0 ? 1 : static_cast<std::size_t>(guess);
    while (n > 1 && std::pow(miss, static_cast<double>(n - 1)) <= alpha) --n;
    while (std::pow(miss, static_cast<double>(n)) > alpha) ++n;
    return n;
}

inline BaselineOutcome heuristic(double p_hat, double alpha) {
    BaselineOutcome out;
    out.method = BaselineMethod::Heuristic;
    out.n_required = heuristic_batch_size(p_hat, alpha);
    out.certified = false;
    return out;
}

/// Design with w(x) = 1: the no-shift-adjustment ablation.
inline std::pair<PValueProfile, DesignOutcome> unweighted_design(const LabeledPool& pool,
                                                                 const CandidateBatch& batch,
                                                                 const ScoreStatistic& stat,
                                                                 double alpha, std::size_t B,
                                                                 RngStream rng) {
    return design(pool, batch, stat, WeightFn::uniform(), alpha, B, rng);
}

} // namespace hitcert

#endif // HITCERT_BASELINES_HPP
