#ifndef HITCERT_NESTED_HPP
#define HITCERT_NESTED_HPP

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "pvalue.hpp"

namespace hitcert {

/// Per-prefix p-values p_1..p_N and their monotonized version.
/// monotone[k] = max(raw[k..N]), so monotone is non-increasing in k and
/// dominates raw pointwise. Downstream decisions must use monotone.
struct PValueProfile {
    std::vector<double> raw;
    std::vector<double> monotone;
    double alpha = 0.0;
};

enum class DesignStatus { Certified, NotConfidentEnough };

inline std::string to_string(DesignStatus s) {
    return s == DesignStatus::Certified ? "certified" : "not_confident_enough";
}

/// n_hat = 0 with an empty shortlist encodes "not confident enough".
struct DesignOutcome {
    std::size_t n_hat = 0;
    std::vector<std::size_t> shortlist;
    DesignStatus status = DesignStatus::NotConfidentEnough;
};

/// Backward running maximum. Idempotent.
inline std::vector<double> monotonize(const std::vector<double>& raw) {
    std::vector<double> out(raw.size());
    double running = 0.0;
    for (std::size_t i = raw.size(); i-- > 0;) {
        const double p = raw[i];
        if (!(p >= 0.0 && p <= 1.0))
            throw InputError("monotonize: p-value " + std::to_string(p) + " at position " +
                             std::to_string(i) + " outside [0, 1]");
        running = std::max(running, p);
        out[i] = running;
    }
    return out;
}

/// Smallest k (1-based) with monotone[k] <= alpha; 0 when none crosses.
inline std::size_t first_crossing(const std::vector<double>& monotone, double alpha) {
    for (std::size_t i = 0; i < monotone.size(); ++i)
        if (monotone[i] <= alpha) return i + 1;
    return 0;
}

/// Nested testing over batch prefixes: compute the prefix p-value sequence,
/// monotonize, and return the smallest prefix that stays certified at level
/// alpha. Each prefix size k draws from its own substream (key k), so
/// extending the batch never perturbs earlier p-values.
inline std::pair<PValueProfile, DesignOutcome> design(const LabeledPool& pool,
                                                      const CandidateBatch& batch,
                                                      const ScoreStatistic& stat,
                                                      const WeightFn& wfn, double alpha,
                                                      std::size_t B, RngStream rng) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("design: alpha must lie in (0, 1)");
    const std::size_t N = batch.size();

    PValueProfile profile;
    profile.alpha = alpha;
    profile.raw.resize(N);
    for (std::size_t k = 1; k <= N; ++k)
        profile.raw[k - 1] =
            randomized_pvalue(pool, batch, k, stat, wfn, alpha, B, rng.substream(k)).p_value;
    profile.monotone = monotonize(profile.raw);

    DesignOutcome outcome;
    outcome.n_hat = first_crossing(profile.monotone, alpha);
    if (outcome.n_hat > 0) {
        outcome.status = DesignStatus::Certified;
        outcome.shortlist.resize(outcome.n_hat);
        for (std::size_t j = 0; j < outcome.n_hat; ++j) outcome.shortlist[j] = j;
    }
    return {std::move(profile), std::move(outcome)};
}

} // namespace hitcert

#endif // HITCERT_NESTED_HPP
