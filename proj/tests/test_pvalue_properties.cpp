#include <catch2/catch_amalgamated.hpp>

#include <hitcert/pvalue.hpp>
#include <hitcert/rng.hpp>
#include <hitcert/sim.hpp>

#include <cmath>
#include <vector>

using namespace hitcert;

namespace {

LabeledPool inactive_pool(const std::vector<double>& scores) {
    std::vector<FeatureVector> feats;
    std::vector<int> labels(scores.size(), 0);
    for (std::size_t i = 0; i < scores.size(); ++i)
        feats.push_back({static_cast<double>(i)});
    return LabeledPool(std::move(feats), std::move(labels), scores);
}

CandidateBatch batch_of(const std::vector<double>& scores) {
    std::vector<FeatureVector> feats;
    for (std::size_t j = 0; j < scores.size(); ++j)
        feats.push_back({100.0 + static_cast<double>(j)});
    return CandidateBatch(std::move(feats), scores);
}

struct MeanStd {
    double mean = 0.0;
    double se = 0.0;
};

MeanStd mean_and_se(const std::vector<double>& xs) {
    MeanStd out;
    for (double x : xs) out.mean += x;
    out.mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - out.mean) * (x - out.mean);
    var /= static_cast<double>(xs.size() - 1);
    out.se = std::sqrt(var / static_cast<double>(xs.size()));
    return out;
}

} // namespace

TEST_CASE("pvalue properties: subset and full-permutation samplers agree in distribution") {
    // fixed weighted instance with n0 + k = 6
    LabeledPool pool = inactive_pool({0.15, 0.8, 0.4, 0.55});
    CandidateBatch batch = batch_of({0.6, 0.35});
    const WeightFn wfn = WeightFn::tabulated({0.5, 1.4, 0.9, 2.0}, {1.2, 0.7});
    const ScoreStatistic stat(ScoreKind::MaxPool);
    const std::size_t B = 20, seeds = 10000;

    std::vector<double> subset_ps, fullperm_ps;
    subset_ps.reserve(seeds);
    fullperm_ps.reserve(seeds);
    for (std::size_t s = 0; s < seeds; ++s) {
        subset_ps.push_back(randomized_pvalue(pool, batch, 2, stat, wfn, 0.1, B,
                                              RngStream(9000, s), PermutationSampler::Subset)
                                .p_value);
        fullperm_ps.push_back(
            randomized_pvalue(pool, batch, 2, stat, wfn, 0.1, B, RngStream(9001, s),
                              PermutationSampler::FullPermutation)
                .p_value);
    }
    const MeanStd sub = mean_and_se(subset_ps);
    const MeanStd full = mean_and_se(fullperm_ps);

    // identical distributions: means agree within 3 combined standard errors
    const double combined_se = std::sqrt(sub.se * sub.se + full.se * full.se);
    REQUIRE(std::abs(sub.mean - full.mean) <= 3.0 * combined_se);

    // both estimators sit within the identity-term bias of the exact value:
    // |E[p_rand] - p_det| <= w0 / (w0 + B * wmin) with weights scaled by max
    const std::vector<double> w_norm = {0.25, 0.7, 0.45, 1.0, 0.6, 0.35};
    const double w0 = 0.6 * 0.35;
    double wmin = 1.0;
    for (double a : w_norm)
        for (double b : w_norm)
            if (a != b) wmin = std::min(wmin, a * b);
    const double bias_bound = w0 / (w0 + static_cast<double>(B) * wmin);
    const double p_det = deterministic_pvalue(pool, batch, 2, stat, wfn, 0.1).p_value;
    REQUIRE(std::abs(sub.mean - p_det) <= 3.0 * sub.se + bias_bound);
    REQUIRE(std::abs(full.mean - p_det) <= 3.0 * full.se + bias_bound);
}

TEST_CASE("pvalue properties: uniform-weight randomized mean matches its closed form") {
    // with unit weights E[p_rand] = p_det + (1 - p_det) / (B + 1) exactly
    LabeledPool pool = inactive_pool({0.15, 0.8, 0.4, 0.55, 0.3});
    CandidateBatch batch = batch_of({0.6, 0.45});
    const ScoreStatistic stat(ScoreKind::SumPred);
    const std::size_t B = 16, seeds = 20000;

    const double p_det =
        deterministic_pvalue(pool, batch, 2, stat, WeightFn::uniform(), 0.1).p_value;
    const double expected = p_det + (1.0 - p_det) / static_cast<double>(B + 1);

    std::vector<double> ps;
    ps.reserve(seeds);
    for (std::size_t s = 0; s < seeds; ++s)
        ps.push_back(randomized_pvalue(pool, batch, 2, stat, WeightFn::uniform(), 0.1, B,
                                       RngStream(9100, s))
                         .p_value);
    const MeanStd m = mean_and_se(ps);
    REQUIRE(std::abs(m.mean - expected) <= 3.0 * m.se);
}

TEST_CASE("pvalue properties: randomized converges to deterministic as B grows") {
    LabeledPool pool = inactive_pool({0.2, 0.7, 0.5, 0.35, 0.9, 0.1});
    CandidateBatch batch = batch_of({0.65, 0.3});
    const WeightFn wfn = WeightFn::tabulated({1.0, 0.6, 1.5, 0.8, 1.1, 0.9}, {1.3, 0.7});
    const ScoreStatistic stat(ScoreKind::RankSum);
    const double p_det = deterministic_pvalue(pool, batch, 2, stat, wfn, 0.1).p_value;

    double prev = 1e9;
    for (std::size_t B : {100u, 1000u, 10000u}) {
        double abs_err = 0.0;
        const std::size_t seeds = 200;
        for (std::size_t s = 0; s < seeds; ++s)
            abs_err += std::abs(randomized_pvalue(pool, batch, 2, stat, wfn, 0.1, B,
                                                  RngStream(9200 + B, s))
                                    .p_value -
                                p_det);
        abs_err /= static_cast<double>(seeds);
        REQUIRE(abs_err < prev);
        prev = abs_err;
        if (B == 10000u) REQUIRE(abs_err <= 2.0 / std::sqrt(static_cast<double>(B)));
    }
}

TEST_CASE("pvalue properties: null p-values are super-uniform with exact weights") {
    sim::SyntheticSpec spec;
    spec.dimension = 1;
    spec.shift_mu = {0.8};
    spec.label_coef = {1.5};
    spec.label_intercept = -0.5;
    spec.n_calibration = 50;
    spec.batch_size = 3;
    spec.trials = 500;
    spec.alpha_grid = {0.1, 0.3};
    spec.seed = 424242;
    const sim::ExperimentReport rep = sim::run_null_experiment(
        spec, sim::NullMethod::ConfidenceRand, ScoreStatistic(ScoreKind::MaxPool), 300, 2);
    for (const sim::AlphaRow& row : rep.per_alpha) {
        const double slack = 3.0 * std::sqrt(row.alpha * (1.0 - row.alpha) / 500.0);
        REQUIRE(row.empirical_error <= row.alpha + slack);
    }
}

TEST_CASE("pvalue properties: the identity arrangement ranks top with weight-proportional frequency") {
    // two-point feature space a = 0, b = 1 with exact ratio w(x) = e^{x - 1/2};
    // conditional on the pooled multiset {a, a, b, b}, the test slot holds b
    // with probability w(b) / (w(a) + w(b))
    const double wa = std::exp(-0.5), wb = std::exp(0.5);
    const double predicted = wb / (wa + wb);

    RngStream rng(9300, 0);
    std::size_t accepted = 0, top = 0;
    while (accepted < 12000) {
        int count_b = 0;
        // three calibration draws from P0 = Uniform{a, b}
        int cal_b = 0;
        for (int i = 0; i < 3; ++i)
            if (rng.next_unit() < 0.5) ++cal_b;
        // one test draw from Q0, which reweights P0 by w
        const bool test_is_b = rng.next_unit() < wb / (wa + wb);
        count_b = cal_b + (test_is_b ? 1 : 0);
        if (count_b != 2) continue; // condition on the multiset {a, a, b, b}
        ++accepted;
        if (test_is_b) ++top; // MaxPool: identity is top-1 iff the test slot holds b
    }
    const double freq = static_cast<double>(top) / static_cast<double>(accepted);
    const double se = std::sqrt(predicted * (1.0 - predicted) / static_cast<double>(accepted));
    REQUIRE(std::abs(freq - predicted) <= 3.0 * se);
}

TEST_CASE("pvalue properties: deterministic p-value is super-uniform at small n0") {
    sim::SyntheticSpec spec;
    spec.dimension = 1;
    spec.shift_mu = {0.7};
    spec.label_coef = {1.2};
    spec.label_intercept = -0.3;
    spec.n_calibration = 12;
    spec.batch_size = 2;
    spec.trials = 500;
    spec.alpha_grid = {0.1, 0.3};
    spec.seed = 515151;
    const sim::ExperimentReport rep = sim::run_null_experiment(
        spec, sim::NullMethod::ConfidenceDet, ScoreStatistic(ScoreKind::MaxPool), 1, 2);
    for (const sim::AlphaRow& row : rep.per_alpha) {
        const double slack = 3.0 * std::sqrt(row.alpha * (1.0 - row.alpha) / 500.0);
        REQUIRE(row.empirical_error <= row.alpha + slack);
    }
}
