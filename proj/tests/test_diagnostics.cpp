#include <catch2/catch_amalgamated.hpp>

#include <hitcert/diagnostics.hpp>
#include <hitcert/sim.hpp>

#include <cmath>
#include <vector>

using namespace hitcert;

namespace {

std::vector<FeatureVector> gaussians(std::size_t n, double shift, RngStream& rng) {
    std::vector<FeatureVector> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({rng.next_gaussian() + shift});
    return out;
}

} // namespace

TEST_CASE("diagnostics: balance is exactly zero on identical sets with unit weights") {
    RngStream rng(700, 0);
    std::vector<FeatureVector> feats = gaussians(40, 0.0, rng);
    std::vector<int> labels(40, 0);
    LabeledPool pool(feats, labels);
    CandidateBatch batch(feats, std::vector<double>(40, 0.5));
    const BalanceReport rep = balance_check(pool, batch, WeightFn::uniform());
    REQUIRE(rep.per_feature_imbalance_before[0] == 0.0);
    REQUIRE(rep.per_feature_imbalance_after[0] == 0.0);
    REQUIRE(rep.cosine_distance_after == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("diagnostics: balance is zero for a single shared point") {
    LabeledPool pool({{2.5}}, {0});
    CandidateBatch batch({{2.5}}, {0.5});
    const BalanceReport rep = balance_check(pool, batch, WeightFn::uniform());
    REQUIRE(rep.per_feature_imbalance_after[0] == 0.0);
}

TEST_CASE("diagnostics: exact weights shrink the shift imbalance") {
    RngStream rng(701, 0);
    const std::size_t n = 5000;
    std::vector<FeatureVector> cal = gaussians(n, 0.0, rng);
    std::vector<FeatureVector> test = gaussians(n, 1.0, rng);
    LabeledPool pool(cal, std::vector<int>(n, 0));
    CandidateBatch batch(test, std::vector<double>(n, 0.5));
    const WeightFn wfn = WeightFn::analytic_gaussian_shift({1.0});

    const BalanceReport rep = balance_check(pool, batch, wfn);
    REQUIRE(rep.per_feature_imbalance_after[0] < rep.per_feature_imbalance_before[0]);

    // importance-sampling identity at Monte Carlo precision: the weighted
    // calibration mean matches the test mean within 4 standard errors of
    // the weighted mean
    double mean_wf = 0.0;
    for (const auto& x : cal) mean_wf += wfn(x) * x[0];
    mean_wf /= static_cast<double>(n);
    double var_wf = 0.0;
    for (const auto& x : cal) {
        const double v = wfn(x) * x[0] - mean_wf;
        var_wf += v * v;
    }
    var_wf /= static_cast<double>(n - 1);
    const double se = std::sqrt(var_wf / static_cast<double>(n));
    REQUIRE(rep.per_feature_imbalance_after[0] <= 4.0 * se);
}

TEST_CASE("diagnostics: kl estimator is small on uniform and large on spiked samples") {
    RngStream rng(702, 0);
    std::vector<double> uniform_ps, spiked_ps;
    for (int i = 0; i < 4000; ++i) {
        uniform_ps.push_back(rng.next_unit());
        spiked_ps.push_back(0.05 * rng.next_unit());
    }
    REQUIRE(kl_from_uniform(uniform_ps) < 0.02);
    REQUIRE(kl_from_uniform(spiked_ps) > 1.0);
    REQUIRE_THROWS_AS(kl_from_uniform({1.5}), InputError);
}

TEST_CASE("diagnostics: validation shift needs at least two groups") {
    LabeledPool pool({{0.0}, {1.0}}, {0, 0}, std::vector<double>{0.5, 0.5});
    REQUIRE_THROWS_AS(validation_shift(pool, {"a", "a"}, 1, ScoreStatistic(ScoreKind::MaxPool),
                                       {1.0}, {0.1}, 50, RngStream(1, 0)),
                      InputError);
}

TEST_CASE("diagnostics: weighting shrinks the p-value deviation under a group shift") {
    RngStream rng(703, 0);
    // group "shifted" (most frequent) drawn at +1.2, group "base" at 0;
    // labels depend on x alone so the covariate-shift model holds
    std::vector<FeatureVector> feats;
    std::vector<int> labels;
    std::vector<double> scores;
    std::vector<std::string> groups;
    auto add_rows = [&](std::size_t count, double shift, const std::string& g) {
        for (std::size_t i = 0; i < count; ++i) {
            const double x = rng.next_gaussian() + shift;
            const double prob = 1.0 / (1.0 + std::exp(-(1.5 * x - 1.0)));
            feats.push_back({x});
            labels.push_back(rng.next_unit() < prob ? 1 : 0);
            scores.push_back(prob);
            groups.push_back(g);
        }
    };
    add_rows(700, 1.2, "shifted");
    add_rows(450, 0.0, "base");
    LabeledPool pool(feats, labels, scores);

    const ValidationShiftReport rep =
        validation_shift(pool, groups, 1, ScoreStatistic(ScoreKind::MaxPool), {0.1, 1.0, 10.0},
                         {0.1, 0.3}, 400, RngStream(42, 0));
    REQUIRE(rep.pseudo_test_groups == std::vector<std::string>{"shifted"});
    REQUIRE(rep.kl_weighted < rep.kl_unweighted);
}

TEST_CASE("diagnostics: random split keeps both deviations small") {
    RngStream rng(704, 0);
    std::vector<FeatureVector> feats;
    std::vector<int> labels;
    std::vector<double> scores;
    std::vector<std::string> groups;
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.next_gaussian();
        const double prob = 1.0 / (1.0 + std::exp(-(1.5 * x - 1.0)));
        feats.push_back({x});
        labels.push_back(rng.next_unit() < prob ? 1 : 0);
        scores.push_back(prob);
        groups.push_back(rng.next_unit() < 0.6 ? "one" : "two");
    }
    LabeledPool pool(feats, labels, scores);
    const ValidationShiftReport rep =
        validation_shift(pool, groups, 1, ScoreStatistic(ScoreKind::MaxPool), {0.1, 1.0, 10.0},
                         {0.1, 0.3}, 400, RngStream(43, 0));
    REQUIRE(rep.kl_weighted <= rep.kl_unweighted + 0.1);
    REQUIRE(rep.kl_unweighted < 0.25);
}

TEST_CASE("diagnostics: sensitivity sweep is deterministic and anchored at gamma one") {
    sim::SyntheticSpec spec;
    spec.n_calibration = 60;
    spec.batch_size = 3;
    RngStream rng(705, 0);
    const sim::GeneratedInstance inst = sim::generate(spec, rng);
    std::vector<CandidateBatch> batches = {inst.batch};
    std::vector<std::vector<int>> hidden = {inst.hidden_labels};
    for (int t = 1; t < 6; ++t) {
        RngStream r2(705, static_cast<std::uint64_t>(t));
        const sim::GeneratedInstance more = sim::generate(spec, r2);
        batches.push_back(more.batch);
        hidden.push_back(more.hidden_labels);
    }
    const std::vector<double> gammas = {0.0, 0.5, 1.0, 2.0};
    const std::vector<double> alphas = {0.1, 0.3};

    const SensitivityReport a =
        sensitivity_sweep(inst.pool, batches, sim::analytic_weight(spec), gammas,
                          ScoreStatistic(ScoreKind::MaxPool), alphas, 200, RngStream(50, 0),
                          hidden);
    const SensitivityReport b =
        sensitivity_sweep(inst.pool, batches, sim::analytic_weight(spec), gammas,
                          ScoreStatistic(ScoreKind::MaxPool), alphas, 200, RngStream(50, 0),
                          hidden);
    REQUIRE(a.rows.size() == 4);
    REQUIRE(a.base_row == 2);
    for (std::size_t g = 0; g < a.rows.size(); ++g) {
        REQUIRE(a.rows[g].kl_from_uniform_of_null_pvalues ==
                b.rows[g].kl_from_uniform_of_null_pvalues); // bitwise determinism
        REQUIRE(a.rows[g].rejection_rate == b.rows[g].rejection_rate);
    }
    // the gamma = 1 row has no flips against itself
    for (std::size_t i = 0; i < alphas.size(); ++i)
        REQUIRE(a.rows[2].decision_flips[i] == 0);

    // the gamma = 0 row equals the unweighted run on the same substreams
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        std::size_t empty = 0;
        for (std::size_t t = 0; t < batches.size(); ++t) {
            auto [profile, outcome] =
                design(inst.pool, batches[t], ScoreStatistic(ScoreKind::MaxPool),
                       WeightFn::uniform(), alphas[0], 200, RngStream(50, 0).substream(t));
            (void)outcome;
            if (first_crossing(profile.monotone, alphas[i]) == 0) ++empty;
        }
        REQUIRE(a.rows[0].rejection_rate[i] ==
                static_cast<double>(empty) / static_cast<double>(batches.size()));
    }

    REQUIRE_THROWS_AS(sensitivity_sweep(inst.pool, batches, sim::analytic_weight(spec),
                                        {0.5, 2.0}, ScoreStatistic(ScoreKind::MaxPool), alphas,
                                        50, RngStream(50, 0)),
                      InputError); // grid must contain 1
}

TEST_CASE("diagnostics: robustness gap vanishes when the weights are exact") {
    sim::SyntheticSpec spec;
    spec.n_calibration = 50;
    spec.batch_size = 3;
    RngStream rng(706, 0);
    const sim::GeneratedInstance inst = sim::generate(spec, rng, sim::BatchLaw::Null);
    const WeightFn w = sim::analytic_weight(spec);
    const RobustnessGap gap = robustness_gap(inst.pool, inst.batch, 3,
                                             ScoreStatistic(ScoreKind::MaxPool), w, w, 0.3, 300,
                                             RngStream(60, 0));
    REQUIRE(gap.delta_plus == 0.0);
    REQUIRE(gap.delta_minus == 0.0);
    REQUIRE(gap.bound == Catch::Approx(0.3));
    REQUIRE(gap.p_estimated == gap.p_true);
}

TEST_CASE("diagnostics: doubling the weights leaves both p-values unchanged") {
    sim::SyntheticSpec spec;
    spec.n_calibration = 40;
    spec.batch_size = 2;
    RngStream rng(707, 0);
    const sim::GeneratedInstance inst = sim::generate(spec, rng, sim::BatchLaw::Null);
    const WeightFn base = sim::analytic_weight(spec);

    std::vector<double> pool_w, batch_w;
    for (std::size_t i = 0; i < inst.pool.size(); ++i)
        pool_w.push_back(2.0 * base.pool_row_weight(inst.pool, i));
    for (std::size_t j = 0; j < inst.batch.size(); ++j)
        batch_w.push_back(2.0 * base.batch_row_weight(inst.batch, j));
    const WeightFn doubled = WeightFn::tabulated(pool_w, batch_w);

    const RobustnessGap gap = robustness_gap(inst.pool, inst.batch, 2,
                                             ScoreStatistic(ScoreKind::MaxPool), base, doubled,
                                             0.3, 300, RngStream(61, 0));
    // dyadic scaling: identical p-values bitwise, raw deltas nonzero
    REQUIRE(gap.p_estimated == gap.p_true);
    REQUIRE(gap.delta_plus + gap.delta_minus > 0.0);
}

TEST_CASE("diagnostics: gap reports a vacuous bound when nothing is rejected") {
    // constant scores force every p-value to 1, so no cutoff exists
    std::vector<FeatureVector> feats = {{0.0}, {1.0}, {2.0}};
    LabeledPool pool(feats, {0, 0, 0}, std::vector<double>{0.5, 0.5, 0.5});
    CandidateBatch batch({{3.0}}, {0.5});
    const WeightFn w = WeightFn::uniform();
    const RobustnessGap gap = robustness_gap(pool, batch, 1, ScoreStatistic(ScoreKind::MaxPool),
                                             w, w, 0.1, 100, RngStream(62, 0));
    REQUIRE_FALSE(gap.cutoff_defined);
    REQUIRE(gap.bound == 0.1);
    REQUIRE(gap.delta_plus == 0.0);
    REQUIRE(gap.delta_minus == 0.0);
}
