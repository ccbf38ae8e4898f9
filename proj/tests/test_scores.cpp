#include <catch2/catch_amalgamated.hpp>

#include <hitcert/rng.hpp>
#include <hitcert/scores.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace hitcert;

namespace {

// independent rank oracle: sort a copy, a value's rank is its 1-based sorted
// position (all-distinct inputs only)
double rank_sum_by_sort(const std::vector<double>& pooled,
                        const std::vector<std::size_t>& positions) {
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double total = 0.0;
    for (std::size_t pos : positions) {
        const auto it = std::find(sorted.begin(), sorted.end(), pooled[pos]);
        total += static_cast<double>(std::distance(sorted.begin(), it)) + 1.0;
    }
    return total;
}

} // namespace

TEST_CASE("scores: spec examples") {
    const std::vector<double> pooled = {0.1, 0.4, 0.2, 0.3};

    ScoreStatistic maxpool(ScoreKind::MaxPool);
    const std::vector<std::size_t> p3 = {3};
    REQUIRE(maxpool.evaluate(pooled, p3) == 0.3);

    ScoreStatistic sum(ScoreKind::SumPred);
    const std::vector<std::size_t> p13 = {1, 3};
    REQUIRE(sum.evaluate(pooled, p13) == Catch::Approx(0.7));

    ScoreStatistic ranksum(ScoreKind::RankSum);
    REQUIRE(ranksum.evaluate(pooled, p13) == 7.0); // ranks 4 and 3

    ScoreStatistic llr(ScoreKind::LogLikelihoodRatio);
    const std::vector<double> half = {0.5, 0.5};
    const std::vector<std::size_t> both = {0, 1};
    REQUIRE(llr.evaluate(half, both) == 0.0);
}

TEST_CASE("scores: invariant under permuting values among test positions") {
    RngStream rng(42, 0);
    for (ScoreKind kind : {ScoreKind::MaxPool, ScoreKind::SumPred, ScoreKind::RankSum,
                           ScoreKind::LogLikelihoodRatio}) {
        ScoreStatistic stat(kind);
        for (int rep = 0; rep < 100; ++rep) {
            const std::size_t m = 4 + rng.below(8);
            const std::size_t k = 1 + rng.below(m - 1);
            std::vector<double> pooled(m);
            for (double& v : pooled) v = rng.next_unit();
            std::vector<std::size_t> pos(m);
            std::iota(pos.begin(), pos.end(), std::size_t{0});
            rng.partial_shuffle(pos, k);
            std::vector<std::size_t> test_pos(pos.begin(), pos.begin() + k);

            const double v = stat.evaluate(pooled, test_pos);

            // shuffle the values sitting at the test positions
            std::vector<double> shuffled = pooled;
            std::vector<std::size_t> order = test_pos;
            rng.partial_shuffle(order, order.size());
            for (std::size_t i = 0; i < k; ++i) shuffled[test_pos[i]] = pooled[order[i]];

            REQUIRE(stat.evaluate(shuffled, test_pos) == Catch::Approx(v).epsilon(1e-12));
        }
    }
}

TEST_CASE("scores: raising one test entry never lowers max/sum/llr") {
    RngStream rng(43, 0);
    for (ScoreKind kind :
         {ScoreKind::MaxPool, ScoreKind::SumPred, ScoreKind::LogLikelihoodRatio}) {
        ScoreStatistic stat(kind);
        for (int rep = 0; rep < 200; ++rep) {
            const std::size_t m = 3 + rng.below(8);
            const std::size_t k = 1 + rng.below(m - 1);
            std::vector<double> pooled(m);
            for (double& v : pooled) v = 0.05 + 0.9 * rng.next_unit();
            std::vector<std::size_t> pos(m);
            std::iota(pos.begin(), pos.end(), std::size_t{0});
            rng.partial_shuffle(pos, k);
            std::vector<std::size_t> test_pos(pos.begin(), pos.begin() + k);

            const double before = stat.evaluate(pooled, test_pos);
            std::vector<double> raised = pooled;
            const std::size_t bump = test_pos[rng.below(k)];
            raised[bump] = raised[bump] + (0.95 - raised[bump]) * rng.next_unit();
            REQUIRE(stat.evaluate(raised, test_pos) >= before - 1e-12);
        }
    }
}

TEST_CASE("scores: rank-sum matches the sort oracle on all-distinct values") {
    RngStream rng(44, 0);
    ScoreStatistic stat(ScoreKind::RankSum);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t m = 2 + rng.below(11); // up to 12
        std::vector<double> pooled(m);
        for (std::size_t i = 0; i < m; ++i)
            pooled[i] = static_cast<double>(i) + rng.next_unit() * 0.5; // distinct
        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.partial_shuffle(order, m); // random value arrangement
        std::vector<double> arranged(m);
        for (std::size_t i = 0; i < m; ++i) arranged[i] = pooled[order[i]];

        const std::size_t k = 1 + rng.below(m);
        std::vector<std::size_t> pos(m);
        std::iota(pos.begin(), pos.end(), std::size_t{0});
        rng.partial_shuffle(pos, k);
        std::vector<std::size_t> test_pos(pos.begin(), pos.begin() + k);

        REQUIRE(stat.evaluate(arranged, test_pos) ==
                Catch::Approx(rank_sum_by_sort(arranged, test_pos)));
    }
}

TEST_CASE("scores: rank-sum averages tied ranks") {
    ScoreStatistic stat(ScoreKind::RankSum);
    // values 0.2, 0.2 share ranks 1 and 2 -> each 1.5
    const std::vector<double> pooled = {0.2, 0.2, 0.7};
    const std::vector<std::size_t> one = {0};
    REQUIRE(stat.evaluate(pooled, one) == 1.5);
}

TEST_CASE("scores: llr clamps boundary predictions instead of diverging") {
    ScoreStatistic stat(ScoreKind::LogLikelihoodRatio, 1e-12);
    const std::vector<double> pooled = {0.0, 1.0};
    const std::vector<std::size_t> both = {0, 1};
    const double v = stat.evaluate(pooled, both);
    REQUIRE(std::isfinite(v));
    REQUIRE(v == Catch::Approx(0.0).margin(1e-9)); // the clamps cancel
}

TEST_CASE("scores: input errors") {
    ScoreStatistic llr(ScoreKind::LogLikelihoodRatio);
    const std::vector<double> bad = {0.5, 1.5};
    const std::vector<std::size_t> pos = {1};
    REQUIRE_THROWS_AS(llr.evaluate(bad, pos), InputError);

    ScoreStatistic maxpool(ScoreKind::MaxPool);
    const std::vector<double> ok = {0.5, 0.6};
    const std::vector<std::size_t> out_of_range = {2};
    REQUIRE_THROWS_AS(maxpool.evaluate(ok, out_of_range), InputError);
    const std::vector<std::size_t> duplicate = {1, 1};
    REQUIRE_THROWS_AS(maxpool.evaluate(ok, duplicate), InputError);

    REQUIRE_THROWS_AS(ScoreStatistic(ScoreKind::MaxPool, -1.0), InputError);
    REQUIRE_THROWS_AS(parse_score_kind("median"), InputError);
}
