#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "mknock/competition.hpp"
#include "mknock/rng.hpp"

using namespace mknock;

namespace {

ScoreTable table_from(const MatrixXd& scores, std::uint64_t tie_seed) {
    ScoreTable t;
    t.d = static_cast<int>(scores.cols()) - 1;
    t.scores = scores;
    t.tie_seed = tie_seed;
    t.ranks = compute_ranks(scores, tie_seed);
    return t;
}

ScoreTable random_table(int p, int d, Rng& rng, std::uint64_t tie_seed) {
    MatrixXd scores(p, d + 1);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j <= d; ++j) scores(i, j) = rng.uniform();
    return table_from(scores, tie_seed);
}

}  // namespace

// -------------------------------------------------------------------------
// Parameters and labels
// -------------------------------------------------------------------------

TEST_CASE("make_params validates the index ranges") {
    const TuningParams p = make_params(3, 1, 2);
    CHECK(p.d1 == 4);
    CHECK(p.c() == doctest::Approx(0.25));
    CHECK(p.lambda() == doctest::Approx(0.5));
    CHECK_THROWS_AS(make_params(3, 0, 2), std::invalid_argument);
    CHECK_THROWS_AS(make_params(3, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_params(3, 1, 4), std::invalid_argument);
    CHECK(mirror_params(3).i_c == 2);
    CHECK(max_params(5).i_c == 1);
    CHECK_THROWS_AS(mirror_params(2), std::invalid_argument);
}

TEST_CASE("labels for d=1 mirror: sign of Z - Z~") {
    MatrixXd scores(3, 2);
    scores << 2.0, 1.0,   // original wins
              1.0, 3.0,   // knockoff wins
              0.5, 0.2;   // original wins
    const ScoreTable t = table_from(scores, 1);
    const std::vector<int> labels = assign_labels(t, mirror_params(1));
    CHECK(labels == std::vector<int>{1, -1, 1});
}

TEST_CASE("d=3 with i_c=1, i_lambda=2 leaves rank 3 ignored") {
    MatrixXd scores(1, 4);
    scores << 0.6, 0.2, 0.9, 0.4;  // original rank 3 of 4
    const ScoreTable t = table_from(scores, 2);
    REQUIRE(t.ranks[0] == 3);
    const std::vector<int> labels = assign_labels(t, make_params(3, 1, 2));
    CHECK(labels[0] == 0);
    // rank 3 wins when i_c = 2
    CHECK(assign_labels(t, make_params(3, 2, 2))[0] == 1);
    // rank 3 is a knockoff win when i_c = i_lambda = 1 (d1 - i_lambda = 3)
    CHECK(assign_labels(t, make_params(3, 1, 1))[0] == -1);
}

TEST_CASE("top rank everywhere gives all original wins") {
    MatrixXd scores(5, 3);
    for (int i = 0; i < 5; ++i) {
        scores(i, 0) = 10.0 + i;
        scores(i, 1) = 1.0;
        scores(i, 2) = 2.0;
    }
    const ScoreTable t = table_from(scores, 3);
    for (int label : assign_labels(t, make_params(2, 1, 1))) CHECK(label == 1);
}

// -------------------------------------------------------------------------
// Mirandom
// -------------------------------------------------------------------------

TEST_CASE("mirandom at d=1 picks the knockoff on a decoy win (max of pair)") {
    MatrixXd scores(2, 2);
    scores << 1.0, 4.0,
              5.0, 2.0;
    const ScoreTable t = table_from(scores, 4);
    const TuningParams params = mirror_params(1);
    const std::vector<int> labels = assign_labels(t, params);
    Rng rng(99);
    const VectorXd w = mirandom_select(t, labels, params, rng);
    CHECK(w(0) == 4.0);  // knockoff win: max of the pair
    CHECK(w(1) == 5.0);  // original win: Z
}

TEST_CASE("max method always selects the maximal knockoff on a decoy win") {
    Rng rng(100);
    for (int trial = 0; trial < 50; ++trial) {
        const ScoreTable t = random_table(6, 3, rng, derive_seed(101, trial));
        const TuningParams params = max_params(3);
        const std::vector<int> labels = assign_labels(t, params);
        Rng srng(derive_seed(102, trial));
        const VectorXd w = mirandom_select(t, labels, params, srng);
        for (int i = 0; i < 6; ++i) {
            const double max_knockoff = t.scores.row(i).tail(3).maxCoeff();
            if (labels[static_cast<std::size_t>(i)] == -1) CHECK(w(i) == max_knockoff);
            if (labels[static_cast<std::size_t>(i)] == 1) CHECK(w(i) == t.scores(i, 0));
        }
    }
}

TEST_CASE("interval construction for d=4, i_c = i_lambda = 2") {
    const TuningParams params = make_params(4, 2, 2);
    const MatrixXd cells = mirandom_cell_probabilities(params);
    REQUIRE(cells.rows() == 3);  // decoy-win ranks 1..3
    REQUIRE(cells.cols() == 2);  // ordinals 1..2
    CHECK(cells(0, 0) == 1.0);   // r=1 -> ordinal 1
    CHECK(cells(0, 1) == 0.0);
    CHECK(cells(1, 0) == doctest::Approx(0.5));  // r=2 -> 50/50
    CHECK(cells(1, 1) == doctest::Approx(0.5));
    CHECK(cells(2, 0) == 0.0);   // r=3 -> ordinal 2
    CHECK(cells(2, 1) == 1.0);
}

TEST_CASE("mirandom ordinal marginals are exactly uniform") {
    for (int d = 1; d <= 8; ++d) {
        for (int i_lambda = 1; i_lambda <= d; ++i_lambda) {
            for (int i_c = 1; i_c <= i_lambda; ++i_c) {
                const TuningParams params = make_params(d, i_c, i_lambda);
                const MatrixXd cells = mirandom_cell_probabilities(params);
                const int big_d = d + 1 - i_lambda;
                for (int j = 0; j < i_c; ++j) {
                    double total = 0.0;
                    for (int r = 0; r < big_d; ++r) total += cells(r, j) / big_d;
                    CHECK(std::abs(total - 1.0 / i_c) <= 1e-12);
                }
                // each row is a distribution
                for (int r = 0; r < big_d; ++r)
                    CHECK(std::abs(cells.row(r).sum() - 1.0) <= 1e-12);
            }
        }
    }
}

TEST_CASE("mirandom sampling matches the analytic cells") {
    // d=4, i_c=2, i_lambda=2, rank 2: ordinals 1 and 2 each with prob 1/2
    MatrixXd scores(1, 5);
    scores << 0.3, 0.9, 0.7, 0.5, 0.1;  // original rank 2 of 5
    const ScoreTable t = table_from(scores, 5);
    REQUIRE(t.ranks[0] == 2);
    const TuningParams params = make_params(4, 2, 2);
    const std::vector<int> labels = assign_labels(t, params);
    REQUIRE(labels[0] == -1);

    Rng rng(103);
    int largest = 0;
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        const VectorXd w = mirandom_select(t, labels, params, rng);
        if (w(0) == 0.9) ++largest;   // ordinal 1 = largest knockoff
        else CHECK(w(0) == 0.7);      // ordinal 2
    }
    const double freq = static_cast<double>(largest) / draws;
    CHECK(std::abs(freq - 0.5) <= 3.0 * std::sqrt(0.25 / draws));
}

// -------------------------------------------------------------------------
// Selection
// -------------------------------------------------------------------------

namespace {

CompetitionOutcome hand_outcome(const std::vector<int>& ordered_labels,
                                const TuningParams& params) {
    // w descending in feature order, labels as given
    CompetitionOutcome out;
    out.params = params;
    const int p = static_cast<int>(ordered_labels.size());
    out.labels = ordered_labels;
    out.w.resize(p);
    out.order.resize(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
        out.w(i) = static_cast<double>(p - i);
        out.order[static_cast<std::size_t>(i)] = i;
    }
    return out;
}

}  // namespace

TEST_CASE("worked rejection example: labels (1,1,-1,1) at alpha=0.5") {
    const Selection sel = select_discoveries(hand_outcome({1, 1, -1, 1}, mirror_params(1)), 0.5);
    CHECK(sel.i_star == 2);
    CHECK(sel.discoveries == std::vector<int>{0, 1});
}

TEST_CASE("no original wins means no discoveries") {
    const Selection sel =
        select_discoveries(hand_outcome({-1, -1, -1}, mirror_params(1)), 0.8);
    CHECK(sel.discoveries.empty());
}

TEST_CASE("alpha near 1 discovers every original win when all labels are 1") {
    const Selection sel =
        select_discoveries(hand_outcome({1, 1, 1, 1, 1}, mirror_params(1)), 0.999);
    CHECK(sel.discoveries.size() == 5);
    CHECK(sel.i_star == 5);
}

TEST_CASE("select_discoveries validates alpha and is monotone in alpha") {
    CHECK_THROWS_AS(select_discoveries(hand_outcome({1}, mirror_params(1)), 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(select_discoveries(hand_outcome({1}, mirror_params(1)), -0.1),
                    std::invalid_argument);
    // alpha = 0 always empty: the numerator is at least 1
    CHECK(select_discoveries(hand_outcome({1, 1, 1}, mirror_params(1)), 0.0)
              .discoveries.empty());

    Rng rng(104);
    for (int trial = 0; trial < 30; ++trial) {
        const ScoreTable t = random_table(12, 3, rng, derive_seed(105, trial));
        Rng crng(derive_seed(106, trial));
        const CompetitionOutcome outcome = compete(t, make_params(3, 1, 2), crng);
        std::vector<int> previous;
        for (double alpha : {0.05, 0.1, 0.2, 0.4, 0.8}) {
            const Selection sel = select_discoveries(outcome, alpha);
            CHECK(std::includes(sel.discoveries.begin(), sel.discoveries.end(),
                                previous.begin(), previous.end()));
            previous = sel.discoveries;
        }
    }
}

TEST_CASE("labels, order and discoveries depend only on score ranks") {
    Rng rng(107);
    for (int trial = 0; trial < 20; ++trial) {
        const std::uint64_t tie_seed = derive_seed(108, trial);
        ScoreTable t = random_table(10, 2, rng, tie_seed);
        // strictly increasing transform of all scores
        MatrixXd transformed = t.scores.unaryExpr([](double s) { return s * s * s + 2.0 * s; });
        const ScoreTable t2 = table_from(transformed, tie_seed);

        const TuningParams params = make_params(2, 1, 1);
        Rng ra(derive_seed(109, trial)), rb(derive_seed(109, trial));
        const CompetitionOutcome oa = compete(t, params, ra);
        const CompetitionOutcome ob = compete(t2, params, rb);
        CHECK(oa.labels == ob.labels);
        CHECK(oa.order == ob.order);
        for (double alpha : {0.1, 0.3, 0.5})
            CHECK(select_discoveries(oa, alpha).discoveries ==
                  select_discoveries(ob, alpha).discoveries);
    }
}

// -------------------------------------------------------------------------
// knockoff+ reference equivalence
// -------------------------------------------------------------------------

namespace {

std::vector<int> mirror_discoveries(const ScoreTable& t, double alpha,
                                    std::uint64_t comp_seed) {
    Rng rng(comp_seed);
    return select_discoveries(compete(t, mirror_params(1), rng), alpha).discoveries;
}

}  // namespace

TEST_CASE("mirror equals knockoff+ on every label sequence up to length 12") {
    for (int len = 1; len <= 12; ++len) {
        for (unsigned mask = 0; mask < (1u << len); ++mask) {
            MatrixXd scores(len, 2);
            for (int i = 0; i < len; ++i) {
                const double winner = static_cast<double>(2 * (len - i));
                const double loser = winner - 1.0;
                if (mask & (1u << i)) {
                    scores(i, 0) = winner;  // original win
                    scores(i, 1) = loser;
                } else {
                    scores(i, 0) = loser;   // knockoff win
                    scores(i, 1) = winner;
                }
            }
            const std::uint64_t tie_seed = derive_seed(110, mask, len);
            const ScoreTable t = table_from(scores, tie_seed);
            for (double alpha : {0.2, 0.5}) {
                CHECK(mirror_discoveries(t, alpha, 111) ==
                      knockoff_plus_reference(scores.col(0), scores.col(1), alpha, tie_seed));
            }
        }
    }
}

TEST_CASE("mirror equals knockoff+ on random tables with ties") {
    Rng rng(112);
    for (int trial = 0; trial < 400; ++trial) {
        const int p = 1 + static_cast<int>(rng.uniform_int(20));
        MatrixXd scores(p, 2);
        for (int i = 0; i < p; ++i) {
            // coarse integer grid forces frequent ties, including Z == Z~
            scores(i, 0) = static_cast<double>(rng.uniform_int(5));
            scores(i, 1) = static_cast<double>(rng.uniform_int(5));
        }
        const std::uint64_t tie_seed = derive_seed(113, trial);
        const ScoreTable t = table_from(scores, tie_seed);
        for (double alpha : {0.1, 0.25, 0.5, 0.75}) {
            CHECK(mirror_discoveries(t, alpha, 114) ==
                  knockoff_plus_reference(scores.col(0), scores.col(1), alpha, tie_seed));
        }
    }
}

TEST_CASE("knockoff+ edge cases") {
    VectorXd z(3), zt(3);
    z << 1.0, 2.0, 3.0;
    zt << 2.0, 3.0, 4.0;  // all knockoff wins
    CHECK(knockoff_plus_reference(z, zt, 0.9, 1).empty());

    VectorXd z1(1), zt1(1);
    z1 << 2.0;
    zt1 << 1.0;
    // single original win: estimated FDR is (1+0)/1 = 1 > alpha for alpha < 1
    CHECK(knockoff_plus_reference(z1, zt1, 0.99, 1).empty());
}
