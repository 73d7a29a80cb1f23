#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <map>

#include "mknock/competition.hpp"
#include "mknock/knockoffs.hpp"
#include "mknock/lasso.hpp"
#include "mknock/resampling.hpp"
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

DesignData random_design(int n, int p, const VectorXd& beta, double noise, Rng& rng) {
    MatrixXd x(n, p);
    for (int j = 0; j < p; ++j)
        for (int i = 0; i < n; ++i) x(i, j) = rng.normal();
    for (int j = 0; j < p; ++j) x.col(j) /= x.col(j).norm();
    VectorXd y = x * beta;
    for (int i = 0; i < n; ++i) y(i) += noise * rng.normal();
    return make_design(std::move(x), std::move(y));
}

// Prepares per-d designs, knockoffs and real score tables for bootstrap
// tests. d values must satisfy n >= (d+1)p or get extended.
struct Fixture {
    DesignData data;
    std::map<int, DesignData> designs;
    std::map<int, KnockoffSet> ksets;
    std::map<int, ScoreTable> scores;
    BootstrapInputs inputs;

    Fixture(int n, int p, const VectorXd& beta, double noise,
            const std::vector<int>& d_list, std::uint64_t seed) {
        Rng rng(seed);
        data = random_design(n, p, beta, noise, rng);
        int d_max = 1;
        for (int d : d_list) d_max = std::max(d_max, d);
        for (int d : d_list) {
            DesignData ext = data;
            if (ext.n() < (d + 1) * p) {
                Rng erng(derive_seed(seed, 1, static_cast<std::uint64_t>(d)));
                ext = extend_design(data, d, std::nullopt, erng);
            }
            Rng crng(derive_seed(seed, 2, static_cast<std::uint64_t>(d)));
            KnockoffSet ks = construct_knockoffs(ext, d, single_partition(p), crng);
            const LambdaGrid grid = make_grid_for(ext, ks, ext.y, 5, d_max, 1e-3);
            Rng prng(derive_seed(seed, 3, static_cast<std::uint64_t>(d)));
            scores[d] = score_design(ext, ks, ext.y, grid,
                                     derive_seed(seed, 4, static_cast<std::uint64_t>(d)),
                                     prng);
            designs[d] = std::move(ext);
            ksets[d] = std::move(ks);
        }
        inputs.original = &data;
        for (int d : d_list) {
            inputs.designs[d] = &designs.at(d);
            inputs.knockoffs[d] = &ksets.at(d);
        }
        inputs.d_max = d_max;
    }
};

}  // namespace

// -------------------------------------------------------------------------
// lambda0
// -------------------------------------------------------------------------

TEST_CASE("estimate_lambda0 is forced to 1/2 for d=1") {
    Rng rng(201);
    for (int trial = 0; trial < 5; ++trial)
        CHECK(estimate_lambda0(random_table(20, 1, rng, trial)) == 0.5);
}

TEST_CASE("estimate_lambda0 tie-breaks toward the larger candidate") {
    // every original wins: pi0 = 0 at every candidate
    MatrixXd scores(6, 4);
    for (int i = 0; i < 6; ++i) {
        scores(i, 0) = 5.0;
        scores(i, 1) = 1.0;
        scores(i, 2) = 2.0;
        scores(i, 3) = 3.0;
    }
    const ScoreTable t = table_from(scores, 202);
    CHECK(estimate_lambda0(t) == 0.5);  // floor(4/2)/4
}

TEST_CASE("estimate_lambda0 estimates pi0 near 1 under the null") {
    Rng rng(203);
    const int p = 10000;
    const ScoreTable t = random_table(p, 3, rng, 204);
    const double lambda0 = estimate_lambda0(t);
    // recompute pi0 at the returned candidate
    const int d1 = 4;
    const int i0 = static_cast<int>(std::lround(lambda0 * d1));
    int count = 0;
    for (int f = 0; f < p; ++f)
        if (d1 - t.ranks[static_cast<std::size_t>(f)] + 1 > i0) ++count;
    const double pi0 = count / (p * (1.0 - lambda0));
    const double se = std::sqrt(lambda0 / (p * (1.0 - lambda0)));
    CHECK(pi0 >= 1.0 - 3.0 * se);
}

// -------------------------------------------------------------------------
// Conjecture model
// -------------------------------------------------------------------------

TEST_CASE("build_conjecture with no original wins has p_false = 0") {
    MatrixXd scores(5, 4);
    for (int i = 0; i < 5; ++i) {
        scores(i, 0) = 0.1;  // original always ranked last
        scores(i, 1) = 1.0;
        scores(i, 2) = 2.0;
        scores(i, 3) = 3.0;
    }
    const ScoreTable t = table_from(scores, 205);
    Rng rng(206);
    const ConjectureModel model = build_conjecture(t, estimate_lambda0(t), rng);
    CHECK(model.p_false.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("build_conjecture running-ratio example") {
    // feature 0 wins with the top score, all others are knockoff wins
    const int p = 4, d = 3;
    MatrixXd scores(p, d + 1);
    scores.row(0) << 10.0, 1.0, 2.0, 3.0;
    for (int i = 1; i < p; ++i) scores.row(i) << 0.1, 4.0 + i, 2.0, 3.0;
    const ScoreTable t = table_from(scores, 207);
    Rng rng(208);
    const double lambda0 = 0.25;  // i0 = 1, d1 = 4
    const ConjectureModel model = build_conjecture(t, lambda0, rng);
    // FDRhat at position 1 = 1 * c / (1 - lambda) = (1/4)/(3/4) = 1/3
    CHECK(model.p_false(0) == doctest::Approx(1.0 - 1.0 / 3.0).epsilon(1e-12));
    for (int i = 1; i < p; ++i) CHECK(model.p_false(i) == 0.0);
    CHECK(model.l_fixed[0] == 1);
    CHECK(model.w_fixed(0) == 10.0);
}

TEST_CASE("build_conjecture rejects lambda0 off the rank grid") {
    Rng rng(209);
    const ScoreTable t = random_table(5, 3, rng, 210);
    CHECK_THROWS_AS(build_conjecture(t, 0.3, rng), std::invalid_argument);
}

TEST_CASE("planted signals receive larger p_false than nulls") {
    Rng rng(211);
    double planted_sum = 0.0, null_sum = 0.0;
    long planted_n = 0, null_n = 0;
    const int reps = 60, p = 40, k = 6, n = 120, d = 1;
    for (int rep = 0; rep < reps; ++rep) {
        VectorXd beta = VectorXd::Zero(p);
        for (int j = 0; j < k; ++j) beta(j) = 4.0;
        Fixture fx(n, p, beta, 1.0, {d}, derive_seed(212, rep));
        const ScoreTable& t = fx.scores.at(d);
        Rng crng(derive_seed(213, rep));
        const ConjectureModel model = build_conjecture(t, estimate_lambda0(t), crng);
        for (int j = 0; j < p; ++j) {
            if (j < k) {
                planted_sum += model.p_false(j);
                ++planted_n;
            } else {
                null_sum += model.p_false(j);
                ++null_n;
            }
        }
    }
    CHECK(planted_sum / planted_n > null_sum / null_n);
}

// -------------------------------------------------------------------------
// Bootstrap draws
// -------------------------------------------------------------------------

TEST_CASE("all-null conjecture gives empty J and pure-noise responses") {
    Fixture fx(40, 8, VectorXd::Zero(8), 1.0, {1}, 214);
    ConjectureModel model;
    model.lambda0 = 0.5;
    model.p_false = VectorXd::Zero(8);
    Rng rng(215);
    const auto samples = draw_bootstrap(fx.inputs, model, {1}, 2.0, 16, rng);
    REQUIRE(samples.size() == 16);
    double sq = 0.0;
    long count = 0;
    for (const auto& s : samples) {
        CHECK(s.conjectured_true.empty());
        sq += s.y.squaredNorm();
        count += s.y.size();
    }
    // y_l = sigma_hat * eps: sample variance near sigma_hat^2 = 4
    const double var = sq / static_cast<double>(count);
    CHECK(var > 3.0);
    CHECK(var < 5.0);
}

TEST_CASE("a certain conjectured feature dominates its bootstrap scores") {
    const int p = 8, d = 1, n = 40;
    VectorXd beta = VectorXd::Zero(p);
    beta(0) = 3.0;
    Fixture fx(n, p, beta, 0.01, {d}, 216);
    ConjectureModel model;
    model.lambda0 = 0.5;
    model.p_false = VectorXd::Zero(p);
    model.p_false(0) = 1.0;
    Rng rng(217);
    const auto samples = draw_bootstrap(fx.inputs, model, {d}, 1e-3, 100, rng);
    int wins = 0;
    for (const auto& s : samples) {
        REQUIRE(s.conjectured_true == std::vector<int>{0});
        if (s.tables.at(d).ranks[0] == d + 1) ++wins;
    }
    CHECK(wins >= 95);
}

TEST_CASE("bootstrap responses extend to the largest d and prefix smaller d") {
    const int p = 8, n = 20;
    VectorXd beta = VectorXd::Zero(p);
    Fixture fx(n, p, beta, 1.0, {1, 3}, 218);
    REQUIRE(fx.designs.at(1).n() == 20);   // no extension for d=1
    REQUIRE(fx.designs.at(3).n() == 32);   // extended to (3+1)*8

    ConjectureModel model;
    model.lambda0 = 0.5;
    model.p_false = VectorXd::Zero(p);
    Rng rng(219);
    const auto samples = draw_bootstrap(fx.inputs, model, {1, 3}, 1.0, 4, rng);
    for (const auto& s : samples) {
        CHECK(s.y.size() == 32);
        CHECK(s.tables.count(1) == 1);
        CHECK(s.tables.count(3) == 1);
        // fingerprints pin the shared knockoff matrices
        CHECK(s.knockoff_fingerprints.at(1) == fx.ksets.at(1).fingerprint());
        CHECK(s.knockoff_fingerprints.at(3) == fx.ksets.at(3).fingerprint());
    }
    // distinct recorded sub-seeds
    CHECK(samples[0].sub_seed != samples[1].sub_seed);
}

TEST_CASE("draw_bootstrap is deterministic in the master seed") {
    const int p = 6;
    VectorXd beta = VectorXd::Zero(p);
    beta(1) = 2.0;
    Fixture fx(30, p, beta, 1.0, {1}, 220);
    ConjectureModel model;
    model.lambda0 = 0.5;
    model.p_false = VectorXd::Constant(p, 0.4);

    Rng ra(221), rb(221);
    const auto sa = draw_bootstrap(fx.inputs, model, {1}, 1.0, 8, ra);
    const auto sb = draw_bootstrap(fx.inputs, model, {1}, 1.0, 8, rb);
    for (int l = 0; l < 8; ++l) {
        CHECK(sa[l].conjectured_true == sb[l].conjectured_true);
        CHECK((sa[l].y - sb[l].y).cwiseAbs().maxCoeff() == 0.0);
        CHECK(sa[l].tables.at(1).ranks == sb[l].tables.at(1).ranks);
        CHECK((sa[l].tables.at(1).scores - sb[l].tables.at(1).scores)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("estimate_sigma recovers the noise level") {
    Rng rng(222);
    VectorXd beta = VectorXd::Zero(5);
    beta(0) = 2.0;
    const DesignData data = random_design(200, 5, beta, 1.5, rng);
    const double sigma = estimate_sigma(data);
    CHECK(sigma > 1.2);
    CHECK(sigma < 1.8);
}

// -------------------------------------------------------------------------
// (c, lambda) optimization
// -------------------------------------------------------------------------

namespace {

std::vector<BootstrapSample> synthetic_samples(int p, int d, int m_b,
                                               const std::vector<int>& truth,
                                               std::uint64_t seed) {
    std::vector<BootstrapSample> samples;
    Rng rng(seed);
    for (int l = 0; l < m_b; ++l) {
        BootstrapSample s;
        s.index = l;
        s.sub_seed = rng.next_u64();
        s.conjectured_true = truth;
        MatrixXd scores(p, d + 1);
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j <= d; ++j) scores(i, j) = rng.uniform();
            // conjectured-true features get a dominant original score
            if (std::binary_search(truth.begin(), truth.end(), i)) scores(i, 0) += 2.0;
        }
        s.tables[d] = table_from(scores, derive_seed(seed, 7, l));
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace

TEST_CASE("optimize_c_lambda enumerates the documented grids") {
    const auto samples1 = synthetic_samples(10, 1, 4, {0, 1}, 223);
    std::vector<CandidateObjective> table1;
    const TuningParams p1 = optimize_c_lambda(samples1, 1, 0.2, 224, &table1);
    CHECK(table1.size() == 1);  // d=1: single pair (1/2, 1/2)
    CHECK(p1.i_c == 1);
    CHECK(p1.i_lambda == 1);

    const auto samples3 = synthetic_samples(10, 3, 4, {0, 1}, 225);
    std::vector<CandidateObjective> table3;
    optimize_c_lambda(samples3, 3, 0.2, 226, &table3);
    REQUIRE(table3.size() == 3);  // (1,1), (1,2), (2,2) over d1=4
    CHECK(table3[0].params.i_c == 1);
    CHECK(table3[0].params.i_lambda == 1);
    CHECK(table3[1].params.i_c == 1);
    CHECK(table3[1].params.i_lambda == 2);
    CHECK(table3[2].params.i_c == 2);
    CHECK(table3[2].params.i_lambda == 2);
}

TEST_CASE("all-null bootstraps tie at objective 0 and pick the lexicographic minimum") {
    auto samples = synthetic_samples(10, 3, 4, {}, 227);
    std::vector<CandidateObjective> table;
    const TuningParams params = optimize_c_lambda(samples, 3, 0.2, 228, &table);
    for (const auto& cand : table) CHECK(cand.objective == 0.0);
    CHECK(params.i_c == 1);
    CHECK(params.i_lambda == 1);
}

// -------------------------------------------------------------------------
// multi-knockoff and multi-knockoff-select
// -------------------------------------------------------------------------

TEST_CASE("multi_knockoff at d=1 reduces to the single-knockoff reference") {
    const int p = 12, d = 1;
    VectorXd beta = VectorXd::Zero(p);
    beta(0) = 3.0;
    beta(1) = -3.0;
    Fixture fx(50, p, beta, 1.0, {d}, 229);
    const ScoreTable& real = fx.scores.at(d);
    const auto samples = synthetic_samples(p, d, 6, {0, 1}, 230);
    for (double alpha : {0.1, 0.3}) {
        const auto mk = multi_knockoff(real, samples, d, alpha, 231);
        const auto ref = knockoff_plus_reference(real.scores.col(0), real.scores.col(1),
                                                 alpha, real.tie_seed);
        CHECK(mk == ref);
    }
}

TEST_CASE("multi_knockoff equals a fixed run at the optimized pair") {
    const auto samples = synthetic_samples(14, 3, 6, {0, 1, 2}, 232);
    Rng rng(233);
    const ScoreTable real = random_table(14, 3, rng, 234);
    const double alpha = 0.25;
    const std::uint64_t seed = 235;

    const auto discoveries = multi_knockoff(real, samples, 3, alpha, seed);

    const TuningParams params = optimize_c_lambda(
        samples, 3, alpha, derive_seed(seed, 1, 3), nullptr);
    Rng crng(derive_seed(seed, 2, 3));
    const auto fixed =
        select_discoveries(compete(real, params, crng), alpha).discoveries;
    CHECK(discoveries == fixed);
}

TEST_CASE("multi_knockoff at alpha=0 never discovers") {
    const auto samples = synthetic_samples(10, 3, 4, {0}, 236);
    Rng rng(237);
    const ScoreTable real = random_table(10, 3, rng, 238);
    CHECK(multi_knockoff(real, samples, 3, 0.0, 239).empty());
}

TEST_CASE("multi_knockoff_select on a singleton list equals multi_knockoff") {
    const auto samples = synthetic_samples(12, 3, 5, {0, 3}, 240);
    Rng rng(241);
    std::map<int, ScoreTable> real;
    real[3] = random_table(12, 3, rng, 242);
    const double alpha = 0.2;
    const SelectResult sel = multi_knockoff_select(real, samples, {3}, alpha, 243);
    CHECK(sel.chosen_d == 3);
    CHECK(sel.discoveries == multi_knockoff(real.at(3), samples, 3, alpha, 243));
}

TEST_CASE("multi_knockoff_select breaks objective ties toward smaller d") {
    // empty conjectured-truth: every d scores objective 0
    std::vector<BootstrapSample> samples = synthetic_samples(10, 1, 4, {}, 244);
    const auto more = synthetic_samples(10, 3, 4, {}, 244);
    for (std::size_t l = 0; l < samples.size(); ++l)
        samples[l].tables[3] = more[l].tables.at(3);

    Rng rng(245);
    std::map<int, ScoreTable> real;
    real[1] = random_table(10, 1, rng, 246);
    real[3] = random_table(10, 3, rng, 247);
    const SelectResult sel = multi_knockoff_select(real, samples, {3, 1}, 0.2, 248);
    CHECK(sel.chosen_d == 1);
    CHECK(sel.objective == 0.0);
}

TEST_CASE("TunedSelector serves the same answers as the one-shot path") {
    const auto samples = synthetic_samples(15, 3, 8, {0, 1, 4}, 249);
    Rng rng(250);
    const ScoreTable real = random_table(15, 3, rng, 251);
    const std::uint64_t seed = 252;
    const TunedSelector selector(real, samples, 3, seed);
    for (double alpha : {0.05, 0.2, 0.5}) {
        const TunedResult res = selector.at(alpha);
        CHECK(res.discoveries == multi_knockoff(real, samples, 3, alpha, seed));
        std::vector<CandidateObjective> table;
        const TuningParams opt = optimize_c_lambda(samples, 3, alpha,
                                                   derive_seed(seed, 1, 3), &table);
        CHECK(res.params.i_c == opt.i_c);
        CHECK(res.params.i_lambda == opt.i_lambda);
        REQUIRE(res.table.size() == table.size());
        for (std::size_t i = 0; i < table.size(); ++i)
            CHECK(res.table[i].objective == table[i].objective);
    }
}
