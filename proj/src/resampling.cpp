#include "mknock/resampling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mknock/common.hpp"

namespace mknock {

// -------------------------------------------------------------------------
// Conjecture model
// -------------------------------------------------------------------------

double estimate_lambda0(const ScoreTable& scores) {
    const int d1 = scores.d1();
    const int p = scores.p();
    // Candidates i/d1, i = 1..floor(d1/2); pick the smallest pi0 estimate,
    // breaking ties toward larger lambda.
    double best_pi0 = 2.0;
    int best_i = 1;
    for (int i = 1; i <= d1 / 2; ++i) {
        // p-value (d1 - r + 1)/d1 > i/d1  <=>  d1 - r + 1 > i
        int count = 0;
        for (int f = 0; f < p; ++f)
            if (d1 - scores.ranks[static_cast<std::size_t>(f)] + 1 > i) ++count;
        const double lambda = static_cast<double>(i) / d1;
        double pi0 = static_cast<double>(count) / (p * (1.0 - lambda));
        pi0 = std::min(1.0, std::max(0.0, pi0));
        if (pi0 <= best_pi0) {
            best_pi0 = pi0;
            best_i = i;
        }
    }
    return static_cast<double>(best_i) / d1;
}

ConjectureModel build_conjecture(const ScoreTable& scores, double lambda0, Rng& rng) {
    const int d1 = scores.d1();
    const int i0 = static_cast<int>(std::lround(lambda0 * d1));
    if (std::abs(lambda0 * d1 - i0) > 1e-9 || i0 < 1 || i0 > d1 / 2)
        throw std::invalid_argument("lambda0 must lie on the rank grid {i/d1}, got " +
                                    std::to_string(lambda0));
    const TuningParams params = make_params(scores.d, i0, i0);
    const CompetitionOutcome outcome = compete(scores, params, rng);

    ConjectureModel model;
    model.lambda0 = lambda0;
    model.w_fixed = outcome.w;
    model.l_fixed = outcome.labels;
    model.p_false = VectorXd::Zero(scores.p());

    // Walk the sorted scores; an original win at position i gets
    // p_false = max(0, 1 - FDRhat(i)) from the running ratio.
    const double ic = params.i_c;
    const double denom_scale = params.d1 - params.i_lambda;
    long pos = 0, neg = 0;
    for (std::size_t i = 0; i < outcome.order.size(); ++i) {
        const int f = outcome.order[i];
        const int label = outcome.labels[static_cast<std::size_t>(f)];
        if (label == 1) ++pos;
        if (label == -1) ++neg;
        if (label == 1) {
            const double fdr_hat = static_cast<double>(1 + neg) /
                                   static_cast<double>(std::max(pos, 1L)) * ic /
                                   denom_scale;
            model.p_false(f) = std::max(0.0, 1.0 - fdr_hat);
        }
    }
    return model;
}

// -------------------------------------------------------------------------
// Model-aware bootstrap
// -------------------------------------------------------------------------

double estimate_sigma(const DesignData& data) {
    return std::sqrt(estimate_sigma_sq(data));
}

std::vector<BootstrapSample> draw_bootstrap(const BootstrapInputs& inputs,
                                            const ConjectureModel& conjecture,
                                            const std::vector<int>& d_list,
                                            double sigma_hat, int m_b, Rng& rng) {
    if (m_b < 1) throw std::invalid_argument("m_b must be >= 1");
    if (!inputs.original) throw std::invalid_argument("missing original design");
    for (int d : d_list) {
        if (!inputs.designs.count(d) || !inputs.knockoffs.count(d))
            throw std::invalid_argument("missing design/knockoffs for d=" +
                                        std::to_string(d));
    }

    // y is resampled once at the largest considered extension length;
    // smaller d values consume prefixes.
    const DesignData* longest = inputs.designs.at(d_list.front());
    for (int d : d_list)
        if (inputs.designs.at(d)->n() > longest->n()) longest = inputs.designs.at(d);

    const DesignData& orig = *inputs.original;
    const Eigen::Index n0 = orig.n_original;
    const int p = static_cast<int>(orig.p());

    std::vector<BootstrapSample> samples;
    samples.reserve(static_cast<std::size_t>(m_b));
    for (int l = 0; l < m_b; ++l) {
        BootstrapSample sample;
        sample.index = l;
        sample.sub_seed = rng.next_u64();
        Rng lrng(sample.sub_seed);

        for (int i = 0; i < p; ++i)
            if (lrng.bernoulli(conjecture.p_false(i)))
                sample.conjectured_true.push_back(i);

        // Least squares of the original y on the conjectured columns;
        // minimum-norm solve covers rank-deficient J.
        VectorXd mean = VectorXd::Zero(longest->n());
        if (!sample.conjectured_true.empty()) {
            const auto m = static_cast<Eigen::Index>(sample.conjectured_true.size());
            MatrixXd xj(n0, m);
            for (Eigen::Index t = 0; t < m; ++t)
                xj.col(t) = orig.x.col(sample.conjectured_true[static_cast<std::size_t>(t)])
                                .head(n0);
            Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(xj);
            const VectorXd beta_j = cod.solve(orig.y.head(n0));
            for (Eigen::Index t = 0; t < m; ++t)
                mean += beta_j(t) *
                        longest->x.col(sample.conjectured_true[static_cast<std::size_t>(t)]);
        }

        sample.y.resize(longest->n());
        for (Eigen::Index i = 0; i < longest->n(); ++i)
            sample.y(i) = mean(i) + sigma_hat * lrng.normal();

        for (int d : d_list) {
            const DesignData& design = *inputs.designs.at(d);
            const KnockoffSet& ks = *inputs.knockoffs.at(d);
            const VectorXd yd = sample.y.head(design.n());
            const LambdaGrid grid =
                make_grid_for(design, ks, yd, inputs.nlambda_multiplier,
                              inputs.d_max, inputs.grid_ratio);
            Rng perm_rng(derive_seed(sample.sub_seed, stage::permute,
                                     static_cast<std::uint64_t>(d)));
            sample.tables[d] = score_design(
                design, ks, yd, grid,
                derive_seed(sample.sub_seed, stage::score, static_cast<std::uint64_t>(d)),
                perm_rng);
            sample.knockoff_fingerprints[d] = ks.fingerprint();
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

// -------------------------------------------------------------------------
// Parameter optimization
// -------------------------------------------------------------------------

namespace {

long hits_in(const std::vector<int>& discoveries, const std::vector<int>& truth) {
    long hits = 0;
    for (int f : discoveries)
        if (std::binary_search(truth.begin(), truth.end(), f)) ++hits;
    return hits;
}

}  // namespace

TunedSelector::TunedSelector(const ScoreTable& real_scores,
                             const std::vector<BootstrapSample>& samples, int d,
                             std::uint64_t seed)
    : real_scores_(&real_scores), samples_(&samples), d_(d), seed_(seed) {
    if (samples.empty()) throw std::invalid_argument("no bootstrap samples");
    const int d1 = d + 1;
    const std::uint64_t opt_seed = derive_seed(seed, 1, static_cast<std::uint64_t>(d));
    // 1/(d+1) <= c <= lambda <= 1/2, enumerated in (i_lambda, i_c) order
    // so objective ties resolve to the lexicographic minimum.
    for (int i_lambda = 1; i_lambda <= d1 / 2; ++i_lambda) {
        for (int i_c = 1; i_c <= i_lambda; ++i_c) {
            PairData pair;
            pair.params = make_params(d, i_c, i_lambda);
            pair.outcomes.reserve(samples.size());
            for (const BootstrapSample& sample : samples) {
                const auto it = sample.tables.find(d);
                if (it == sample.tables.end())
                    throw std::invalid_argument("bootstrap sample lacks table for d=" +
                                                std::to_string(d));
                Rng rng(derive_seed(opt_seed, static_cast<std::uint64_t>(sample.index),
                                    static_cast<std::uint64_t>(i_c),
                                    static_cast<std::uint64_t>(i_lambda)));
                pair.outcomes.push_back(compete(it->second, pair.params, rng));
            }
            pairs_.push_back(std::move(pair));
        }
    }
}

double TunedSelector::objective_at(const PairData& pair, double alpha) const {
    double total = 0.0;
    for (std::size_t l = 0; l < pair.outcomes.size(); ++l) {
        const Selection sel = select_discoveries(pair.outcomes[l], alpha);
        total += static_cast<double>(
            hits_in(sel.discoveries, (*samples_)[l].conjectured_true));
    }
    return total / static_cast<double>(pair.outcomes.size());
}

TunedResult TunedSelector::at(double alpha) const {
    TunedResult result;
    bool have = false;
    for (const PairData& pair : pairs_) {
        const double obj = objective_at(pair, alpha);
        result.table.push_back(CandidateObjective{pair.params, obj});
        if (!have || obj > result.objective) {
            result.params = pair.params;
            result.objective = obj;
            have = true;
        }
    }

    const auto key = std::make_pair(result.params.i_c, result.params.i_lambda);
    auto it = real_cache_.find(key);
    if (it == real_cache_.end()) {
        Rng rng(derive_seed(seed_, 2, static_cast<std::uint64_t>(d_)));
        it = real_cache_.emplace(key, compete(*real_scores_, result.params, rng)).first;
    }
    result.discoveries = select_discoveries(it->second, alpha).discoveries;
    return result;
}

TuningParams optimize_c_lambda(const std::vector<BootstrapSample>& samples, int d,
                               double alpha, std::uint64_t seed,
                               std::vector<CandidateObjective>* table) {
    if (samples.empty()) throw std::invalid_argument("no bootstrap samples");
    const int d1 = d + 1;

    TuningParams best{};
    double best_obj = -1.0;
    bool have = false;
    for (int i_lambda = 1; i_lambda <= d1 / 2; ++i_lambda) {
        for (int i_c = 1; i_c <= i_lambda; ++i_c) {
            const TuningParams params = make_params(d, i_c, i_lambda);
            double total = 0.0;
            for (const BootstrapSample& sample : samples) {
                const auto it = sample.tables.find(d);
                if (it == sample.tables.end())
                    throw std::invalid_argument("bootstrap sample lacks table for d=" +
                                                std::to_string(d));
                Rng rng(derive_seed(seed, static_cast<std::uint64_t>(sample.index),
                                    static_cast<std::uint64_t>(i_c),
                                    static_cast<std::uint64_t>(i_lambda)));
                const CompetitionOutcome outcome = compete(it->second, params, rng);
                const Selection sel = select_discoveries(outcome, alpha);
                total += static_cast<double>(
                    hits_in(sel.discoveries, sample.conjectured_true));
            }
            const double obj = total / static_cast<double>(samples.size());
            if (table) table->push_back(CandidateObjective{params, obj});
            if (!have || obj > best_obj) {
                best = params;
                best_obj = obj;
                have = true;
            }
        }
    }
    return best;
}

// -------------------------------------------------------------------------
// Tuned selection procedures
// -------------------------------------------------------------------------

std::vector<int> multi_knockoff(const ScoreTable& real_scores,
                                const std::vector<BootstrapSample>& samples, int d,
                                double alpha, std::uint64_t seed) {
    return TunedSelector(real_scores, samples, d, seed).at(alpha).discoveries;
}

SelectResult multi_knockoff_select(const std::map<int, ScoreTable>& real_scores,
                                   const std::vector<BootstrapSample>& samples,
                                   const std::vector<int>& d_list, double alpha,
                                   std::uint64_t seed) {
    if (d_list.empty()) throw std::invalid_argument("empty d list");
    std::vector<int> ds = d_list;
    std::sort(ds.begin(), ds.end());

    SelectResult result;
    bool have = false;
    for (int d : ds) {
        const auto it = real_scores.find(d);
        if (it == real_scores.end())
            throw std::invalid_argument("missing real score table for d=" +
                                        std::to_string(d));
        TunedResult run = TunedSelector(it->second, samples, d, seed).at(alpha);
        result.objective_table.insert(result.objective_table.end(), run.table.begin(),
                                      run.table.end());
        // ties toward smaller d
        if (!have || run.objective > result.objective) {
            result.chosen_d = d;
            result.params = run.params;
            result.objective = run.objective;
            result.discoveries = std::move(run.discoveries);
            have = true;
        }
    }
    return result;
}

}  // namespace mknock
