#ifndef MKNOCK_RESAMPLING_HPP
#define MKNOCK_RESAMPLING_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <vector>

#include "mknock/competition.hpp"
#include "mknock/knockoffs.hpp"
#include "mknock/lasso.hpp"

namespace mknock {

// Storey-style estimate of lambda0 on the rank grid {i/d1}: empirical
// p-values p_i = (d1 - r_i + 1)/d1, pick the candidate minimizing
// pi0(lambda) = #{p_i > lambda} / (p (1 - lambda)), ties toward larger
// lambda.
double estimate_lambda0(const ScoreTable& scores);

struct ConjectureModel {
    double lambda0 = 0.5;
    VectorXd w_fixed;
    std::vector<int> l_fixed;
    VectorXd p_false;  // per-feature probability of being conjectured false-null
};

// Fixes (W, L) at c = lambda = lambda0 and derives p_false from the
// running FDR estimate along the sorted original wins.
ConjectureModel build_conjecture(const ScoreTable& scores, double lambda0, Rng& rng);

struct BootstrapSample {
    int index = 0;
    VectorXd y;                        // at the largest considered extension length
    std::vector<int> conjectured_true;  // J_l
    std::map<int, ScoreTable> tables;   // d -> score table
    std::uint64_t sub_seed = 0;
    std::map<int, std::uint64_t> knockoff_fingerprints;
};

// Inputs shared by every bootstrap draw: the per-d extended designs and
// knockoff sets (constructed once), plus grid conventions.
struct BootstrapInputs {
    const DesignData* original = nullptr;          // pre-extension data
    std::map<int, const DesignData*> designs;      // d -> extended design
    std::map<int, const KnockoffSet*> knockoffs;   // d -> knockoff set
    int nlambda_multiplier = 5;
    int d_max = 1;  // experiment-wide maximum d for the grid count
    double grid_ratio = 1e-3;
};

// Model-aware bootstrap: sample J_l from p_false, refit y on X[:, J_l]
// by (minimum-norm) least squares, resample y_l = X beta_J + sigma_hat eps
// at the largest extension length, and score each considered d on its
// prefix of y_l.
std::vector<BootstrapSample> draw_bootstrap(const BootstrapInputs& inputs,
                                            const ConjectureModel& conjecture,
                                            const std::vector<int>& d_list,
                                            double sigma_hat, int m_b, Rng& rng);

// Residual-based noise estimate from the original data: RSS/(n - p).
double estimate_sigma(const DesignData& data);

struct CandidateObjective {
    TuningParams params;
    double objective = 0.0;
};

// Grid search over 1/(d+1) <= c <= lambda <= 1/2 maximizing the mean
// number of conjectured true discoveries across bootstrap samples.
// Receives only bootstrap tables, never real-response scores.
TuningParams optimize_c_lambda(const std::vector<BootstrapSample>& samples, int d,
                               double alpha, std::uint64_t seed,
                               std::vector<CandidateObjective>* table = nullptr);

struct TunedResult {
    TuningParams params;
    double objective = 0.0;
    std::vector<int> discoveries;
    std::vector<CandidateObjective> table;
};

// Precomputes the bootstrap competition outcomes for every (c, lambda)
// pair once, then serves tuned selections at any alpha. at(alpha) is
// bit-identical to multi_knockoff at the same seed.
class TunedSelector {
  public:
    TunedSelector(const ScoreTable& real_scores,
                  const std::vector<BootstrapSample>& samples, int d,
                  std::uint64_t seed);

    TunedResult at(double alpha) const;

  private:
    struct PairData {
        TuningParams params;
        std::vector<CompetitionOutcome> outcomes;
    };

    double objective_at(const PairData& pair, double alpha) const;

    const ScoreTable* real_scores_;
    const std::vector<BootstrapSample>* samples_;
    int d_;
    std::uint64_t seed_;
    std::vector<PairData> pairs_;
    mutable std::map<std::pair<int, int>, CompetitionOutcome> real_cache_;
};

// Tuned selection on the real score table at the optimized (c, lambda).
std::vector<int> multi_knockoff(const ScoreTable& real_scores,
                                const std::vector<BootstrapSample>& samples, int d,
                                double alpha, std::uint64_t seed);

struct SelectResult {
    int chosen_d = 0;
    TuningParams params;
    double objective = 0.0;
    std::vector<int> discoveries;
    std::vector<CandidateObjective> objective_table;  // across all d
};

// Additionally optimizes d over d_list (ties toward smaller d).
SelectResult multi_knockoff_select(const std::map<int, ScoreTable>& real_scores,
                                   const std::vector<BootstrapSample>& samples,
                                   const std::vector<int>& d_list, double alpha,
                                   std::uint64_t seed);

}  // namespace mknock

#endif
