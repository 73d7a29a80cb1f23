#ifndef MKNOCK_COMPETITION_HPP
#define MKNOCK_COMPETITION_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mknock/lasso.hpp"
#include "mknock/rng.hpp"

namespace mknock {

// c = i_c / d1 is the original-win threshold, lambda = i_lambda / d1 the
// knockoff-win threshold.
struct TuningParams {
    int d1 = 2;
    int i_c = 1;
    int i_lambda = 1;

    double c() const { return static_cast<double>(i_c) / d1; }
    double lambda() const { return static_cast<double>(i_lambda) / d1; }
};

// Validates 1 <= i_c <= i_lambda <= d1 - 1.
TuningParams make_params(int d, int i_c, int i_lambda);

// Mirror (c = lambda = 1/2) and max (c = lambda = 1/(d+1)) presets.
TuningParams mirror_params(int d);
TuningParams max_params(int d);

// Labels from the rank of the original score: +1 original win,
// -1 knockoff win, 0 ignored.
std::vector<int> assign_labels(const ScoreTable& scores, const TuningParams& params);

// Selected scores W: Z on an original win, a mirandom-selected knockoff
// score on a knockoff win, a uniformly drawn score otherwise.
VectorXd mirandom_select(const ScoreTable& scores, const std::vector<int>& labels,
                         const TuningParams& params, Rng& rng);

// Exact ordinal distribution of the mirandom interval construction:
// entry (r-1, j-1) = P(ordinal j | decoy-win rank r), r = 1..d1-i_lambda,
// j = 1..i_c. Computed in integer arithmetic.
MatrixXd mirandom_cell_probabilities(const TuningParams& params);

struct CompetitionOutcome {
    std::vector<int> labels;
    VectorXd w;
    std::vector<int> order;  // feature indices, w descending (keyed ties)
    TuningParams params;
};

// assign_labels + mirandom_select + keyed descending sort.
CompetitionOutcome compete(const ScoreTable& scores, const TuningParams& params,
                           Rng& rng);

struct Selection {
    int i_star = 0;
    std::vector<int> discoveries;  // sorted feature indices
};

// Largest prefix of the w-order whose estimated FDR is <= alpha; the
// ratio test is evaluated with cross-multiplied integers.
Selection select_discoveries(const CompetitionOutcome& outcome, double alpha);

// Single-knockoff reference selection (original wins thresholded by the
// (1 + knockoff wins above) / k estimate). Oracle for the d=1
// mirror equivalence tests; shares tie decisions through tie_seed.
std::vector<int> knockoff_plus_reference(const VectorXd& z, const VectorXd& z_tilde,
                                         double alpha, std::uint64_t tie_seed);

}  // namespace mknock

#endif
