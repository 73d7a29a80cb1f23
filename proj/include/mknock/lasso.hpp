#ifndef MKNOCK_LASSO_HPP
#define MKNOCK_LASSO_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mknock/knockoffs.hpp"
#include "mknock/rng.hpp"

namespace mknock {

struct LambdaGrid {
    VectorXd values;  // strictly decreasing
    double lambda_max = 0.0;
    double ratio = 0.0;

    int count() const { return static_cast<int>(values.size()); }
};

// Log-spaced grid from lambda_max = max_i |x_i^T y| / n down to
// lambda_max * grid_ratio, where the max runs over the columns of every
// supplied matrix (all batches share one grid).
LambdaGrid make_grid(const std::vector<const MatrixXd*>& column_sources,
                     const VectorXd& y, int count, double grid_ratio);

// The standard count formula: multiplier * (1 + d_max) * p.
int grid_count(int multiplier, int d_max, int p);

struct LassoPath {
    LambdaGrid grid;
    std::vector<int> entry_index;  // per column; -1 if never active
    VectorXd entry_lambda;         // grid value at entry, 0 if never active
    MatrixXd coefficients;         // cols x nlambda, only when requested
    bool stored = false;
};

// Pathwise coordinate descent for (1/(2n))||y - X b||^2 + lambda ||b||_1
// over the descending grid with warm starts. Columns are randomly
// permuted before solving and results un-permuted. KKT conditions are
// enforced at every grid point via full violation scans.
LassoPath lasso_path(const MatrixXd& xaug, const VectorXd& y,
                     const LambdaGrid& grid, Rng& rng,
                     bool store_coefficients = false);

struct ScoreTable {
    int d = 0;
    // p x (d+1); column 0 = original entry scores, 1..d = knockoff copies.
    MatrixXd scores;
    // Rank of the original score within its row, ascending (d+1 = best),
    // ties broken by keys derived from tie_seed.
    std::vector<int> ranks;
    std::uint64_t tie_seed = 0;

    int p() const { return static_cast<int>(scores.rows()); }
    int d1() const { return d + 1; }
};

// Rank of entry `col` of row i under keyed ascending comparison.
int keyed_rank(const ScoreTable& table, int i, int col);

// Recomputes all original-score ranks from the table's tie seed.
std::vector<int> compute_ranks(const MatrixXd& scores, std::uint64_t tie_seed);

// Assembles a ScoreTable from per-batch paths: batch j's path provides
// scores only for features in batch j.
ScoreTable entry_scores(const std::vector<LassoPath>& batch_paths,
                        const BatchPartition& partition, int p, int d,
                        std::uint64_t tie_seed);

// Batched scoring: for each batch, fit the lasso path on
// [X  knockoffs(batch)] against y and collect entry scores.
ScoreTable score_design(const DesignData& data, const KnockoffSet& ks,
                        const VectorXd& y, const LambdaGrid& grid,
                        std::uint64_t tie_seed, Rng& perm_rng);

// Grid for a design + knockoff set (columns of every batch's augmented
// matrix). d_max controls the count formula; pass the experiment-wide
// maximum when several d values share one run.
LambdaGrid make_grid_for(const DesignData& data, const KnockoffSet& ks,
                         const VectorXd& y, int multiplier, int d_max,
                         double grid_ratio);

}  // namespace mknock

#endif
