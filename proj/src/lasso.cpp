#include "mknock/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mknock/common.hpp"

namespace mknock {

// -------------------------------------------------------------------------
// Lambda grid
// -------------------------------------------------------------------------

int grid_count(int multiplier, int d_max, int p) {
    return multiplier * (1 + d_max) * p;
}

LambdaGrid make_grid(const std::vector<const MatrixXd*>& column_sources,
                     const VectorXd& y, int count, double grid_ratio) {
    if (count < 2)
        throw std::invalid_argument("grid count must be >= 2, got " +
                                    std::to_string(count));
    if (!(grid_ratio > 0.0 && grid_ratio < 1.0))
        throw std::invalid_argument("grid ratio must be in (0, 1)");
    if (column_sources.empty())
        throw std::invalid_argument("no column sources for the grid");

    const auto n = static_cast<double>(y.size());
    double lambda_max = 0.0;
    for (const MatrixXd* m : column_sources) {
        if (m->rows() != y.size())
            throw std::invalid_argument("column source rows != y length");
        for (Eigen::Index j = 0; j < m->cols(); ++j)
            lambda_max = std::max(lambda_max, std::abs(m->col(j).dot(y)) / n);
    }
    if (lambda_max <= 0.0)
        throw numerical_error("degenerate grid: y is orthogonal to every column");

    LambdaGrid grid;
    grid.lambda_max = lambda_max;
    grid.ratio = grid_ratio;
    grid.values.resize(count);
    const double log_ratio = std::log(grid_ratio);
    for (int k = 0; k < count; ++k)
        grid.values(k) =
            lambda_max * std::exp(log_ratio * static_cast<double>(k) / (count - 1));
    return grid;
}

// -------------------------------------------------------------------------
// Pathwise coordinate descent (covariance updates)
// -------------------------------------------------------------------------

namespace {

inline double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

constexpr double kConvergeTol = 1e-7;
constexpr long kMaxSweeps = 100000;
constexpr int kRefreshStride = 256;

}  // namespace

LassoPath lasso_path(const MatrixXd& xaug, const VectorXd& y,
                     const LambdaGrid& grid, Rng& rng, bool store_coefficients) {
    const Eigen::Index n = xaug.rows();
    const auto cols = static_cast<int>(xaug.cols());
    if (y.size() != n) throw std::invalid_argument("y length != design rows");
    const int nlambda = grid.count();
    if (nlambda < 1) throw std::invalid_argument("empty lambda grid");

    // Random column order carries all the solver's randomization.
    const std::vector<int> perm = rng.permutation(cols);
    MatrixXd xp(n, cols);
    for (int j = 0; j < cols; ++j) xp.col(j) = xaug.col(perm[static_cast<std::size_t>(j)]);

    const double inv_n = 1.0 / static_cast<double>(n);
    const MatrixXd gram = (xp.transpose() * xp) * inv_n;
    const VectorXd xty = (xp.transpose() * y) * inv_n;
    const VectorXd sqn = gram.diagonal();

    VectorXd c = xty;  // x_j^T (y - X b) / n, maintained incrementally
    VectorXd b = VectorXd::Zero(cols);
    std::vector<int> ever_active;
    std::vector<char> in_ever(static_cast<std::size_t>(cols), 0);

    std::vector<int> entry_perm(static_cast<std::size_t>(cols), -1);
    MatrixXd coefs;
    if (store_coefficients) coefs = MatrixXd::Zero(cols, nlambda);

    for (int k = 0; k < nlambda; ++k) {
        const double lambda = grid.values(k);
        const double kkt_slack = lambda * 1e-12 + 1e-15;
        long sweeps = 0;
        for (;;) {
            // converge on the working set
            double max_delta;
            do {
                max_delta = 0.0;
                for (int j : ever_active) {
                    if (sqn(j) <= 0.0) continue;
                    const double z = c(j) + b(j) * sqn(j);
                    const double bn = soft_threshold(z, lambda) / sqn(j);
                    const double delta = bn - b(j);
                    if (delta != 0.0) {
                        c.noalias() -= delta * gram.col(j);
                        b(j) = bn;
                        const double ad = std::abs(delta);
                        if (ad > max_delta) max_delta = ad;
                    }
                }
                if (++sweeps > kMaxSweeps)
                    throw solver_error("lasso did not converge at lambda index " +
                                       std::to_string(k));
            } while (max_delta > kConvergeTol);

            // full KKT scan; activate violating columns
            int violations = 0;
            for (int j = 0; j < cols; ++j) {
                if (in_ever[static_cast<std::size_t>(j)] || sqn(j) <= 0.0) continue;
                if (std::abs(c(j)) > lambda + kkt_slack) {
                    in_ever[static_cast<std::size_t>(j)] = 1;
                    ever_active.push_back(j);
                    ++violations;
                }
            }
            if (violations == 0) break;
        }

        for (int j : ever_active)
            if (b(j) != 0.0 && entry_perm[static_cast<std::size_t>(j)] < 0)
                entry_perm[static_cast<std::size_t>(j)] = k;
        if (store_coefficients)
            for (int j = 0; j < cols; ++j) coefs(perm[static_cast<std::size_t>(j)], k) = b(j);

        // periodic refresh against incremental drift
        if ((k + 1) % kRefreshStride == 0) {
            c = xty;
            for (int j : ever_active)
                if (b(j) != 0.0) c.noalias() -= b(j) * gram.col(j);
        }
    }

    LassoPath out;
    out.grid = grid;
    out.entry_index.assign(static_cast<std::size_t>(cols), -1);
    out.entry_lambda = VectorXd::Zero(cols);
    for (int j = 0; j < cols; ++j) {
        const int orig = perm[static_cast<std::size_t>(j)];
        const int e = entry_perm[static_cast<std::size_t>(j)];
        out.entry_index[static_cast<std::size_t>(orig)] = e;
        out.entry_lambda(orig) = e >= 0 ? grid.values(e) : 0.0;
    }
    if (store_coefficients) {
        out.coefficients = std::move(coefs);
        out.stored = true;
    }
    return out;
}

// -------------------------------------------------------------------------
// Entry scores
// -------------------------------------------------------------------------

std::vector<int> compute_ranks(const MatrixXd& scores, std::uint64_t tie_seed) {
    const auto p = static_cast<int>(scores.rows());
    const auto d1 = static_cast<int>(scores.cols());
    std::vector<int> ranks(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
        const double s0 = scores(i, 0);
        const double k0 = tie_key(tie_seed, static_cast<std::uint64_t>(i), 0);
        int r = 1;
        for (int j = 1; j < d1; ++j) {
            const double sj = scores(i, j);
            if (sj < s0 ||
                (sj == s0 &&
                 tie_key(tie_seed, static_cast<std::uint64_t>(i),
                         static_cast<std::uint64_t>(j)) < k0))
                ++r;
        }
        ranks[static_cast<std::size_t>(i)] = r;
    }
    return ranks;
}

int keyed_rank(const ScoreTable& table, int i, int col) {
    const double s = table.scores(i, col);
    const double key = tie_key(table.tie_seed, static_cast<std::uint64_t>(i),
                               static_cast<std::uint64_t>(col));
    int r = 1;
    for (int j = 0; j < table.d1(); ++j) {
        if (j == col) continue;
        const double sj = table.scores(i, j);
        if (sj < s ||
            (sj == s && tie_key(table.tie_seed, static_cast<std::uint64_t>(i),
                                static_cast<std::uint64_t>(j)) < key))
            ++r;
    }
    return r;
}

ScoreTable entry_scores(const std::vector<LassoPath>& batch_paths,
                        const BatchPartition& partition, int p, int d,
                        std::uint64_t tie_seed) {
    if (batch_paths.size() != partition.batches.size())
        throw std::invalid_argument("one lasso path per batch required");

    ScoreTable table;
    table.d = d;
    table.tie_seed = tie_seed;
    table.scores = MatrixXd::Zero(p, d + 1);
    for (std::size_t bi = 0; bi < partition.batches.size(); ++bi) {
        const auto& batch = partition.batches[bi];
        const LassoPath& path = batch_paths[bi];
        const auto m = static_cast<int>(batch.size());
        if (path.entry_lambda.size() != p + static_cast<Eigen::Index>(d) * m)
            throw std::invalid_argument("path width does not match batch layout");
        for (int t = 0; t < m; ++t) {
            const int i = batch[static_cast<std::size_t>(t)];
            table.scores(i, 0) = path.entry_lambda(i);
            for (int c = 0; c < d; ++c)
                table.scores(i, c + 1) = path.entry_lambda(p + c * m + t);
        }
    }
    table.ranks = compute_ranks(table.scores, tie_seed);
    return table;
}

ScoreTable score_design(const DesignData& data, const KnockoffSet& ks,
                        const VectorXd& y, const LambdaGrid& grid,
                        std::uint64_t tie_seed, Rng& perm_rng) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    if (y.size() != n) throw std::invalid_argument("y length != design rows");
    if (ks.knockoffs.rows() != n)
        throw std::invalid_argument("knockoff rows != design rows");

    std::vector<LassoPath> paths;
    paths.reserve(ks.partition.batches.size());
    for (const auto& batch : ks.partition.batches) {
        const auto m = static_cast<Eigen::Index>(batch.size());
        MatrixXd aug(n, p + ks.d * m);
        aug.leftCols(p) = data.x;
        for (int c = 0; c < ks.d; ++c)
            for (Eigen::Index t = 0; t < m; ++t)
                aug.col(p + static_cast<Eigen::Index>(c) * m + t) =
                    ks.knockoffs.col(static_cast<Eigen::Index>(c) * p +
                                     batch[static_cast<std::size_t>(t)]);
        paths.push_back(lasso_path(aug, y, grid, perm_rng));
    }
    return entry_scores(paths, ks.partition, static_cast<int>(p), ks.d, tie_seed);
}

LambdaGrid make_grid_for(const DesignData& data, const KnockoffSet& ks,
                         const VectorXd& y, int multiplier, int d_max,
                         double grid_ratio) {
    // The union of all batches' augmented columns is X plus every
    // knockoff column, so two sources suffice.
    const int count = grid_count(multiplier, d_max, static_cast<int>(data.p()));
    return make_grid({&data.x, &ks.knockoffs}, y, count, grid_ratio);
}

}  // namespace mknock
