#ifndef MKNOCK_KNOCKOFFS_HPP
#define MKNOCK_KNOCKOFFS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mknock/rng.hpp"

namespace mknock {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Design matrix with unit-norm columns plus its response. n_original
// tracks the row count before any zero-row extension.
struct DesignData {
    MatrixXd x;
    VectorXd y;
    Eigen::Index n_original = 0;
    VectorXd column_norms;  // norms of the raw columns before normalization

    Eigen::Index n() const { return x.rows(); }
    Eigen::Index p() const { return x.cols(); }
};

// Normalizes columns to unit norm and validates shapes (n >= p, matching
// y length, no zero columns).
DesignData make_design(MatrixXd x, VectorXd y);

enum class PartitionMethod { clustered, uniform, single };

std::string to_string(PartitionMethod m);
PartitionMethod partition_method_from_string(const std::string& s);

struct BatchPartition {
    std::vector<std::vector<int>> batches;  // disjoint, sorted, cover {0..p-1}
    PartitionMethod method = PartitionMethod::single;

    int n_batches() const { return static_cast<int>(batches.size()); }
};

BatchPartition single_partition(int p);
BatchPartition uniform_partition(int p, int b, Rng& rng);

// UPGMA (average linkage, Euclidean distance between columns of x), cut
// into exactly b clusters.
BatchPartition cluster_batches(const MatrixXd& x, int b);

// Validates the partition against p and emits the small-batch warning.
void check_partition(const BatchPartition& partition, int p);

// Critical equi-correlated gap for the full (single-batch) construction:
// min(((d+1)/d) * lambda_min(sigma), 1).
double critical_s0_full(const MatrixXd& sigma, int d);

// Full augmented Gram: (d+1)x(d+1) blocks, Sigma on the diagonal,
// Sigma - s0*I off it.
MatrixXd build_gram_full(const MatrixXd& sigma, int d, double s0);

// Partially augmented Gram for one batch; see build_gram_full for the
// full-set special case.
MatrixXd build_gram_batch(const MatrixXd& sigma, const std::vector<int>& batch,
                          int d, double s0);

// Largest s0 in (0,1] keeping the batch Gram PSD, found by bisection
// (width tol, at most 60 iterations) and shrunk by (1 - 1e-8).
double critical_s0_batch(const MatrixXd& sigma, const std::vector<int>& batch,
                         int d, double tol = 1e-10);

struct KnockoffSet {
    int d = 0;
    // n_ext x (d*p); column c*p + i holds copy c+1 of feature i.
    MatrixXd knockoffs;
    std::vector<double> per_batch_s0;
    BatchPartition partition;
    Eigen::Index extended_rows = 0;
    std::optional<double> sigma_hat;
    // Max |X1[:, 0:p] - X| observed during sign alignment.
    double alignment_error = 0.0;

    const Eigen::Block<const MatrixXd> copy(int c) const {
        const Eigen::Index p = knockoffs.cols() / d;
        return knockoffs.block(0, static_cast<Eigen::Index>(c) * p,
                               knockoffs.rows(), p);
    }

    std::uint64_t fingerprint() const;
};

// Residual noise variance RSS/(n-p) from least squares of y on x,
// computed over the original (pre-extension) rows.
double estimate_sigma_sq(const DesignData& data);

// Appends (d+1)p - n zero rows to x and N(0, sigma_hat^2) draws to y.
// sigma_hat^2 = RSS/(n-p) from least squares of y on x unless
// sigma_known is given.
DesignData extend_design(const DesignData& data, int d,
                         std::optional<double> sigma_known, Rng& rng);

// Batched multiple-knockoff construction. Requires n >= (d+1)p (extend
// first if needed).
KnockoffSet construct_knockoffs(const DesignData& data, int d,
                                const BatchPartition& partition, Rng& rng);

struct GramReport {
    std::vector<double> batch_max_dev;
    double max_dev = 0.0;
    bool pass = false;
};

// Compares the empirical Gram of each batch's augmented matrix against
// its target G^I.
GramReport verify_gram(const DesignData& data, const KnockoffSet& ks, double tol);

}  // namespace mknock

#endif
