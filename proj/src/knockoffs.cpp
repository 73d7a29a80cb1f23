#include "mknock/knockoffs.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mknock/common.hpp"
#include "mknock/csv.hpp"
#include "mknock/numerics.hpp"

namespace mknock {

// -------------------------------------------------------------------------
// Design data
// -------------------------------------------------------------------------

DesignData make_design(MatrixXd x, VectorXd y) {
    if (x.rows() < 1 || x.cols() < 1)
        throw std::invalid_argument("empty design matrix");
    if (!x.allFinite() || !y.allFinite())
        throw std::invalid_argument("design data has non-finite entries");
    if (y.size() != x.rows())
        throw std::invalid_argument("y length " + std::to_string(y.size()) +
                                    " != row count " + std::to_string(x.rows()));
    if (x.rows() < x.cols())
        throw std::invalid_argument("need n >= p, got n=" + std::to_string(x.rows()) +
                                    ", p=" + std::to_string(x.cols()));

    DesignData data;
    data.column_norms = x.colwise().norm();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (data.column_norms(j) <= 0)
            throw std::invalid_argument("column " + std::to_string(j) + " has zero norm");
        x.col(j) /= data.column_norms(j);
    }
    data.x = std::move(x);
    data.y = std::move(y);
    data.n_original = data.x.rows();
    return data;
}

// -------------------------------------------------------------------------
// Partitions
// -------------------------------------------------------------------------

std::string to_string(PartitionMethod m) {
    switch (m) {
        case PartitionMethod::clustered: return "clustered";
        case PartitionMethod::uniform: return "uniform";
        case PartitionMethod::single: return "single";
    }
    return "single";
}

PartitionMethod partition_method_from_string(const std::string& s) {
    if (s == "clustered") return PartitionMethod::clustered;
    if (s == "uniform") return PartitionMethod::uniform;
    if (s == "single") return PartitionMethod::single;
    throw config_error("unknown partition method '" + s +
                       "' (expected clustered|uniform|single)");
}

BatchPartition single_partition(int p) {
    BatchPartition out;
    out.method = PartitionMethod::single;
    out.batches.emplace_back();
    for (int i = 0; i < p; ++i) out.batches[0].push_back(i);
    return out;
}

BatchPartition uniform_partition(int p, int b, Rng& rng) {
    if (b < 1 || b > p)
        throw std::invalid_argument("batch count must be in [1, p], got " +
                                    std::to_string(b));
    const std::vector<int> perm = rng.permutation(p);
    BatchPartition out;
    out.method = PartitionMethod::uniform;
    out.batches.resize(static_cast<std::size_t>(b));
    // near-equal consecutive chunks of the shuffled features
    int start = 0;
    for (int j = 0; j < b; ++j) {
        const int size = p / b + (j < p % b ? 1 : 0);
        for (int t = 0; t < size; ++t)
            out.batches[static_cast<std::size_t>(j)].push_back(perm[static_cast<std::size_t>(start + t)]);
        std::sort(out.batches[static_cast<std::size_t>(j)].begin(),
                  out.batches[static_cast<std::size_t>(j)].end());
        start += size;
    }
    check_partition(out, p);
    return out;
}

BatchPartition cluster_batches(const MatrixXd& x, int b) {
    const int p = static_cast<int>(x.cols());
    if (b < 1 || b > p)
        throw std::invalid_argument("batch count must be in [1, p], got " +
                                    std::to_string(b));

    // UPGMA: average-linkage agglomeration on Euclidean column distances,
    // merged until exactly b clusters remain (equivalent to cutting the
    // dendrogram from the root).
    MatrixXd dist(p, p);
    for (int i = 0; i < p; ++i) {
        dist(i, i) = 0.0;
        for (int j = i + 1; j < p; ++j) {
            const double d = (x.col(i) - x.col(j)).norm();
            dist(i, j) = d;
            dist(j, i) = d;
        }
    }

    std::vector<std::vector<int>> members(static_cast<std::size_t>(p));
    std::vector<bool> alive(static_cast<std::size_t>(p), true);
    for (int i = 0; i < p; ++i) members[static_cast<std::size_t>(i)] = {i};

    int clusters = p;
    while (clusters > b) {
        int best_i = -1, best_j = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < p; ++i) {
            if (!alive[static_cast<std::size_t>(i)]) continue;
            for (int j = i + 1; j < p; ++j) {
                if (!alive[static_cast<std::size_t>(j)]) continue;
                if (dist(i, j) < best) {
                    best = dist(i, j);
                    best_i = i;
                    best_j = j;
                }
            }
        }
        // Lance-Williams update for average linkage
        const auto ni = static_cast<double>(members[static_cast<std::size_t>(best_i)].size());
        const auto nj = static_cast<double>(members[static_cast<std::size_t>(best_j)].size());
        for (int t = 0; t < p; ++t) {
            if (!alive[static_cast<std::size_t>(t)] || t == best_i || t == best_j) continue;
            const double d = (ni * dist(best_i, t) + nj * dist(best_j, t)) / (ni + nj);
            dist(best_i, t) = d;
            dist(t, best_i) = d;
        }
        auto& into = members[static_cast<std::size_t>(best_i)];
        auto& from = members[static_cast<std::size_t>(best_j)];
        into.insert(into.end(), from.begin(), from.end());
        from.clear();
        alive[static_cast<std::size_t>(best_j)] = false;
        --clusters;
    }

    BatchPartition out;
    out.method = PartitionMethod::clustered;
    for (int i = 0; i < p; ++i) {
        if (!alive[static_cast<std::size_t>(i)]) continue;
        auto batch = members[static_cast<std::size_t>(i)];
        std::sort(batch.begin(), batch.end());
        out.batches.push_back(std::move(batch));
    }
    std::sort(out.batches.begin(), out.batches.end());
    check_partition(out, p);
    return out;
}

void check_partition(const BatchPartition& partition, int p) {
    std::vector<bool> seen(static_cast<std::size_t>(p), false);
    int covered = 0;
    for (const auto& batch : partition.batches) {
        if (batch.empty()) throw std::invalid_argument("empty batch in partition");
        for (int i : batch) {
            if (i < 0 || i >= p)
                throw std::invalid_argument("feature index " + std::to_string(i) +
                                            " outside [0, p)");
            if (seen[static_cast<std::size_t>(i)])
                throw std::invalid_argument("feature " + std::to_string(i) +
                                            " appears in two batches");
            seen[static_cast<std::size_t>(i)] = true;
            ++covered;
        }
    }
    if (covered != p)
        throw std::invalid_argument("partition covers " + std::to_string(covered) +
                                    " of " + std::to_string(p) + " features");
    if (partition.method != PartitionMethod::single) {
        const double mean_size =
            static_cast<double>(p) / static_cast<double>(partition.batches.size());
        if (mean_size < 4.0)
            warn("mean batch size " + std::to_string(mean_size) +
                 " is below 4; knockoff exchangeability may degrade");
    }
}

// -------------------------------------------------------------------------
// Gram construction and the critical gap
// -------------------------------------------------------------------------

namespace {

void check_sigma(const MatrixXd& sigma) {
    if (sigma.rows() != sigma.cols())
        throw std::invalid_argument("sigma must be square");
    for (Eigen::Index i = 0; i < sigma.rows(); ++i)
        if (std::abs(sigma(i, i) - 1.0) > 1e-6)
            throw std::invalid_argument("sigma diagonal entry " + std::to_string(i) +
                                        " is " + std::to_string(sigma(i, i)) +
                                        ", expected 1 (normalize columns first)");
}

bool is_psd(const MatrixXd& m) {
    Eigen::LLT<MatrixXd> llt(m);
    return llt.info() == Eigen::Success;
}

}  // namespace

double critical_s0_full(const MatrixXd& sigma, int d) {
    if (d < 1) throw std::invalid_argument("d must be >= 1, got " + std::to_string(d));
    check_sigma(sigma);
    double lmin = min_eigenvalue(sigma);
    if (lmin < -1e-8)
        throw numerical_error("sigma is not PSD: lambda_min = " + std::to_string(lmin));
    if (lmin < 0) lmin = 0;
    return std::min((static_cast<double>(d) + 1.0) / d * lmin, 1.0);
}

MatrixXd build_gram_full(const MatrixXd& sigma, int d, double s0) {
    if (d < 1) throw std::invalid_argument("d must be >= 1");
    if (!(s0 > 0.0 && s0 <= 1.0))
        throw std::invalid_argument("s0 must be in (0, 1], got " + std::to_string(s0));
    const Eigen::Index p = sigma.rows();
    const Eigen::Index dim = (d + 1) * p;
    MatrixXd sigma0 = sigma;
    sigma0.diagonal().array() -= s0;

    MatrixXd g(dim, dim);
    for (int bi = 0; bi <= d; ++bi)
        for (int bj = 0; bj <= d; ++bj)
            g.block(bi * p, bj * p, p, p) = (bi == bj) ? sigma : sigma0;
    return g;
}

MatrixXd build_gram_batch(const MatrixXd& sigma, const std::vector<int>& batch,
                          int d, double s0) {
    if (batch.empty()) throw std::invalid_argument("batch must be non-empty");
    if (d < 1) throw std::invalid_argument("d must be >= 1");
    const Eigen::Index p = sigma.rows();
    const auto m = static_cast<Eigen::Index>(batch.size());
    if (m == p) {
        bool full = true;
        for (Eigen::Index t = 0; t < m; ++t)
            if (batch[static_cast<std::size_t>(t)] != t) { full = false; break; }
        if (full) return build_gram_full(sigma, d, s0);
    }

    MatrixXd sigma0 = sigma;
    sigma0.diagonal().array() -= s0;

    // Restrictions to the batch rows/columns.
    MatrixXd sigma_pi(p, m), sigma0_pi(p, m);
    for (Eigen::Index t = 0; t < m; ++t) {
        const int i = batch[static_cast<std::size_t>(t)];
        sigma_pi.col(t) = sigma.col(i);
        sigma0_pi.col(t) = sigma0.col(i);
    }
    MatrixXd sigma_ii(m, m), sigma0_ii(m, m);
    for (Eigen::Index t = 0; t < m; ++t) {
        const int i = batch[static_cast<std::size_t>(t)];
        sigma_ii.row(t) = sigma_pi.row(i);
        sigma0_ii.row(t) = sigma0_pi.row(i);
    }

    const Eigen::Index dim = p + d * m;
    MatrixXd g(dim, dim);
    g.topLeftCorner(p, p) = sigma;
    for (int c = 0; c < d; ++c) {
        g.block(0, p + c * m, p, m) = sigma0_pi;
        g.block(p + c * m, 0, m, p) = sigma0_pi.transpose();
        for (int c2 = 0; c2 < d; ++c2)
            g.block(p + c * m, p + c2 * m, m, m) = (c == c2) ? sigma_ii : sigma0_ii;
    }
    return g;
}

double critical_s0_batch(const MatrixXd& sigma, const std::vector<int>& batch,
                         int d, double tol) {
    check_sigma(sigma);
    if (batch.empty()) throw std::invalid_argument("batch must be non-empty");

    // Degenerate designs make G^I(s) indefinite for every s > 0.
    if (min_eigenvalue(sigma) < 1e-10)
        throw numerical_error(
            "cannot construct knockoffs: design Gram matrix is singular");

    if (is_psd(build_gram_batch(sigma, batch, d, 1.0))) return 1.0;

    // {s : G^I(s) PSD} is an interval [0, s*]; bisect its right edge.
    // Cholesky serves as the PSD test (it fails on the indefinite side).
    double lo = 1e-12;
    double hi = 1.0;
    for (int iter = 0; iter < 60 && hi - lo > tol; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (is_psd(build_gram_batch(sigma, batch, d, mid)))
            lo = mid;
        else
            hi = mid;
    }
    if (lo <= 2e-12)
        throw numerical_error("no positive knockoff gap exists for this batch");
    return lo * (1.0 - 1e-8);
}

// -------------------------------------------------------------------------
// Extension
// -------------------------------------------------------------------------

double estimate_sigma_sq(const DesignData& data) {
    const Eigen::Index n = data.n_original;
    const Eigen::Index p = data.p();
    if (n <= p)
        throw numerical_error("cannot estimate sigma: n=" + std::to_string(n) +
                              " <= p=" + std::to_string(p));
    const auto x = data.x.topRows(n);
    const auto y = data.y.head(n);
    const VectorXd beta = x.householderQr().solve(y);
    const double rss = (y - x * beta).squaredNorm();
    return rss / static_cast<double>(n - p);
}

DesignData extend_design(const DesignData& data, int d,
                         std::optional<double> sigma_known, Rng& rng) {
    if (d < 1) throw std::invalid_argument("d must be >= 1");
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    const Eigen::Index target = static_cast<Eigen::Index>(d + 1) * p;
    if (n >= target)
        throw std::invalid_argument("no extension needed: n=" + std::to_string(n) +
                                    " >= (d+1)p=" + std::to_string(target));
    if (n <= p)
        throw numerical_error("cannot estimate sigma: n=" + std::to_string(n) +
                              " <= p=" + std::to_string(p));

    const double sigma =
        sigma_known ? *sigma_known : std::sqrt(estimate_sigma_sq(data));

    DesignData out;
    out.x = MatrixXd::Zero(target, p);
    out.x.topRows(n) = data.x;
    out.y.resize(target);
    out.y.head(n) = data.y;
    for (Eigen::Index i = n; i < target; ++i) out.y(i) = sigma * rng.normal();
    out.n_original = data.n_original;
    out.column_norms = data.column_norms;
    return out;
}

// -------------------------------------------------------------------------
// Construction
// -------------------------------------------------------------------------

std::uint64_t KnockoffSet::fingerprint() const {
    std::uint64_t h = fnv1a64(knockoffs.data(),
                              static_cast<std::size_t>(knockoffs.size()) * sizeof(double));
    h = fnv1a64(per_batch_s0.data(), per_batch_s0.size() * sizeof(double), h);
    return h;
}

KnockoffSet construct_knockoffs(const DesignData& data, int d,
                                const BatchPartition& partition, Rng& rng) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    if (d < 1) throw std::invalid_argument("d must be >= 1");
    if (n < (d + 1) * p)
        throw std::invalid_argument("construction needs n >= (d+1)p; extend the "
                                    "design first (n=" + std::to_string(n) +
                                    ", (d+1)p=" + std::to_string((d + 1) * p) + ")");
    check_partition(partition, static_cast<int>(p));

    MatrixXd sigma = data.x.transpose() * data.x;
    sigma = 0.5 * (sigma + sigma.transpose()).eval();

    if (min_eigenvalue(sigma) < 1e-10)
        throw numerical_error(
            "cannot construct knockoffs: design Gram matrix is singular");

    // Shared global Q_b from [X A] with a random Gaussian extension A;
    // batch subspaces are carved out of its trailing d*p columns.
    MatrixXd xa(n, (d + 1) * p);
    xa.leftCols(p) = data.x;
    for (Eigen::Index j = p; j < xa.cols(); ++j)
        for (Eigen::Index i = 0; i < n; ++i) xa(i, j) = rng.normal();
    const QRFactors qb = thin_qr(xa);

    KnockoffSet out;
    out.d = d;
    out.partition = partition;
    out.extended_rows = n - data.n_original;
    out.knockoffs = MatrixXd::Zero(n, static_cast<Eigen::Index>(d) * p);
    out.per_batch_s0.reserve(partition.batches.size());

    Eigen::Index batch_offset = 0;  // consumed columns of Q_b's trailing block
    for (const auto& batch : partition.batches) {
        const auto m = static_cast<Eigen::Index>(batch.size());
        const double s0 =
            (m == p) ? critical_s0_full(sigma, d)
                     : critical_s0_batch(sigma, batch, d);
        out.per_batch_s0.push_back(s0);

        const MatrixXd gram = build_gram_batch(sigma, batch, d, s0);
        const MatrixXd x0 = symmetric_root(gram);
        // G is rank-deficient at the critical gap, so skip the warning.
        const MatrixXd r0 = thin_qr(x0, /*warn_on_deficiency=*/false).r;

        // Q^I: original-feature columns plus this batch's exclusive slice.
        MatrixXd qi(n, p + d * m);
        qi.leftCols(p) = qb.q.leftCols(p);
        qi.rightCols(d * m) = qb.q.middleCols(p + batch_offset, d * m);
        batch_offset += d * m;

        const MatrixXd x1 = qi * r0;

        // With the shared non-negative-diagonal QR convention the leading
        // p columns already reproduce X; verify rather than re-align.
        const double err = (x1.leftCols(p) - data.x).cwiseAbs().maxCoeff();
        out.alignment_error = std::max(out.alignment_error, err);
        if (err > 1e-6)
            throw numerical_error("knockoff sign alignment failed: max column "
                                  "discrepancy " + std::to_string(err));

        for (int c = 0; c < d; ++c)
            for (Eigen::Index t = 0; t < m; ++t)
                out.knockoffs.col(static_cast<Eigen::Index>(c) * p +
                                  batch[static_cast<std::size_t>(t)]) =
                    x1.col(p + static_cast<Eigen::Index>(c) * m + t);
    }
    return out;
}

GramReport verify_gram(const DesignData& data, const KnockoffSet& ks, double tol) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    const int d = ks.d;

    MatrixXd sigma = data.x.transpose() * data.x;
    sigma = 0.5 * (sigma + sigma.transpose()).eval();

    GramReport report;
    for (std::size_t j = 0; j < ks.partition.batches.size(); ++j) {
        const auto& batch = ks.partition.batches[j];
        const auto m = static_cast<Eigen::Index>(batch.size());
        MatrixXd aug(n, p + d * m);
        aug.leftCols(p) = data.x;
        for (int c = 0; c < d; ++c)
            for (Eigen::Index t = 0; t < m; ++t)
                aug.col(p + static_cast<Eigen::Index>(c) * m + t) =
                    ks.knockoffs.col(static_cast<Eigen::Index>(c) * p +
                                     batch[static_cast<std::size_t>(t)]);
        const MatrixXd empirical = aug.transpose() * aug;
        const MatrixXd target = build_gram_batch(sigma, batch, d, ks.per_batch_s0[j]);
        const double dev = (empirical - target).cwiseAbs().maxCoeff();
        report.batch_max_dev.push_back(dev);
        report.max_dev = std::max(report.max_dev, dev);
    }
    report.pass = report.max_dev <= tol;
    return report;
}

}  // namespace mknock
