#include "mknock/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "mknock/common.hpp"

namespace mknock {

namespace {

void check_square_symmetric(const MatrixXd& m) {
    if (m.rows() != m.cols() || m.rows() < 1)
        throw std::invalid_argument("matrix must be square, got " +
                                    std::to_string(m.rows()) + "x" +
                                    std::to_string(m.cols()));
    if (!m.allFinite()) throw std::invalid_argument("matrix has non-finite entries");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * scale)
        throw std::invalid_argument("matrix is not symmetric (max asymmetry " +
                                    std::to_string(asym) + ")");
}

}  // namespace

EigenSym sym_eigen(const MatrixXd& m) {
    check_square_symmetric(m);
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(m);
    if (solver.info() != Eigen::Success)
        throw numerical_error("symmetric eigendecomposition failed");
    // Eigen returns ascending order.
    EigenSym out;
    out.values = solver.eigenvalues().reverse();
    out.vectors = solver.eigenvectors().rowwise().reverse();
    return out;
}

double min_eigenvalue(const MatrixXd& m) {
    check_square_symmetric(m);
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success)
        throw numerical_error("symmetric eigendecomposition failed");
    return solver.eigenvalues()(0);
}

MatrixXd symmetric_root(const MatrixXd& m, double clip_tol) {
    const EigenSym eig = sym_eigen(m);
    const double max_eig = eig.values(0);
    if (clip_tol < 0) clip_tol = 1e-8 * std::max(0.0, max_eig);

    const Eigen::Index k = eig.values.size();
    VectorXd roots(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const double w = eig.values(i);
        if (w < -clip_tol)
            throw numerical_error("matrix is not PSD: eigenvalue " +
                                  std::to_string(w) + " below -clip_tol " +
                                  std::to_string(-clip_tol));
        roots(i) = w > 0 ? std::sqrt(w) : 0.0;
    }
    MatrixXd root = eig.vectors * roots.asDiagonal() * eig.vectors.transpose();
    // symmetrize away rounding
    root = 0.5 * (root + root.transpose()).eval();
    return root;
}

QRFactors thin_qr(const MatrixXd& m, bool warn_on_deficiency) {
    const Eigen::Index n = m.rows();
    const Eigen::Index k = m.cols();
    if (n < k)
        throw std::invalid_argument("thin_qr needs rows >= cols, got " +
                                    std::to_string(n) + "x" + std::to_string(k));
    if (!m.allFinite()) throw std::invalid_argument("matrix has non-finite entries");

    Eigen::HouseholderQR<MatrixXd> qr(m);
    QRFactors out;
    out.q = qr.householderQ() * MatrixXd::Identity(n, k);
    out.r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();

    // Sign convention: non-negative diagonal of R.
    double max_diag = 0.0;
    for (Eigen::Index i = 0; i < k; ++i)
        max_diag = std::max(max_diag, std::abs(out.r(i, i)));
    for (Eigen::Index i = 0; i < k; ++i) {
        if (out.r(i, i) < 0) {
            out.r.row(i) = -out.r.row(i);
            out.q.col(i) = -out.q.col(i);
        }
    }
    if (warn_on_deficiency) {
        for (Eigen::Index i = 0; i < k; ++i) {
            if (std::abs(out.r(i, i)) <= 1e-12 * std::max(1.0, max_diag)) {
                warn("thin_qr: input is numerically rank-deficient (pivot " +
                     std::to_string(i) + ")");
                break;
            }
        }
    }
    return out;
}

}  // namespace mknock
