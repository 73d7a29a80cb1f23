#ifndef MKNOCK_NUMERICS_HPP
#define MKNOCK_NUMERICS_HPP

#include <Eigen/Dense>

namespace mknock {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Eigenvalues sorted descending, columns of `vectors` matching.
struct EigenSym {
    VectorXd values;
    MatrixXd vectors;
};

// Spectral decomposition of a symmetric matrix. Throws on non-finite
// entries or a visibly asymmetric input.
EigenSym sym_eigen(const MatrixXd& m);

// Smallest eigenvalue (last entry of sym_eigen's descending values).
double min_eigenvalue(const MatrixXd& m);

// Symmetric PSD root: V diag(max(w,0))^{1/2} V^T. Eigenvalues in
// [-clip_tol, 0) are clipped to zero; anything below -clip_tol throws
// with the offending eigenvalue. clip_tol < 0 selects the default
// 1e-8 * max eigenvalue.
MatrixXd symmetric_root(const MatrixXd& m, double clip_tol = -1.0);

struct QRFactors {
    MatrixXd q;  // n x k, orthonormal columns
    MatrixXd r;  // k x k, upper triangular, non-negative diagonal
};

// Thin QR with the non-negative-diagonal sign convention. Rank-deficient
// inputs are tolerated (Householder reflectors complete the basis) and
// reported through the warning hook unless warn_on_deficiency is false.
QRFactors thin_qr(const MatrixXd& m, bool warn_on_deficiency = true);

}  // namespace mknock

#endif
