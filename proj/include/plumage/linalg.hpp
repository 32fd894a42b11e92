#pragma once

// Dense matrix primitives shared by the estimator, sampler and optimizers.
// Everything is double precision and column-major (Eigen's default); the
// logical view of a matrix is still rows x cols.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>

namespace plumage {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Thrown when a numerical precondition is violated (shape, finiteness, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Matrix& a) {
  std::ostringstream os;
  os << a.rows() << "x" << a.cols();
  return os.str();
}

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

inline void require_finite(const Matrix& a, const std::string& what) {
  if (!a.allFinite()) {
    throw NumericError(what + ": non-finite entry in " + shape_str(a) + " matrix");
  }
}

/// Builds a matrix from row-major nested initializer data, rejecting NaN/Inf.
inline Matrix make_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const auto m = static_cast<Index>(rows.size());
  const auto n = m == 0 ? Index{0} : static_cast<Index>(rows.begin()->size());
  if (m == 0 || n == 0) throw NumericError("make_matrix: empty matrix");
  Matrix out(m, n);
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != n) throw NumericError("make_matrix: ragged rows");
    Index j = 0;
    for (double v : row) out(i, j++) = v;
    ++i;
  }
  require_finite(out, "make_matrix");
  return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw NumericError("matmul: inner dimension mismatch " + shape_str(a) + " * " + shape_str(b));
  }
  return a * b;
}

inline double frobenius_norm(const Matrix& a) { return a.norm(); }

/// Thin SVD, U: m x d, V: n x d, d = min(m, n).
struct SingularDecomposition {
  Matrix U;
  Vector sigma;
  Matrix V;

  Index rank_bound() const { return sigma.size(); }

  Matrix reconstruct() const { return U * sigma.asDiagonal() * V.transpose(); }
};

/// Flips each (u_i, v_i) pair so that the largest-magnitude entry of u_i is
/// positive. Ties in magnitude resolve to the first such entry.
inline void canonicalize_signs(SingularDecomposition& d) {
  for (Index i = 0; i < d.U.cols(); ++i) {
    Index arg = 0;
    d.U.col(i).cwiseAbs().maxCoeff(&arg);
    if (d.U(arg, i) < 0.0) {
      d.U.col(i) *= -1.0;
      d.V.col(i) *= -1.0;
    }
  }
}

/// Exact thin SVD with singular values in descending order and the sign
/// convention from canonicalize_signs applied.
inline SingularDecomposition svd(const Matrix& g) {
  if (g.rows() == 0 || g.cols() == 0) throw NumericError("svd: empty matrix");
  require_finite(g, "svd");
  Eigen::JacobiSVD<Matrix> solver(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success) {
    throw NumericError("svd: solver failed to converge on " + shape_str(g) + " matrix");
  }
  SingularDecomposition out{solver.matrixU(), solver.singularValues(), solver.matrixV()};
  canonicalize_signs(out);
  return out;
}

/// Singular values only; used for principal angles between small bases.
inline Vector singular_values(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) return Vector{};
  Eigen::JacobiSVD<Matrix> solver(a);
  if (solver.info() != Eigen::Success) {
    throw NumericError("singular_values: solver failed to converge on " + shape_str(a) + " matrix");
  }
  return solver.singularValues();
}

/// ||A^T A - I||_F for a column-orthonormality check.
inline double orthonormality_defect(const Matrix& a) {
  return (a.transpose() * a - Matrix::Identity(a.cols(), a.cols())).norm();
}

}  // namespace plumage
