#pragma once

#include <Eigen/Dense>
#include <initializer_list>
#include <vector>

namespace bihyper {

// Dense containers: 64-bit reals, matrices stored row-major.  All exported
// operations are pure and reject non-finite values, so anything built on top
// can assume finiteness without re-checking.
using RealVector = Eigen::VectorXd;
using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Throw NumericError if any entry is NaN or Inf.
void require_finite(double x, const char* what);
void require_finite(const RealVector& v, const char* what);
void require_finite(const RealMatrix& m, const char* what);

// Validating constructors used wherever data enters the library.
RealVector make_vector(std::initializer_list<double> xs);
RealVector make_vector(const std::vector<double>& xs);
RealMatrix make_matrix(std::initializer_list<std::initializer_list<double>> rows);

// Inner product; throws DimensionError on length mismatch.
double dot(const RealVector& a, const RealVector& b);

// m * v; throws DimensionError on shape mismatch.
RealVector matvec(const RealMatrix& m, const RealVector& v);

// Solve m x = rhs by partial-pivot LU.  Throws SingularMatrixError when the
// smallest pivot falls below 1e-12 * max|m_ij| or the solution fails the
// residual contract  max|m x - rhs| <= 1e-10 * (1 + max|rhs|).
RealVector dense_solve(const RealMatrix& m, const RealVector& rhs);

// Numerically stable softmax (shift by the max logit); entries sum to 1.
RealVector softmax(const RealVector& logits);

}  // namespace bihyper
