#include "bihyper/numerics.hpp"

#include <cmath>
#include <string>

#include "bihyper/errors.hpp"

namespace bihyper {

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw NumericError(std::string(what) + ": non-finite value");
  }
}

void require_finite(const RealVector& v, const char* what) {
  if (!v.allFinite()) {
    throw NumericError(std::string(what) + ": non-finite entry");
  }
}

void require_finite(const RealMatrix& m, const char* what) {
  if (!m.allFinite()) {
    throw NumericError(std::string(what) + ": non-finite entry");
  }
}

RealVector make_vector(std::initializer_list<double> xs) {
  return make_vector(std::vector<double>(xs));
}

RealVector make_vector(const std::vector<double>& xs) {
  if (xs.empty()) throw DimensionError("make_vector: empty vector");
  RealVector v(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) v[static_cast<Eigen::Index>(i)] = xs[i];
  require_finite(v, "make_vector");
  return v;
}

RealMatrix make_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw DimensionError("make_matrix: no rows");
  const Eigen::Index nr = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index nc = static_cast<Eigen::Index>(rows.begin()->size());
  if (nc == 0) throw DimensionError("make_matrix: empty row");
  RealMatrix m(nr, nc);
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Eigen::Index>(row.size()) != nc) {
      throw DimensionError("make_matrix: ragged rows");
    }
    Eigen::Index j = 0;
    for (double x : row) m(i, j++) = x;
    ++i;
  }
  require_finite(m, "make_matrix");
  return m;
}

double dot(const RealVector& a, const RealVector& b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
  double r = a.dot(b);
  require_finite(r, "dot");
  return r;
}

RealVector matvec(const RealMatrix& m, const RealVector& v) {
  if (m.cols() != v.size()) {
    throw DimensionError("matvec: matrix is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", vector has length " +
                         std::to_string(v.size()));
  }
  RealVector r = m * v;
  require_finite(r, "matvec");
  return r;
}

RealVector dense_solve(const RealMatrix& m, const RealVector& rhs) {
  if (m.rows() != m.cols()) {
    throw DimensionError("dense_solve: matrix must be square");
  }
  if (m.rows() != rhs.size()) {
    throw DimensionError("dense_solve: rhs length " + std::to_string(rhs.size()) +
                         " does not match matrix order " + std::to_string(m.rows()));
  }
  require_finite(m, "dense_solve: matrix");
  require_finite(rhs, "dense_solve: rhs");

  Eigen::PartialPivLU<Eigen::MatrixXd> lu{Eigen::MatrixXd(m)};
  const double max_entry = m.cwiseAbs().maxCoeff();
  const double pivot_floor = 1e-12 * max_entry;
  const double min_pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (min_pivot <= pivot_floor) {
    throw SingularMatrixError("dense_solve: pivot " + std::to_string(min_pivot) +
                              " below threshold " + std::to_string(pivot_floor));
  }

  RealVector x = lu.solve(rhs);
  require_finite(x, "dense_solve: solution");
  const double resid = (m * x - rhs).cwiseAbs().maxCoeff();
  if (resid > 1e-10 * (1.0 + rhs.cwiseAbs().maxCoeff())) {
    throw SingularMatrixError("dense_solve: residual " + std::to_string(resid) +
                              " exceeds contract");
  }
  return x;
}

RealVector softmax(const RealVector& logits) {
  require_finite(logits, "softmax");
  const double shift = logits.maxCoeff();
  RealVector e = (logits.array() - shift).exp();
  return e / e.sum();
}

}  // namespace bihyper
