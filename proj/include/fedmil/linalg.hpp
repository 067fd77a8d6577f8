#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fedmil/errors.hpp"

namespace fedmil {

// Minimal dense row-major matrix of doubles. Only what the selection kernel
// machinery needs; the MIL model works on flat vectors directly.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, ErrorCode::shape_mismatch, "matmul: inner dims differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

struct EigenDecomposition {
  std::vector<double> values; // ascending
  Matrix vectors;             // column j is the eigenvector of values[j]
};

namespace detail {

inline double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

} // namespace detail

// Symmetric eigendecomposition by cyclic Jacobi rotations. Sweeps run until
// the off-diagonal Frobenius norm drops below `tol` (capped at `max_sweeps`).
// Eigenvalues come back ascending with matching orthonormal eigenvectors.
inline EigenDecomposition sym_eig(const Matrix& a, double tol = 1e-12,
                                  int max_sweeps = 100) {
  require(a.rows == a.cols, ErrorCode::shape_mismatch, "sym_eig: matrix not square");
  const std::size_t n = a.rows;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      require(std::abs(a(i, j) - a(j, i)) <= 1e-10, ErrorCode::shape_mismatch,
              "sym_eig: input not symmetric");

  Matrix w = a;
  // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = 0.5 * (w(i, j) + w(j, i));
      w(i, j) = v;
      w(j, i) = v;
    }
  Matrix v = Matrix::identity(n);

  int sweep = 0;
  while (detail::off_diagonal_norm(w) >= tol) {
    require(sweep < max_sweeps, ErrorCode::numeric, "sym_eig: sweep cap exceeded");
    ++sweep;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = w(p, q);
        if (apq == 0.0) continue;
        double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        double tau = s / (1.0 + c);

        double wpp = w(p, p), wqq = w(q, q);
        w(p, p) = wpp - t * apq;
        w(q, q) = wqq + t * apq;
        w(p, q) = 0.0;
        w(q, p) = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (i == p || i == q) continue;
          double wip = w(i, p), wiq = w(i, q);
          w(i, p) = wip - s * (wiq + tau * wip);
          w(p, i) = w(i, p);
          w(i, q) = wiq + s * (wip - tau * wiq);
          w(q, i) = w(i, q);
        }
        for (std::size_t i = 0; i < n; ++i) {
          double vip = v(i, p), viq = v(i, q);
          v(i, p) = vip - s * (viq + tau * vip);
          v(i, q) = viq + s * (vip - tau * viq);
        }
      }
    }
  }

  // Sort ascending, permuting eigenvector columns along.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (w(x, x) != w(y, y)) return w(x, x) < w(y, y);
    return x < y;
  });

  EigenDecomposition out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = w(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

} // namespace fedmil
