#pragma once

// Test-only oracles, kept deliberately naive and independent of the library
// implementations they cross-check.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "fedmil/dataset.hpp"
#include "fedmil/linalg.hpp"
#include "fedmil/model.hpp"

namespace oracle {

// Plain triple-loop y = W x + b with W stored row-major (rows x cols).
inline std::vector<double> affine(const std::vector<double>& w,
                                  const std::vector<double>& b,
                                  const std::vector<double>& x, int rows, int cols) {
  std::vector<double> y(static_cast<std::size_t>(rows), 0.0);
  for (int r = 0; r < rows; ++r) {
    double acc = b.empty() ? 0.0 : b[static_cast<std::size_t>(r)];
    for (int c = 0; c < cols; ++c)
      acc += w[static_cast<std::size_t>(r) * cols + c] * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = acc;
  }
  return y;
}

// AUC by exhaustive pair enumeration, ties counting one half.
inline double pair_count_auc(const std::vector<int>& labels,
                             const std::vector<double>& scores) {
  double wins = 0.0;
  long n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      ++n_pos;
      continue;
    }
    ++n_neg;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] == 1) continue;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Determinant via Gaussian elimination with partial pivoting (small n).
inline double determinant(fedmil::Matrix m) {
  const std::size_t n = m.rows;
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(m(r, col)) > std::abs(m(pivot, col))) pivot = r;
    if (m(pivot, col) == 0.0) return 0.0;
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(m(pivot, c), m(col, c));
      det = -det;
    }
    det *= m(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      double f = m(r, col) / m(col, col);
      for (std::size_t c = col; c < n; ++c) m(r, c) -= f * m(col, c);
    }
  }
  return det;
}

// All size-k subsets of {0..n-1}, lexicographic.
inline std::vector<std::vector<int>> subsets(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(cur);
      return;
    }
    for (int i = start; i < n; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
  return out;
}

inline fedmil::Matrix submatrix(const fedmil::Matrix& m, const std::vector<int>& idx) {
  fedmil::Matrix out(idx.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j)
      out(i, j) = m(static_cast<std::size_t>(idx[i]), static_cast<std::size_t>(idx[j]));
  return out;
}

// Central finite differences of the per-bag loss over every coordinate.
inline fedmil::ModelParams finite_difference_gradient(const fedmil::ModelParams& p,
                                                      const fedmil::Bag& bag,
                                                      double step = 1e-5) {
  fedmil::ModelParams grad = p;
  grad.set_zero();
  fedmil::ModelParams work = p;
  auto work_fields = work.fields();
  auto grad_fields = grad.fields();
  for (std::size_t f = 0; f < work_fields.size(); ++f) {
    for (std::size_t i = 0; i < work_fields[f]->size(); ++i) {
      double orig = (*work_fields[f])[i];
      (*work_fields[f])[i] = orig + step;
      double up = fedmil::forward_loss(work, bag).loss;
      (*work_fields[f])[i] = orig - step;
      double down = fedmil::forward_loss(work, bag).loss;
      (*work_fields[f])[i] = orig;
      (*grad_fields[f])[i] = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

// Random model parameters (dense, all fields), for gradient checks.
inline fedmil::ModelParams random_params(const fedmil::ModelConfig& cfg, fedmil::Rng& rng,
                                         double scale = 0.5) {
  fedmil::ModelParams p = fedmil::ModelParams::zeros(cfg);
  for (auto* f : p.fields())
    for (auto& v : *f) v = scale * rng.normal();
  return p;
}

inline fedmil::Bag random_bag(int num_instances, int feature_dim, int num_classes,
                              fedmil::Rng& rng) {
  fedmil::Bag bag;
  bag.id = 0;
  bag.label = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(num_classes)));
  bag.num_instances = num_instances;
  bag.features.resize(static_cast<std::size_t>(num_instances) * feature_dim);
  for (auto& v : bag.features) v = static_cast<float>(rng.normal());
  return bag;
}

} // namespace oracle
