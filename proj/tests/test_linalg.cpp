#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedmil/linalg.hpp"
#include "fedmil/rng.hpp"
#include "helpers.hpp"

using fedmil::Matrix;

namespace {

Matrix random_gram(std::size_t n, fedmil::Rng& rng) {
  Matrix b(n, n);
  for (auto& v : b.data) v = rng.normal();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += b(k, i) * b(k, j);
      g(i, j) = acc;
    }
  return g;
}

} // namespace

TEST_CASE("diagonal matrix decomposes to sorted diagonal", "[linalg]") {
  Matrix a(3, 3);
  a(0, 0) = 5.0;
  a(1, 1) = -1.0;
  a(2, 2) = 2.0;
  auto eig = fedmil::sym_eig(a);
  REQUIRE(eig.values[0] == Catch::Approx(-1.0));
  REQUIRE(eig.values[1] == Catch::Approx(2.0));
  REQUIRE(eig.values[2] == Catch::Approx(5.0));
  // Eigenvectors form a signed permutation.
  for (std::size_t j = 0; j < 3; ++j) {
    double maxabs = 0.0;
    for (std::size_t i = 0; i < 3; ++i) maxabs = std::max(maxabs, std::abs(eig.vectors(i, j)));
    REQUIRE(maxabs == Catch::Approx(1.0).margin(1e-10));
  }
}

TEST_CASE("2x2 analytic eigenvalues", "[linalg]") {
  Matrix a(2, 2);
  a(0, 0) = 2.0;
  a(0, 1) = 1.0;
  a(1, 0) = 1.0;
  a(1, 1) = 2.0;
  auto eig = fedmil::sym_eig(a);
  REQUIRE(eig.values[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(eig.values[1] == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("random Gram matrix reconstructs within 1e-8", "[linalg]") {
  fedmil::Rng rng(17);
  const std::size_t n = 20;
  Matrix a = random_gram(n, rng);
  auto eig = fedmil::sym_eig(a);

  // Orthonormality: V^T V = I within 1e-10.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += eig.vectors(k, i) * eig.vectors(k, j);
      REQUIRE(acc == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-10));
    }

  // A = V diag(w) V^T within 1e-8 relative Frobenius.
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        acc += eig.vectors(i, k) * eig.values[k] * eig.vectors(j, k);
      double diff = acc - a(i, j);
      num += diff * diff;
      den += a(i, j) * a(i, j);
    }
  REQUIRE(std::sqrt(num) <= 1e-8 * std::sqrt(den));

  // PSD input: eigenvalues non-negative up to round-off.
  REQUIRE(eig.values.front() >= -1e-9 * std::max(1.0, eig.values.back()));
}

TEST_CASE("non-symmetric input is rejected", "[linalg]") {
  Matrix a(2, 2);
  a(0, 1) = 1.0;
  a(1, 0) = 0.5;
  REQUIRE_THROWS_AS(fedmil::sym_eig(a), fedmil::Error);
}

TEST_CASE("eigenvalues sum to trace and multiply to determinant", "[linalg]") {
  fedmil::Rng rng(23);
  Matrix a = random_gram(6, rng);
  auto eig = fedmil::sym_eig(a);
  double trace = 0.0;
  for (std::size_t i = 0; i < 6; ++i) trace += a(i, i);
  double sum = 0.0, prod = 1.0;
  for (double v : eig.values) {
    sum += v;
    prod *= v;
  }
  REQUIRE(sum == Catch::Approx(trace).epsilon(1e-10));
  REQUIRE(prod == Catch::Approx(oracle::determinant(a)).epsilon(1e-6));
}
