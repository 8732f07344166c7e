#include "kfcov/cone.hpp"
#include "kfcov/rng.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace kfcov;

namespace {

// Independent eigenvalue oracle: characteristic polynomial coefficients via
// the Faddeev-LeVerrier recurrence, roots by bisection between sign changes.
std::vector<double> char_poly_coefficients(const Matrix& a) {
  const Eigen::Index n = a.rows();
  std::vector<double> c(static_cast<std::size_t>(n) + 1, 0.0);
  c[0] = 1.0;  // highest degree first
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index k = 1; k <= n; ++k) {
    m = a * m + c[static_cast<std::size_t>(k) - 1] * Matrix::Identity(n, n);
    c[static_cast<std::size_t>(k)] = -(a * m).trace() / static_cast<double>(k);
  }
  return c;
}

double poly_eval(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (double ci : c) v = v * x + ci;
  return v;
}

std::vector<double> poly_roots_bisection(const std::vector<double>& c, double lo, double hi, int grid) {
  std::vector<double> roots;
  double prev_x = lo;
  double prev_v = poly_eval(c, lo);
  for (int i = 1; i <= grid; ++i) {
    const double x = lo + (hi - lo) * i / grid;
    const double v = poly_eval(c, x);
    if (prev_v == 0.0) roots.push_back(prev_x);
    else if (prev_v * v < 0.0) {
      double a = prev_x, b = x;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        if (poly_eval(c, a) * poly_eval(c, mid) <= 0.0) b = mid;
        else a = mid;
      }
      roots.push_back(0.5 * (a + b));
    }
    prev_x = x;
    prev_v = v;
  }
  std::sort(roots.begin(), roots.end(), std::greater<double>());
  return roots;
}

Matrix random_symmetric(Eigen::Index n, std::uint64_t seed) {
  SeededRng rng(seed);
  const Matrix g = rng.gaussian_matrix(n, n);
  return 0.5 * (g + g.transpose());
}

}  // namespace

TEST_SUITE("cone") {

TEST_CASE("covariance matrix validates symmetry and PSD") {
  CHECK_NOTHROW(CovarianceMatrix{Matrix::Identity(3, 3)});
  Matrix bad = Matrix::Identity(3, 3);
  bad(0, 1) = 0.5;  // asymmetric
  CHECK_THROWS_AS(CovarianceMatrix{bad}, contract_error);
  Matrix negdef = -Matrix::Identity(3, 3);
  CHECK_THROWS_AS(CovarianceMatrix{negdef}, contract_error);
  // Tiny negative eigenvalues within tolerance are accepted and symmetrized.
  Matrix near = Matrix::Identity(2, 2);
  near(0, 0) = -0.5e-10;
  near(1, 1) = 1.0;
  CHECK_NOTHROW(CovarianceMatrix{near});
}

TEST_CASE("sym_eig identity and diagonal") {
  const auto dec = sym_eig(CovarianceMatrix(Matrix::Identity(4, 4)));
  for (int i = 0; i < 4; ++i) CHECK(dec.eigenvalues(i) == doctest::Approx(1.0));

  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 3.0, 1.0, 2.0;
  const auto dd = sym_eig(CovarianceMatrix(d));
  CHECK(dd.eigenvalues(0) == doctest::Approx(3.0));
  CHECK(dd.eigenvalues(1) == doctest::Approx(2.0));
  CHECK(dd.eigenvalues(2) == doctest::Approx(1.0));
}

TEST_CASE("sym_eig reconstruction and orthonormality invariants") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix a = random_symmetric(6, seed);
    const auto dec = sym_eig(a);
    CHECK((dec.reconstruct() - a).norm() <= 1e-10 * std::max(a.norm(), 1.0));
    CHECK((dec.eigenvectors.transpose() * dec.eigenvectors - Matrix::Identity(6, 6)).norm() <= 1e-10);
    for (Eigen::Index i = 0; i + 1 < 6; ++i) CHECK(dec.eigenvalues(i) >= dec.eigenvalues(i + 1));
  }
}

TEST_CASE("sym_eig matches characteristic polynomial roots") {
  const Matrix a = random_symmetric(5, 77);
  const auto dec = sym_eig(a);
  // Gershgorin bound on the spectrum.
  double radius = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i) radius = std::max(radius, a.row(i).cwiseAbs().sum());
  const auto coeffs = char_poly_coefficients(a);
  const auto roots = poly_roots_bisection(coeffs, -radius - 1.0, radius + 1.0, 20000);
  REQUIRE(roots.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(dec.eigenvalues(i) == doctest::Approx(roots[static_cast<std::size_t>(i)]).epsilon(1e-8));
}

TEST_CASE("sym_eig rejects asymmetric input") {
  SeededRng rng(3);
  CHECK_THROWS_AS(sym_eig(rng.gaussian_matrix(4, 4)), contract_error);
}

TEST_CASE("loewner order basics") {
  const CovarianceMatrix eye(Matrix::Identity(3, 3));
  const CovarianceMatrix two(2.0 * Matrix::Identity(3, 3));
  CHECK(loewner_leq(eye, two, 0.0));
  CHECK_FALSE(loewner_leq(two, eye, 0.0));

  Matrix a = Matrix::Zero(2, 2), b = Matrix::Zero(2, 2);
  a(0, 0) = 1.0;
  b(1, 1) = 1.0;
  CHECK_FALSE(loewner_leq(CovarianceMatrix(a), CovarianceMatrix(b), 0.0));
  CHECK_FALSE(loewner_leq(CovarianceMatrix(b), CovarianceMatrix(a), 0.0));

  CHECK_THROWS_AS(loewner_leq(eye, CovarianceMatrix(Matrix::Identity(2, 2)), 0.0), contract_error);
}

TEST_CASE("numerical rank counts strictly above threshold") {
  CHECK(numerical_rank(CovarianceMatrix(Matrix::Identity(5, 5)), 1e-10) == 5);
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1.0, 1e-12, 0.0;
  CHECK(numerical_rank(CovarianceMatrix(d), 1e-10) == 1);
  SeededRng rng(9);
  Vector u = rng.gaussian_vector(4);
  u.normalize();
  CHECK(numerical_rank(CovarianceMatrix::from_psd_construction(u * u.transpose()), 1e-10) == 1);
  CHECK_THROWS_AS(numerical_rank(CovarianceMatrix(Matrix::Identity(2, 2)), 0.0), contract_error);
}

TEST_CASE("random_spd rank and invariants") {
  const Matrix x = random_spd_factor(1, 1, 5);
  const CovarianceMatrix scalar = random_spd(1, 1, 5);
  CHECK(scalar(0, 0) == doctest::Approx(x(0, 0) * x(0, 0)));

  const CovarianceMatrix p = random_spd(6, 3, 123);
  CHECK(numerical_rank(p, 1e-10) == 3);
  CHECK_NOTHROW(CovarianceMatrix(p.matrix()));  // passes type invariants
  CHECK_THROWS_AS(random_spd(4, 5, 1), contract_error);
  CHECK_THROWS_AS(random_spd(4, 0, 1), contract_error);
}

TEST_CASE("shift lemma property") {
  SeededRng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.raw() % 5);
    const int m = 2 + static_cast<int>(rng.raw() % 5);
    const Matrix a = rng.gaussian_matrix(n, m);
    const Matrix b = rng.gaussian_matrix(m, n);
    const Matrix iba = Matrix::Identity(m, m) + b * a;
    const Matrix iab = Matrix::Identity(n, n) + a * b;
    Eigen::FullPivLU<Matrix> lu_ba(iba), lu_ab(iab);
    if (!lu_ba.isInvertible() || !lu_ab.isInvertible()) continue;
    const Matrix lhs = a * lu_ba.inverse();
    const Matrix rhs = lu_ab.inverse() * a;
    CHECK((lhs - rhs).norm() <= 1e-10 * std::max(a.norm(), 1.0));
  }
}

TEST_CASE("inverse reverses the order of SPD comparisons") {
  SeededRng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix ga = rng.gaussian_matrix(4, 4);
    const Matrix gb = rng.gaussian_matrix(4, 4);
    const Matrix a = ga * ga.transpose() + 0.1 * Matrix::Identity(4, 4);
    const Matrix b = a + gb * gb.transpose();
    REQUIRE(loewner_margin(a, b) >= -1e-12);
    CHECK(loewner_margin(b.inverse(), a.inverse()) >= -1e-10);
  }
}

TEST_CASE("spectral envelope sigma_min I <= A <= sigma_max I") {
  SeededRng rng(57);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix g = rng.gaussian_matrix(5, 3);
    const Matrix a = g * g.transpose();
    const auto dec = sym_eig(CovarianceMatrix::from_psd_construction(a));
    const double hi = dec.eigenvalues(0);
    const double lo = dec.eigenvalues(4);
    CHECK(loewner_margin(lo * Matrix::Identity(5, 5), a) >= -1e-10 * std::max(hi, 1.0));
    CHECK(loewner_margin(a, hi * Matrix::Identity(5, 5)) >= -1e-10 * std::max(hi, 1.0));
  }
}

TEST_CASE("subspace quadratic bound forces small eigenvalues") {
  SeededRng rng(91);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 5;
    const int s = 1 + static_cast<int>(rng.raw() % 3);
    const Matrix g = rng.gaussian_matrix(n, n);
    const Matrix a = g * g.transpose();
    // Orthonormal basis of a random s-dimensional subspace.
    Eigen::HouseholderQR<Matrix> qr(rng.gaussian_matrix(n, s));
    const Matrix w = qr.householderQ() * Matrix::Identity(n, s);
    const Matrix projected = w.transpose() * a * w;
    const double alpha = sym_eig(CovarianceMatrix::from_psd_construction(projected)).eigenvalues(0);
    const auto dec = sym_eig(CovarianceMatrix::from_psd_construction(a));
    int small = 0;
    for (int i = 0; i < n; ++i)
      if (dec.eigenvalues(i) <= alpha + 1e-10) ++small;
    CHECK(small >= s);
  }
}

}  // TEST_SUITE
