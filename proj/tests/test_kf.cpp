#include "kfcov/kf.hpp"
#include "kfcov/cone.hpp"
#include "kfcov/rng.hpp"

#include "doctest.h"

#include <Eigen/QR>

#include <cmath>

using namespace kfcov;

namespace {

ModelSuiteOptions mild_gain() {
  ModelSuiteOptions opts;
  opts.propagator_gain = 1.1;
  return opts;
}

// Explicit-sum aggregates, evaluated with dense inverses; the oracle for the
// recursive accumulation.
struct ExplicitAggregates {
  Matrix resolvent;
  Matrix gamma;
  Matrix theta;
};

ExplicitAggregates explicit_aggregates(const std::vector<ModelStep>& steps, int k) {
  const Eigen::Index n = steps.front().state_dim();
  // resolvents M_{l:0} for l = 0..k
  std::vector<Matrix> res(static_cast<std::size_t>(k) + 1);
  res[0] = Matrix::Identity(n, n);
  for (int l = 0; l < k; ++l) res[static_cast<std::size_t>(l) + 1] = steps[static_cast<std::size_t>(l)].propagator * res[static_cast<std::size_t>(l)];
  ExplicitAggregates agg;
  agg.resolvent = res[static_cast<std::size_t>(k)];
  agg.gamma = Matrix::Zero(n, n);
  agg.theta = Matrix::Zero(n, n);
  for (int l = 0; l < k; ++l) {
    const Matrix omega = obs_precision(steps[static_cast<std::size_t>(l)].observation,
                                       steps[static_cast<std::size_t>(l)].obs_covariance)
                             .matrix();
    // M_{k:l} = M_{k:0} M_{l:0}^{-1}
    const Matrix m_k_l = agg.resolvent * res[static_cast<std::size_t>(l)].inverse();
    const Matrix m_inv = m_k_l.inverse();
    agg.gamma += m_inv.transpose() * omega * m_inv;
    agg.theta += res[static_cast<std::size_t>(l)].transpose() * omega * res[static_cast<std::size_t>(l)];
  }
  return agg;
}

double rel_fro(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

}  // namespace

TEST_SUITE("kf") {

TEST_CASE("obs_precision basics and oracle") {
  Matrix h = Matrix::Zero(1, 3);
  h(0, 0) = 1.0;
  const double r = 0.25;
  const auto omega = obs_precision(h, CovarianceMatrix(r * Matrix::Identity(1, 1)));
  CHECK(omega(0, 0) == doctest::Approx(4.0));
  CHECK(omega.matrix().bottomRightCorner(2, 2).norm() == doctest::Approx(0.0));

  const auto eye = obs_precision(Matrix::Identity(3, 3), CovarianceMatrix(Matrix::Identity(3, 3)));
  CHECK((eye.matrix() - Matrix::Identity(3, 3)).norm() <= 1e-14);

  SeededRng rng(5);
  const Matrix hr = rng.gaussian_matrix(4, 6);
  const Matrix b = rng.gaussian_matrix(4, 4);
  const CovarianceMatrix rr = CovarianceMatrix::from_psd_construction(b * b.transpose() +
                                                                      0.1 * Matrix::Identity(4, 4));
  const Matrix direct = hr.transpose() * rr.matrix().inverse() * hr;
  CHECK(rel_fro(obs_precision(hr, rr).matrix(), direct) <= 1e-10);

  CHECK_THROWS_AS(obs_precision(hr, CovarianceMatrix::from_psd_construction(Matrix::Zero(4, 4))),
                  contract_error);
}

TEST_CASE("analysis_update trivial cases") {
  const CovarianceMatrix p(Matrix::Identity(3, 3));
  const auto same = analysis_update(p, CovarianceMatrix::zero(3));
  CHECK((same.matrix() - p.matrix()).norm() == 0.0);

  const CovarianceMatrix scalar_p(Matrix::Identity(1, 1));
  const CovarianceMatrix scalar_omega(Matrix::Identity(1, 1));
  CHECK(analysis_update(scalar_p, scalar_omega)(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("analysis_update equals the symmetric rank-factored form") {
  SeededRng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 6, r = 3;
    const Matrix x = rng.gaussian_matrix(n, r);
    const CovarianceMatrix p = CovarianceMatrix::from_psd_construction(x * x.transpose());
    const Matrix go = rng.gaussian_matrix(n, 2);
    const CovarianceMatrix omega = CovarianceMatrix::from_psd_construction(go * go.transpose());
    const Matrix inner = (Matrix::Identity(r, r) + x.transpose() * omega.matrix() * x).inverse();
    const Matrix expected = x * inner * x.transpose();
    const auto pa = analysis_update(p, omega);
    CHECK(rel_fro(pa.matrix(), expected) <= 1e-10);
    CHECK(loewner_leq(pa, p, 1e-10));
  }
}

TEST_CASE("analysis_update converges linearly in the regularization") {
  SeededRng rng(23);
  const Matrix x = rng.gaussian_matrix(5, 2);
  const CovarianceMatrix p = CovarianceMatrix::from_psd_construction(x * x.transpose());
  const Matrix go = rng.gaussian_matrix(5, 5);
  const CovarianceMatrix omega = CovarianceMatrix::from_psd_construction(go * go.transpose());
  const Matrix base = analysis_update(p, omega).matrix();
  for (double eps : {1e-6, 1e-9}) {
    const CovarianceMatrix reg =
        CovarianceMatrix::from_psd_construction(p.matrix() + eps * Matrix::Identity(5, 5));
    const double err = (analysis_update(reg, omega).matrix() - base).norm();
    CHECK(err <= 50.0 * eps);
  }
}

TEST_CASE("forecast_step basics") {
  const CovarianceMatrix pa(Matrix::Identity(3, 3));
  const auto same = forecast_step(pa, Matrix::Identity(3, 3), CovarianceMatrix::zero(3));
  CHECK((same.matrix() - pa.matrix()).norm() == 0.0);
  const auto scaled = forecast_step(pa, 2.0 * Matrix::Identity(3, 3), CovarianceMatrix::zero(3));
  CHECK((scaled.matrix() - 4.0 * Matrix::Identity(3, 3)).norm() == 0.0);
  const auto noise = forecast_step(CovarianceMatrix::zero(3), Matrix::Identity(3, 3),
                                   CovarianceMatrix(Matrix::Identity(3, 3)));
  CHECK((noise.matrix() - Matrix::Identity(3, 3)).norm() == 0.0);
}

TEST_CASE("riccati_step trivial cases") {
  SeededRng rng(3);
  const Matrix m = rng.gaussian_matrix(4, 4);
  ModelStep free;
  free.propagator = m;
  free.observation = Matrix::Zero(1, 4);
  free.obs_covariance = CovarianceMatrix(Matrix::Identity(1, 1));
  free.model_noise = CovarianceMatrix::zero(4);
  const CovarianceMatrix p(Matrix::Identity(4, 4));
  CHECK(rel_fro(riccati_step(p, free).matrix(), m * m.transpose()) <= 1e-12);

  ModelStep scalar;
  scalar.propagator = Matrix::Identity(1, 1);
  scalar.observation = Matrix::Identity(1, 1);
  scalar.obs_covariance = CovarianceMatrix(Matrix::Identity(1, 1));
  scalar.model_noise = CovarianceMatrix::zero(1);
  CHECK(riccati_step(CovarianceMatrix(Matrix::Identity(1, 1)), scalar)(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("riccati agrees with the information filter on full-rank covariances") {
  // Per-step oracle on fresh well-conditioned covariances; the inverse loses
  // meaning once the filter has collapsed the stable directions.
  const auto steps = gen_model_sequence(ModelKind::kNonautonomousRandom, 6, 3, 41, 10,
                                        ObsMode::kDenseRandom, mild_gain());
  for (int trial = 0; trial < 10; ++trial) {
    const CovarianceMatrix p = CovarianceMatrix::from_psd_construction(
        random_spd(6, 6, 100 + static_cast<std::uint64_t>(trial)).matrix() + Matrix::Identity(6, 6));
    const auto& step = steps[static_cast<std::size_t>(trial)];
    const auto omega = obs_precision(step.observation, step.obs_covariance);
    const CovarianceMatrix next = riccati_step(p, step);
    const CovarianceMatrix pinv = CovarianceMatrix::from_psd_construction(p.matrix().inverse());
    const CovarianceMatrix next_inv = information_step(pinv, step.propagator, omega);
    CHECK(rel_fro(next.matrix().inverse(), next_inv.matrix()) <= 1e-8);
  }
  // Chained over a short horizon while the covariance stays conditioned.
  CovarianceMatrix p = CovarianceMatrix::from_psd_construction(
      random_spd(6, 6, 7).matrix() + Matrix::Identity(6, 6));
  CovarianceMatrix pinv = CovarianceMatrix::from_psd_construction(p.matrix().inverse());
  for (int k = 0; k < 5; ++k) {
    const auto& step = steps[static_cast<std::size_t>(k)];
    const auto omega = obs_precision(step.observation, step.obs_covariance);
    p = riccati_step(p, step);
    pinv = information_step(pinv, step.propagator, omega);
    CHECK(rel_fro(p.matrix().inverse(), pinv.matrix()) <= 1e-8);
  }
}

TEST_CASE("information_step basics") {
  const CovarianceMatrix pinv(Matrix::Identity(3, 3));
  const auto same = information_step(pinv, Matrix::Identity(3, 3), CovarianceMatrix::zero(3));
  CHECK((same.matrix() - pinv.matrix()).norm() == 0.0);
  const auto scalar = information_step(CovarianceMatrix(Matrix::Identity(1, 1)),
                                       2.0 * Matrix::Identity(1, 1),
                                       CovarianceMatrix(3.0 * Matrix::Identity(1, 1)));
  CHECK(scalar(0, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(information_step(pinv, Matrix::Zero(3, 3), CovarianceMatrix::zero(3)), contract_error);
}

TEST_CASE("aggregates: identities and explicit-sum oracle") {
  // Identity dynamics: Gamma_1 = Omega_0 and Theta_k sums the precisions.
  ModelStep id;
  id.propagator = Matrix::Identity(3, 3);
  id.observation = Matrix::Identity(3, 3);
  id.obs_covariance = CovarianceMatrix(2.0 * Matrix::Identity(3, 3));
  id.model_noise = CovarianceMatrix::zero(3);
  Aggregates agg = Aggregates::initial(3);
  agg = accumulate(agg, id);
  CHECK(rel_fro(agg.information, 0.5 * Matrix::Identity(3, 3)) <= 1e-14);
  agg = accumulate(agg, id);
  agg = accumulate(agg, id);
  CHECK(rel_fro(agg.pulled_back_information, 1.5 * Matrix::Identity(3, 3)) <= 1e-14);
  CHECK(agg.step_index == 3);

  const auto steps = gen_model_sequence(ModelKind::kNonautonomousRandom, 5, 2, 19, 12,
                                        ObsMode::kDenseRandom, mild_gain());
  Aggregates run = Aggregates::initial(5);
  for (int k = 0; k < 12; ++k) {
    run = accumulate(run, steps[static_cast<std::size_t>(k)]);
    const auto oracle = explicit_aggregates(steps, k + 1);
    CHECK(rel_fro(run.resolvent, oracle.resolvent) <= 1e-10);
    CHECK(rel_fro(run.information, oracle.gamma) <= 1e-8);
    CHECK(rel_fro(run.pulled_back_information, oracle.theta) <= 1e-8);
    // Theta_k = M_{k:0}^T Gamma_k M_{k:0}
    CHECK(rel_fro(run.pulled_back_information,
                  run.resolvent.transpose() * run.information * run.resolvent) <= 1e-8);
  }
}

TEST_CASE("closed form matches the iterated recursion on degenerate starts") {
  const auto steps = gen_model_sequence(ModelKind::kNonautonomousRandom, 10, 4, 4242, 50,
                                        ObsMode::kDenseRandom, mild_gain());
  const CovarianceMatrix p0 = random_spd(10, 4, 3);
  const double floor = p0.matrix().norm();

  // k = 0 is the seed itself.
  Aggregates agg = Aggregates::initial(10);
  CHECK(rel_fro(closed_form_covariance(p0, agg).covariance.matrix(), p0.matrix()) <= 1e-14);

  CovarianceMatrix p = p0;
  for (int k = 0; k < 50; ++k) {
    p = riccati_step(p, steps[static_cast<std::size_t>(k)]);
    agg = accumulate(agg, steps[static_cast<std::size_t>(k)]);
    const auto closed = closed_form_covariance(p0, agg);
    CHECK(relative_frobenius_distance(closed.covariance.matrix(), p.matrix(), floor) <= 1e-8);
    // The information-matrix form shares the formula but inverts through
    // Gamma_k, which degrades quickly; compare it while it is conditioned.
    const auto closed_gamma = closed_form_covariance_gamma(p0, agg);
    if (closed_gamma.condition < 1e8)
      CHECK(relative_frobenius_distance(closed_gamma.covariance.matrix(), p.matrix(), floor) <= 1e-8);
  }
}

TEST_CASE("closed form without observations reduces to the free forecast") {
  SeededRng rng(8);
  const Matrix m1 = rng.gaussian_matrix(4, 4);
  const Matrix m2 = rng.gaussian_matrix(4, 4);
  ModelStep s1;
  s1.propagator = m1;
  s1.observation = Matrix::Zero(2, 4);
  s1.obs_covariance = CovarianceMatrix(Matrix::Identity(2, 2));
  s1.model_noise = CovarianceMatrix::zero(4);
  ModelStep s2 = s1;
  s2.propagator = m2;
  Aggregates agg = Aggregates::initial(4);
  agg = accumulate(agg, s1);
  agg = accumulate(agg, s2);
  const CovarianceMatrix p0 = random_spd(4, 2, 5);
  const Matrix expected = m2 * m1 * p0.matrix() * m1.transpose() * m2.transpose();
  CHECK(rel_fro(closed_form_covariance(p0, agg).covariance.matrix(), expected) <= 1e-10);
}

TEST_CASE("perfect-model run: monotone bound, observability bound, rank and column space") {
  const int n = 6, k_max = 25;
  const auto steps = gen_model_sequence(ModelKind::kNonautonomousRandom, n, 3, 321, k_max,
                                        ObsMode::kDenseRandom, mild_gain());
  const CovarianceMatrix p0 = random_spd(n, 3, 11);
  CovarianceMatrix p = p0;
  Aggregates agg = Aggregates::initial(n);
  const int rank0 = numerical_rank(p0, 1e-10);
  for (int k = 0; k < k_max; ++k) {
    p = riccati_step(p, steps[static_cast<std::size_t>(k)]);
    agg = accumulate(agg, steps[static_cast<std::size_t>(k)]);

    const Matrix free = agg.resolvent * p0.matrix() * agg.resolvent.transpose();
    const double scale = std::max(1.0, free.norm());
    CHECK(loewner_margin(p.matrix(), free) >= -1e-8 * scale);

    Eigen::SelfAdjointEigenSolver<Matrix> gs(agg.information, Eigen::EigenvaluesOnly);
    if (gs.eigenvalues().minCoeff() > 1e-10 &&
        gs.eigenvalues().maxCoeff() / gs.eigenvalues().minCoeff() < 1e10) {
      // P <= Gamma^{-1} in the congruent form L^T P L <= I.
      Eigen::LLT<Matrix> llt(agg.information);
      REQUIRE(llt.info() == Eigen::Success);
      const Matrix l = llt.matrixL();
      CHECK(loewner_margin(l.transpose() * p.matrix() * l, Matrix::Identity(n, n)) >= -1e-8);
    }

    CHECK(numerical_rank(p, 1e-10) == rank0);

    // Column space of P_k equals M_{k:0} Im(P_0): principal angles ~ 0.
    Eigen::HouseholderQR<Matrix> qa(p.matrix());
    const Matrix ua = qa.householderQ() * Matrix::Identity(n, rank0);
    Eigen::HouseholderQR<Matrix> qb(agg.resolvent * random_spd_factor(n, 3, 11));
    const Matrix ub = qb.householderQ() * Matrix::Identity(n, rank0);
    Eigen::JacobiSVD<Matrix> svd(ua.transpose() * ub);
    CHECK(std::acos(std::min(1.0, svd.singularValues().minCoeff())) <= 1e-6);
  }
}

TEST_CASE("noisy bound: Q <= P <= free forecast + controllability") {
  const int n = 5;
  auto steps = gen_model_sequence(ModelKind::kNonautonomousRandom, n, 2, 77, 15, ObsMode::kDenseRandom,
                                  mild_gain());
  SeededRng rng(55);
  for (auto& step : steps) {
    const Matrix gq = rng.gaussian_matrix(n, n);
    step.model_noise = CovarianceMatrix::from_psd_construction(0.01 * gq * gq.transpose());
  }
  const CovarianceMatrix p0 = random_spd(n, n, 2);
  CovarianceMatrix p = p0;
  Aggregates agg = Aggregates::initial(n);
  for (int k = 0; k < 15; ++k) {
    p = riccati_step(p, steps[static_cast<std::size_t>(k)]);
    agg = accumulate(agg, steps[static_cast<std::size_t>(k)]);
    const Matrix upper =
        agg.resolvent * p0.matrix() * agg.resolvent.transpose() + agg.controllability;
    CHECK(loewner_margin(p.matrix(), upper) >= -1e-8 * std::max(1.0, upper.norm()));
    CHECK(loewner_margin(steps[static_cast<std::size_t>(k)].model_noise.matrix(), p.matrix()) >=
          -1e-8 * std::max(1.0, p.matrix().norm()));
  }
}

TEST_CASE("factor-carried filter equals the dense recursion") {
  const auto steps = gen_model_sequence(ModelKind::kNonautonomousRandom, 7, 3, 1001, 40,
                                        ObsMode::kDenseRandom, mild_gain());
  const Matrix x0 = random_spd_factor(7, 4, 6);
  FilterState state(x0);
  CovarianceMatrix p = CovarianceMatrix::from_psd_construction(x0 * x0.transpose());
  for (const auto& step : steps) {
    const auto omega = obs_precision(step.observation, step.obs_covariance);
    const Matrix xa = state.advance(step);
    const Matrix pa_expected = analysis_update(p, omega).matrix();
    CHECK(rel_fro(xa * xa.transpose(), pa_expected) <= 1e-9);
    p = riccati_step(p, step);
    CHECK(rel_fro(state.covariance(), p.matrix()) <= 1e-9);
  }
  const Vector eig = state.covariance_eigenvalues();
  CHECK(eig.size() == 7);
  for (int i = 0; i + 1 < 7; ++i) CHECK(eig(i) >= eig(i + 1));
}

}  // TEST_SUITE
