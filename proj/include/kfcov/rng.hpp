#ifndef KFCOV_RNG_HPP
#define KFCOV_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "kfcov/types.hpp"

namespace kfcov {

// Deterministic random source: mt19937_64 driving an explicit Box-Muller
// transform. Avoids std::normal_distribution, whose draw sequence is
// implementation-defined; identical seeds give identical streams on every
// platform. The generator identity string is recorded in run manifests.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  static const char* identity() { return "mt19937_64+box-muller"; }

  // Uniform in [0, 1).
  double uniform() {
    return (engine_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix g(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) g(i, j) = normal();
    return g;
  }

  Vector gaussian_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace kfcov

#endif  // KFCOV_RNG_HPP
