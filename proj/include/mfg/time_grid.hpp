#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mfg/rng.hpp"

namespace mfg {

struct TimeGrid {
  double t0 = 0.0;
  double t1 = 1.0;
  int steps = 1;

  TimeGrid() = default;
  TimeGrid(double start, double end, int n) : t0(start), t1(end), steps(n) {
    if (!(t0 < t1) || steps < 1) throw std::invalid_argument("TimeGrid: need t0 < t1 and steps >= 1");
  }
  double dt() const { return (t1 - t0) / steps; }
  double node(int k) const { return t0 + (t1 - t0) * k / steps; }
  int nodes() const { return steps + 1; }
};

// Common-noise increments for M scenarios, steps x dim each, ~N(0, dt I).
// With `antithetic`, scenarios come in (+/-) pairs; pair p draws from its own
// derived seed, so prefixes of the bundle agree across different M.
class NoiseBundle {
 public:
  NoiseBundle(int scenarios, int steps, int dim, double dt, std::uint64_t seed,
              bool antithetic = false)
      : seed_(seed), dt_(dt), antithetic_(antithetic) {
    if (scenarios < 1 || steps < 1 || dim < 1)
      throw std::invalid_argument("NoiseBundle: bad shape");
    inc_.reserve(scenarios);
    double s = std::sqrt(dt);
    for (int m = 0; m < scenarios; ++m) {
      if (antithetic_ && (m % 2 == 1)) {
        inc_.push_back(-inc_.back());
        continue;
      }
      Rng rng(derive_seed(seed, 0xB0B0, static_cast<std::uint64_t>(m)));
      Eigen::MatrixXd e(steps, dim);
      for (int k = 0; k < steps; ++k)
        for (int c = 0; c < dim; ++c) e(k, c) = s * rng.normal();
      inc_.push_back(std::move(e));
    }
  }

  int scenarios() const { return static_cast<int>(inc_.size()); }
  int steps() const { return static_cast<int>(inc_[0].rows()); }
  int dim() const { return static_cast<int>(inc_[0].cols()); }
  double dt() const { return dt_; }
  bool antithetic() const { return antithetic_; }
  std::uint64_t seed() const { return seed_; }
  const Eigen::MatrixXd& increments(int m) const { return inc_[m]; }

 private:
  std::uint64_t seed_;
  double dt_;
  bool antithetic_;
  std::vector<Eigen::MatrixXd> inc_;
};

}  // namespace mfg
