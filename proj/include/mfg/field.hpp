#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace mfg {

// Regular grid over a box, d in {1, 2}. Nodes are indexed flat, last axis fastest.
struct GridSpec {
  Eigen::VectorXd lo, hi;
  int pts = 65;

  GridSpec() = default;
  GridSpec(Eigen::VectorXd low, Eigen::VectorXd high, int points)
      : lo(std::move(low)), hi(std::move(high)), pts(points) {
    if (lo.size() != hi.size() || lo.size() < 1 || lo.size() > 2)
      throw std::invalid_argument("GridSpec: spatial grids support d in {1, 2}");
    if (pts < 2 || ((hi - lo).array() <= 0).any()) throw std::invalid_argument("GridSpec: bad box");
  }
  static GridSpec cube(int dim, double lo_v, double hi_v, int points) {
    return GridSpec(Eigen::VectorXd::Constant(dim, lo_v), Eigen::VectorXd::Constant(dim, hi_v), points);
  }

  int dim() const { return static_cast<int>(lo.size()); }
  int total() const {
    int t = 1;
    for (int c = 0; c < dim(); ++c) t *= pts;
    return t;
  }
  double spacing(int axis) const { return (hi[axis] - lo[axis]) / (pts - 1); }
  Eigen::VectorXd node_coord(int flat) const {
    Eigen::VectorXd x(dim());
    for (int c = dim() - 1; c >= 0; --c) {
      x[c] = lo[c] + spacing(c) * (flat % pts);
      flat /= pts;
    }
    return x;
  }
  // true if x lies within `factor` times the box (about its center)
  bool within_guard(const Eigen::VectorXd& x, double factor) const {
    for (int c = 0; c < dim(); ++c) {
      double mid = 0.5 * (lo[c] + hi[c]), half = 0.5 * (hi[c] - lo[c]);
      if (std::abs(x[c] - mid) > factor * half) return false;
    }
    return true;
  }
};

// Values of a vector-valued function on the grid at each time node, with
// multilinear interpolation inside the box and linear extrapolation outside.
// One interpolant per time node, shared by all scenarios: the Monte-Carlo
// update averages over scenarios, so the stored iterate carries no scenario
// index. values[k] is (grid.total() x channels).
class GridInterpolant {
 public:
  GridInterpolant() = default;
  GridInterpolant(GridSpec spec, int time_nodes, int channels)
      : spec_(std::move(spec)), channels_(channels),
        values_(time_nodes, Eigen::MatrixXd::Zero(spec_.total(), channels)) {}

  const GridSpec& spec() const { return spec_; }
  int time_nodes() const { return static_cast<int>(values_.size()); }
  int channels() const { return channels_; }
  Eigen::MatrixXd& node_values(int k) { return values_[k]; }
  const Eigen::MatrixXd& node_values(int k) const { return values_[k]; }

  void eval(int k, const Eigen::VectorXd& x, Eigen::Ref<Eigen::VectorXd> out) const {
    const auto& v = values_[k];
    if (spec_.dim() == 1) {
      double u = (x[0] - spec_.lo[0]) / spec_.spacing(0);
      int cell = clamp_cell(u);
      double w = u - cell;
      out = ((1.0 - w) * v.row(cell) + w * v.row(cell + 1)).transpose();
    } else {
      double u0 = (x[0] - spec_.lo[0]) / spec_.spacing(0);
      double u1 = (x[1] - spec_.lo[1]) / spec_.spacing(1);
      int c0 = clamp_cell(u0), c1 = clamp_cell(u1);
      double w0 = u0 - c0, w1 = u1 - c1;
      int p = spec_.pts;
      out = ((1 - w0) * ((1 - w1) * v.row(c0 * p + c1) + w1 * v.row(c0 * p + c1 + 1)) +
             w0 * ((1 - w1) * v.row((c0 + 1) * p + c1) + w1 * v.row((c0 + 1) * p + c1 + 1)))
                .transpose();
    }
  }

  Eigen::VectorXd eval(int k, const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(channels_);
    eval(k, x, out);
    return out;
  }

  double max_abs_diff(const GridInterpolant& other) const {
    double d = 0.0;
    for (int k = 0; k < time_nodes(); ++k)
      d = std::max(d, (values_[k] - other.values_[k]).cwiseAbs().maxCoeff());
    return d;
  }

 private:
  int clamp_cell(double u) const {
    int cell = static_cast<int>(std::floor(u));
    if (cell < 0) cell = 0;
    if (cell > spec_.pts - 2) cell = spec_.pts - 2;
    return cell;
  }

  GridSpec spec_;
  int channels_ = 0;
  std::vector<Eigen::MatrixXd> values_;
};

using DecouplingField = GridInterpolant;  // channels = state dimension, values = dxV

// Spatial derivative view: central differences of the node values, giving a
// (d*d)-channel interpolant with entry (r*d + c) = d field_r / d x_c.
GridInterpolant spatial_derivative(const GridInterpolant& field);

inline Eigen::MatrixXd eval_derivative_matrix(const GridInterpolant& deriv_view, int k,
                                              const Eigen::VectorXd& x, int d) {
  Eigen::VectorXd flat = deriv_view.eval(k, x);
  return Eigen::Map<Eigen::MatrixXd>(flat.data(), d, d).transpose();
}

}  // namespace mfg
