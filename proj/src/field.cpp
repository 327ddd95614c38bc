#include "mfg/field.hpp"

namespace mfg {

GridInterpolant spatial_derivative(const GridInterpolant& field) {
  const GridSpec& spec = field.spec();
  const int d = spec.dim();
  const int ch = field.channels();
  GridInterpolant out(spec, field.time_nodes(), ch * d);

  auto stride = [&](int axis) {
    int s = 1;
    for (int c = axis + 1; c < d; ++c) s *= spec.pts;
    return s;
  };

  for (int k = 0; k < field.time_nodes(); ++k) {
    const Eigen::MatrixXd& v = field.node_values(k);
    Eigen::MatrixXd& dv = out.node_values(k);
    for (int flat = 0; flat < spec.total(); ++flat) {
      for (int axis = 0; axis < d; ++axis) {
        int s = stride(axis);
        int idx = (flat / s) % spec.pts;
        int up = flat, dn = flat;
        double denom;
        if (idx == 0) {
          up = flat + s;
          denom = spec.spacing(axis);
        } else if (idx == spec.pts - 1) {
          dn = flat - s;
          denom = spec.spacing(axis);
        } else {
          up = flat + s;
          dn = flat - s;
          denom = 2.0 * spec.spacing(axis);
        }
        for (int r = 0; r < ch; ++r)
          dv(flat, r * d + axis) = (v(up, r) - v(dn, r)) / denom;
      }
    }
  }
  return out;
}

}  // namespace mfg
