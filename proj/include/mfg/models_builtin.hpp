#pragma once

#include <map>
#include <string>

#include "mfg/lq.hpp"
#include "mfg/model.hpp"

namespace mfg {

// H = 1/2 |p|^2, G = 1/2 |x|^2; the fully decoupled reference model.
ModelSpec make_free_flow(double T = 1.0, double beta = 0.0, int dim = 1);

// LQ with a smooth non-quadratic layer: the log-sum-exp bump enters G with a
// convex sign and H with a concave one, which keeps both displacement monotone.
ModelSpec make_lse_model(double T = 1.0, double beta = 0.0, double strength = 0.1);

// G = -1/2 |x|^2: displacement anti-monotone terminal data. The induced
// curvature ODE blows up at horizon distance 1, so long-horizon solves must fail.
ModelSpec make_antimonotone(double T = 2.0, double beta = 0.0);

// H = 1/2 |p|^2 + kappa p.mean - theta x.mean. For theta >= kappa^2/4 the
// first-order pairing stays nonnegative while the stronger second-order
// inequality fails for mean-zero directions; separates the two checkers.
ModelSpec make_crosscoupled(double kappa = 0.8, double theta = 0.25, double T = 1.0);

// Model with zero gradients everywhere (constant G, p-only H); solver sanity.
ModelSpec make_zero_data(double T = 1.0, double beta = 0.0, int dim = 1);

// Selects a bundled model by name: "lq", "free_flow", "lse", "antimonotone",
// "crosscoupled", "zero". LQ parameters apply to "lq" only.
ModelSpec make_model(const std::string& name, const LQParams& lq = LQParams{});

// names of the bundled displacement-monotone models exercised by the checks
std::vector<std::string> bundled_monotone_models();

}  // namespace mfg
