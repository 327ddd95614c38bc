#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace mfg {

// Weighted particle cloud representing a probability measure with finite
// second moment. Immutable after construction; mean and second moment are
// precomputed so model callbacks can read them in O(1).
class EmpiricalMeasure {
 public:
  // points: one atom per row (n x d), weights: positive, summing to 1.
  EmpiricalMeasure(Eigen::MatrixXd points, Eigen::VectorXd weights);

  static EmpiricalMeasure uniform(Eigen::MatrixXd points);
  static EmpiricalMeasure dirac(const Eigen::VectorXd& x);

  int size() const { return static_cast<int>(points_.rows()); }
  int dim() const { return static_cast<int>(points_.cols()); }
  const Eigen::MatrixXd& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Eigen::VectorXd point(int i) const { return points_.row(i).transpose(); }
  double weight(int i) const { return weights_[i]; }

  const Eigen::VectorXd& mean() const { return mean_; }
  // integral of |x|^2
  double second_moment() const { return second_moment_; }

  EmpiricalMeasure translated(const Eigen::VectorXd& v) const;
  EmpiricalMeasure with_atom_shifted(int atom, const Eigen::VectorXd& delta) const;

  std::string to_csv() const;
  static EmpiricalMeasure from_csv(const std::string& body);
  nlohmann::json to_json() const;
  static EmpiricalMeasure from_json(const nlohmann::json& j);

 private:
  Eigen::MatrixXd points_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd mean_;
  double second_moment_ = 0.0;
};

// Sparse transport plan between two empirical measures.
struct CouplingEntry {
  int source = 0;
  int target = 0;
  double mass = 0.0;
};

struct Coupling {
  std::vector<CouplingEntry> entries;
  double cost = 0.0;  // optimal value of the transport objective (|x-y|^q)

  // marginal mass per source / target atom
  Eigen::VectorXd source_marginal(int n) const;
  Eigen::VectorXd target_marginal(int m) const;
};

// Exact W_q distance, q in {1, 2}. 1-D inputs use the quantile coupling;
// higher dimensions solve the bipartite transport problem exactly
// (successive shortest paths), capped at 512 atoms per side.
double wasserstein(int q, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

Coupling optimal_coupling(int q, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

// W2-optimal one-to-one assignment between two uniform clouds of equal
// size. entries[i].target gives the partner of atom i of mu.
Coupling optimal_pairing(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

// Maps each atom to the lower-left corner of its side-1/n cube, with cube
// indices clamped to [-n^2, n^2] per coordinate. Duplicate corners are
// merged and their weights summed.
EmpiricalMeasure quantize_cube(const EmpiricalMeasure& mu, int n);

// n i.i.d. draws from mu with uniform output weights.
EmpiricalMeasure resample(const EmpiricalMeasure& mu, int n, std::uint64_t seed);

// Order-independent hash of the exact atom bits; used as a cache key.
std::uint64_t measure_bit_hash(const EmpiricalMeasure& mu);

}  // namespace mfg
