#pragma once

#include "alime/explain.hpp"
#include "alime/rng.hpp"

#include <memory>
#include <string>
#include <vector>

namespace alime::testing {

struct SyntheticProblem {
  Matrix raw;
  Matrix scaled;
  ModelContext context;
};

// k numeric features; the black box is a fixed logistic function of the
// scaled inputs, so its class boundary is known exactly.
inline SyntheticProblem synthetic_problem(std::size_t k, std::size_t rows = 300, std::uint64_t seed = 1) {
  Rng rng(seed);
  SyntheticProblem p;
  p.raw = Matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < p.raw.size(); ++i) p.raw.data()[i] = 2.0 * rng.normal() + 1.0;
  std::vector<EncodedColumn> map;
  for (std::size_t c = 0; c < k; ++c) map.push_back({c, std::nullopt});
  p.context.stats = compute_training_stats(p.raw, map);
  p.context.scaler = fit_scaler(p.raw);
  p.scaled = apply_scaler(p.context.scaler, p.raw);
  Vector direction = Vector::Zero(static_cast<Eigen::Index>(k));
  for (Eigen::Index c = 0; c < direction.size(); ++c) direction[c] = (c % 2 == 0 ? 1.0 : -0.5) / (1.0 + c);
  p.context.black_box = [direction](const Matrix& x) -> Vector {
    Vector z = x * direction;
    return z.unaryExpr([](double v) { return sigmoid(3.0 * v); });
  };
  p.context.autoencoder = std::make_shared<const DenoisingAutoencoder>(
      DenoisingAutoencoder::untrained(k, std::min<std::size_t>(k, 2), 0.1, seed));
  for (std::size_t c = 0; c < k; ++c) p.context.feature_names.push_back("f" + std::to_string(c));
  return p;
}

inline ExplainerConfig small_config(Method method, std::size_t m = 400, std::size_t n = 100, std::uint64_t seed = 7) {
  ExplainerConfig cfg;
  cfg.method = method;
  cfg.perturbation.m = m;
  cfg.perturbation.n = n;
  cfg.perturbation.seed = seed;
  return cfg;
}

}  // namespace alime::testing
