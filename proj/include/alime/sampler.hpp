#pragma once

// Perturbed neighborhoods: Gaussian pools drawn from training statistics,
// nearest-n selection in autoencoder latent space and kernel weights.

#include "alime/dataset.hpp"
#include "alime/error.hpp"
#include "alime/neuralnet.hpp"
#include "alime/rng.hpp"
#include "alime/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace alime {

/// literal_paper fills every one-hot column with 1 (mean 1, variance 0). The
/// result is not a valid one-hot encoding; explanations built from it are
/// flagged non-canonical.
enum class CategoricalMode { literal_paper, frequency };

inline std::string to_string(CategoricalMode m) {
  return m == CategoricalMode::literal_paper ? "literal-paper" : "frequency";
}

inline CategoricalMode categorical_mode_from_string(const std::string& s) {
  if (s == "literal-paper") return CategoricalMode::literal_paper;
  if (s == "frequency") return CategoricalMode::frequency;
  throw Error(ErrorCode::invalid_argument, "unknown categorical mode '" + s + "'");
}

struct CategoricalGroup {
  std::size_t feature = 0;
  std::vector<std::size_t> columns;
  std::vector<double> frequencies;  // sums to 1
};

/// Per-column statistics of the raw (unscaled) encoded training matrix.
struct TrainingStats {
  Vector mean;
  Vector variance;  // population convention
  std::vector<bool> one_hot;
  std::vector<CategoricalGroup> groups;

  std::size_t size() const { return static_cast<std::size_t>(mean.size()); }

  nlohmann::json to_json() const {
    nlohmann::json groups_json = nlohmann::json::array();
    for (const auto& g : groups) {
      groups_json.push_back({{"feature", g.feature}, {"columns", g.columns}, {"frequencies", g.frequencies}});
    }
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"variance", std::vector<double>(variance.data(), variance.data() + variance.size())},
            {"one_hot", std::vector<bool>(one_hot)},
            {"groups", groups_json}};
  }

  static TrainingStats from_json(const nlohmann::json& j) {
    TrainingStats s;
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto var = j.at("variance").get<std::vector<double>>();
    s.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.variance = Eigen::Map<const Vector>(var.data(), static_cast<Eigen::Index>(var.size()));
    s.one_hot = j.at("one_hot").get<std::vector<bool>>();
    for (const auto& gj : j.at("groups")) {
      s.groups.push_back({gj.at("feature").get<std::size_t>(), gj.at("columns").get<std::vector<std::size_t>>(),
                          gj.at("frequencies").get<std::vector<double>>()});
    }
    return s;
  }
};

inline TrainingStats compute_training_stats(const Matrix& raw_train, const std::vector<EncodedColumn>& column_map) {
  require(raw_train.rows() >= 1, ErrorCode::empty_matrix, "training statistics need at least one row");
  require(static_cast<std::size_t>(raw_train.cols()) == column_map.size(), ErrorCode::dimension_mismatch,
          "column map does not cover the matrix");
  TrainingStats s;
  s.mean = raw_train.colwise().mean().transpose();
  s.variance = ((raw_train.rowwise() - s.mean.transpose()).array().square().colwise().sum() /
                static_cast<double>(raw_train.rows()))
                   .transpose();
  s.one_hot.assign(column_map.size(), false);
  for (std::size_t c = 0; c < column_map.size(); ++c) {
    if (!column_map[c].category) continue;
    s.one_hot[c] = true;
    if (s.groups.empty() || s.groups.back().feature != column_map[c].feature) {
      s.groups.push_back({column_map[c].feature, {}, {}});
    }
    s.groups.back().columns.push_back(c);
    s.groups.back().frequencies.push_back(s.mean[static_cast<Eigen::Index>(c)]);
  }
  return s;
}

/// Draws m raw encoded rows: numeric columns i.i.d. Normal(mean, variance),
/// one-hot groups according to `mode`. Deterministic for a fixed seed.
inline Matrix gaussian_sample(const TrainingStats& stats, std::size_t m, CategoricalMode mode, std::uint64_t seed) {
  require(m >= 1, ErrorCode::invalid_argument, "sample count must be >= 1");
  for (Eigen::Index c = 0; c < stats.variance.size(); ++c) {
    require(stats.variance[c] >= 0.0, ErrorCode::invalid_variance,
            "column " + std::to_string(c) + " has negative variance");
  }
  const auto k = static_cast<Eigen::Index>(stats.size());
  Matrix out(static_cast<Eigen::Index>(m), k);
  std::vector<Eigen::Index> numeric;
  for (Eigen::Index c = 0; c < k; ++c) {
    if (!stats.one_hot[static_cast<std::size_t>(c)]) numeric.push_back(c);
  }
  const Vector sd = stats.variance.cwiseSqrt();
  Rng rng(seed);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c : numeric) out(r, c) = stats.mean[c] + sd[c] * rng.normal();
    for (const auto& g : stats.groups) {
      if (mode == CategoricalMode::literal_paper) {
        for (std::size_t col : g.columns) out(r, static_cast<Eigen::Index>(col)) = 1.0;
        continue;
      }
      const double u = rng.uniform();
      double cumulative = 0.0;
      std::size_t pick = g.columns.size() - 1;
      for (std::size_t i = 0; i < g.columns.size(); ++i) {
        cumulative += g.frequencies[i];
        if (u < cumulative) {
          pick = i;
          break;
        }
      }
      // Never land on a zero-frequency category through rounding of the tail.
      while (g.frequencies[pick] <= 0.0 && pick > 0) --pick;
      for (std::size_t i = 0; i < g.columns.size(); ++i) {
        out(r, static_cast<Eigen::Index>(g.columns[i])) = i == pick ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

struct NearestSelection {
  std::vector<std::size_t> indices;  // ascending distance, ties by index
  std::vector<double> distances;
};

inline std::vector<double> euclidean_distances(const Matrix& points, const RowVector& center) {
  require(points.cols() == center.size(), ErrorCode::dimension_mismatch,
          "points have " + std::to_string(points.cols()) + " columns, center has " + std::to_string(center.size()));
  std::vector<double> d(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    d[static_cast<std::size_t>(r)] = (points.row(r) - center).norm();
  }
  return d;
}

/// The n smallest of `distances`, ordered by (distance, index).
inline NearestSelection select_nearest_by_distance(const std::vector<double>& distances, std::size_t n) {
  require(n <= distances.size(), ErrorCode::invalid_argument,
          "cannot select " + std::to_string(n) + " of " + std::to_string(distances.size()) + " points");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto closer = [&](std::size_t a, std::size_t b) {
    return distances[a] < distances[b] || (distances[a] == distances[b] && a < b);
  };
  if (n < order.size()) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), closer);
    order.resize(n);
  }
  std::sort(order.begin(), order.end(), closer);
  NearestSelection out;
  out.indices = order;
  for (std::size_t i : order) out.distances.push_back(distances[i]);
  return out;
}

inline NearestSelection select_nearest(const Matrix& latents, const RowVector& instance_latent, std::size_t n) {
  return select_nearest_by_distance(euclidean_distances(latents, instance_latent), n);
}

/// exp(-d): the exponential kernel on raw latent distance.
inline std::vector<double> kernel_weights(const std::vector<double>& distances) {
  std::vector<double> w;
  w.reserve(distances.size());
  for (double d : distances) {
    require(std::isfinite(d), ErrorCode::non_finite_input, "non-finite distance");
    require(d >= 0.0, ErrorCode::negative_distance, "distance " + std::to_string(d) + " < 0");
    w.push_back(std::exp(-d));
  }
  return w;
}

/// exp(-d^2 / width^2); an infinite width gives uniform weights.
inline std::vector<double> lime_kernel_weights(const std::vector<double>& distances, double width) {
  require(width > 0.0, ErrorCode::invalid_argument, "kernel width must be positive");
  std::vector<double> w;
  w.reserve(distances.size());
  for (double d : distances) {
    require(d >= 0.0, ErrorCode::negative_distance, "distance " + std::to_string(d) + " < 0");
    w.push_back(std::isinf(width) ? 1.0 : std::exp(-(d * d) / (width * width)));
  }
  return w;
}

inline double default_kernel_width(std::size_t columns) { return 0.75 * std::sqrt(static_cast<double>(columns)); }

struct NeighborhoodSample {
  Matrix points;  // n x K, scaled space
  std::vector<double> distances;
  std::vector<double> weights;
  std::vector<std::size_t> source_indices;
  bool canonical = true;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

/// Debug dump: source_index, distance, weight, then the K feature values.
inline void write_neighborhood_csv(std::ostream& out, const NeighborhoodSample& s,
                                   const std::vector<std::string>& column_names = {}) {
  out << "source_index,distance,weight";
  for (Eigen::Index c = 0; c < s.points.cols(); ++c) {
    out << ',' << (static_cast<std::size_t>(c) < column_names.size() ? column_names[static_cast<std::size_t>(c)]
                                                                     : "x" + std::to_string(c));
  }
  out << '\n';
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << s.source_indices[i] << ',' << s.distances[i] << ',' << s.weights[i];
    for (Eigen::Index c = 0; c < s.points.cols(); ++c) out << ',' << s.points(static_cast<Eigen::Index>(i), c);
    out << '\n';
  }
  out.precision(old_precision);
}

/// The m-point pool around one instance, embedded and sorted by latent
/// distance once so that every n <= m is a prefix.
class LatentPool {
 public:
  LatentPool(const TrainingStats& stats, const Scaler& scaler, const DenoisingAutoencoder& ae,
             const RowVector& x_scaled, std::size_t m, CategoricalMode mode, std::uint64_t seed)
      : canonical_(mode == CategoricalMode::frequency || stats.groups.empty()) {
    require(static_cast<std::size_t>(x_scaled.size()) == ae.input_dim(), ErrorCode::dimension_mismatch,
            "instance has " + std::to_string(x_scaled.size()) + " columns, autoencoder expects " +
                std::to_string(ae.input_dim()));
    points_ = apply_scaler(scaler, gaussian_sample(stats, m, mode, seed));
    const Matrix latents = ae.encode(points_);
    order_ = select_nearest(latents, ae.encode(x_scaled), m);
  }

  std::size_t pool_size() const { return static_cast<std::size_t>(points_.rows()); }
  const Matrix& points() const { return points_; }

  NeighborhoodSample nearest(std::size_t n) const {
    require(n >= 1 && n <= pool_size(), ErrorCode::grid_exceeds_pool,
            "n = " + std::to_string(n) + " not in [1, " + std::to_string(pool_size()) + "]");
    NeighborhoodSample s;
    s.source_indices.assign(order_.indices.begin(), order_.indices.begin() + static_cast<std::ptrdiff_t>(n));
    s.distances.assign(order_.distances.begin(), order_.distances.begin() + static_cast<std::ptrdiff_t>(n));
    s.points = select_rows(points_, s.source_indices);
    s.weights = kernel_weights(s.distances);
    s.canonical = canonical_;
    return s;
  }

 private:
  Matrix points_;
  NearestSelection order_;
  bool canonical_;
};

/// LIME-style neighborhood: exactly n draws from the training distribution,
/// feature-space distance to the instance, Gaussian kernel. No selection.
inline NeighborhoodSample lime_neighborhood(const TrainingStats& stats, const Scaler& scaler, const RowVector& x_scaled,
                                            std::size_t n, double kernel_width, CategoricalMode mode,
                                            std::uint64_t seed) {
  require(n >= 1, ErrorCode::invalid_argument, "n must be >= 1");
  NeighborhoodSample s;
  s.points = apply_scaler(scaler, gaussian_sample(stats, n, mode, seed));
  s.distances = euclidean_distances(s.points, x_scaled);
  s.weights = lime_kernel_weights(s.distances, kernel_width);
  s.source_indices.resize(n);
  std::iota(s.source_indices.begin(), s.source_indices.end(), std::size_t{0});
  s.canonical = mode == CategoricalMode::frequency || stats.groups.empty();
  return s;
}

}  // namespace alime
