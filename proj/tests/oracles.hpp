#pragma once

// Brute-force reference implementations used by the unit and acceptance tests.

#include "alime/neuralnet.hpp"
#include "alime/types.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <utility>
#include <vector>

namespace alime::oracle {

/// Central differences over every parameter; returns the worst relative error.
inline double gradient_error(Network net, const Matrix& x, const Matrix& y, LossKind kind) {
  Gradients g;
  net.loss(x, y, kind, &g);
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double h = 1e-6;
    const double saved = param;
    param = saved + h;
    const double up = net.loss(x, y, kind);
    param = saved - h;
    const double down = net.loss(x, y, kind);
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(numeric - analytic) / std::max(1e-7, std::abs(numeric) + std::abs(analytic));
    worst = std::max(worst, err);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < net.layers[l].weights.size(); ++i) {
      check(net.layers[l].weights.data()[i], g.weights[l].data()[i]);
    }
    for (Eigen::Index i = 0; i < net.layers[l].bias.size(); ++i) check(net.layers[l].bias[i], g.bias[l][i]);
  }
  return worst;
}

struct RootSplit {
  bool split = false;
  int feature = -1;
  double threshold = 0.0;
};

/// Exhaustive root split: minimum weighted Gini over every (feature, midpoint),
/// ties within 1e-12 going to the lowest feature and then the lowest threshold.
inline RootSplit root_split(const Matrix& x, const std::vector<int>& y, const std::vector<double>& w_raw) {
  const double total = std::accumulate(w_raw.begin(), w_raw.end(), 0.0);
  auto impurity = [](double mass, double positive) {
    if (mass <= 0) return 0.0;
    const double p = positive / mass, q = 1.0 - p;
    return mass * (1.0 - p * p - q * q);
  };
  double node_pos = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) node_pos += y[i] * w_raw[i] / total;
  const double node_score = impurity(1.0, node_pos);

  struct Candidate {
    int feature;
    double threshold;
    double score;
  };
  std::vector<Candidate> candidates;
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::vector<double> values;
    for (Eigen::Index r = 0; r < x.rows(); ++r) values.push_back(x(r, f));
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t v = 0; v + 1 < values.size(); ++v) {
      const double t = 0.5 * (values[v] + values[v + 1]);
      double lw = 0, lp = 0, rw = 0, rp = 0;
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const auto ru = static_cast<std::size_t>(r);
        const double wr = w_raw[ru] / total;
        if (x(r, f) <= t) {
          lw += wr;
          lp += y[ru] * wr;
        } else {
          rw += wr;
          rp += y[ru] * wr;
        }
      }
      candidates.push_back({static_cast<int>(f), t, impurity(lw, lp) + impurity(rw, rp)});
    }
  }
  RootSplit out;
  if (candidates.empty() || node_score <= 0.0) return out;
  double best = candidates[0].score;
  for (const auto& c : candidates) best = std::min(best, c.score);
  if (node_score - best <= 1e-12) return out;
  for (const auto& c : candidates) {
    if (c.score <= best + 1e-12) return {true, c.feature, c.threshold};
  }
  return out;
}

/// Mean Jaccard over unordered pairs i < j, computed with std set algorithms.
inline double unordered_pair_jaccard(const std::vector<FeatureSet>& runs) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t j = i + 1; j < runs.size(); ++j) {
      std::vector<std::size_t> both, either;
      std::set_intersection(runs[i].begin(), runs[i].end(), runs[j].begin(), runs[j].end(), std::back_inserter(both));
      std::set_union(runs[i].begin(), runs[i].end(), runs[j].begin(), runs[j].end(), std::back_inserter(either));
      total += either.empty() ? 1.0 : static_cast<double>(both.size()) / static_cast<double>(either.size());
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

/// All rows sorted by (Euclidean distance to center, row index).
inline std::vector<std::pair<double, std::size_t>> sorted_by_distance(const Matrix& points, const RowVector& center) {
  std::vector<std::pair<double, std::size_t>> all;
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    all.emplace_back((points.row(r) - center).norm(), static_cast<std::size_t>(r));
  }
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace alime::oracle
