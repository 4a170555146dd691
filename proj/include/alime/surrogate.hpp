#pragma once

// Locally interpretable models fitted on a weighted neighborhood: L2-regularized
// logistic regression and a weighted-Gini CART tree.

#include "alime/error.hpp"
#include "alime/neuralnet.hpp"
#include "alime/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace alime {

/// Hard labels from black-box probabilities: p < threshold -> 0, else 1.
inline std::vector<int> threshold_labels(const Vector& probabilities, double threshold = 0.5) {
  std::vector<int> y(static_cast<std::size_t>(probabilities.size()));
  for (Eigen::Index i = 0; i < probabilities.size(); ++i) y[static_cast<std::size_t>(i)] = probabilities[i] >= threshold;
  return y;
}

namespace detail {

inline void check_fit_inputs(const Matrix& x, const std::vector<int>& y, const std::vector<double>& w) {
  require(static_cast<std::size_t>(x.rows()) == y.size() && y.size() == w.size(), ErrorCode::dimension_mismatch,
          "X, y and W must have the same number of rows");
  require(x.allFinite(), ErrorCode::non_finite_input, "surrogate input contains NaN or infinity");
  double total = 0.0;
  for (double v : w) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::invalid_argument, "sample weights must be finite and >= 0");
    total += v;
  }
  require(total > 0.0, ErrorCode::invalid_argument, "sample weights sum to zero");
  for (int label : y) require(label == 0 || label == 1, ErrorCode::non_binary_label, "surrogate target");
}

inline std::vector<double> normalized(const std::vector<double>& w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] / total;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Logistic regression

struct LogisticOptions {
  std::size_t max_iter = 150;
  double l2 = 1e-4;
  double gradient_tolerance = 1e-6;
};

struct LinearSurrogate {
  Vector coefficients;
  double intercept = 0.0;
  std::size_t iterations_used = 0;
  bool converged = false;
  bool single_class = false;

  std::size_t size() const { return static_cast<std::size_t>(coefficients.size()); }

  double predict_proba(const RowVector& x) const {
    require(x.size() == coefficients.size(), ErrorCode::dimension_mismatch,
            "linear surrogate has " + std::to_string(coefficients.size()) + " coefficients, x has " +
                std::to_string(x.size()));
    return sigmoid(x.dot(coefficients) + intercept);
  }
};

/// Weighted mean cross-entropy (weights normalized to sum 1) plus
/// l2 * |beta|^2 / 2; the intercept is not penalized. Optionally returns the
/// gradient as (d/dbeta..., d/dintercept).
inline double logistic_objective(const Matrix& x, const std::vector<int>& y, const std::vector<double>& w_normalized,
                                 double l2, const Vector& beta, double intercept, Vector* gradient = nullptr) {
  const Vector z = (x * beta).array() + intercept;
  double value = 0.5 * l2 * beta.squaredNorm();
  Vector residual(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    value += w_normalized[iu] * (softplus(z[i]) - y[iu] * z[i]);
    residual[i] = w_normalized[iu] * (sigmoid(z[i]) - y[iu]);
  }
  if (gradient) {
    gradient->resize(beta.size() + 1);
    gradient->head(beta.size()) = x.transpose() * residual + l2 * beta;
    (*gradient)[beta.size()] = residual.sum();
  }
  return value;
}

/// Full-batch gradient descent with Armijo backtracking. A neighborhood whose
/// labels are all equal yields zero coefficients and an intercept matching the
/// smoothed class rate, with single_class set.
inline LinearSurrogate fit_logistic(const Matrix& x, const std::vector<int>& y, const std::vector<double>& weights,
                                    const LogisticOptions& options = {}) {
  detail::check_fit_inputs(x, y, weights);
  require(x.rows() >= 1, ErrorCode::empty_matrix, "logistic fit needs at least one row");
  LinearSurrogate model;
  model.coefficients = Vector::Zero(x.cols());
  const auto positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  if (positives == 0 || positives == y.size()) {
    const double rate = (static_cast<double>(positives) + 0.5) / (static_cast<double>(y.size()) + 1.0);
    model.intercept = std::log(rate / (1.0 - rate));
    model.single_class = true;
    model.converged = true;
    return model;
  }

  const auto w = detail::normalized(weights);
  const auto k = x.cols();
  Vector beta = Vector::Zero(k);
  double intercept = 0.0;
  Vector grad;
  double value = logistic_objective(x, y, w, options.l2, beta, intercept, &grad);
  double step = 1.0;
  constexpr double armijo = 1e-4;
  for (std::size_t iter = 0; iter < options.max_iter; ++iter) {
    const double grad_norm_sq = grad.squaredNorm();
    if (std::sqrt(grad_norm_sq) < options.gradient_tolerance) {
      model.converged = true;
      break;
    }
    step = std::min(step * 2.0, 1e6);
    Vector next_beta;
    double next_intercept = 0.0;
    double next_value = 0.0;
    for (int shrink = 0; shrink < 60; ++shrink) {
      next_beta = beta - step * grad.head(k);
      next_intercept = intercept - step * grad[k];
      next_value = logistic_objective(x, y, w, options.l2, next_beta, next_intercept);
      if (next_value <= value - armijo * step * grad_norm_sq) break;
      step *= 0.5;
    }
    if (!(next_value < value)) break;  // no further progress representable
    beta = std::move(next_beta);
    intercept = next_intercept;
    value = logistic_objective(x, y, w, options.l2, beta, intercept, &grad);
    model.iterations_used = iter + 1;
  }
  if (!model.converged && grad.norm() < options.gradient_tolerance) model.converged = true;
  model.coefficients = beta;
  model.intercept = intercept;
  return model;
}

// ---------------------------------------------------------------------------
// CART

inline constexpr std::size_t kUnlimitedDepth = std::numeric_limits<std::size_t>::max();

struct CartOptions {
  std::size_t max_depth = 5;
  // Minimum child weight as a fraction of the total sample weight.
  double min_leaf_fraction = 1e-6;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double probability = 0.0;  // weighted class-1 fraction of the node's samples
  double weight = 0.0;       // weighted sample mass
  double impurity = 0.0;     // weighted Gini
  std::size_t depth = 0;

  bool is_leaf() const { return feature < 0; }
};

struct TreeSurrogate {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::size_t max_depth = 5;
  std::size_t n_features = 0;

  const TreeNode& leaf_for(const RowVector& x) const {
    require(static_cast<std::size_t>(x.size()) == n_features, ErrorCode::dimension_mismatch,
            "tree expects " + std::to_string(n_features) + " features, x has " + std::to_string(x.size()));
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x[n.feature] <= n.threshold ? n.left : n.right);
    }
    return nodes[i];
  }

  double predict_proba(const RowVector& x) const { return leaf_for(x).probability; }

  std::size_t depth() const {
    std::size_t d = 0;
    for (const auto& n : nodes) d = std::max(d, n.depth);
    return d;
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.is_leaf(); }));
  }

  FeatureSet split_features() const {
    std::vector<std::size_t> f;
    for (const auto& n : nodes) {
      if (!n.is_leaf()) f.push_back(static_cast<std::size_t>(n.feature));
    }
    return make_feature_set(std::move(f));
  }
};

inline double gini(double weight, double positive_weight) {
  if (weight <= 0.0) return 0.0;
  const double p = std::clamp(positive_weight / weight, 0.0, 1.0);
  return 2.0 * p * (1.0 - p);
}

struct SplitCandidate {
  bool valid = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double score = std::numeric_limits<double>::infinity();  // w_L * gini_L + w_R * gini_R
};

/// Tolerance used when comparing split scores (weights normalized to 1).
inline constexpr double kSplitTolerance = 1e-12;

namespace detail {

// Greedy search over one node's rows; w is normalized. Midpoint thresholds
// between consecutive distinct values; the first candidate in (feature,
// threshold) order wins unless beaten by more than kSplitTolerance.
inline SplitCandidate best_split(const Matrix& x, const std::vector<int>& y, const std::vector<double>& w,
                                 const std::vector<std::size_t>& rows, double min_child_weight) {
  SplitCandidate best;
  double node_w = 0.0, node_pos = 0.0;
  for (std::size_t r : rows) {
    node_w += w[r];
    node_pos += y[r] * w[r];
  }
  std::vector<std::size_t> sorted = rows;
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
      const double va = x(static_cast<Eigen::Index>(a), f), vb = x(static_cast<Eigen::Index>(b), f);
      return va < vb || (va == vb && a < b);
    });
    double left_w = 0.0, left_pos = 0.0;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      const std::size_t r = sorted[i];
      left_w += w[r];
      left_pos += y[r] * w[r];
      const double v = x(static_cast<Eigen::Index>(r), f);
      const double v_next = x(static_cast<Eigen::Index>(sorted[i + 1]), f);
      if (!(v < v_next)) continue;
      const double right_w = node_w - left_w;
      if (left_w < min_child_weight || right_w < min_child_weight) continue;
      const double score = left_w * gini(left_w, left_pos) + right_w * gini(right_w, node_pos - left_pos);
      if (!best.valid || score < best.score - kSplitTolerance) {
        double threshold = 0.5 * (v + v_next);
        if (!(threshold < v_next)) threshold = v;  // adjacent doubles
        best = {true, static_cast<std::size_t>(f), threshold, score};
      }
    }
  }
  return best;
}

}  // namespace detail

/// Recursive greedy CART on weighted Gini impurity. Stops at purity, depth
/// limit, no positive impurity decrease, or a child lighter than
/// min_leaf_fraction of the total weight. Values <= threshold go left.
inline TreeSurrogate fit_cart(const Matrix& x, const std::vector<int>& y, const std::vector<double>& weights,
                              const CartOptions& options = {}) {
  detail::check_fit_inputs(x, y, weights);
  require(x.rows() >= 1, ErrorCode::empty_matrix, "tree fit needs at least one row");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const auto w = detail::normalized(weights);
  TreeSurrogate tree;
  tree.max_depth = options.max_depth;
  tree.n_features = static_cast<std::size_t>(x.cols());

  struct Pending {
    std::size_t node;
    std::vector<std::size_t> rows;
  };
  std::vector<std::size_t> all(static_cast<std::size_t>(x.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  tree.nodes.push_back({});
  std::vector<Pending> stack;
  stack.push_back({0, std::move(all)});

  while (!stack.empty()) {
    Pending job = std::move(stack.back());
    stack.pop_back();
    double node_w = 0.0, node_pos = 0.0;
    for (std::size_t r : job.rows) {
      node_w += w[r];
      node_pos += y[r] * w[r];
    }
    TreeNode& node = tree.nodes[job.node];
    node.weight = node_w * total;
    node.probability = node_w > 0.0 ? std::clamp(node_pos / node_w, 0.0, 1.0) : 0.0;
    node.impurity = gini(node_w, node_pos);
    if (node.impurity <= 0.0 || node.depth >= options.max_depth) continue;

    const auto split = detail::best_split(x, y, w, job.rows, options.min_leaf_fraction);
    if (!split.valid || node_w * node.impurity - split.score <= kSplitTolerance) continue;

    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : job.rows) {
      (x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(split.feature)) <= split.threshold ? left_rows
                                                                                                     : right_rows)
          .push_back(r);
    }
    const std::size_t depth = node.depth;
    const int left = static_cast<int>(tree.nodes.size());
    const int right = left + 1;
    {
      TreeNode& n = tree.nodes[job.node];
      n.feature = static_cast<int>(split.feature);
      n.threshold = split.threshold;
      n.left = left;
      n.right = right;
    }
    TreeNode child;
    child.depth = depth + 1;
    tree.nodes.push_back(child);
    tree.nodes.push_back(child);
    // Right first so the left subtree is expanded first (node ids in preorder-ish order).
    stack.push_back({static_cast<std::size_t>(right), std::move(right_rows)});
    stack.push_back({static_cast<std::size_t>(left), std::move(left_rows)});
  }
  return tree;
}

/// Total weighted impurity decrease per feature, normalized to sum 1 (all
/// zeros for a single-leaf tree).
inline std::vector<double> feature_importances(const TreeSurrogate& tree) {
  std::vector<double> imp(tree.n_features, 0.0);
  for (const auto& n : tree.nodes) {
    if (n.is_leaf()) continue;
    const auto& l = tree.nodes[static_cast<std::size_t>(n.left)];
    const auto& r = tree.nodes[static_cast<std::size_t>(n.right)];
    imp[static_cast<std::size_t>(n.feature)] +=
        n.weight * n.impurity - l.weight * l.impurity - r.weight * r.impurity;
  }
  const double sum = std::accumulate(imp.begin(), imp.end(), 0.0);
  if (sum > 0.0) {
    for (auto& v : imp) v /= sum;
  }
  return imp;
}

inline FeatureSet used_features(const TreeSurrogate& tree) {
  const auto imp = feature_importances(tree);
  std::vector<std::size_t> f;
  for (std::size_t i = 0; i < imp.size(); ++i) {
    if (imp[i] > 0.0) f.push_back(i);
  }
  return f;
}

// ---------------------------------------------------------------------------

using Surrogate = std::variant<LinearSurrogate, TreeSurrogate>;

inline double predict_proba(const Surrogate& s, const RowVector& x) {
  return std::visit([&](const auto& model) { return model.predict_proba(x); }, s);
}

struct QuartileSets {
  FeatureSet positive;  // most positive first in `positive_order`
  FeatureSet negative;
  std::vector<std::size_t> positive_order;
  std::vector<std::size_t> negative_order;
};

/// k = max(1, floor(fraction * K)); up to k indices of the largest strictly
/// positive and of the most negative coefficients, ties by lower index.
inline QuartileSets top_bottom_quartile(const Vector& coefs, double fraction = 0.25) {
  const auto size = static_cast<std::size_t>(coefs.size());
  require(size >= 1, ErrorCode::invalid_argument, "no coefficients");
  const std::size_t k =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(size))));
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < size; ++i) {
    const double c = coefs[static_cast<Eigen::Index>(i)];
    if (c > 0.0) pos.push_back(i);
    if (c < 0.0) neg.push_back(i);
  }
  auto by_value = [&](bool descending) {
    return [&, descending](std::size_t a, std::size_t b) {
      const double ca = coefs[static_cast<Eigen::Index>(a)], cb = coefs[static_cast<Eigen::Index>(b)];
      if (ca != cb) return descending ? ca > cb : ca < cb;
      return a < b;
    };
  };
  std::sort(pos.begin(), pos.end(), by_value(true));
  std::sort(neg.begin(), neg.end(), by_value(false));
  if (pos.size() > k) pos.resize(k);
  if (neg.size() > k) neg.resize(k);
  QuartileSets out;
  out.positive_order = pos;
  out.negative_order = neg;
  out.positive = make_feature_set(pos);
  out.negative = make_feature_set(neg);
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline std::string format_number(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

namespace detail {

inline std::string feature_label(const std::vector<std::string>& names, std::size_t f) {
  return f < names.size() ? names[f] : "x" + std::to_string(f);
}

inline std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace detail

/// Graphviz export. Internal nodes: "name <= threshold"; leaves: "p=<fraction> w=<mass>".
inline std::string to_dot(const TreeSurrogate& tree, const std::vector<std::string>& feature_names) {
  std::ostringstream out;
  out << "digraph surrogate_tree {\n  node [shape=box];\n";
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    std::string label = n.is_leaf()
                            ? "p=" + format_number(n.probability) + " w=" + format_number(n.weight)
                            : detail::feature_label(feature_names, static_cast<std::size_t>(n.feature)) +
                                  " <= " + format_number(n.threshold);
    out << "  n" << i << " [label=\"" << detail::dot_escape(label) << "\"];\n";
  }
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    if (n.is_leaf()) continue;
    out << "  n" << i << " -> n" << n.left << " [label=\"yes\"];\n";
    out << "  n" << i << " -> n" << n.right << " [label=\"no\"];\n";
  }
  out << "}\n";
  return out.str();
}

inline nlohmann::json to_json(const LinearSurrogate& s, const std::vector<std::string>& feature_names) {
  nlohmann::json coefs = nlohmann::json::array();
  for (std::size_t i = 0; i < s.size(); ++i) {
    coefs.push_back({{"feature", detail::feature_label(feature_names, i)},
                     {"coefficient", s.coefficients[static_cast<Eigen::Index>(i)]}});
  }
  return {{"coefficients", coefs},
          {"intercept", s.intercept},
          {"iterations_used", s.iterations_used},
          {"converged", s.converged}};
}

inline nlohmann::json to_json(const TreeSurrogate& t, const std::vector<std::string>& feature_names) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes) {
    nlohmann::json j = {{"depth", n.depth}, {"probability", n.probability}, {"weight", n.weight}, {"impurity", n.impurity}};
    if (!n.is_leaf()) {
      j["feature"] = detail::feature_label(feature_names, static_cast<std::size_t>(n.feature));
      j["feature_index"] = n.feature;
      j["threshold"] = n.threshold;
      j["left"] = n.left;
      j["right"] = n.right;
    }
    nodes.push_back(std::move(j));
  }
  nlohmann::json depth_limit = t.max_depth == kUnlimitedDepth ? nlohmann::json(nullptr) : nlohmann::json(t.max_depth);
  return {{"nodes", nodes}, {"max_depth", depth_limit}, {"n_features", t.n_features}};
}

}  // namespace alime
