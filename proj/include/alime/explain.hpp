#pragma once

// The three explainers (LIME baseline, ALIME, tree-ALIME) and explanation
// rendering.

#include "alime/dataset.hpp"
#include "alime/error.hpp"
#include "alime/neuralnet.hpp"
#include "alime/sampler.hpp"
#include "alime/surrogate.hpp"
#include "alime/types.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace alime {

enum class Method { lime, alime, tree_alime };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::lime: return "lime";
    case Method::alime: return "alime";
    case Method::tree_alime: return "tree-alime";
  }
  return "alime";
}

inline Method method_from_string(const std::string& s) {
  if (s == "lime") return Method::lime;
  if (s == "alime") return Method::alime;
  if (s == "tree-alime") return Method::tree_alime;
  throw Error(ErrorCode::invalid_argument, "unknown method '" + s + "' (expected lime, alime or tree-alime)");
}

struct PerturbationConfig {
  std::size_t m = 10000;  // pool size
  std::size_t n = 1000;   // points kept
  CategoricalMode categorical_mode = CategoricalMode::frequency;
  std::uint64_t seed = 0;

  void validate() const {
    require(n >= 1 && n <= m, ErrorCode::invalid_argument,
            "need 1 <= n <= m, got n=" + std::to_string(n) + " m=" + std::to_string(m));
  }
};

struct ExplainerConfig {
  Method method = Method::alime;
  PerturbationConfig perturbation;
  LogisticOptions logistic;
  CartOptions cart;
  std::optional<double> kernel_width;  // LIME only; default 0.75 * sqrt(K)
  bool include_instance = false;       // add x itself to the local training set

  nlohmann::json to_json() const {
    return {{"method", to_string(method)},
            {"m", perturbation.m},
            {"n", perturbation.n},
            {"seed", perturbation.seed},
            {"categorical_mode", to_string(perturbation.categorical_mode)},
            {"max_iter", logistic.max_iter},
            {"l2", logistic.l2},
            {"max_depth", cart.max_depth == kUnlimitedDepth ? nlohmann::json(nullptr) : nlohmann::json(cart.max_depth)},
            {"min_leaf_fraction", cart.min_leaf_fraction},
            {"kernel_width", kernel_width ? nlohmann::json(*kernel_width) : nlohmann::json(nullptr)},
            {"include_instance", include_instance}};
  }
};

/// Maps a batch of scaled rows to class-1 probabilities.
using BlackBox = std::function<Vector(const Matrix&)>;

inline BlackBox black_box_of(std::shared_ptr<const MlpClassifier> model) {
  return [model = std::move(model)](const Matrix& x) { return model->predict_proba(x); };
}

/// Trained artifacts shared read-only by every explanation of one dataset.
struct ModelContext {
  BlackBox black_box;
  std::shared_ptr<const DenoisingAutoencoder> autoencoder;  // required by alime / tree-alime
  Scaler scaler;
  TrainingStats stats;
  std::vector<std::string> feature_names;

  std::size_t columns() const { return stats.size(); }
};

struct Explanation {
  Method method = Method::alime;
  Surrogate payload;
  std::size_t instance_id = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  double black_box_probability = 0.0;
  double surrogate_probability = 0.0;
  RowVector instance;
  std::vector<std::string> feature_names;
  std::vector<std::string> flags;
  ExplainerConfig config;

  bool is_tree() const { return std::holds_alternative<TreeSurrogate>(payload); }
  const LinearSurrogate& linear() const { return std::get<LinearSurrogate>(payload); }
  const TreeSurrogate& tree() const { return std::get<TreeSurrogate>(payload); }
  bool has_flag(const std::string& f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }

  nlohmann::json to_json() const {
    nlohmann::json payload_json = is_tree() ? alime::to_json(tree(), feature_names)
                                            : alime::to_json(linear(), feature_names);
    return {{"method", to_string(method)},
            {"instance_id", instance_id},
            {"n", n},
            {"m", m},
            {"seed", seed},
            {"black_box_probability", black_box_probability},
            {"surrogate_probability", surrogate_probability},
            {"instance", std::vector<double>(instance.data(), instance.data() + instance.size())},
            {"payload", payload_json},
            {"flags", flags},
            {"config", config.to_json()}};
  }
};

/// A neighborhood plus the black-box probabilities of its points, computed
/// once and shared by every surrogate fitted on it.
struct LabeledNeighborhood {
  NeighborhoodSample sample;
  Vector black_box;
};

class Explainer {
 public:
  explicit Explainer(ModelContext context) : ctx_(std::move(context)) {
    require(static_cast<bool>(ctx_.black_box), ErrorCode::invalid_argument, "explainer needs a black box");
  }

  const ModelContext& context() const { return ctx_; }

  Explanation explain(const RowVector& x_scaled, std::size_t instance_id, const ExplainerConfig& cfg) const {
    switch (cfg.method) {
      case Method::lime: return explain_lime(x_scaled, instance_id, cfg);
      case Method::alime: return explain_alime(x_scaled, instance_id, cfg);
      case Method::tree_alime: return explain_tree_alime(x_scaled, instance_id, cfg);
    }
    throw Error(ErrorCode::invalid_argument, "unknown method");
  }

  Explanation explain_alime(const RowVector& x_scaled, std::size_t instance_id, const ExplainerConfig& cfg) const {
    require(cfg.method == Method::alime, ErrorCode::invalid_argument, "explain_alime needs method alime");
    return fit(Method::alime, alime_neighborhood(x_scaled, cfg, cfg.perturbation.n), cfg.perturbation.n, x_scaled,
               instance_id, cfg);
  }

  Explanation explain_tree_alime(const RowVector& x_scaled, std::size_t instance_id,
                                 const ExplainerConfig& cfg) const {
    require(cfg.method == Method::tree_alime, ErrorCode::invalid_argument, "explain_tree_alime needs method tree-alime");
    return fit(Method::tree_alime, alime_neighborhood(x_scaled, cfg, cfg.perturbation.n), cfg.perturbation.n,
               x_scaled, instance_id, cfg);
  }

  Explanation explain_lime(const RowVector& x_scaled, std::size_t instance_id, const ExplainerConfig& cfg) const {
    require(cfg.method == Method::lime, ErrorCode::invalid_argument, "explain_lime needs method lime");
    check_instance(x_scaled);
    const double width = cfg.kernel_width.value_or(default_kernel_width(ctx_.columns()));
    LabeledNeighborhood nb;
    nb.sample = lime_neighborhood(ctx_.stats, ctx_.scaler, x_scaled, cfg.perturbation.n, width,
                                  cfg.perturbation.categorical_mode, cfg.perturbation.seed);
    nb.black_box = ctx_.black_box(nb.sample.points);
    return fit(Method::lime, nb, cfg.perturbation.n, x_scaled, instance_id, cfg);
  }

  /// The m-point pool for cfg.perturbation.seed, embedded and sorted.
  LatentPool pool(const RowVector& x_scaled, const ExplainerConfig& cfg) const {
    check_instance(x_scaled);
    require(ctx_.autoencoder != nullptr, ErrorCode::invalid_argument,
            to_string(cfg.method) + " needs a trained autoencoder");
    cfg.perturbation.validate();
    return LatentPool(ctx_.stats, ctx_.scaler, *ctx_.autoencoder, x_scaled, cfg.perturbation.m,
                      cfg.perturbation.categorical_mode, cfg.perturbation.seed);
  }

  LabeledNeighborhood label(NeighborhoodSample sample) const {
    LabeledNeighborhood nb;
    nb.black_box = ctx_.black_box(sample.points);
    nb.sample = std::move(sample);
    return nb;
  }

  /// The `count` nearest pool points with their black-box probabilities.
  LabeledNeighborhood alime_neighborhood(const RowVector& x_scaled, const ExplainerConfig& cfg,
                                         std::size_t count) const {
    return label(pool(x_scaled, cfg).nearest(count));
  }

  /// Fits the surrogate of `method` on the first n points of `nb`.
  Explanation fit(Method method, const LabeledNeighborhood& nb, std::size_t n, const RowVector& x_scaled,
                  std::size_t instance_id, const ExplainerConfig& cfg) const {
    require(n >= 1 && n <= nb.sample.size(), ErrorCode::invalid_argument, "n exceeds the neighborhood");
    const auto rows = static_cast<Eigen::Index>(n);
    Matrix x = nb.sample.points.topRows(rows);
    Vector probs = nb.black_box.head(rows);
    std::vector<double> w(nb.sample.weights.begin(), nb.sample.weights.begin() + rows);
    const double bb_at_x = ctx_.black_box(Matrix(x_scaled))[0];
    if (cfg.include_instance) {
      x.conservativeResize(rows + 1, Eigen::NoChange);
      x.row(rows) = x_scaled;
      probs.conservativeResize(rows + 1);
      probs[rows] = bb_at_x;
      w.push_back(1.0);
    }
    const auto y = threshold_labels(probs);

    Explanation e;
    e.method = method;
    e.instance_id = instance_id;
    e.n = n;
    e.m = method == Method::lime ? n : cfg.perturbation.m;
    e.seed = cfg.perturbation.seed;
    e.instance = x_scaled;
    e.feature_names = ctx_.feature_names;
    e.config = cfg;
    e.config.method = method;
    e.config.perturbation.n = n;
    e.black_box_probability = bb_at_x;
    if (method == Method::tree_alime) {
      e.payload = fit_cart(x, y, w, cfg.cart);
    } else {
      auto linear = fit_logistic(x, y, w, cfg.logistic);
      if (linear.single_class) e.flags.push_back("single_class_neighborhood");
      if (!linear.converged) e.flags.push_back("not_converged");
      e.payload = std::move(linear);
    }
    if (e.is_tree() && e.tree().nodes.size() == 1) {
      const auto positives = std::count(y.begin(), y.end(), 1);
      if (positives == 0 || positives == static_cast<std::ptrdiff_t>(y.size())) {
        e.flags.push_back("single_class_neighborhood");
      }
    }
    if (!nb.sample.canonical) e.flags.push_back("non_canonical_sampling");
    e.surrogate_probability = predict_proba(e.payload, x_scaled);
    return e;
  }

 private:
  void check_instance(const RowVector& x) const {
    require(static_cast<std::size_t>(x.size()) == ctx_.columns(), ErrorCode::dimension_mismatch,
            "instance has " + std::to_string(x.size()) + " columns, expected " + std::to_string(ctx_.columns()));
    require(x.allFinite(), ErrorCode::non_finite_input, "instance contains NaN or infinity");
  }

  ModelContext ctx_;
};

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline void render_tree_text(std::ostringstream& out, const TreeSurrogate& tree, const std::vector<std::string>& names,
                             std::size_t node, std::size_t indent) {
  const auto& n = tree.nodes[node];
  const std::string pad(indent * 2, ' ');
  if (n.is_leaf()) {
    out << pad << "predict p(class 1) = " << format_number(n.probability, 4) << " (weight "
        << format_number(n.weight, 4) << ")\n";
    return;
  }
  const auto name = feature_label(names, static_cast<std::size_t>(n.feature));
  out << pad << "if " << name << " <= " << format_number(n.threshold, 4) << ":\n";
  render_tree_text(out, tree, names, static_cast<std::size_t>(n.left), indent + 1);
  out << pad << "else:  # " << name << " > " << format_number(n.threshold, 4) << "\n";
  render_tree_text(out, tree, names, static_cast<std::size_t>(n.right), indent + 1);
}

}  // namespace detail

/// Human-readable report: the top_k most positive and most negative
/// coefficients for linear explanations, the indented tree for tree ones.
inline std::string render_explanation(const Explanation& e, std::size_t top_k = 5) {
  std::ostringstream out;
  out << "method: " << to_string(e.method) << "  instance: " << e.instance_id << "  n=" << e.n << " m=" << e.m
      << " seed=" << e.seed << "\n";
  out << "black-box p(class 1) = " << format_number(e.black_box_probability, 4)
      << "   surrogate p(class 1) = " << format_number(e.surrogate_probability, 4) << "\n";
  if (!e.flags.empty()) {
    out << "flags:";
    for (const auto& f : e.flags) out << ' ' << f;
    out << "\n";
  }
  out << "instance (scaled):\n";
  for (Eigen::Index c = 0; c < e.instance.size(); ++c) {
    out << "  " << detail::feature_label(e.feature_names, static_cast<std::size_t>(c)) << " = "
        << format_number(e.instance[c], 4) << "\n";
  }
  if (e.is_tree()) {
    out << "decision tree (depth " << e.tree().depth() << ", " << e.tree().leaf_count() << " leaves):\n";
    detail::render_tree_text(out, e.tree(), e.feature_names, 0, 1);
    return out.str();
  }
  const auto& lin = e.linear();
  const auto k = static_cast<Eigen::Index>(lin.size());
  std::vector<std::size_t> pos, neg;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (lin.coefficients[i] > 0.0) pos.push_back(static_cast<std::size_t>(i));
    if (lin.coefficients[i] < 0.0) neg.push_back(static_cast<std::size_t>(i));
  }
  auto coef = [&](std::size_t i) { return lin.coefficients[static_cast<Eigen::Index>(i)]; };
  std::stable_sort(pos.begin(), pos.end(), [&](auto a, auto b) { return coef(a) > coef(b); });
  std::stable_sort(neg.begin(), neg.end(), [&](auto a, auto b) { return coef(a) < coef(b); });
  if (pos.size() > top_k) pos.resize(top_k);
  if (neg.size() > top_k) neg.resize(top_k);
  out << "top positive coefficients:\n";
  for (auto i : pos) out << "  " << detail::feature_label(e.feature_names, i) << "  " << format_number(coef(i), 5) << "\n";
  out << "top negative coefficients:\n";
  for (auto i : neg) out << "  " << detail::feature_label(e.feature_names, i) << "  " << format_number(coef(i), 5) << "\n";
  out << "intercept: " << format_number(lin.intercept, 5) << "\n";
  return out.str();
}

}  // namespace alime
