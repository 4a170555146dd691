#pragma once

// Local fidelity and Jaccard stability of explanations, single-shot and swept
// over the neighborhood size n.

#include "alime/error.hpp"
#include "alime/explain.hpp"
#include "alime/rng.hpp"
#include "alime/surrogate.hpp"
#include "alime/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <exception>
#include <functional>
#include <iterator>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace alime {

/// |a n b| / |a u b|; two empty sets are identical (1), one empty set shares
/// nothing (0). Inputs must be sorted and duplicate-free.
inline double jaccard(const FeatureSet& a, const FeatureSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::size_t common = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++common;
      ++i;
      ++j;
    }
  }
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

/// Mean Jaccard over all ordered pairs i != j (the T(T-1) normalization).
inline double pairwise_jaccard(const std::vector<FeatureSet>& runs) {
  require(runs.size() >= 2, ErrorCode::too_few_runs, "stability needs at least 2 runs, got " + std::to_string(runs.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t j = 0; j < runs.size(); ++j) {
      if (i != j) total += jaccard(runs[i], runs[j]);
    }
  }
  const auto count = static_cast<double>(runs.size());
  return total / (count * (count - 1.0));
}

struct LinearStability {
  double positive = 0.0;
  double negative = 0.0;
  double combined = 0.0;
};

inline LinearStability linear_stability(const std::vector<FeatureSet>& positive_sets,
                                        const std::vector<FeatureSet>& negative_sets) {
  require(positive_sets.size() == negative_sets.size(), ErrorCode::invalid_argument,
          "positive and negative run counts differ");
  LinearStability s;
  s.positive = pairwise_jaccard(positive_sets);
  s.negative = pairwise_jaccard(negative_sets);
  s.combined = 0.5 * (s.positive + s.negative);
  return s;
}

inline double tree_stability(const std::vector<FeatureSet>& runs) { return pairwise_jaccard(runs); }

// Reports note that the tree formula's denominator is T(T-1).
inline constexpr const char* kStabilityFormulaVersion = "ordered-pairs/T(T-1)";

struct StabilityReport {
  std::size_t instance_id = 0;
  Method method = Method::alime;
  std::size_t n = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<FeatureSet> positive_sets;  // linear
  std::vector<FeatureSet> negative_sets;  // linear
  std::vector<FeatureSet> used_sets;      // tree
  LinearStability linear;
  double score = 0.0;
  std::vector<std::size_t> feature_counts;
  double mean_feature_count = 0.0;

  std::size_t runs() const { return seeds.size(); }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"instance_id", instance_id},
                        {"method", to_string(method)},
                        {"n", n},
                        {"runs", runs()},
                        {"seeds", seeds},
                        {"score", score},
                        {"feature_counts", feature_counts},
                        {"mean_feature_count", mean_feature_count},
                        {"formula_version", kStabilityFormulaVersion}};
    if (method == Method::tree_alime) {
      j["used_sets"] = used_sets;
    } else {
      j["positive_sets"] = positive_sets;
      j["negative_sets"] = negative_sets;
      j["positive_score"] = linear.positive;
      j["negative_score"] = linear.negative;
    }
    return j;
  }
};

/// Incrementally records one explanation per run and scores the ensemble.
class StabilityAccumulator {
 public:
  StabilityAccumulator(Method method, std::size_t instance_id, std::size_t n, double quartile_fraction = 0.25)
      : fraction_(quartile_fraction) {
    report_.method = method;
    report_.instance_id = instance_id;
    report_.n = n;
  }

  void add(const Explanation& e) {
    report_.seeds.push_back(e.seed);
    if (e.is_tree()) {
      auto used = used_features(e.tree());
      report_.feature_counts.push_back(used.size());
      report_.used_sets.push_back(std::move(used));
    } else {
      auto q = top_bottom_quartile(e.linear().coefficients, fraction_);
      report_.feature_counts.push_back(q.positive.size() + q.negative.size());
      report_.positive_sets.push_back(std::move(q.positive));
      report_.negative_sets.push_back(std::move(q.negative));
    }
  }

  StabilityReport finish() const {
    StabilityReport r = report_;
    if (r.method == Method::tree_alime) {
      r.score = tree_stability(r.used_sets);
    } else {
      r.linear = linear_stability(r.positive_sets, r.negative_sets);
      r.score = r.linear.combined;
    }
    r.mean_feature_count = r.feature_counts.empty()
                               ? 0.0
                               : static_cast<double>(std::accumulate(r.feature_counts.begin(),
                                                                     r.feature_counts.end(), std::size_t{0})) /
                                     static_cast<double>(r.feature_counts.size());
    return r;
  }

 private:
  StabilityReport report_;
  double fraction_;
};

/// Run r perturbs with seed base_seed + r; the trained models stay fixed.
inline StabilityReport stability_experiment(const Explainer& explainer, const RowVector& x_scaled,
                                            std::size_t instance_id, ExplainerConfig cfg, std::size_t runs = 20,
                                            std::uint64_t base_seed = 0) {
  require(runs >= 2, ErrorCode::too_few_runs, "stability needs at least 2 runs");
  StabilityAccumulator acc(cfg.method, instance_id, cfg.perturbation.n);
  for (std::size_t r = 0; r < runs; ++r) {
    cfg.perturbation.seed = base_seed + r;
    acc.add(explainer.explain(x_scaled, instance_id, cfg));
  }
  return acc.finish();
}

struct StabilitySweepRow {
  std::size_t n = 0;
  StabilityReport linear;  // alime
  StabilityReport tree;    // tree-alime
};

/// ALIME and tree-ALIME stability at every n. Each run's pool is built once
/// and shared by both methods and all n, which yields the same explanations as
/// separate stability_experiment calls.
inline std::vector<StabilitySweepRow> stability_sweep(const Explainer& explainer, const RowVector& x_scaled,
                                                      std::size_t instance_id, ExplainerConfig cfg,
                                                      const std::vector<std::size_t>& n_grid, std::size_t runs = 20,
                                                      std::uint64_t base_seed = 0) {
  require(!n_grid.empty(), ErrorCode::invalid_argument, "empty n grid");
  require(runs >= 2, ErrorCode::too_few_runs, "stability needs at least 2 runs");
  const std::size_t max_n = *std::max_element(n_grid.begin(), n_grid.end());
  for (auto n : n_grid) {
    require(n >= 1 && n <= cfg.perturbation.m, ErrorCode::grid_exceeds_pool,
            "n = " + std::to_string(n) + " exceeds pool size " + std::to_string(cfg.perturbation.m));
  }
  std::vector<StabilityAccumulator> lin, tree;
  for (auto n : n_grid) {
    lin.emplace_back(Method::alime, instance_id, n);
    tree.emplace_back(Method::tree_alime, instance_id, n);
  }
  for (std::size_t r = 0; r < runs; ++r) {
    cfg.perturbation.seed = base_seed + r;
    const auto nb = explainer.alime_neighborhood(x_scaled, cfg, max_n);
    for (std::size_t g = 0; g < n_grid.size(); ++g) {
      lin[g].add(explainer.fit(Method::alime, nb, n_grid[g], x_scaled, instance_id, cfg));
      tree[g].add(explainer.fit(Method::tree_alime, nb, n_grid[g], x_scaled, instance_id, cfg));
    }
  }
  std::vector<StabilitySweepRow> rows;
  for (std::size_t g = 0; g < n_grid.size(); ++g) rows.push_back({n_grid[g], lin[g].finish(), tree[g].finish()});
  return rows;
}

// ---------------------------------------------------------------------------
// Local fidelity

struct FidelityEntry {
  std::size_t n = 0;
  double accuracy = 0.0;
  std::size_t agreements = 0;
  std::size_t points = 0;
};

inline bool agrees(const Explanation& e, double threshold = 0.5) {
  return (e.surrogate_probability >= threshold) == (e.black_box_probability >= threshold);
}

/// Runs body(i) for i in [0, count) over `threads` workers. Results must be
/// written to per-index slots so the outcome does not depend on scheduling.
template <typename Body>
void parallel_for(std::size_t count, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Per-point perturbation seed, tied to the row's id rather than its position.
inline std::uint64_t point_seed(std::uint64_t base_seed, std::size_t instance_id) {
  return derive_seed(base_seed, instance_id);
}

using ExplainFn = std::function<Explanation(const RowVector& x_scaled, std::size_t instance_id)>;

/// Fraction of test points where the surrogate's class at the point equals
/// the black box's class.
inline FidelityEntry local_fidelity(const ExplainFn& explain, const Matrix& test_set,
                                    const std::vector<std::size_t>& instance_ids, double threshold = 0.5,
                                    std::size_t threads = 1) {
  require(test_set.rows() > 0, ErrorCode::empty_matrix, "fidelity needs at least one test point");
  require(static_cast<std::size_t>(test_set.rows()) == instance_ids.size(), ErrorCode::dimension_mismatch,
          "one instance id per test row");
  std::vector<char> agree(instance_ids.size(), 0);
  std::size_t n = 0;
  parallel_for(instance_ids.size(), threads, [&](std::size_t i) {
    const auto e = explain(test_set.row(static_cast<Eigen::Index>(i)), instance_ids[i]);
    agree[i] = agrees(e, threshold);
    if (i == 0) n = e.n;
  });
  FidelityEntry entry;
  entry.n = n;
  entry.points = agree.size();
  entry.agreements = static_cast<std::size_t>(std::count(agree.begin(), agree.end(), 1));
  entry.accuracy = static_cast<double>(entry.agreements) / static_cast<double>(entry.points);
  return entry;
}

inline FidelityEntry local_fidelity(const Explainer& explainer, const ExplainerConfig& cfg, const Matrix& test_set,
                                    const std::vector<std::size_t>& instance_ids, std::uint64_t base_seed,
                                    double threshold = 0.5, std::size_t threads = 1) {
  cfg.perturbation.validate();
  return local_fidelity(
      [&](const RowVector& x, std::size_t id) {
        ExplainerConfig c = cfg;
        c.perturbation.seed = point_seed(base_seed, id);
        return explainer.explain(x, id, c);
      },
      test_set, instance_ids, threshold, threads);
}

struct FidelitySweepRow {
  std::size_t n = 0;
  FidelityEntry linear;  // alime
  FidelityEntry tree;    // tree-alime
};

inline std::vector<std::size_t> default_n_grid() {
  std::vector<std::size_t> g;
  for (std::size_t n = 100; n <= 2000; n += 100) g.push_back(n);
  return g;
}

/// ALIME and tree-ALIME fidelity at every n. Each test point's pool (seeded
/// by point_seed) is built once; the n nearest points are a prefix of it, so
/// each row equals a direct local_fidelity call at that n.
inline std::vector<FidelitySweepRow> fidelity_sweep(const Explainer& explainer, ExplainerConfig cfg,
                                                    const Matrix& test_set,
                                                    const std::vector<std::size_t>& instance_ids,
                                                    const std::vector<std::size_t>& n_grid, std::uint64_t base_seed,
                                                    double threshold = 0.5, std::size_t threads = 1) {
  require(!n_grid.empty(), ErrorCode::invalid_argument, "empty n grid");
  require(test_set.rows() > 0, ErrorCode::empty_matrix, "fidelity needs at least one test point");
  require(static_cast<std::size_t>(test_set.rows()) == instance_ids.size(), ErrorCode::dimension_mismatch,
          "one instance id per test row");
  for (auto n : n_grid) {
    require(n >= 1 && n <= cfg.perturbation.m, ErrorCode::grid_exceeds_pool,
            "n = " + std::to_string(n) + " exceeds pool size " + std::to_string(cfg.perturbation.m));
  }
  const std::size_t max_n = *std::max_element(n_grid.begin(), n_grid.end());
  const std::size_t points = instance_ids.size();
  // agree[point][grid][method]
  std::vector<std::vector<std::array<char, 2>>> agree(points, std::vector<std::array<char, 2>>(n_grid.size()));
  parallel_for(points, threads, [&](std::size_t i) {
    ExplainerConfig c = cfg;
    c.perturbation.seed = point_seed(base_seed, instance_ids[i]);
    const RowVector x = test_set.row(static_cast<Eigen::Index>(i));
    const auto nb = explainer.alime_neighborhood(x, c, max_n);
    for (std::size_t g = 0; g < n_grid.size(); ++g) {
      agree[i][g][0] = agrees(explainer.fit(Method::alime, nb, n_grid[g], x, instance_ids[i], c), threshold);
      agree[i][g][1] = agrees(explainer.fit(Method::tree_alime, nb, n_grid[g], x, instance_ids[i], c), threshold);
    }
  });
  std::vector<FidelitySweepRow> rows;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    FidelitySweepRow row;
    row.n = n_grid[g];
    for (int method = 0; method < 2; ++method) {
      FidelityEntry& e = method == 0 ? row.linear : row.tree;
      e.n = n_grid[g];
      e.points = points;
      for (std::size_t i = 0; i < points; ++i) e.agreements += static_cast<std::size_t>(agree[i][g][method]);
      e.accuracy = static_cast<double>(e.agreements) / static_cast<double>(points);
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report files

inline void write_fidelity_csv(std::ostream& out, const std::vector<FidelitySweepRow>& rows) {
  out << "n,linear_value,tree_value\n";
  for (const auto& r : rows) {
    out << r.n << ',' << format_number(r.linear.accuracy, 17) << ',' << format_number(r.tree.accuracy, 17) << '\n';
  }
}

inline void write_stability_csv(std::ostream& out, const std::vector<StabilitySweepRow>& rows) {
  out << "n,linear_stability,tree_stability,linear_mean_features,tree_mean_features\n";
  for (const auto& r : rows) {
    out << r.n << ',' << format_number(r.linear.score, 17) << ',' << format_number(r.tree.score, 17) << ','
        << format_number(r.linear.mean_feature_count, 17) << ',' << format_number(r.tree.mean_feature_count, 17)
        << '\n';
  }
}

inline nlohmann::json to_json(const std::vector<FidelitySweepRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"n", r.n},
                 {"linear", {{"accuracy", r.linear.accuracy}, {"agreements", r.linear.agreements}, {"points", r.linear.points}}},
                 {"tree", {{"accuracy", r.tree.accuracy}, {"agreements", r.tree.agreements}, {"points", r.tree.points}}}});
  }
  return j;
}

inline nlohmann::json to_json(const std::vector<StabilitySweepRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back({{"n", r.n}, {"linear", r.linear.to_json()}, {"tree", r.tree.to_json()}});
  return j;
}

}  // namespace alime
