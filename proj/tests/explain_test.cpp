#include "alime/explain.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

namespace alime {
namespace {

using testing::small_config;
using testing::synthetic_problem;

TEST(ExplainAlime, DeterministicToTheByte) {
  const auto p = synthetic_problem(6);
  const Explainer ex(p.context);
  const RowVector x = p.scaled.row(3);
  for (auto method : {Method::lime, Method::alime, Method::tree_alime}) {
    const auto a = ex.explain(x, 3, small_config(method));
    const auto b = ex.explain(x, 3, small_config(method));
    EXPECT_EQ(a.to_json().dump(), b.to_json().dump()) << to_string(method);
    EXPECT_NE(a.to_json().dump(), ex.explain(x, 3, small_config(method, 400, 100, 8)).to_json().dump());
  }
}

TEST(ExplainAlime, FollowsTheLatentSelectionPipeline) {
  const auto p = synthetic_problem(5);
  const Explainer ex(p.context);
  const RowVector x = p.scaled.row(0);
  const auto cfg = small_config(Method::alime);
  const auto e = ex.explain(x, 0, cfg);

  const LatentPool pool(p.context.stats, p.context.scaler, *p.context.autoencoder, x, 400, CategoricalMode::frequency, 7);
  const auto nb = pool.nearest(100);
  const auto y = threshold_labels(p.context.black_box(nb.points));
  const auto direct = fit_logistic(nb.points, y, nb.weights);
  EXPECT_EQ(e.linear().coefficients, direct.coefficients);
  EXPECT_EQ(e.linear().intercept, direct.intercept);
  EXPECT_EQ(e.black_box_probability, p.context.black_box(Matrix(x))[0]);
  EXPECT_EQ(e.surrogate_probability, direct.predict_proba(x));
  EXPECT_EQ(e.n, 100u);
  EXPECT_EQ(e.m, 400u);
}

TEST(ExplainAlime, FullPoolSelectionIsTheWholePool) {
  const auto p = synthetic_problem(4);
  const Explainer ex(p.context);
  const RowVector x = p.scaled.row(1);
  const auto cfg = small_config(Method::alime, 200, 200);
  const auto e = ex.explain(x, 1, cfg);
  const auto points = ex.pool(x, cfg).points();
  const Matrix latents = p.context.autoencoder->encode(points);
  const RowVector center = p.context.autoencoder->encode(x);
  std::vector<double> w;
  for (Eigen::Index r = 0; r < points.rows(); ++r) w.push_back(std::exp(-(latents.row(r) - center).norm()));
  const auto direct = fit_logistic(points, threshold_labels(p.context.black_box(points)), w);
  EXPECT_LT((e.linear().coefficients - direct.coefficients).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ExplainTreeAlime, SharesTheNeighborhoodWithAlime) {
  const auto p = synthetic_problem(5);
  const Explainer ex(p.context);
  const RowVector x = p.scaled.row(2);
  const auto nb = ex.alime_neighborhood(x, small_config(Method::alime), 100);
  const auto tree = ex.explain(x, 2, small_config(Method::tree_alime));
  const auto direct = fit_cart(nb.sample.points, threshold_labels(nb.black_box), nb.sample.weights);
  ASSERT_EQ(tree.tree().nodes.size(), direct.nodes.size());
  for (std::size_t i = 0; i < direct.nodes.size(); ++i) {
    EXPECT_EQ(tree.tree().nodes[i].feature, direct.nodes[i].feature);
    EXPECT_EQ(tree.tree().nodes[i].threshold, direct.nodes[i].threshold);
  }
  EXPECT_LE(tree.tree().depth(), 5u);
}

TEST(ExplainTreeAlime, PureNeighborhoodGivesFlaggedSingleLeaf) {
  auto p = synthetic_problem(3);
  p.context.black_box = [](const Matrix& x) -> Vector { return Vector::Constant(x.rows(), 0.9); };
  const Explainer ex(p.context);
  const auto e = ex.explain(p.scaled.row(0), 0, small_config(Method::tree_alime));
  ASSERT_EQ(e.tree().nodes.size(), 1u);
  EXPECT_EQ(e.tree().nodes[0].probability, 1.0);
  EXPECT_TRUE(e.has_flag("single_class_neighborhood"));
  const auto lin = ex.explain(p.scaled.row(0), 0, small_config(Method::alime));
  EXPECT_TRUE(lin.has_flag("single_class_neighborhood"));
  EXPECT_EQ(lin.linear().coefficients, Vector::Zero(3));
}

TEST(ExplainLime, InfiniteKernelWidthIsAnUnweightedFit) {
  const auto p = synthetic_problem(4);
  const Explainer ex(p.context);
  const RowVector x = p.scaled.row(5);
  auto cfg = small_config(Method::lime, 400, 300);
  cfg.kernel_width = std::numeric_limits<double>::infinity();
  const auto e = ex.explain(x, 5, cfg);
  const Matrix points = lime_neighborhood(p.context.stats, p.context.scaler, x, 300, 1.0, CategoricalMode::frequency, 7).points;
  const auto direct = fit_logistic(points, threshold_labels(p.context.black_box(points)), std::vector<double>(300, 1.0));
  EXPECT_LT((e.linear().coefficients - direct.coefficients).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(e.m, 300u);
}

TEST(ExplainLime, TwoPointNeighborhoodIsDefined) {
  const auto p = synthetic_problem(3);
  const Explainer ex(p.context);
  EXPECT_NO_THROW(ex.explain(p.scaled.row(0), 0, small_config(Method::lime, 10, 2)));
}

TEST(Explain, FlagsAndOptions) {
  const auto p = synthetic_problem(4);
  const Explainer ex(p.context);
  auto cfg = small_config(Method::alime);
  cfg.perturbation.categorical_mode = CategoricalMode::literal_paper;
  // without categorical features both modes sample identically
  EXPECT_FALSE(ex.explain(p.scaled.row(0), 0, cfg).has_flag("non_canonical_sampling"));
  cfg = small_config(Method::alime);
  cfg.include_instance = true;
  const auto with_x = ex.explain(p.scaled.row(0), 0, cfg);
  EXPECT_NE(with_x.linear().coefficients, ex.explain(p.scaled.row(0), 0, small_config(Method::alime)).linear().coefficients);
}

TEST(Explain, InputErrors) {
  const auto p = synthetic_problem(4);
  const Explainer ex(p.context);
  try {
    ex.explain(RowVector::Zero(3), 0, small_config(Method::alime));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
  try {
    ex.explain(p.scaled.row(0), 0, small_config(Method::alime, 50, 100));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
  }
  auto no_ae = p.context;
  no_ae.autoencoder.reset();
  EXPECT_THROW(Explainer(no_ae).explain(p.scaled.row(0), 0, small_config(Method::alime)), Error);
  EXPECT_NO_THROW(Explainer(no_ae).explain(p.scaled.row(0), 0, small_config(Method::lime)));
  EXPECT_EQ(method_from_string("tree-alime"), Method::tree_alime);
  EXPECT_THROW(method_from_string("forest"), Error);
}

TEST(Explain, JsonCarriesReplayMetadata) {
  const auto p = synthetic_problem(4);
  const Explainer ex(p.context);
  const auto e = ex.explain(p.scaled.row(0), 17, small_config(Method::tree_alime));
  const auto j = e.to_json();
  for (const char* key : {"method", "instance_id", "n", "m", "seed", "black_box_probability", "surrogate_probability",
                          "payload", "flags", "config"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["instance_id"], 17);
  EXPECT_EQ(j["config"]["seed"], 7);
  EXPECT_EQ(j["config"]["max_depth"], 5);
}

TEST(Render, LinearShowsOnlyExistingCoefficients) {
  Explanation e;
  e.method = Method::alime;
  LinearSurrogate lin;
  lin.coefficients = Vector(6);
  lin.coefficients << 0.4, -0.1, 0.9, 0.0, 0.2, -0.3;
  e.payload = lin;
  e.instance = RowVector::Zero(6);
  e.feature_names = {"a", "b", "c", "d", "e", "f"};
  const auto text = render_explanation(e, 5);
  const auto pos = text.find("top positive coefficients:\n  c  0.9\n  a  0.4\n  e  0.2\ntop negative");
  EXPECT_NE(pos, std::string::npos) << text;
  EXPECT_NE(text.find("top negative coefficients:\n  f  -0.3\n  b  -0.1\nintercept"), std::string::npos) << text;
}

TEST(Render, TreeTextAndDotBound) {
  const auto p = synthetic_problem(6);
  const Explainer ex(p.context);
  const auto e = ex.explain(p.scaled.row(0), 0, small_config(Method::tree_alime, 2000, 2000));
  const auto text = render_explanation(e);
  EXPECT_NE(text.find("decision tree (depth"), std::string::npos);
  EXPECT_NE(text.find("if f"), std::string::npos);
  const auto dot = to_dot(e.tree(), e.feature_names);
  std::size_t boxes = 0;
  for (std::size_t at = dot.find("[label=\""); at != std::string::npos; at = dot.find("[label=\"", at + 1)) {
    if (dot.compare(at + 8, 3, "yes") != 0 && dot.compare(at + 8, 2, "no") != 0) ++boxes;
  }
  EXPECT_EQ(boxes, e.tree().nodes.size());
  EXPECT_LE(boxes, 63u);
  EXPECT_EQ(dot.rfind("}\n"), dot.size() - 2);
}

}  // namespace
}  // namespace alime
