#include "alime/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

namespace alime {
namespace {

FeatureSchema color_schema() {
  FeatureSchema s;
  s.features = {{"size", FeatureKind::numeric, {}}, {"color", FeatureKind::categorical, {"red", "green", "blue"}}};
  s.label_column = "y";
  return s;
}

Dataset parse(const std::string& text, const FeatureSchema& schema) {
  std::istringstream in(text);
  return read_csv(in, schema);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an alime::Error";
  return ErrorCode::invalid_argument;
}

TEST(ReadCsv, OneHotEncodesCategoryInSchemaOrder) {
  const auto ds = parse("size,color,y\n1.5,green,1\n", color_schema());
  const auto enc = one_hot_encode(ds);
  ASSERT_EQ(enc.cols(), 4u);
  EXPECT_DOUBLE_EQ(enc.matrix(0, 0), 1.5);
  EXPECT_EQ(enc.matrix(0, 1), 0.0);
  EXPECT_EQ(enc.matrix(0, 2), 1.0);
  EXPECT_EQ(enc.matrix(0, 3), 0.0);
  EXPECT_EQ(enc.column_names[2], "color=green");
  EXPECT_EQ(enc.labels, std::vector<int>{1});
}

TEST(ReadCsv, ImputesNumericMeanAndCountsCells) {
  FeatureSchema s;
  s.features = {{"a", FeatureKind::numeric, {}}};
  s.label_column = "y";
  const auto ds = parse("a,y\n2,0\n?,1\n4,0\n", s);
  EXPECT_DOUBLE_EQ(std::get<double>(ds.rows[1][0]), 3.0);
  EXPECT_EQ(ds.imputed[0], 1u);
  EXPECT_EQ(ds.total_imputed(), 1u);
}

TEST(ReadCsv, ImputesCategoricalModeWithFirstCategoryOnTies) {
  auto ds = parse("size,color,y\n1,blue,0\n2,,1\n3,green,0\n4,blue,1\n", color_schema());
  EXPECT_EQ(std::get<std::string>(ds.rows[1][1]), "blue");
  ds = parse("size,color,y\n1,blue,0\n2,?,1\n3,green,0\n", color_schema());
  EXPECT_EQ(std::get<std::string>(ds.rows[1][1]), "green");  // green precedes blue in the schema
}

TEST(ReadCsv, ColumnOrderInFileDoesNotMatter) {
  const auto a = one_hot_encode(parse("size,color,y\n1,red,0\n", color_schema()));
  const auto b = one_hot_encode(parse("y,color,size\n0,red,1\n", color_schema()));
  EXPECT_EQ(a.matrix, b.matrix);
}

TEST(ReadCsv, QuotedFieldsAndWhitespace) {
  const auto ds = parse("size,color,y\n\" 2.5 \", red ,1\n", color_schema());
  EXPECT_DOUBLE_EQ(std::get<double>(ds.rows[0][0]), 2.5);
  EXPECT_EQ(std::get<std::string>(ds.rows[0][1]), "red");
}

TEST(ReadCsv, Errors) {
  const auto schema = color_schema();
  EXPECT_EQ(code_of([&] { parse("size,y\n1,0\n", schema); }), ErrorCode::missing_column);
  EXPECT_EQ(code_of([&] { parse("size,color,y\n1,purple,0\n", schema); }), ErrorCode::unknown_category);
  EXPECT_EQ(code_of([&] { parse("size,color,y\n1,red,2\n", schema); }), ErrorCode::non_binary_label);
  EXPECT_EQ(code_of([&] { parse("size,color,y\n1,red,?\n", schema); }), ErrorCode::non_binary_label);
  EXPECT_EQ(code_of([&] { parse("size,color,y\nabc,red,1\n", schema); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([&] { parse("size,color,y\n1,red\n", schema); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([&] { load_csv("/nonexistent/file.csv", schema); }), ErrorCode::missing_file);
}

TEST(Schema, JsonRoundTripAndValidation) {
  const auto s = color_schema();
  const auto back = FeatureSchema::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(back.categorical_count(), 1u);

  auto j = s.to_json();
  j["label_column"] = "size";
  EXPECT_EQ(code_of([&] { FeatureSchema::from_json(j); }), ErrorCode::invalid_argument);
  j = s.to_json();
  j["features"][0]["kind"] = "ordinal";
  EXPECT_EQ(code_of([&] { FeatureSchema::from_json(j); }), ErrorCode::parse_error);
}

TEST(OneHot, GroupsSumToOneOnRandomData) {
  const auto schema = color_schema();
  Rng rng(5);
  std::ostringstream csv;
  csv << "size,color,y\n";
  const char* cats[] = {"red", "green", "blue", "?"};
  for (int r = 0; r < 1000; ++r) csv << rng.normal() << ',' << cats[rng.below(4)] << ',' << rng.below(2) << '\n';
  const auto enc = one_hot_encode(parse(csv.str(), schema));
  ASSERT_EQ(enc.rows(), 1000u);
  for (Eigen::Index r = 0; r < enc.matrix.rows(); ++r) {
    EXPECT_EQ(enc.matrix.row(r).tail(3).sum(), 1.0);
  }
}

TEST(Scaler, PopulationStandardDeviation) {
  Matrix x(3, 1);
  x << 1, 2, 3;
  const auto s = fit_scaler(x);
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_NEAR(s.std[0], std::sqrt(2.0 / 3.0), 1e-12);
  const Matrix z = apply_scaler(s, x);
  EXPECT_NEAR(z(0, 0), -1.2247448713915890, 1e-9);
  EXPECT_NEAR(z(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(z(2, 0), 1.2247448713915890, 1e-9);
}

TEST(Scaler, ConstantColumnIsOnlyCentered) {
  Matrix x(3, 2);
  x << 5, 1, 5, 2, 5, 4;
  const auto s = fit_scaler(x);
  EXPECT_TRUE(s.constant[0]);
  EXPECT_FALSE(s.constant[1]);
  const Matrix z = apply_scaler(s, x);
  EXPECT_TRUE((z.col(0).array() == 0.0).all());
}

TEST(Scaler, ScaledColumnsHaveZeroMeanUnitVariance) {
  Rng rng(9);
  Matrix x(200, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 10.0 * rng.normal() + 3.0;
  const Matrix z = apply_scaler(fit_scaler(x), x);
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    EXPECT_NEAR(z.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR(z.col(c).squaredNorm() / 200.0, 1.0, 1e-12);
  }
}

TEST(Scaler, JsonRoundTripIsExact) {
  Matrix x(4, 2);
  x << 0.1, 7, 0.2, 7, 0.35, 7, 1.0 / 3.0, 7;
  const auto s = fit_scaler(x);
  const auto back = Scaler::from_json(nlohmann::json::parse(s.to_json().dump()));
  EXPECT_EQ(back.mean, s.mean);
  EXPECT_EQ(back.std, s.std);
  EXPECT_EQ(back.constant, s.constant);
}

TEST(Scaler, RejectsEmptyAndMismatchedInput) {
  EXPECT_EQ(code_of([] { fit_scaler(Matrix(0, 3)); }), ErrorCode::empty_matrix);
  const auto s = Scaler::identity(2);
  EXPECT_EQ(code_of([&] { apply_scaler(s, Matrix(Matrix::Zero(1, 3))); }), ErrorCode::dimension_mismatch);
}

TEST(Split, SizesAndPartition) {
  const auto s = split_indices(569, 0.8, 1);
  EXPECT_EQ(s.train.size(), 455u);
  EXPECT_EQ(s.test.size(), 114u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 569u);
  EXPECT_EQ(*all.rbegin(), 568u);
}

TEST(Split, SeededAndSeedSensitive) {
  EXPECT_EQ(split_indices(100, 0.8, 3).train, split_indices(100, 0.8, 3).train);
  EXPECT_NE(split_indices(100, 0.8, 3).train, split_indices(100, 0.8, 4).train);
}

TEST(Split, DegenerateSplitsAreRejected) {
  EXPECT_EQ(code_of([] { split_indices(1, 0.8, 0); }), ErrorCode::degenerate_split);
  EXPECT_EQ(code_of([] { split_indices(4, 0.1, 0); }), ErrorCode::degenerate_split);
  EXPECT_EQ(code_of([] { split_indices(10, 1.0, 0); }), ErrorCode::invalid_argument);
}

TEST(Split, SubsetKeepsRowIdsAndLabels) {
  const auto ds = one_hot_encode(parse("size,color,y\n1,red,0\n2,green,1\n3,blue,1\n4,red,0\n5,red,1\n", color_schema()));
  const auto [train, test] = split(ds, 0.6, 2);
  EXPECT_EQ(train.rows() + test.rows(), 5u);
  for (std::size_t i = 0; i < test.rows(); ++i) {
    const auto id = test.row_ids[i];
    EXPECT_EQ(test.labels[i], ds.labels[id]);
    EXPECT_EQ(test.matrix.row(static_cast<Eigen::Index>(i)), ds.matrix.row(static_cast<Eigen::Index>(id)));
  }
}

TEST(BundledData, BreastCancerShape) {
  const std::string dir = ALIME_DATA_DIR;
  const auto schema = load_schema(dir + "/breast_cancer.schema.json");
  const auto enc = one_hot_encode(load_csv(dir + "/breast_cancer.csv", schema));
  EXPECT_EQ(enc.rows(), 569u);
  EXPECT_EQ(enc.cols(), 30u);
  EXPECT_EQ(std::accumulate(enc.labels.begin(), enc.labels.end(), 0), 212);  // malignant
}

}  // namespace
}  // namespace alime
