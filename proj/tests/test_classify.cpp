#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

using namespace mifuse;
using namespace mifuse::testing;

namespace {

struct Labeled {
  Matrix x;
  std::vector<int> y;
};

// Class 1 around +shift on every axis, class 2 around -shift.
Labeled blobs(std::mt19937_64& rng, int per_class, int dim, double shift, double sd = 1.0) {
  Labeled d{random_matrix(rng, 2 * per_class, dim, sd), {}};
  for (int i = 0; i < 2 * per_class; ++i) {
    const int label = i % 2 + 1;
    d.x.row(i).array() += label == 1 ? shift : -shift;
    d.y.push_back(label);
  }
  return d;
}

Labeled xor_points() {
  Labeled d{Matrix(4, 2), {1, 1, 2, 2}};
  d.x << 1, 1, -1, -1, 1, -1, -1, 1;
  return d;
}

int count_equal(const std::vector<int>& a, const std::vector<int>& b) {
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] == b[i] ? 1 : 0;
  return n;
}

// Confusion-table oracle: per-class precision, recall and F1 computed from scratch.
struct Oracle {
  double acc, prec, rec, f1;
};

Oracle metrics_oracle(const std::vector<int>& t, const std::vector<int>& p) {
  double conf[3][3] = {};
  for (std::size_t i = 0; i < t.size(); ++i) conf[t[i]][p[i]] += 1.0;
  Oracle o{0, 0, 0, 0};
  o.acc = 100.0 * (conf[1][1] + conf[2][2]) / static_cast<double>(t.size());
  for (int c = 1; c <= 2; ++c) {
    const double col = conf[1][c] + conf[2][c], row = conf[c][1] + conf[c][2];
    const double pr = col > 0 ? conf[c][c] / col : 0.0;
    const double rc = row > 0 ? conf[c][c] / row : 0.0;
    o.prec += pr / 2;
    o.rec += rc / 2;
    o.f1 += (pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0.0) / 2;
  }
  return o;
}

}  // namespace

TEST(Standardizer, ThreeValueExample) {
  Matrix x(3, 1);
  x << 1, 2, 3;
  const auto s = fit_standardizer(x);
  const Matrix z = apply_standardizer(s, x);
  EXPECT_NEAR(z(0, 0), -std::sqrt(1.5), 1e-12);
  EXPECT_NEAR(z(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(z(2, 0), std::sqrt(1.5), 1e-12);
}

TEST(Standardizer, ConstantColumnZeroedAndFlagged) {
  std::mt19937_64 rng(1);
  Matrix x = random_matrix(rng, 10, 3);
  x.col(1).setConstant(4.2);
  const auto s = fit_standardizer(x);
  EXPECT_TRUE(s.constant[1]);
  EXPECT_FALSE(s.constant[0]);
  const Matrix z = apply_standardizer(s, random_matrix(rng, 5, 3));
  EXPECT_TRUE(z.col(1).isZero(0.0));
}

TEST(Standardizer, TrainingColumnsCentredUnitVariance) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix x = (random_matrix(rng, 30, 6, 1.0 + rep).array() + 3.0 * rep).matrix();
    const Matrix z = apply_standardizer(fit_standardizer(x), x);
    for (Eigen::Index j = 0; j < 6; ++j) {
      EXPECT_NEAR(z.col(j).mean(), 0.0, 1e-12);
      EXPECT_NEAR(z.col(j).squaredNorm() / 30.0, 1.0, 1e-12);
    }
  }
  EXPECT_THROW(fit_standardizer(Matrix::Ones(1, 3)), DataError);
  EXPECT_THROW(apply_standardizer(fit_standardizer(random_matrix(rng, 4, 2)), Matrix::Ones(2, 3)), DataError);
}

TEST(Svm, LinearSeparatesBlobs) {
  std::mt19937_64 rng(3);
  const auto train = blobs(rng, 40, 5, 3.0, 0.5);
  const auto test = blobs(rng, 40, 5, 3.0, 0.5);
  const auto m = train_svm(train.x, train.y, {KernelType::linear, 1.0, 0.0, 1e-3, 100000});
  EXPECT_EQ(count_equal(svm_predict(m, test.x), test.y), 80);
}

TEST(Svm, RbfSolvesXorLinearCannot) {
  const auto d = xor_points();
  const auto rbf = train_svm(d.x, d.y, {KernelType::rbf, 10.0, 1.0, 1e-3, 100000});
  EXPECT_EQ(count_equal(svm_predict(rbf, d.x), d.y), 4);
  const auto lin = train_svm(d.x, d.y, {KernelType::linear, 10.0, 0.0, 1e-3, 100000});
  EXPECT_LE(count_equal(svm_predict(lin, d.x), d.y), 3);
}

TEST(Svm, SingleClassRejected) {
  std::mt19937_64 rng(4);
  EXPECT_THROW(train_svm(random_matrix(rng, 6, 2), {1, 1, 1, 1, 1, 1}, {}), DataError);
  EXPECT_THROW(train_svm(random_matrix(rng, 6, 2), {1, 2, 1}, {}), DataError);
  EXPECT_THROW(train_svm(random_matrix(rng, 4, 2), {1, 2, 1, 2}, {KernelType::rbf, 0.0, 0.0, 1e-3, 10}), ConfigError);
}

TEST(Svm, ZeroDecisionGoesToClassOne) {
  SvmModel m;
  m.kernel = KernelType::linear;
  m.support_vectors = Matrix::Zero(0, 2);
  m.bias = 0.0;
  EXPECT_EQ(svm_predict(m, Matrix::Ones(3, 2)), (std::vector<int>{1, 1, 1}));
  m.bias = -1e-300;
  EXPECT_EQ(svm_predict(m, Matrix::Ones(1, 2)), (std::vector<int>{2}));
}

TEST(Svm, FreeSupportVectorsSitOnMargin) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const auto d = blobs(rng, 30, 3, 1.0);
    const SvmParams p{rep % 2 ? KernelType::rbf : KernelType::linear, 1.0, 0.0, 1e-3, 100000};
    const auto m = train_svm(d.x, d.y, p);
    ASSERT_GT(m.support_vectors.rows(), 0);
    for (Eigen::Index k = 0; k < m.support_vectors.rows(); ++k) {
      const double a = std::abs(m.dual_coef[k]);
      EXPECT_LE(a, m.c + 1e-12);
      if (a < m.c - 1e-9) {
        EXPECT_NEAR(std::abs(m.decision(m.support_vectors.row(k).transpose())), 1.0, 10 * p.tol);
      }
    }
    // sum alpha_i y_i = 0
    EXPECT_NEAR(m.dual_coef.sum(), 0.0, 1e-9);
  }
}

TEST(Svm, FarClassTwoPointPredictedTwo) {
  std::mt19937_64 rng(6);
  const auto d = blobs(rng, 20, 2, 2.0, 0.5);
  const auto m = train_svm(d.x, d.y, {KernelType::linear, 1.0, 0.0, 1e-3, 100000});
  Matrix far(1, 2);
  far << -50.0, -50.0;
  EXPECT_EQ(svm_predict(m, far)[0], 2);
  EXPECT_LT(m.decision(far.row(0).transpose()), -1.0);
}

TEST(Svm, IterationCapReportsViolations) {
  std::mt19937_64 rng(7);
  const auto d = blobs(rng, 50, 4, 0.2);
  try {
    train_svm(d.x, d.y, {KernelType::rbf, 100.0, 0.0, 1e-6, 2});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("KKT violations"), std::string::npos) << e.what();
  }
}

TEST(Forest, SingleUnbaggedTreeFitsTraining) {
  std::mt19937_64 rng(8);
  const auto d = blobs(rng, 30, 4, 0.3);
  const auto m = train_rf(d.x, d.y, {1, 0, 4, false, 1});
  EXPECT_EQ(count_equal(rf_predict(m, d.x), d.y), 60);
}

TEST(Forest, TiedVoteGoesToClassOne) {
  RandomForestModel m;
  m.n_features = 1;
  DecisionTree one, two;
  one.nodes.push_back(TreeNode{-1, 0.0, -1, -1, {3.0, 1.0}});
  two.nodes.push_back(TreeNode{-1, 0.0, -1, -1, {1.0, 3.0}});
  m.trees = {one, two};
  EXPECT_EQ(rf_predict(m, Matrix::Zero(1, 1))[0], 1);
  m.trees.push_back(two);
  EXPECT_EQ(rf_predict(m, Matrix::Zero(1, 1))[0], 2);
  DecisionTree even;
  even.nodes.push_back(TreeNode{-1, 0.0, -1, -1, {2.0, 2.0}});
  m.trees = {even};
  EXPECT_EQ(rf_predict(m, Matrix::Zero(1, 1))[0], 1);
}

TEST(Forest, PlantedColumnClassifiesHeldOut) {
  std::mt19937_64 rng(9);
  auto make = [&](int n) {
    Labeled d{random_matrix(rng, n, 30), {}};
    for (int i = 0; i < n; ++i) {
      d.y.push_back(i % 2 + 1);
      d.x(i, 11) = d.y.back() + 0.1 * d.x(i, 11);
    }
    return d;
  };
  const auto train = make(200), test = make(200);
  const auto m = train_rf(train.x, train.y, {100, 0, 0, true, 3});
  EXPECT_GT(count_equal(rf_predict(m, test.x), test.y), 190);
}

TEST(Forest, TreeOrderDoesNotMatter) {
  std::mt19937_64 rng(10);
  const auto d = blobs(rng, 25, 6, 0.4);
  auto m = train_rf(d.x, d.y, {31, 0, 0, true, 4});
  const auto before = rf_predict(m, d.x);
  const Matrix probe = random_matrix(rng, 50, 6);
  const auto probe_before = rf_predict(m, probe);
  std::reverse(m.trees.begin(), m.trees.end());
  EXPECT_EQ(rf_predict(m, d.x), before);
  EXPECT_EQ(rf_predict(m, probe), probe_before);
}

TEST(Forest, SameSeedSameModel) {
  std::mt19937_64 rng(11);
  const auto d = blobs(rng, 25, 6, 0.4);
  const Matrix probe = random_matrix(rng, 40, 6);
  const ForestParams p{20, 0, 0, true, 99};
  EXPECT_EQ(rf_predict(train_rf(d.x, d.y, p), probe), rf_predict(train_rf(d.x, d.y, p), probe));
  EXPECT_THROW(rf_predict(train_rf(d.x, d.y, p), Matrix::Zero(1, 5)), DataError);
}

TEST(Classifier, AffineColumnRescaleLeavesPredictionsAfterStandardizing) {
  std::mt19937_64 rng(12);
  const auto train = blobs(rng, 30, 4, 0.8);
  const auto test = blobs(rng, 30, 4, 0.8);
  Matrix train2 = train.x, test2 = test.x;
  train2.col(2) = 7.0 * train2.col(2).array() - 3.0;
  test2.col(2) = 7.0 * test2.col(2).array() - 3.0;
  for (auto kind : {ClassifierConfig::Kind::svm, ClassifierConfig::Kind::rf}) {
    ClassifierConfig cfg;
    cfg.kind = kind;
    cfg.rf.trees = 30;
    const auto s1 = fit_standardizer(train.x), s2 = fit_standardizer(train2);
    const auto m1 = fit_classifier(cfg, apply_standardizer(s1, train.x), train.y, 5);
    const auto m2 = fit_classifier(cfg, apply_standardizer(s2, train2), train.y, 5);
    EXPECT_EQ(predict(m1, apply_standardizer(s1, test.x)), predict(m2, apply_standardizer(s2, test2)));
  }
}

TEST(Metrics, PerfectPredictions) {
  std::vector<int> y;
  for (int i = 0; i < 56; ++i) y.push_back(i % 2 + 1);
  const auto r = compute_metrics(y, y);
  EXPECT_EQ(r.accuracy, 100.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.tc, 56);
  EXPECT_EQ(r.tt, 56);
}

TEST(Metrics, FourTrialFixture) {
  const std::vector<int> t{1, 1, 2, 2}, p{1, 2, 2, 2};
  const auto r = compute_metrics(t, p);
  EXPECT_DOUBLE_EQ(r.accuracy, 75.0);
  EXPECT_NEAR(r.precision, 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(r.recall, 0.75, 1e-12);
  // class 1: P=1 R=1/2 F=2/3; class 2: P=2/3 R=1 F=4/5
  EXPECT_NEAR(r.f1, 11.0 / 15.0, 1e-12);
  const auto o = metrics_oracle(t, p);
  EXPECT_NEAR(r.f1, o.f1, 1e-12);
  EXPECT_EQ(r.tp, (std::array<long, 2>{1, 2}));
  EXPECT_EQ(r.fn, (std::array<long, 2>{1, 0}));
  EXPECT_EQ(r.fp, (std::array<long, 2>{0, 1}));
}

TEST(Metrics, AllClassOnePredictions) {
  const auto r = compute_metrics({1, 2, 1, 2, 1, 2}, {1, 1, 1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(r.accuracy, 50.0);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  EXPECT_DOUBLE_EQ(r.precision, 0.25);
}

TEST(Metrics, FuzzAgainstConfusionOracle) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> lab(1, 2), len(1, 300);
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<int> t(static_cast<std::size_t>(len(rng))), p(t.size());
    for (auto& v : t) v = lab(rng);
    for (auto& v : p) v = lab(rng);
    const auto r = compute_metrics(t, p);
    const auto o = metrics_oracle(t, p);
    EXPECT_DOUBLE_EQ(r.accuracy, 100.0 * static_cast<double>(r.tc) / static_cast<double>(r.tt));
    EXPECT_EQ(r.tt, static_cast<long>(t.size()));
    EXPECT_NEAR(r.accuracy, o.acc, 1e-9);
    EXPECT_NEAR(r.precision, o.prec, 1e-12);
    EXPECT_NEAR(r.recall, o.rec, 1e-12);
    EXPECT_NEAR(r.f1, o.f1, 1e-12);
    for (double v : {r.precision, r.recall, r.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Metrics, BadInputRejected) {
  EXPECT_THROW(compute_metrics({}, {}), DataError);
  EXPECT_THROW(compute_metrics({1, 2}, {1}), DataError);
  EXPECT_THROW(compute_metrics({1, 3}, {1, 2}), DataError);
}

TEST(ModelFiles, SvmRoundTrip) {
  std::mt19937_64 rng(14);
  const auto d = blobs(rng, 20, 3, 1.0);
  const auto m = train_svm(d.x, d.y, {});
  const auto path = scratch_dir("svm_model") / "m.bin";
  save_model(m, path);
  const auto back = load_svm_model(path);
  EXPECT_EQ(back.support_vectors, m.support_vectors);
  EXPECT_EQ(back.dual_coef, m.dual_coef);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.gamma, m.gamma);
  const Matrix probe = random_matrix(rng, 30, 3);
  EXPECT_EQ(svm_predict(back, probe), svm_predict(m, probe));
  EXPECT_THROW(load_forest_model(path), DataError);
}

TEST(ModelFiles, ForestRoundTripAndCorruptMagic) {
  std::mt19937_64 rng(15);
  const auto d = blobs(rng, 20, 3, 1.0);
  const auto m = train_rf(d.x, d.y, {15, 0, 0, true, 2});
  const auto path = scratch_dir("rf_model") / "m.bin";
  save_model(m, path);
  const Matrix probe = random_matrix(rng, 30, 3);
  EXPECT_EQ(rf_predict(load_forest_model(path), probe), rf_predict(m, probe));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  EXPECT_THROW(load_forest_model(path), DataError);
  EXPECT_THROW(load_svm_model(path.parent_path() / "absent.bin"), DataError);
}
