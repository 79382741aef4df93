#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace mifuse;
using namespace mifuse::testing;

namespace {

std::vector<TrialDescriptor> random_descriptors(std::mt19937_64& rng, int n, int dim, double shift = 0.0) {
  std::vector<TrialDescriptor> out;
  for (int i = 0; i < n; ++i) {
    TrialDescriptor d;
    d.values = random_matrix(rng, dim, 1).col(0).array() + shift;
    d.trial_index = i;
    out.push_back(d);
  }
  return out;
}

// u_j = 1 / sum_y (d_j / d_y)^(2/(m-1))
Vector membership_oracle(const Vector& x, const std::vector<Vector>& centroids, double m) {
  Vector u(static_cast<Eigen::Index>(centroids.size()));
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    double s = 0.0;
    for (const auto& cy : centroids) s += std::pow((x - centroids[j]).norm() / (x - cy).norm(), 2.0 / (m - 1.0));
    u[static_cast<Eigen::Index>(j)] = 1.0 / s;
  }
  return u;
}

}  // namespace

TEST(Descriptor, LogVariancePerChannel) {
  std::mt19937_64 rng(1);
  Matrix block = random_matrix(rng, 15, 80);
  Vector row = block.row(3).transpose();
  row.array() -= row.mean();
  block.row(3) = row.transpose() / std::sqrt(row.squaredNorm() / 79.0);
  const auto d = trial_descriptor(block, 17);
  EXPECT_EQ(d.values.size(), 15);
  EXPECT_EQ(d.trial_index, 17);
  EXPECT_NEAR(d.values[3], 0.0, 1e-12);
  const Vector shifted = trial_descriptor(2.0 * block).values - d.values;
  for (Eigen::Index c = 0; c < 15; ++c) EXPECT_NEAR(shifted[c], std::log(4.0), 1e-12);
}

TEST(Descriptor, ZeroVarianceRejected) {
  Matrix block = Matrix::Ones(2, 10);
  block(0, 3) = 2.0;
  EXPECT_THROW(trial_descriptor(block), DataError);
  EXPECT_THROW(trial_descriptor(Matrix::Ones(2, 1)), DataError);
}

TEST(Membership, CentroidAndMidpointLimits) {
  const std::vector<Vector> c{Vector::Zero(3), Vector::Ones(3)};
  const Vector at = fcm_membership(c[0], c, 2.0);
  EXPECT_EQ(at[0], 1.0);
  EXPECT_EQ(at[1], 0.0);
  const Vector mid = fcm_membership(Vector::Constant(3, 0.5), c, 2.0);
  EXPECT_NEAR(mid[0], 0.5, 1e-15);
  EXPECT_NEAR(mid[1], 0.5, 1e-15);
}

TEST(Membership, MatchesRatioFormula) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> mdist(1.1, 4.0);
  for (int rep = 0; rep < 200; ++rep) {
    const int k = 2 + rep % 4;
    std::vector<Vector> c;
    for (int j = 0; j < k; ++j) c.push_back(random_matrix(rng, 5, 1).col(0));
    const Vector x = random_matrix(rng, 5, 1, 2.0).col(0);
    const double m = mdist(rng);
    const Vector u = fcm_membership(x, c, m);
    EXPECT_NEAR(u.sum(), 1.0, 1e-9);
    EXPECT_GE(u.minCoeff(), 0.0);
    EXPECT_LE((u - membership_oracle(x, c, m)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Membership, DimensionMismatchRejected) {
  const std::vector<Vector> c{Vector::Zero(3), Vector::Ones(3)};
  EXPECT_THROW(fcm_membership(Vector::Zero(2), c, 2.0), DataError);
}

TEST(FitFcm, SeparatedCloudsGetConfidentMemberships) {
  std::mt19937_64 rng(3);
  auto a = random_descriptors(rng, 30, 4, 0.0);
  auto b = random_descriptors(rng, 30, 4, 0.0);
  for (auto& d : a) d.values = 0.1 * d.values;
  for (auto& d : b) d.values = 0.1 * d.values.array() + 20.0;
  a.insert(a.end(), b.begin(), b.end());
  const auto model = fit_fcm(a, {2, 2.0, 1e-6, 300, 5});
  for (const auto& d : a) EXPECT_GT(fcm_membership(d, model).maxCoeff(), 0.95);
}

TEST(FitFcm, IdenticalPointsRejected) {
  std::vector<TrialDescriptor> same(10, TrialDescriptor{Vector::Ones(3), 0});
  EXPECT_THROW(fit_fcm(same, {}), DataError);
}

TEST(FitFcm, ObjectiveNonincreasing) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    const auto data = random_descriptors(rng, 20 + rep % 30, 2 + rep % 6);
    const auto model = fit_fcm(data, {2 + rep % 3, 2.0, 1e-6, 300, static_cast<std::uint64_t>(rep)});
    ASSERT_GE(model.objective_trace.size(), 2u);
    for (std::size_t t = 1; t < model.objective_trace.size(); ++t)
      EXPECT_LE(model.objective_trace[t], model.objective_trace[t - 1] + 1e-10) << "dataset " << rep << " step " << t;
    EXPECT_LE(fcm_objective(data, model.centroids, 2.0), model.objective_trace.front());
  }
}

TEST(FitFcm, TraceMatchesRecomputedObjective) {
  std::mt19937_64 rng(5);
  const auto data = random_descriptors(rng, 40, 3);
  const auto model = fit_fcm(data, {2, 2.0, 1e-6, 300, 9});
  EXPECT_NEAR(model.objective_trace.back(), fcm_objective(data, model.centroids, 2.0), 1e-12);
  EXPECT_EQ(model.objective_trace.size(), static_cast<std::size_t>(model.iterations) + 1);
}

TEST(FitFcm, CentroidsAreWeightedMeans) {
  std::mt19937_64 rng(6);
  const auto data = random_descriptors(rng, 50, 3);
  const auto model = fit_fcm(data, {2, 2.0, 1e-12, 1000, 2});
  // at convergence one more update leaves the centroids in place
  for (std::size_t j = 0; j < 2; ++j) {
    Vector num = Vector::Zero(3);
    double den = 0.0;
    for (const auto& d : data) {
      const double w = std::pow(membership_oracle(d.values, model.centroids, 2.0)[static_cast<Eigen::Index>(j)], 2.0);
      num += w * d.values;
      den += w;
    }
    EXPECT_LE((num / den - model.centroids[j]).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(FitFcm, DeterministicPerSeed) {
  std::mt19937_64 rng(7);
  const auto data = random_descriptors(rng, 40, 5);
  const auto a = fit_fcm(data, {2, 2.0, 1e-6, 300, 11});
  const auto b = fit_fcm(data, {2, 2.0, 1e-6, 300, 11});
  ASSERT_EQ(a.centroids.size(), b.centroids.size());
  for (std::size_t j = 0; j < a.centroids.size(); ++j) EXPECT_EQ(a.centroids[j], b.centroids[j]);
  EXPECT_EQ(a.objective_trace, b.objective_trace);
}

TEST(FitFcm, TranslationEquivariant) {
  std::mt19937_64 rng(8);
  const auto data = random_descriptors(rng, 40, 4);
  const Vector shift = Vector::Constant(4, 3.5);
  auto moved = data;
  for (auto& d : moved) d.values += shift;
  const auto a = fit_fcm(data, {2, 2.0, 1e-6, 300, 1});
  const auto b = fit_fcm(moved, {2, 2.0, 1e-6, 300, 1});
  for (int q = 0; q < 50; ++q) {
    const Vector x = random_matrix(rng, 4, 1).col(0);
    EXPECT_LE((fcm_membership(x, a.centroids, 2.0) - fcm_membership(x + shift, b.centroids, 2.0)).cwiseAbs().maxCoeff(),
              1e-9);
  }
}

TEST(FitFcm, InvalidParametersRejected) {
  std::mt19937_64 rng(9);
  const auto data = random_descriptors(rng, 10, 2);
  EXPECT_THROW(fit_fcm(data, {1, 2.0, 1e-6, 300, 0}), ConfigError);
  EXPECT_THROW(fit_fcm(data, {2, 1.0, 1e-6, 300, 0}), ConfigError);
  EXPECT_THROW(fit_fcm(data, {2, 2.0, 0.0, 300, 0}), ConfigError);
  EXPECT_THROW(fit_fcm({data[0]}, {2, 2.0, 1e-6, 300, 0}), DataError);
}
