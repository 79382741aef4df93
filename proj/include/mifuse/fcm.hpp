#pragma once

// Fuzzy C-means over per-trial region descriptors. Membership degrees of a trial
// form its FCM feature block.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mifuse/csp.hpp"
#include "mifuse/error.hpp"

namespace mifuse {

struct TrialDescriptor {
  Vector values;
  std::int64_t trial_index = 0;
};

/// Per-channel log of the unbiased temporal variance.
inline TrialDescriptor trial_descriptor(const Matrix& block, std::int64_t trial_index = 0) {
  if (block.cols() < 2) throw DataError("FCM descriptor: block needs at least 2 samples");
  TrialDescriptor d;
  d.trial_index = trial_index;
  d.values.resize(block.rows());
  for (Eigen::Index c = 0; c < block.rows(); ++c) {
    const double var = unbiased_variance(block.row(c).transpose());
    if (!(var > 0.0)) throw DataError("FCM descriptor: channel " + std::to_string(c) + " has zero variance");
    d.values[c] = std::log(var);
  }
  if (!d.values.allFinite()) throw DataError("FCM descriptor: non-finite entry");
  return d;
}

struct FcmParams {
  int clusters = 2;
  double fuzzifier = 2.0;
  double tol = 1e-6;
  int max_iter = 300;
  std::uint64_t seed = 0;
};

struct FcmModel {
  std::vector<Vector> centroids;
  double fuzzifier = 2.0;
  std::vector<double> objective_trace;  // J_m after initialization and after each update
  int iterations = 0;
  std::uint64_t seed = 0;

  int clusters() const { return static_cast<int>(centroids.size()); }
};

/// Memberships of `x` given centroids. A query that coincides with a centroid gets a one-hot row.
inline Vector fcm_membership(const Vector& x, const std::vector<Vector>& centroids, double fuzzifier) {
  const auto k = centroids.size();
  Vector u(static_cast<Eigen::Index>(k));
  std::vector<double> dist(k);
  for (std::size_t j = 0; j < k; ++j) {
    if (centroids[j].size() != x.size()) throw DataError("FCM membership: dimension mismatch");
    dist[j] = (x - centroids[j]).norm();
  }
  const auto nearest = static_cast<std::size_t>(std::min_element(dist.begin(), dist.end()) - dist.begin());
  if (dist[nearest] == 0.0) {
    u.setZero();
    u[static_cast<Eigen::Index>(nearest)] = 1.0;
    return u;
  }
  // u_j = d_j^{-e} / sum_y d_y^{-e}, e = 2/(m-1); distances rescaled by the nearest one
  const double e = 2.0 / (fuzzifier - 1.0);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    u[static_cast<Eigen::Index>(j)] = std::pow(dist[nearest] / dist[j], e);
    total += u[static_cast<Eigen::Index>(j)];
  }
  return u / total;
}

inline Vector fcm_membership(const TrialDescriptor& x, const FcmModel& model) {
  return fcm_membership(x.values, model.centroids, model.fuzzifier);
}

/// J_m = sum_i sum_j u_ij^m ||x_i - k_j||^2 with memberships derived from the centroids.
inline double fcm_objective(const std::vector<TrialDescriptor>& data, const std::vector<Vector>& centroids,
                            double fuzzifier) {
  double j_m = 0.0;
  for (const auto& d : data) {
    const Vector u = fcm_membership(d.values, centroids, fuzzifier);
    for (std::size_t j = 0; j < centroids.size(); ++j)
      j_m += std::pow(u[static_cast<Eigen::Index>(j)], fuzzifier) * (d.values - centroids[j]).squaredNorm();
  }
  return j_m;
}

namespace detail {

/// Seeded first pick, then repeatedly the point farthest from the chosen set.
inline std::vector<Vector> farthest_point_init(const std::vector<TrialDescriptor>& data, int k,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<Vector> centroids{data[pick(rng)].values};
  std::vector<double> nearest(data.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(centroids.size()) < k) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      nearest[i] = std::min(nearest[i], (data[i].values - centroids.back()).squaredNorm());
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    if (!(best_d > 0.0)) throw DataError("FCM: fewer distinct descriptors than clusters");
    centroids.push_back(data[best].values);
  }
  return centroids;
}

}  // namespace detail

/// Alternating centroid/membership updates until the largest centroid shift drops below tol or
/// max_iter updates have run.
inline FcmModel fit_fcm(const std::vector<TrialDescriptor>& data, const FcmParams& params) {
  if (params.clusters < 2) throw ConfigError("FCM: clusters must be >= 2");
  if (!(params.fuzzifier > 1.0)) throw ConfigError("FCM: fuzzifier must exceed 1");
  if (!(params.tol > 0.0)) throw ConfigError("FCM: tol must be positive");
  if (params.max_iter < 1) throw ConfigError("FCM: max_iter must be >= 1");
  if (data.size() < static_cast<std::size_t>(params.clusters))
    throw DataError("FCM: fewer descriptors than clusters");
  const auto dim = data.front().values.size();
  for (const auto& d : data) {
    if (d.values.size() != dim) throw DataError("FCM: descriptor dimensions differ");
    if (!d.values.allFinite()) throw DataError("FCM: non-finite descriptor");
  }

  FcmModel model;
  model.fuzzifier = params.fuzzifier;
  model.seed = params.seed;
  model.centroids = detail::farthest_point_init(data, params.clusters, params.seed);
  model.objective_trace.push_back(fcm_objective(data, model.centroids, params.fuzzifier));

  const auto k = static_cast<std::size_t>(params.clusters);
  for (int it = 0; it < params.max_iter; ++it) {
    std::vector<Vector> next(k, Vector::Zero(dim));
    std::vector<double> weight(k, 0.0);
    for (const auto& d : data) {
      const Vector u = fcm_membership(d.values, model.centroids, params.fuzzifier);
      for (std::size_t j = 0; j < k; ++j) {
        const double w = std::pow(u[static_cast<Eigen::Index>(j)], params.fuzzifier);
        next[j] += w * d.values;
        weight[j] += w;
      }
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (!(weight[j] > 0.0)) throw NumericalError("FCM: cluster " + std::to_string(j) + " lost all membership");
      next[j] /= weight[j];
      shift = std::max(shift, (next[j] - model.centroids[j]).norm());
    }
    model.centroids = std::move(next);
    const double j_m = fcm_objective(data, model.centroids, params.fuzzifier);
    if (!std::isfinite(j_m)) throw NumericalError("FCM: non-finite objective");
    model.objective_trace.push_back(j_m);
    model.iterations = it + 1;
    if (shift < params.tol) break;
  }
  return model;
}

}  // namespace mifuse
