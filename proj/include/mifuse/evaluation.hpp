#pragma once

// Cross-validated evaluation of the region-fusion pipeline: configuration,
// stratified folds, per-fold fitting with a leakage guard, ablation and reports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mifuse/classify.hpp"
#include "mifuse/csp.hpp"
#include "mifuse/dataset.hpp"
#include "mifuse/error.hpp"
#include "mifuse/fcm.hpp"
#include "mifuse/fusion.hpp"
#include "mifuse/preprocess.hpp"
#include "mifuse/seeding.hpp"
#include "mifuse/spd.hpp"

namespace mifuse {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

enum class EvalMode { kfold, split };

struct PipelineConfig {
  double band_low_hz = 8.0;
  double band_high_hz = 30.0;
  int band_order = 4;
  json montage;  // {"regions": [...]}, resolved against the epoch set's channel names
  double window_start_s = 0.5;
  double window_end_s = 3.0;
  int csp_pairs = 1;
  FcmParams fcm;
  TangentVariant tsm_variant = TangentVariant::paper;
  KarcherOptions karcher;
  double cov_eps_scale = 1e-8;
  SelectionPolicy selection = SelectionPolicy::top(64);
  ForestParams selection_forest{500, 0, 0, true, 0};
  ClassifierConfig classifier;
  EvalMode mode = EvalMode::kfold;
  int folds = 5;
  double train_fraction = 0.8;
  std::uint64_t seed = 42;
  int extra_noise_features = 0;  // diagnostic: i.i.d. N(0,1) columns appended to every fused vector
  bool record_timing = false;

  std::string protocol() const {
    if (mode == EvalMode::kfold) return "stratified-kfold-" + std::to_string(folds);
    char buf[64];
    std::snprintf(buf, sizeof buf, "stratified-split-%.17g", train_fraction);
    return buf;
  }
};

inline void validate_config(const PipelineConfig& c) {
  if (!(c.band_low_hz > 0.0 && c.band_low_hz < c.band_high_hz)) throw ConfigError("config: band must satisfy 0 < low < high");
  if (c.band_order < 1) throw ConfigError("config: band order must be >= 1");
  if (!c.montage.is_object() || !c.montage.contains("regions")) throw ConfigError("config: montage is required");
  if (!(c.window_end_s > c.window_start_s)) throw ConfigError("config: window end must exceed start");
  if (c.csp_pairs < 1) throw ConfigError("config: csp pairs must be >= 1");
  if (c.fcm.clusters < 2 || !(c.fcm.fuzzifier > 1.0) || !(c.fcm.tol > 0.0) || c.fcm.max_iter < 1)
    throw ConfigError("config: fcm requires clusters >= 2, fuzzifier > 1, tol > 0, max_iter >= 1");
  if (!(c.karcher.tol > 0.0) || c.karcher.max_iter < 1) throw ConfigError("config: karcher tol/max_iter invalid");
  if (!(c.cov_eps_scale > 0.0)) throw ConfigError("config: covariance eps_scale must be positive");
  if (c.selection.kind == SelectionPolicy::Kind::top_k && c.selection.k < 1)
    throw ConfigError("config: selection top:K requires K >= 1");
  if (c.selection.kind == SelectionPolicy::Kind::cumulative && !(c.selection.fraction > 0.0 && c.selection.fraction <= 1.0))
    throw ConfigError("config: selection cum:F requires F in (0, 1]");
  if (c.selection_forest.trees < 1) throw ConfigError("config: selection forest needs >= 1 tree");
  if (c.mode == EvalMode::kfold && c.folds < 2) throw ConfigError("config: k must be >= 2");
  if (c.mode == EvalMode::split && !(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    throw ConfigError("config: train fraction must lie in (0, 1)");
  if (c.extra_noise_features < 0) throw ConfigError("config: extra_noise_features must be >= 0");
  if (!(c.classifier.svm.c > 0.0) || !(c.classifier.svm.tol > 0.0) || c.classifier.svm.max_iter < 1)
    throw ConfigError("config: svm requires C > 0, tol > 0, max_iter >= 1");
  if (c.classifier.rf.trees < 1) throw ConfigError("config: rf needs >= 1 tree");
}

namespace detail {

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
  }
}

inline json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + " " + path.string() + " does not parse: " + e.what());
  }
}

}  // namespace detail

/// Every field is optional except the montage, which is either inline or a path relative to
/// `base_dir`.
inline PipelineConfig config_from_json(const json& j, const fs::path& base_dir = {}) {
  PipelineConfig c;
  try {
    detail::reject_unknown_keys(j, {"band", "montage", "window", "csp", "fcm", "tsm", "selection", "classifier",
                                    "evaluation", "extra_noise_features", "record_timing"},
                                "config");
    if (j.contains("band")) {
      const auto& b = j["band"];
      detail::reject_unknown_keys(b, {"low_hz", "high_hz", "order"}, "band");
      c.band_low_hz = b.value("low_hz", c.band_low_hz);
      c.band_high_hz = b.value("high_hz", c.band_high_hz);
      c.band_order = b.value("order", c.band_order);
    }
    if (j.contains("montage")) {
      const auto& m = j["montage"];
      if (m.is_string()) {
        fs::path p = m.get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        c.montage = detail::read_json_file(p, "montage");
      } else {
        c.montage = m;
      }
    }
    if (j.contains("window")) {
      const auto& w = j["window"];
      detail::reject_unknown_keys(w, {"start_s", "end_s"}, "window");
      c.window_start_s = w.value("start_s", c.window_start_s);
      c.window_end_s = w.value("end_s", c.window_end_s);
    }
    if (j.contains("csp")) {
      detail::reject_unknown_keys(j["csp"], {"pairs"}, "csp");
      c.csp_pairs = j["csp"].value("pairs", c.csp_pairs);
    }
    if (j.contains("fcm")) {
      const auto& f = j["fcm"];
      detail::reject_unknown_keys(f, {"clusters", "fuzzifier", "tol", "max_iter"}, "fcm");
      c.fcm.clusters = f.value("clusters", c.fcm.clusters);
      c.fcm.fuzzifier = f.value("fuzzifier", c.fcm.fuzzifier);
      c.fcm.tol = f.value("tol", c.fcm.tol);
      c.fcm.max_iter = f.value("max_iter", c.fcm.max_iter);
    }
    if (j.contains("tsm")) {
      const auto& t = j["tsm"];
      detail::reject_unknown_keys(t, {"variant", "mean_tol", "mean_max_iter", "eps_scale"}, "tsm");
      const auto v = t.value("variant", std::string("paper"));
      if (v == "paper") c.tsm_variant = TangentVariant::paper;
      else if (v == "standard") c.tsm_variant = TangentVariant::standard;
      else throw ConfigError("config: tsm variant must be 'paper' or 'standard'");
      c.karcher.tol = t.value("mean_tol", c.karcher.tol);
      c.karcher.max_iter = t.value("mean_max_iter", c.karcher.max_iter);
      c.cov_eps_scale = t.value("eps_scale", c.cov_eps_scale);
    }
    if (j.contains("selection")) {
      const auto& s = j["selection"];
      if (s.is_string()) {
        c.selection = SelectionPolicy::parse(s.get<std::string>());
      } else {
        detail::reject_unknown_keys(s, {"policy", "trees", "max_depth", "max_features"}, "selection");
        c.selection = SelectionPolicy::parse(s.value("policy", c.selection.describe()));
        c.selection_forest.trees = s.value("trees", c.selection_forest.trees);
        c.selection_forest.max_depth = s.value("max_depth", c.selection_forest.max_depth);
        c.selection_forest.max_features = s.value("max_features", c.selection_forest.max_features);
      }
    }
    if (j.contains("classifier")) {
      const auto& k = j["classifier"];
      detail::reject_unknown_keys(k, {"type", "C", "kernel", "gamma", "tol", "max_iter", "trees", "max_depth", "max_features"},
                                  "classifier");
      const auto type = k.value("type", std::string("svm"));
      if (type == "svm") c.classifier.kind = ClassifierConfig::Kind::svm;
      else if (type == "rf") c.classifier.kind = ClassifierConfig::Kind::rf;
      else throw ConfigError("config: classifier type must be 'svm' or 'rf'");
      c.classifier.svm.c = k.value("C", c.classifier.svm.c);
      const auto kernel = k.value("kernel", std::string("rbf"));
      if (kernel == "rbf") c.classifier.svm.kernel = KernelType::rbf;
      else if (kernel == "linear") c.classifier.svm.kernel = KernelType::linear;
      else throw ConfigError("config: svm kernel must be 'rbf' or 'linear'");
      if (k.contains("gamma") && !k["gamma"].is_null()) c.classifier.svm.gamma = k["gamma"].get<double>();
      c.classifier.svm.tol = k.value("tol", c.classifier.svm.tol);
      c.classifier.svm.max_iter = k.value("max_iter", c.classifier.svm.max_iter);
      c.classifier.rf.trees = k.value("trees", c.classifier.rf.trees);
      c.classifier.rf.max_depth = k.value("max_depth", c.classifier.rf.max_depth);
      c.classifier.rf.max_features = k.value("max_features", c.classifier.rf.max_features);
    }
    if (j.contains("evaluation")) {
      const auto& e = j["evaluation"];
      detail::reject_unknown_keys(e, {"mode", "k", "train_fraction", "seed"}, "evaluation");
      const auto mode = e.value("mode", std::string("kfold"));
      if (mode == "kfold") c.mode = EvalMode::kfold;
      else if (mode == "split") c.mode = EvalMode::split;
      else throw ConfigError("config: evaluation mode must be 'kfold' or 'split'");
      c.folds = e.value("k", c.folds);
      c.train_fraction = e.value("train_fraction", c.train_fraction);
      c.seed = e.value("seed", c.seed);
    }
    c.extra_noise_features = j.value("extra_noise_features", c.extra_noise_features);
    c.record_timing = j.value("record_timing", c.record_timing);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate_config(c);
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  return config_from_json(detail::read_json_file(path, "config"), fs::absolute(path).parent_path());
}

/// Complete snapshot (montage inlined); config_from_json(config_to_json(c)) reproduces c.
inline json config_to_json(const PipelineConfig& c) {
  json j;
  j["band"] = {{"low_hz", c.band_low_hz}, {"high_hz", c.band_high_hz}, {"order", c.band_order}};
  j["montage"] = c.montage;
  j["window"] = {{"start_s", c.window_start_s}, {"end_s", c.window_end_s}};
  j["csp"] = {{"pairs", c.csp_pairs}};
  j["fcm"] = {{"clusters", c.fcm.clusters}, {"fuzzifier", c.fcm.fuzzifier}, {"tol", c.fcm.tol}, {"max_iter", c.fcm.max_iter}};
  j["tsm"] = {{"variant", to_string(c.tsm_variant)},
              {"mean_tol", c.karcher.tol},
              {"mean_max_iter", c.karcher.max_iter},
              {"eps_scale", c.cov_eps_scale}};
  j["selection"] = {{"policy", c.selection.describe()},
                    {"trees", c.selection_forest.trees},
                    {"max_depth", c.selection_forest.max_depth},
                    {"max_features", c.selection_forest.max_features}};
  const auto& k = c.classifier;
  j["classifier"] = {{"type", k.kind == ClassifierConfig::Kind::svm ? "svm" : "rf"},
                     {"C", k.svm.c},
                     {"kernel", k.svm.kernel == KernelType::rbf ? "rbf" : "linear"},
                     {"gamma", k.svm.gamma > 0.0 ? json(k.svm.gamma) : json(nullptr)},
                     {"tol", k.svm.tol},
                     {"max_iter", k.svm.max_iter},
                     {"trees", k.rf.trees},
                     {"max_depth", k.rf.max_depth},
                     {"max_features", k.rf.max_features}};
  j["evaluation"] = {{"mode", c.mode == EvalMode::kfold ? "kfold" : "split"},
                     {"k", c.folds},
                     {"train_fraction", c.train_fraction},
                     {"seed", c.seed}};
  j["extra_noise_features"] = c.extra_noise_features;
  j["record_timing"] = c.record_timing;
  return j;
}

// ---------------------------------------------------------------------------
// Fold assignment

/// Fold id per trial. Each class is shuffled, the classes are concatenated and positions are dealt
/// round-robin, so fold sizes differ by at most one and every fold holds floor or ceil of each
/// class's share.
inline std::vector<int> stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("stratified k-fold: k must be >= 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [label, idx] : by_class)
    if (idx.size() < static_cast<std::size_t>(k))
      throw DataError("stratified k-fold: class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                      " trials, fewer than k = " + std::to_string(k));
  std::mt19937_64 rng(seed);
  std::vector<int> fold(labels.size(), -1);
  std::size_t pos = 0;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (auto i : idx) fold[i] = static_cast<int>(pos++ % static_cast<std::size_t>(k));
  }
  return fold;
}

/// Single stratified split: 0 marks training trials, 1 test trials.
inline std::vector<int> stratified_split(const std::vector<int>& labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split: train fraction must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<int> part(labels.size(), 1);
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2)
      throw DataError("split: class " + std::to_string(label) + " needs at least 2 trials");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t i = 0; i < n_train; ++i) part[idx[i]] = 0;
  }
  return part;
}

// ---------------------------------------------------------------------------
// Feature extraction fitted on one training fold

namespace detail {

inline std::uint64_t hash_epochs(const EpochSet& set) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : set.epochs()) {
    mix(&e.label, sizeof e.label);
    mix(&e.trial_index, sizeof e.trial_index);
    mix(e.data.data(), static_cast<std::size_t>(e.data.size()) * sizeof(double));
  }
  return h;
}

}  // namespace detail

struct RegionModel {
  std::string name;
  SpatialFilterBank csp;
  FcmModel fcm;
  SpdMatrix tsm_mean;
  Matrix tsm_mean_invsqrt;
};

/// Filter, spatial weighting and the per-region CSP / FCM / tangent-space models, fitted on the
/// training trials it is given and applied unchanged to any later trial.
class FeatureExtractor {
 public:
  FeatureExtractor(const PipelineConfig& config, const std::vector<std::string>& channel_names,
                   double sampling_rate_hz, std::uint64_t seed)
      : config_(config), seed_(seed) {
    filter_ = with_stage("filter", [&] {
      return design_bandpass(config.band_low_hz, config.band_high_hz, sampling_rate_hz, config.band_order);
    });
    groups_ = with_stage("montage", [&] { return montage_from_json(config.montage, channel_names); });
  }

  const ChannelGroups& groups() const { return groups_; }
  const std::vector<RegionModel>& regions() const { return regions_; }

  void fit(const EpochSet& train) {
    const auto grouped = prepare(train);
    const std::size_t n_regions = groups_.size();
    regions_.clear();
    for (std::size_t r = 0; r < n_regions; ++r) {
      RegionModel model;
      model.name = groups_.groups()[r].name;
      std::vector<SpdMatrix> class1, class2, covs;
      std::vector<TrialDescriptor> descriptors;
      with_stage("csp:" + model.name, [&] {
        for (const auto& g : grouped)
          (g.label == 1 ? class1 : class2).push_back(normalized_covariance(g.blocks[r], config_.cov_eps_scale));
        model.csp = fit_csp(class1, class2, config_.csp_pairs, model.name);
      });
      with_stage("fcm:" + model.name, [&] {
        for (const auto& g : grouped) descriptors.push_back(trial_descriptor(g.blocks[r], g.trial_index));
        FcmParams p = config_.fcm;
        p.seed = derive_seed(seed_, "fcm", r);
        model.fcm = fit_fcm(descriptors, p);
      });
      with_stage("tsm:" + model.name, [&] {
        for (const auto& g : grouped) covs.push_back(sample_covariance(g.blocks[r], config_.cov_eps_scale));
        model.tsm_mean = riemannian_mean_detailed(covs, config_.karcher).mean;
        model.tsm_mean_invsqrt = spd_power_matrix(model.tsm_mean, -0.5);
      });
      regions_.push_back(std::move(model));
    }
  }

  FeatureMatrix transform(const EpochSet& set) const {
    if (regions_.empty()) throw DataError("feature extractor used before fit");
    const auto grouped = prepare(set);
    std::vector<std::string> order;
    for (const auto& g : groups_.groups()) order.push_back(g.name);
    std::vector<FusedFeatureVector> fused;
    BlockLayout first_layout;
    for (const auto& g : grouped) {
      std::map<std::string, RegionBlocks> blocks;
      for (std::size_t r = 0; r < regions_.size(); ++r) {
        const auto& m = regions_[r];
        RegionBlocks b;
        with_stage("csp:" + m.name, [&] { b.csp = csp_features(m.csp, g.blocks[r]); });
        with_stage("fcm:" + m.name, [&] { b.fcm = fcm_membership(trial_descriptor(g.blocks[r], g.trial_index), m.fcm); });
        with_stage("tsm:" + m.name, [&] {
          const auto cov = sample_covariance(g.blocks[r], config_.cov_eps_scale);
          b.tsm = vectorize_symmetric(tangent_project(cov, m.tsm_mean_invsqrt, config_.tsm_variant)).values;
        });
        blocks.emplace(m.name, std::move(b));
      }
      const BlockLayout* expected = fused.empty() ? nullptr : &first_layout;
      fused.push_back(with_stage("fusion", [&] { return fuse_trial(blocks, order, g.trial_index, g.label, expected); }));
      if (fused.size() == 1) first_layout = fused.front().layout;
    }
    FeatureMatrix out = stack_features(fused);
    if (config_.extra_noise_features > 0) append_noise(out);
    return out;
  }

 private:
  std::vector<GroupedEpoch> prepare(const EpochSet& set) const {
    return with_stage("preprocess", [&] {
      std::vector<GroupedEpoch> out;
      out.reserve(set.size());
      for (const auto& e : set.epochs()) out.push_back(apply_spatial_weighting(filter_epoch(e, filter_), groups_));
      return out;
    });
  }

  // Noise for a trial depends only on (seed, trial index), never on fold membership.
  void append_noise(FeatureMatrix& m) const {
    const auto extra = config_.extra_noise_features;
    const auto base = m.rows.cols();
    m.rows.conservativeResize(Eigen::NoChange, base + extra);
    for (std::size_t i = 0; i < m.trials(); ++i) {
      std::mt19937_64 rng(derive_seed(config_.seed, "noise-features", static_cast<std::uint64_t>(m.trial_indices[i])));
      std::normal_distribution<double> n01(0.0, 1.0);
      for (int k = 0; k < extra; ++k) m.rows(static_cast<Eigen::Index>(i), base + k) = n01(rng);
    }
    m.layout.push_back({"noise", "noise", base, extra});
  }

  PipelineConfig config_;
  std::uint64_t seed_;
  FilterCoeffs filter_;
  ChannelGroups groups_;
  std::vector<RegionModel> regions_;
};

// ---------------------------------------------------------------------------
// One fold

struct FoldFeatures {
  FeatureMatrix train;
  FeatureMatrix test;
};

namespace detail {

inline void check_disjoint(const EpochSet& train, const EpochSet& test) {
  std::set<std::int64_t> seen;
  for (const auto& e : train.epochs()) seen.insert(e.trial_index);
  for (const auto& e : test.epochs())
    if (seen.count(e.trial_index))
      throw LeakageError("trial " + std::to_string(e.trial_index) + " is in both training and test sets");
}

}  // namespace detail

/// Fits every data-dependent stage on `train` only and returns fused features for both sets.
/// The test set is hashed before fitting and re-checked afterwards.
inline FoldFeatures extract_fold_features(const EpochSet& train, const EpochSet& test, const PipelineConfig& config,
                                          std::uint64_t fold_seed) {
  detail::check_disjoint(train, test);
  if (train.empty() || test.empty()) throw DataError("fold: empty training or test set");
  std::set<int> classes;
  for (const auto& e : train.epochs()) classes.insert(e.label);
  if (classes.size() < 2) throw DataError("fold: training set lacks one of the two classes");

  const auto test_hash = detail::hash_epochs(test);
  FeatureExtractor extractor(config, train.channel_names(), train.sampling_rate_hz(), fold_seed);
  extractor.fit(train);
  if (detail::hash_epochs(test) != test_hash) throw LeakageError("test data changed during fitting");
  return {extractor.transform(train), extractor.transform(test)};
}

struct FoldOutcome {
  MetricsReport metrics;
  std::size_t fused_features = 0;
  std::size_t selected_features = 0;
  std::vector<int> predictions;
};

/// Selection, standardization and classification on features of one fold; the selection forest,
/// standardizer and classifier see training rows only.
inline FoldOutcome evaluate_fold_features(const FoldFeatures& f, const PipelineConfig& config, std::uint64_t fold_seed,
                                          bool with_selection = true) {
  FoldOutcome out;
  out.fused_features = static_cast<std::size_t>(f.train.features());
  FeatureSelection sel = identity_selection(f.train.features());
  if (with_selection && config.selection.kind != SelectionPolicy::Kind::none) {
    sel = with_stage("selection", [&] {
      ForestParams p = config.selection_forest;
      p.seed = derive_seed(fold_seed, "selection");
      return select_features(rf_feature_importance(f.train, p), config.selection);
    });
  }
  const FeatureMatrix train = apply_selection(f.train, sel);
  const FeatureMatrix test = apply_selection(f.test, sel);
  out.selected_features = sel.kept_indices.size();

  const auto scaler = with_stage("standardize", [&] { return fit_standardizer(train.rows); });
  const Matrix xtr = apply_standardizer(scaler, train.rows);
  const Matrix xte = apply_standardizer(scaler, test.rows);
  const auto model = with_stage("classifier", [&] {
    return fit_classifier(config.classifier, xtr, train.labels, derive_seed(fold_seed, "classifier"));
  });
  out.predictions = predict(model, xte);
  out.metrics = compute_metrics(test.labels, out.predictions);
  return out;
}

inline FoldOutcome run_pipeline_fold_detailed(const EpochSet& train, const EpochSet& test, const PipelineConfig& config,
                                              std::uint64_t fold_seed) {
  validate_config(config);
  return evaluate_fold_features(extract_fold_features(train, test, config, fold_seed), config, fold_seed);
}

inline MetricsReport run_pipeline_fold(const EpochSet& train, const EpochSet& test, const PipelineConfig& config,
                                       std::uint64_t fold_seed = 0) {
  return run_pipeline_fold_detailed(train, test, config, fold_seed).metrics;
}

// ---------------------------------------------------------------------------
// Reports

struct FoldReport {
  int fold = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t fused_features = 0;
  std::size_t selected_features = 0;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  bool operator==(const FoldReport&) const = default;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over folds; 0 for a single fold
  bool operator==(const MetricSummary&) const = default;
};

struct CvReport {
  std::string subject;
  std::string protocol;
  std::string selection;  // policy actually applied in this report
  std::uint64_t master_seed = 0;
  std::uint64_t assignment_seed = 0;
  std::vector<int> fold_of_trial;  // per epoch, in epoch-set order
  std::vector<FoldReport> folds;
  MetricSummary accuracy, precision, recall, f1;
  json config;
  std::optional<double> wall_clock_s;
  bool operator==(const CvReport&) const = default;
};

inline MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

inline void fill_summaries(CvReport& r) {
  std::vector<double> acc, pre, rec, f1;
  for (const auto& f : r.folds) {
    acc.push_back(f.metrics.accuracy);
    pre.push_back(f.metrics.precision);
    rec.push_back(f.metrics.recall);
    f1.push_back(f.metrics.f1);
  }
  r.accuracy = summarize(acc);
  r.precision = summarize(pre);
  r.recall = summarize(rec);
  r.f1 = summarize(f1);
}

namespace detail {

struct Partition {
  std::vector<int> fold_of_trial;  // k-fold: fold id; split: 0 train / 1 test
  int n_folds = 0;
  std::uint64_t seed = 0;

  std::vector<std::size_t> test_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of_trial.size(); ++i)
      if (fold_of_trial[i] == (n_folds == 1 ? 1 : fold)) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> train_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of_trial.size(); ++i)
      if (fold_of_trial[i] != (n_folds == 1 ? 1 : fold)) out.push_back(i);
    return out;
  }
};

inline Partition make_partition(const EpochSet& epochs, const PipelineConfig& config) {
  Partition p;
  p.seed = derive_seed(config.seed, "assignment");
  const auto labels = epochs.labels();
  if (config.mode == EvalMode::kfold) {
    p.fold_of_trial = stratified_kfold(labels, config.folds, p.seed);
    p.n_folds = config.folds;
  } else {
    p.fold_of_trial = stratified_split(labels, config.train_fraction, p.seed);
    p.n_folds = 1;
  }
  return p;
}

inline CvReport report_skeleton(const EpochSet& epochs, const PipelineConfig& config, const Partition& p,
                                const std::string& subject, const std::string& selection) {
  CvReport r;
  r.subject = subject;
  r.protocol = config.protocol();
  r.selection = selection;
  r.master_seed = config.seed;
  r.assignment_seed = p.seed;
  r.fold_of_trial = p.fold_of_trial;
  r.config = config_to_json(config);
  (void)epochs;
  return r;
}

}  // namespace detail

/// k-fold (or single split) evaluation. Fold f uses seed derive_seed(master, "fold", f).
inline CvReport run_cv(const EpochSet& epochs, const PipelineConfig& config, const std::string& subject = {}) {
  validate_config(config);
  const auto t0 = std::chrono::steady_clock::now();
  const auto part = detail::make_partition(epochs, config);
  CvReport report = detail::report_skeleton(epochs, config, part, subject, config.selection.describe());
  for (int f = 0; f < part.n_folds; ++f) {
    const auto fold_seed = derive_seed(config.seed, "fold", static_cast<std::uint64_t>(f));
    const auto train = epochs.subset(part.train_indices(f));
    const auto test = epochs.subset(part.test_indices(f));
    const auto outcome = run_pipeline_fold_detailed(train, test, config, fold_seed);
    report.folds.push_back({f, train.size(), test.size(), outcome.fused_features, outcome.selected_features, fold_seed,
                            outcome.metrics});
  }
  fill_summaries(report);
  if (config.record_timing)
    report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

struct AblationResult {
  CvReport with_selection;
  CvReport without_selection;
};

/// Both arms share fold assignment, fold seeds and fitted feature extractors; they differ only in
/// whether the selection stage runs.
inline AblationResult run_ablation(const EpochSet& epochs, const PipelineConfig& config, const std::string& subject = {}) {
  validate_config(config);
  const auto t0 = std::chrono::steady_clock::now();
  const auto part = detail::make_partition(epochs, config);
  AblationResult out;
  out.with_selection = detail::report_skeleton(epochs, config, part, subject, config.selection.describe());
  out.without_selection = detail::report_skeleton(epochs, config, part, subject, "none");
  for (int f = 0; f < part.n_folds; ++f) {
    const auto fold_seed = derive_seed(config.seed, "fold", static_cast<std::uint64_t>(f));
    const auto train = epochs.subset(part.train_indices(f));
    const auto test = epochs.subset(part.test_indices(f));
    const auto features = extract_fold_features(train, test, config, fold_seed);
    const auto with = evaluate_fold_features(features, config, fold_seed, true);
    const auto without = evaluate_fold_features(features, config, fold_seed, false);
    out.with_selection.folds.push_back(
        {f, train.size(), test.size(), with.fused_features, with.selected_features, fold_seed, with.metrics});
    out.without_selection.folds.push_back(
        {f, train.size(), test.size(), without.fused_features, without.selected_features, fold_seed, without.metrics});
  }
  if (out.with_selection.fold_of_trial != out.without_selection.fold_of_trial)
    throw DataError("ablation: arms disagree on fold assignment");
  fill_summaries(out.with_selection);
  fill_summaries(out.without_selection);
  if (config.record_timing) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.with_selection.wall_clock_s = s;
    out.without_selection.wall_clock_s = s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline json metrics_to_json(const MetricsReport& m) {
  return {{"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"tc", m.tc},
          {"tt", m.tt},
          {"tp", m.tp},
          {"fp", m.fp},
          {"fn", m.fn}};
}

inline MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  m.accuracy = j.at("accuracy").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.tc = j.at("tc").get<long>();
  m.tt = j.at("tt").get<long>();
  m.tp = j.at("tp").get<std::array<long, 2>>();
  m.fp = j.at("fp").get<std::array<long, 2>>();
  m.fn = j.at("fn").get<std::array<long, 2>>();
  return m;
}

inline json report_to_json(const CvReport& r) {
  json j;
  j["format"] = "mifuse-cv-report";
  j["version"] = 1;
  j["subject"] = r.subject;
  j["protocol"] = r.protocol;
  j["selection"] = r.selection;
  j["master_seed"] = r.master_seed;
  j["assignment_seed"] = r.assignment_seed;
  j["fold_of_trial"] = r.fold_of_trial;
  auto& folds = j["folds"] = json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"fold", f.fold},
                     {"n_train", f.n_train},
                     {"n_test", f.n_test},
                     {"fused_features", f.fused_features},
                     {"selected_features", f.selected_features},
                     {"seed", f.seed},
                     {"metrics", metrics_to_json(f.metrics)}});
  auto summary = [](const MetricSummary& s) { return json{{"mean", s.mean}, {"std", s.std}}; };
  j["summary"] = {{"accuracy", summary(r.accuracy)},
                  {"precision", summary(r.precision)},
                  {"recall", summary(r.recall)},
                  {"f1", summary(r.f1)}};
  j["config"] = r.config;
  if (r.wall_clock_s) j["wall_clock_s"] = *r.wall_clock_s;
  return j;
}

inline CvReport report_from_json(const json& j) {
  CvReport r;
  try {
    if (j.at("format").get<std::string>() != "mifuse-cv-report") throw DataError("not a cross-validation report");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported report version");
    r.subject = j.at("subject").get<std::string>();
    r.protocol = j.at("protocol").get<std::string>();
    r.selection = j.at("selection").get<std::string>();
    r.master_seed = j.at("master_seed").get<std::uint64_t>();
    r.assignment_seed = j.at("assignment_seed").get<std::uint64_t>();
    r.fold_of_trial = j.at("fold_of_trial").get<std::vector<int>>();
    for (const auto& f : j.at("folds"))
      r.folds.push_back({f.at("fold").get<int>(), f.at("n_train").get<std::size_t>(), f.at("n_test").get<std::size_t>(),
                         f.at("fused_features").get<std::size_t>(), f.at("selected_features").get<std::size_t>(),
                         f.at("seed").get<std::uint64_t>(), metrics_from_json(f.at("metrics"))});
    auto summary = [](const json& s) { return MetricSummary{s.at("mean").get<double>(), s.at("std").get<double>()}; };
    const auto& s = j.at("summary");
    r.accuracy = summary(s.at("accuracy"));
    r.precision = summary(s.at("precision"));
    r.recall = summary(s.at("recall"));
    r.f1 = summary(s.at("f1"));
    r.config = j.at("config");
    if (j.contains("wall_clock_s")) r.wall_clock_s = j["wall_clock_s"].get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

inline std::string report_json_text(const CvReport& r) { return report_to_json(r).dump(2) + "\n"; }

inline CvReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("report " + path.string() + " does not parse: " + e.what());
  }
  return report_from_json(j);
}

namespace detail {

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace detail

/// One row per fold plus a final "mean" row; metric cells carry 6 decimals.
inline std::string report_csv_text(const CvReport& r) {
  std::ostringstream os;
  os << "subject,protocol,selection,fold,n_train,n_test,accuracy,precision,recall,f1,tc,tt\n";
  long tc = 0, tt = 0;
  std::size_t n_train = 0, n_test = 0;
  for (const auto& f : r.folds) {
    os << r.subject << ',' << r.protocol << ',' << r.selection << ',' << f.fold << ',' << f.n_train << ',' << f.n_test
       << ',' << detail::fixed6(f.metrics.accuracy) << ',' << detail::fixed6(f.metrics.precision) << ','
       << detail::fixed6(f.metrics.recall) << ',' << detail::fixed6(f.metrics.f1) << ',' << f.metrics.tc << ','
       << f.metrics.tt << '\n';
    tc += f.metrics.tc;
    tt += f.metrics.tt;
    n_train += f.n_train;
    n_test += f.n_test;
  }
  os << r.subject << ',' << r.protocol << ',' << r.selection << ",mean," << n_train << ',' << n_test << ','
     << detail::fixed6(r.accuracy.mean) << ',' << detail::fixed6(r.precision.mean) << ','
     << detail::fixed6(r.recall.mean) << ',' << detail::fixed6(r.f1.mean) << ',' << tc << ',' << tt << '\n';
  return os.str();
}

enum class ReportFormat { json, csv };

inline void emit_report(const CvReport& r, ReportFormat format, const fs::path& path) {
  detail::write_text(path, format == ReportFormat::json ? report_json_text(r) : report_csv_text(r));
}

/// Per-subject comparison of the two ablation arms.
inline std::string ablation_csv_text(const AblationResult& a) {
  std::ostringstream os;
  os << "subject,protocol,selection,accuracy_with,accuracy_without,delta,f1_with,f1_without\n";
  const auto& w = a.with_selection;
  const auto& wo = a.without_selection;
  os << w.subject << ',' << w.protocol << ',' << w.selection << ',' << detail::fixed6(w.accuracy.mean) << ','
     << detail::fixed6(wo.accuracy.mean) << ',' << detail::fixed6(w.accuracy.mean - wo.accuracy.mean) << ','
     << detail::fixed6(w.f1.mean) << ',' << detail::fixed6(wo.f1.mean) << '\n';
  return os.str();
}

}  // namespace mifuse
