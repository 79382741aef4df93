#pragma once

// Canonical recording format, epoch extraction, synthetic oracle data and the
// binary epoch-set file.
//
// A recording is a JSON manifest plus a raw little-endian float64 file holding
// the channels x samples matrix in channel-major order (all samples of channel
// 0, then channel 1, ...).

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mifuse/binary_io.hpp"
#include "mifuse/error.hpp"

namespace mifuse {

namespace fs = std::filesystem;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Marker {
  std::int64_t onset_sample = 0;
  int label = 0;
  bool operator==(const Marker&) const = default;
};

struct DatasetManifest {
  std::string name;
  double sampling_rate_hz = 0.0;
  std::vector<std::string> channel_names;
  fs::path data_file;  // resolved against the manifest directory on load
  std::vector<Marker> markers;
};

struct ContinuousRecording {
  DatasetManifest manifest;
  Matrix samples;  // channels x T
};

struct Epoch {
  Matrix data;  // channels x L
  int label = 0;
  std::int64_t trial_index = 0;
  double sampling_rate_hz = 0.0;

  Eigen::Index channels() const { return data.rows(); }
  Eigen::Index length() const { return data.cols(); }
};

inline bool is_class_label(int label) { return label == 1 || label == 2; }

inline void validate_manifest(const DatasetManifest& m) {
  if (!(m.sampling_rate_hz > 0.0) || !std::isfinite(m.sampling_rate_hz))
    throw DataError("manifest '" + m.name + "': sampling_rate_hz must be positive");
  if (m.channel_names.empty()) throw DataError("manifest '" + m.name + "': no channels");
  for (std::size_t i = 0; i < m.markers.size(); ++i) {
    const auto& mk = m.markers[i];
    if (!is_class_label(mk.label))
      throw DataError("manifest '" + m.name + "': marker " + std::to_string(i) + " has label " +
                      std::to_string(mk.label) + " (expected 1 or 2)");
    if (mk.onset_sample < 0)
      throw DataError("manifest '" + m.name + "': marker " + std::to_string(i) + " has negative onset");
    if (i > 0 && mk.onset_sample <= m.markers[i - 1].onset_sample)
      throw DataError("manifest '" + m.name + "': marker onsets not strictly increasing at marker " +
                      std::to_string(i));
  }
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.sampling_rate_hz = j.at("sampling_rate_hz").get<double>();
    m.channel_names = j.at("channel_names").get<std::vector<std::string>>();
    m.data_file = fs::path(j.at("data_file").get<std::string>());
    if (m.data_file.is_relative()) m.data_file = base_dir / m.data_file;
    for (const auto& mk : j.at("markers"))
      m.markers.push_back({mk.at("onset_sample").get<std::int64_t>(), mk.at("label").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  validate_manifest(m);
  return m;
}

/// `data_file` is written relative to `base_dir` when it lives underneath it.
inline nlohmann::json manifest_to_json(const DatasetManifest& m, const fs::path& base_dir = {}) {
  nlohmann::json j;
  j["name"] = m.name;
  j["sampling_rate_hz"] = m.sampling_rate_hz;
  j["channel_names"] = m.channel_names;
  fs::path data = m.data_file;
  if (!base_dir.empty() && data.is_absolute()) {
    auto rel = data.lexically_relative(base_dir);
    if (!rel.empty() && *rel.begin() != "..") data = rel;
  }
  j["data_file"] = data.generic_string();
  auto& markers = j["markers"] = nlohmann::json::array();
  for (const auto& mk : m.markers) markers.push_back({{"onset_sample", mk.onset_sample}, {"label", mk.label}});
  return j;
}

inline DatasetManifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + manifest_path.string() + " does not parse: " + e.what());
  }
  return manifest_from_json(j, fs::absolute(manifest_path).parent_path());
}

inline ContinuousRecording load_dataset(const fs::path& manifest_path) {
  ContinuousRecording rec;
  rec.manifest = read_manifest(manifest_path);
  const auto& m = rec.manifest;
  std::error_code ec;
  const auto bytes = fs::file_size(m.data_file, ec);
  if (ec) throw DataError("missing data file " + m.data_file.string());
  const auto channels = static_cast<std::uintmax_t>(m.channel_names.size());
  const std::uintmax_t row_bytes = channels * sizeof(double);
  if (bytes % row_bytes != 0)
    throw DataError("data file " + m.data_file.string() + " size " + std::to_string(bytes) +
                    " is not a multiple of channels x 8 bytes");
  const auto total = static_cast<Eigen::Index>(bytes / row_bytes);

  std::ifstream in(m.data_file, std::ios::binary);
  if (!in) throw DataError("cannot open data file " + m.data_file.string());
  // channel-major on disk == row-major in memory for a channels x T matrix
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> buf(
      static_cast<Eigen::Index>(channels), total);
  detail::BinaryReader reader(in, m.data_file.string());
  reader.get_doubles(buf.data(), static_cast<std::size_t>(buf.size()));
  if (!buf.allFinite()) throw DataError("data file " + m.data_file.string() + " contains non-finite values");
  rec.samples = buf;
  return rec;
}

/// Writes the manifest at `manifest_path` and the raw matrix at the manifest's data_file
/// (a bare file name is placed next to the manifest).
inline void write_dataset(const ContinuousRecording& rec, const fs::path& manifest_path) {
  DatasetManifest m = rec.manifest;
  validate_manifest(m);
  if (static_cast<std::size_t>(rec.samples.rows()) != m.channel_names.size())
    throw DataError("recording rows do not match manifest channel count");
  const fs::path base = fs::absolute(manifest_path).parent_path();
  if (m.data_file.empty()) m.data_file = manifest_path.stem().string() + ".f64";
  if (m.data_file.is_relative()) m.data_file = base / m.data_file;

  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> buf = rec.samples;
  {
    std::ofstream out(m.data_file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write data file " + m.data_file.string());
    detail::BinaryWriter w(out);
    w.put_doubles(buf.data(), static_cast<std::size_t>(buf.size()));
    w.check(m.data_file.string());
  }
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + manifest_path.string());
  out << manifest_to_json(m, base).dump(2) << '\n';
  if (!out) throw DataError("cannot write manifest " + manifest_path.string());
}

/// Trials sharing channel count, length and sampling rate.
class EpochSet {
 public:
  EpochSet() = default;

  EpochSet(std::vector<Epoch> epochs, std::vector<std::string> channel_names)
      : epochs_(std::move(epochs)), channel_names_(std::move(channel_names)) {
    validate();
  }

  const std::vector<Epoch>& epochs() const { return epochs_; }
  const std::vector<std::string>& channel_names() const { return channel_names_; }
  std::size_t size() const { return epochs_.size(); }
  bool empty() const { return epochs_.empty(); }
  const Epoch& operator[](std::size_t i) const { return epochs_[i]; }

  Eigen::Index channels() const {
    return epochs_.empty() ? static_cast<Eigen::Index>(channel_names_.size()) : epochs_.front().channels();
  }
  Eigen::Index length() const { return epochs_.empty() ? 0 : epochs_.front().length(); }
  double sampling_rate_hz() const { return epochs_.empty() ? 0.0 : epochs_.front().sampling_rate_hz; }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(epochs_.size());
    for (const auto& e : epochs_) out.push_back(e.label);
    return out;
  }

  EpochSet subset(const std::vector<std::size_t>& indices) const {
    std::vector<Epoch> picked;
    picked.reserve(indices.size());
    for (auto i : indices) {
      if (i >= epochs_.size()) throw DataError("epoch subset index out of range");
      picked.push_back(epochs_[i]);
    }
    return EpochSet(std::move(picked), channel_names_);
  }

 private:
  void validate() const {
    if (!channel_names_.empty() && !epochs_.empty() &&
        static_cast<std::size_t>(epochs_.front().channels()) != channel_names_.size())
      throw DataError("epoch channel count does not match channel names");
    for (std::size_t i = 0; i < epochs_.size(); ++i) {
      const auto& e = epochs_[i];
      const auto& first = epochs_.front();
      if (e.length() < 2) throw DataError("epoch " + std::to_string(i) + " shorter than 2 samples");
      if (e.channels() != first.channels() || e.length() != first.length() ||
          e.sampling_rate_hz != first.sampling_rate_hz)
        throw DataError("epoch " + std::to_string(i) + " shape or sampling rate differs from epoch 0");
      if (!(e.sampling_rate_hz > 0.0)) throw DataError("epoch " + std::to_string(i) + " has no sampling rate");
      if (!e.data.allFinite()) throw DataError("epoch " + std::to_string(i) + " has non-finite samples");
    }
  }

  std::vector<Epoch> epochs_;
  std::vector<std::string> channel_names_;
};

/// One epoch per marker covering [onset + start, onset + start + L), L = round((end - start) * fs).
inline EpochSet extract_epochs(const ContinuousRecording& rec, double window_start_s, double window_end_s) {
  if (!(window_end_s > window_start_s))
    throw ConfigError("epoch window end must exceed start");
  const double fs_hz = rec.manifest.sampling_rate_hz;
  const auto length = static_cast<Eigen::Index>(std::llround((window_end_s - window_start_s) * fs_hz));
  const auto offset = static_cast<std::int64_t>(std::llround(window_start_s * fs_hz));
  if (length < 2) throw ConfigError("epoch window shorter than 2 samples");
  const auto total = static_cast<std::int64_t>(rec.samples.cols());

  std::vector<Epoch> epochs;
  epochs.reserve(rec.manifest.markers.size());
  for (std::size_t i = 0; i < rec.manifest.markers.size(); ++i) {
    const auto& mk = rec.manifest.markers[i];
    const std::int64_t begin = mk.onset_sample + offset;
    if (begin < 0 || begin + length > total)
      throw DataError("trial " + std::to_string(i) + " window [" + std::to_string(begin) + ", " +
                      std::to_string(begin + length) + ") exceeds recording of " + std::to_string(total) +
                      " samples");
    epochs.push_back({rec.samples.middleCols(begin, length), mk.label, static_cast<std::int64_t>(i), fs_hz});
  }
  return EpochSet(std::move(epochs), rec.manifest.channel_names);
}

// ---------------------------------------------------------------------------
// Synthetic oracle recordings

struct SyntheticSpec {
  std::string name = "synthetic";
  int n_channels = 30;
  int n_trials_per_class = 100;
  int epoch_samples = 350;  // boosted segment following each cue
  int rest_samples = 100;   // quiet gap before each cue
  double sampling_rate_hz = 100.0;
  std::vector<int> class1_channels;  // variance boosted for class-1 trials
  std::vector<int> class2_channels;  // variance boosted for class-2 trials
  double boost = 5.0;                // variance ratio on the boosted set
  double noise_std = 1.0;
  std::uint64_t seed = 42;
};

struct SyntheticResult {
  ContinuousRecording recording;
  std::vector<std::string> warnings;
};

inline void validate_synthetic_spec(const SyntheticSpec& s) {
  if (s.n_channels < 1) throw ConfigError("synthetic: n_channels must be >= 1");
  if (s.n_trials_per_class < 1) throw ConfigError("synthetic: n_trials_per_class must be >= 1");
  if (s.epoch_samples < 2) throw ConfigError("synthetic: epoch_samples must be >= 2");
  if (s.rest_samples < 0) throw ConfigError("synthetic: rest_samples must be >= 0");
  if (!(s.sampling_rate_hz > 0.0)) throw ConfigError("synthetic: sampling_rate_hz must be positive");
  if (!(s.noise_std > 0.0)) throw ConfigError("synthetic: noise_std must be positive");
  if (!(s.boost > 0.0)) throw ConfigError("synthetic: boost must be positive");
  for (const auto* set : {&s.class1_channels, &s.class2_channels})
    for (int c : *set)
      if (c < 0 || c >= s.n_channels)
        throw ConfigError("synthetic: boosted channel " + std::to_string(c) + " outside channel range");
}

/// White Gaussian noise on every channel; during each trial the class's channel set is
/// scaled by sqrt(boost). Trial order is a seeded shuffle of a balanced label list.
inline SyntheticResult generate_synthetic(const SyntheticSpec& spec) {
  validate_synthetic_spec(spec);
  SyntheticResult result;
  for (int a : spec.class1_channels)
    for (int b : spec.class2_channels)
      if (a == b) result.warnings.push_back("channel " + std::to_string(a) + " is boosted for both classes");

  std::mt19937_64 rng(spec.seed);
  std::vector<int> labels;
  labels.insert(labels.end(), static_cast<std::size_t>(spec.n_trials_per_class), 1);
  labels.insert(labels.end(), static_cast<std::size_t>(spec.n_trials_per_class), 2);
  std::shuffle(labels.begin(), labels.end(), rng);

  const std::int64_t stride = spec.rest_samples + spec.epoch_samples;
  const std::int64_t total = stride * static_cast<std::int64_t>(labels.size()) + spec.rest_samples;

  auto& rec = result.recording;
  rec.manifest.name = spec.name;
  rec.manifest.sampling_rate_hz = spec.sampling_rate_hz;
  for (int c = 0; c < spec.n_channels; ++c) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "ch%02d", c);
    rec.manifest.channel_names.emplace_back(buf);
  }

  std::normal_distribution<double> noise(0.0, spec.noise_std);
  rec.samples.resize(spec.n_channels, total);
  for (std::int64_t t = 0; t < total; ++t)
    for (int c = 0; c < spec.n_channels; ++c) rec.samples(c, t) = noise(rng);

  const double gain = std::sqrt(spec.boost);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int64_t onset = spec.rest_samples + static_cast<std::int64_t>(i) * stride;
    rec.manifest.markers.push_back({onset, labels[i]});
    const auto& boosted = labels[i] == 1 ? spec.class1_channels : spec.class2_channels;
    for (int c : boosted) rec.samples.row(c).segment(onset, spec.epoch_samples) *= gain;
  }
  return result;
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.name = j.value("name", s.name);
    s.n_channels = j.value("n_channels", s.n_channels);
    s.n_trials_per_class = j.value("n_trials_per_class", s.n_trials_per_class);
    s.epoch_samples = j.value("epoch_samples", s.epoch_samples);
    s.rest_samples = j.value("rest_samples", s.rest_samples);
    s.sampling_rate_hz = j.value("sampling_rate_hz", s.sampling_rate_hz);
    s.class1_channels = j.at("class1_channels").get<std::vector<int>>();
    s.class2_channels = j.at("class2_channels").get<std::vector<int>>();
    s.boost = j.value("boost", s.boost);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed synthetic spec: ") + e.what());
  }
  validate_synthetic_spec(s);
  return s;
}

// ---------------------------------------------------------------------------
// Epoch-set file: 16-byte magic, version byte, dimensions, channel names, then
// per epoch (label i32, trial index i64, channel-major float64 payload).

inline constexpr detail::Magic kEpochMagic = detail::make_magic("MIFUSE-EPOCHSET\0");
inline constexpr std::uint8_t kEpochFormatVersion = 1;

inline void persist_epochs(const EpochSet& set, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write epoch set " + path.string());
  detail::BinaryWriter w(out);
  w.put_bytes(kEpochMagic.data(), kEpochMagic.size());
  w.put<std::uint8_t>(kEpochFormatVersion);
  w.put<std::uint64_t>(set.size());
  w.put<std::uint64_t>(static_cast<std::uint64_t>(set.channels()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(set.length()));
  w.put<double>(set.sampling_rate_hz());
  w.put<std::uint64_t>(set.channel_names().size());
  for (const auto& n : set.channel_names()) w.put_string(n);
  for (const auto& e : set.epochs()) {
    w.put<std::int32_t>(e.label);
    w.put<std::int64_t>(e.trial_index);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = e.data;
    w.put_doubles(rm.data(), static_cast<std::size_t>(rm.size()));
  }
  w.check(path.string());
}

inline EpochSet read_epochs(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open epoch set " + path.string());
  detail::BinaryReader r(in, path.string());
  r.expect_magic(kEpochMagic);
  const auto version = r.get<std::uint8_t>();
  if (version != kEpochFormatVersion)
    throw DataError(path.string() + ": unsupported epoch-set version " + std::to_string(version));
  const auto n = r.get<std::uint64_t>();
  const auto channels = r.get<std::uint64_t>();
  const auto length = r.get<std::uint64_t>();
  const double fs_hz = r.get<double>();
  const auto n_names = r.get<std::uint64_t>();
  constexpr std::uint64_t kLimit = 1ULL << 32;
  if (channels > kLimit || length > kLimit || n_names > kLimit || n > kLimit)
    throw DataError(path.string() + ": corrupt header (dimensions)");
  std::vector<std::string> names;
  for (std::uint64_t i = 0; i < n_names; ++i) names.push_back(r.get_string());

  std::vector<Epoch> epochs;
  epochs.reserve(static_cast<std::size_t>(n));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
      static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(length));
  for (std::uint64_t i = 0; i < n; ++i) {
    Epoch e;
    e.label = r.get<std::int32_t>();
    e.trial_index = r.get<std::int64_t>();
    e.sampling_rate_hz = fs_hz;
    r.get_doubles(rm.data(), static_cast<std::size_t>(rm.size()));
    e.data = rm;
    epochs.push_back(std::move(e));
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after payload");
  return EpochSet(std::move(epochs), std::move(names));
}

}  // namespace mifuse
