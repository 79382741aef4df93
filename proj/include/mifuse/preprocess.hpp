#pragma once

// Band-pass filtering and binary spatial weighting into brain-region groups.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mifuse/dataset.hpp"
#include "mifuse/error.hpp"

namespace mifuse {

struct FilterDesign {
  double low_hz = 8.0;
  double high_hz = 30.0;
  double sampling_rate_hz = 100.0;
  int order = 4;
};

/// Transfer function b(z)/a(z) with a[0] == 1, plus the z-plane poles it was built from.
struct FilterCoeffs {
  std::vector<double> numerator;
  std::vector<double> denominator;
  std::vector<std::complex<double>> poles;
  FilterDesign design;

  std::size_t taps() const { return std::max(numerator.size(), denominator.size()); }

  /// Complex response at `freq_hz`.
  std::complex<double> response(double freq_hz) const {
    const double w = 2.0 * std::numbers::pi * freq_hz / design.sampling_rate_hz;
    const std::complex<double> zinv = std::polar(1.0, -w);
    auto eval = [&](const std::vector<double>& c) {
      std::complex<double> acc = 0.0, zk = 1.0;
      for (double v : c) {
        acc += v * zk;
        zk *= zinv;
      }
      return acc;
    };
    return eval(numerator) / eval(denominator);
  }

  bool stable() const {
    for (const auto& p : poles)
      if (!(std::abs(p) < 1.0)) return false;
    return true;
  }
};

namespace detail {

inline std::vector<double> real_poly_from_roots(const std::vector<std::complex<double>>& roots) {
  std::vector<std::complex<double>> c{1.0};
  for (const auto& r : roots) {
    std::vector<std::complex<double>> next(c.size() + 1, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i] += c[i];
      next[i + 1] -= r * c[i];
    }
    c = std::move(next);
  }
  std::vector<double> out;
  out.reserve(c.size());
  for (const auto& v : c) out.push_back(v.real());
  return out;
}

}  // namespace detail

/// Digital Butterworth band-pass: analog prototype of `order` poles, low-pass to band-pass
/// transform at prewarped edges, bilinear map. The result has 2*order poles.
inline FilterCoeffs design_bandpass(double low_hz, double high_hz, double fs_hz, int order) {
  if (!(fs_hz > 0.0)) throw ConfigError("band-pass: sampling rate must be positive");
  if (order < 1) throw ConfigError("band-pass: order must be >= 1");
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fs_hz / 2.0))
    throw ConfigError("band-pass: require 0 < low < high < fs/2 (got " + std::to_string(low_hz) + ", " +
                      std::to_string(high_hz) + " at fs " + std::to_string(fs_hz) + ")");
  using cd = std::complex<double>;
  const double pi = std::numbers::pi;
  const double fs2 = 2.0 * fs_hz;
  const double w1 = fs2 * std::tan(pi * low_hz / fs_hz);
  const double w2 = fs2 * std::tan(pi * high_hz / fs_hz);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  std::vector<cd> analog_poles;
  for (int k = 0; k < order; ++k) {
    const double theta = pi * static_cast<double>(2 * k - order + 1) / (2.0 * order);
    const cd proto = -std::exp(cd(0.0, theta));
    const cd half = proto * bw / 2.0;
    const cd disc = std::sqrt(half * half - w0sq);
    analog_poles.push_back(half + disc);
    analog_poles.push_back(half - disc);
  }

  std::vector<cd> zeros, poles;
  cd gain_num = 1.0, gain_den = 1.0;
  for (int k = 0; k < order; ++k) {
    zeros.emplace_back(1.0, 0.0);  // analog zeros at s = 0
    gain_num *= fs2;
  }
  for (int k = 0; k < order; ++k) zeros.emplace_back(-1.0, 0.0);  // zeros at infinity
  for (const auto& p : analog_poles) {
    poles.push_back((fs2 + p) / (fs2 - p));
    gain_den *= (fs2 - p);
  }
  const double gain = std::pow(bw, order) * (gain_num / gain_den).real();

  FilterCoeffs f;
  f.design = {low_hz, high_hz, fs_hz, order};
  f.numerator = detail::real_poly_from_roots(zeros);
  for (auto& v : f.numerator) v *= gain;
  f.denominator = detail::real_poly_from_roots(poles);
  f.poles = std::move(poles);

  for (double v : f.numerator)
    if (!std::isfinite(v)) throw NumericalError("band-pass: non-finite numerator coefficient");
  for (double v : f.denominator)
    if (!std::isfinite(v)) throw NumericalError("band-pass: non-finite denominator coefficient");
  if (!f.stable()) throw NumericalError("band-pass: unstable design (pole on or outside the unit circle)");
  return f;
}

namespace detail {

/// Direct-form II transposed IIR over `x` starting from state `z` (modified in place).
inline void lfilter_inplace(const std::vector<double>& b, const std::vector<double>& a, Eigen::Ref<Vector> x,
                            Vector& z) {
  const auto n = static_cast<Eigen::Index>(b.size());
  for (Eigen::Index t = 0; t < x.size(); ++t) {
    const double in = x[t];
    const double out = b[0] * in + (n > 1 ? z[0] : 0.0);
    for (Eigen::Index i = 0; i + 2 < n; ++i) z[i] = b[i + 1] * in + z[i + 1] - a[i + 1] * out;
    if (n > 1) z[n - 2] = b[n - 1] * in - a[n - 1] * out;
    x[t] = out;
  }
}

/// Steady-state filter state for a unit step input.
inline Vector lfilter_zi(const std::vector<double>& b, const std::vector<double>& a) {
  const auto n = static_cast<Eigen::Index>(b.size());
  Matrix m = Matrix::Identity(n - 1, n - 1);
  Vector rhs(n - 1);
  for (Eigen::Index i = 0; i < n - 1; ++i) {
    m(i, 0) += a[i + 1];
    if (i + 1 < n - 1) m(i, i + 1) -= 1.0;
    rhs[i] = b[i + 1] - a[i + 1] * b[0];
  }
  return m.partialPivLu().solve(rhs);
}

}  // namespace detail

/// Edge padding used by the zero-phase filter.
inline Eigen::Index filter_padding(const FilterCoeffs& coeffs) {
  return 3 * static_cast<Eigen::Index>(coeffs.taps() - 1);
}

/// Zero-phase (forward-backward) filtering of each row with odd reflective edge padding
/// and steady-state initial conditions.
inline Matrix filtfilt_rows(const FilterCoeffs& coeffs, const Matrix& data) {
  std::vector<double> b = coeffs.numerator, a = coeffs.denominator;
  const std::size_t n = coeffs.taps();
  b.resize(n, 0.0);
  a.resize(n, 0.0);
  const Eigen::Index pad = filter_padding(coeffs);
  const Eigen::Index len = data.cols();
  if (len <= pad)
    throw DataError("epoch of " + std::to_string(len) + " samples too short for edge padding of " +
                    std::to_string(pad));
  const Vector zi = detail::lfilter_zi(b, a);

  Matrix out(data.rows(), len);
  Vector ext(len + 2 * pad);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const auto x = data.row(r);
    for (Eigen::Index i = 0; i < pad; ++i) {
      ext[i] = 2.0 * x[0] - x[pad - i];
      ext[pad + len + i] = 2.0 * x[len - 1] - x[len - 2 - i];
    }
    ext.segment(pad, len) = x.transpose();

    Vector z = zi * ext[0];
    detail::lfilter_inplace(b, a, ext, z);
    ext.reverseInPlace();
    z = zi * ext[0];
    detail::lfilter_inplace(b, a, ext, z);
    ext.reverseInPlace();
    out.row(r) = ext.segment(pad, len).transpose();
  }
  return out;
}

inline Epoch filter_epoch(const Epoch& epoch, const FilterCoeffs& coeffs) {
  if (!epoch.data.allFinite()) throw DataError("filter: epoch has non-finite samples");
  Epoch out = epoch;
  out.data = filtfilt_rows(coeffs, epoch.data);
  return out;
}

inline EpochSet filter_epochs(const EpochSet& set, const FilterCoeffs& coeffs) {
  std::vector<Epoch> out;
  out.reserve(set.size());
  for (const auto& e : set.epochs()) out.push_back(filter_epoch(e, coeffs));
  return EpochSet(std::move(out), set.channel_names());
}

// ---------------------------------------------------------------------------
// Spatial weighting

struct ChannelGroup {
  std::string name;
  std::vector<int> channels;
};

/// Region channel groups over a montage of `total_channels`. Channel i has weight 1 iff it
/// belongs to some group.
class ChannelGroups {
 public:
  ChannelGroups() = default;

  ChannelGroups(std::vector<ChannelGroup> groups, int total_channels)
      : groups_(std::move(groups)), total_(total_channels) {
    if (total_ < 1) throw ConfigError("montage: total channel count must be >= 1");
    if (groups_.empty()) throw ConfigError("montage: no region groups");
    std::set<int> seen;
    for (const auto& g : groups_) {
      if (g.channels.empty()) throw ConfigError("montage: region '" + g.name + "' is empty");
      std::set<int> local;
      for (int c : g.channels) {
        if (c < 0 || c >= total_)
          throw ConfigError("montage: region '" + g.name + "' channel index " + std::to_string(c) +
                            " outside [0, " + std::to_string(total_) + ")");
        if (!local.insert(c).second)
          throw ConfigError("montage: region '" + g.name + "' repeats channel " + std::to_string(c));
        if (!seen.insert(c).second)
          throw ConfigError("montage: channel " + std::to_string(c) + " appears in more than one region");
      }
    }
  }

  const std::vector<ChannelGroup>& groups() const { return groups_; }
  int total_channels() const { return total_; }
  std::size_t size() const { return groups_.size(); }

  /// Diagonal of the binary weight matrix.
  Vector weights() const {
    Vector w = Vector::Zero(total_);
    for (const auto& g : groups_)
      for (int c : g.channels) w[c] = 1.0;
    return w;
  }

  bool equal_sizes() const {
    for (const auto& g : groups_)
      if (g.channels.size() != groups_.front().channels.size()) return false;
    return true;
  }

 private:
  std::vector<ChannelGroup> groups_;
  int total_ = 0;
};

/// Montage JSON: {"regions": [{"name": ..., "channels": [electrode names...]}, ...]}.
inline ChannelGroups montage_from_json(const nlohmann::json& j, const std::vector<std::string>& channel_names) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < channel_names.size(); ++i) index.emplace(channel_names[i], static_cast<int>(i));
  std::vector<ChannelGroup> groups;
  try {
    for (const auto& region : j.at("regions")) {
      ChannelGroup g;
      g.name = region.at("name").get<std::string>();
      for (const auto& ch : region.at("channels")) {
        const auto name = ch.get<std::string>();
        auto it = index.find(name);
        if (it == index.end())
          throw ConfigError("montage: region '" + g.name + "' names unknown channel '" + name + "'");
        g.channels.push_back(it->second);
      }
      groups.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed montage: ") + e.what());
  }
  return ChannelGroups(std::move(groups), static_cast<int>(channel_names.size()));
}

inline ChannelGroups load_montage(const fs::path& path, const std::vector<std::string>& channel_names) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open montage " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("montage " + path.string() + " does not parse: " + e.what());
  }
  return montage_from_json(j, channel_names);
}

struct GroupedEpoch {
  std::vector<Matrix> blocks;  // one (group channels x L) slice per region, montage order
  int label = 0;
  std::int64_t trial_index = 0;
};

/// Keeps weighted rows only, sliced per region in within-group order.
inline GroupedEpoch apply_spatial_weighting(const Epoch& epoch, const ChannelGroups& groups) {
  if (epoch.channels() != groups.total_channels())
    throw DataError("spatial weighting: epoch has " + std::to_string(epoch.channels()) +
                    " channels, montage expects " + std::to_string(groups.total_channels()));
  GroupedEpoch out;
  out.label = epoch.label;
  out.trial_index = epoch.trial_index;
  for (const auto& g : groups.groups()) {
    if (g.channels.empty()) throw ConfigError("spatial weighting: region '" + g.name + "' is empty");
    Matrix block(static_cast<Eigen::Index>(g.channels.size()), epoch.length());
    for (std::size_t i = 0; i < g.channels.size(); ++i)
      block.row(static_cast<Eigen::Index>(i)) = epoch.data.row(g.channels[i]);
    out.blocks.push_back(std::move(block));
  }
  return out;
}

}  // namespace mifuse
