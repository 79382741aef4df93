#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <map>

#include "test_support.hpp"

using namespace mifuse;
using namespace mifuse::testing;

namespace {

ContinuousRecording make_recording(int channels, std::int64_t total, std::vector<Marker> markers, double fs_hz,
                                   std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  ContinuousRecording rec;
  rec.manifest.name = "rec";
  rec.manifest.sampling_rate_hz = fs_hz;
  for (int c = 0; c < channels; ++c) rec.manifest.channel_names.push_back("ch" + std::to_string(c));
  rec.manifest.markers = std::move(markers);
  rec.samples = random_matrix(rng, channels, total);
  return rec;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

void expect_sets_identical(const EpochSet& a, const EpochSet& b) {
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.channel_names(), b.channel_names());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(a[i].trial_index, b[i].trial_index);
    EXPECT_EQ(a[i].sampling_rate_hz, b[i].sampling_rate_hz);
    EXPECT_TRUE(bit_equal(a[i].data, b[i].data)) << "epoch " << i;
  }
}

// sum of squares over a class's trials / sample count, for channels in `set`
double pooled_variance(const ContinuousRecording& rec, int label, const std::vector<int>& set, int len) {
  double ss = 0.0;
  long n = 0;
  for (const auto& mk : rec.manifest.markers) {
    if (mk.label != label) continue;
    for (int c : set)
      for (int t = 0; t < len; ++t) {
        const double v = rec.samples(c, mk.onset_sample + t);
        ss += v * v;
        ++n;
      }
  }
  return ss / static_cast<double>(n);
}

}  // namespace

TEST(Manifest, IvaShapedRecordingLoads) {
  const auto dir = scratch_dir("iva");
  std::vector<Marker> markers;
  for (int i = 0; i < 280; ++i) markers.push_back({100 + 50 * i, i % 2 + 1});
  auto rec = make_recording(118, 100 + 50 * 280 + 400, markers, 100.0);
  write_dataset(rec, dir / "aa.json");
  const auto back = load_dataset(dir / "aa.json");
  EXPECT_EQ(back.samples.rows(), 118);
  EXPECT_EQ(back.manifest.markers.size(), 280u);
  EXPECT_EQ(back.manifest.channel_names, rec.manifest.channel_names);
  fs::remove_all(dir);
}

TEST(Manifest, ZeroMarkersGiveEmptyEpochSet) {
  const auto dir = scratch_dir("nomarkers");
  auto rec = make_recording(4, 500, {}, 100.0);
  write_dataset(rec, dir / "r.json");
  const auto back = load_dataset(dir / "r.json");
  EXPECT_TRUE(back.manifest.markers.empty());
  const auto set = extract_epochs(back, 0.5, 3.0);
  EXPECT_TRUE(set.empty());
  fs::remove_all(dir);
}

TEST(Manifest, WriteThenLoadIsBitExact) {
  const auto dir = scratch_dir("bitexact");
  SyntheticSpec spec;
  spec.n_trials_per_class = 10;
  spec.class1_channels = {1, 2};
  spec.class2_channels = {20};
  const auto gen = generate_synthetic(spec);
  write_dataset(gen.recording, dir / "s.json");
  const auto back = load_dataset(dir / "s.json");
  EXPECT_TRUE(bit_equal(back.samples, gen.recording.samples));
  EXPECT_EQ(back.manifest.markers, gen.recording.manifest.markers);
  fs::remove_all(dir);
}

TEST(Manifest, SizeMismatchRejected) {
  const auto dir = scratch_dir("size");
  auto rec = make_recording(3, 50, {{5, 1}}, 100.0);
  write_dataset(rec, dir / "r.json");
  {
    std::ofstream app(dir / "r.f64", std::ios::binary | std::ios::app);
    const double extra = 1.0;
    app.write(reinterpret_cast<const char*>(&extra), sizeof extra);
  }
  EXPECT_THROW(load_dataset(dir / "r.json"), DataError);
  fs::remove_all(dir);
}

TEST(Manifest, MissingDataFileRejected) {
  const auto dir = scratch_dir("missing");
  auto rec = make_recording(3, 50, {{5, 1}}, 100.0);
  write_dataset(rec, dir / "r.json");
  fs::remove(dir / "r.f64");
  EXPECT_THROW(load_dataset(dir / "r.json"), DataError);
  fs::remove_all(dir);
}

TEST(Manifest, NonFiniteSamplesRejected) {
  const auto dir = scratch_dir("nan");
  auto rec = make_recording(3, 50, {{5, 1}}, 100.0);
  rec.samples(1, 7) = std::numeric_limits<double>::quiet_NaN();
  write_dataset(rec, dir / "r.json");
  EXPECT_THROW(load_dataset(dir / "r.json"), DataError);
  fs::remove_all(dir);
}

TEST(Manifest, InvalidMarkersRejected) {
  DatasetManifest m;
  m.name = "m";
  m.sampling_rate_hz = 100.0;
  m.channel_names = {"a"};
  m.markers = {{10, 1}, {10, 2}};
  EXPECT_THROW(validate_manifest(m), DataError);
  m.markers = {{10, 1}, {5, 2}};
  EXPECT_THROW(validate_manifest(m), DataError);
  m.markers = {{10, 3}};
  EXPECT_THROW(validate_manifest(m), DataError);
  m.markers = {{10, 1}};
  m.sampling_rate_hz = 0.0;
  EXPECT_THROW(validate_manifest(m), DataError);
}

TEST(Manifest, RelativeDataFileResolvesAgainstManifest) {
  const nlohmann::json j = {{"name", "x"}, {"sampling_rate_hz", 100.0}, {"channel_names", {"a", "b"}},
                            {"data_file", "x.f64"}, {"markers", nlohmann::json::array()}};
  const auto m = manifest_from_json(j, "/some/dir");
  EXPECT_EQ(m.data_file, fs::path("/some/dir/x.f64"));
}

TEST(Epochs, WindowLengths) {
  std::vector<Marker> markers{{100, 1}, {600, 2}, {1100, 1}};
  const auto rec = make_recording(5, 1600, markers, 100.0);
  const auto a = extract_epochs(rec, 0.5, 3.0);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a.length(), 250);
  const auto b = extract_epochs(rec, 0.0, 4.0);
  EXPECT_EQ(b.length(), 400);
}

TEST(Epochs, OnePerMarkerInOrderWithCopiedSamples) {
  std::vector<Marker> markers{{100, 2}, {600, 1}, {1100, 2}};
  const auto rec = make_recording(5, 1600, markers, 100.0);
  const auto set = extract_epochs(rec, 0.5, 3.0);
  ASSERT_EQ(set.size(), markers.size());
  for (std::size_t i = 0; i < markers.size(); ++i) {
    EXPECT_EQ(set[i].label, markers[i].label);
    EXPECT_EQ(set[i].trial_index, static_cast<std::int64_t>(i));
    EXPECT_TRUE(bit_equal(set[i].data, rec.samples.middleCols(markers[i].onset_sample + 50, 250)));
  }
}

TEST(Epochs, InvertedWindowRejected) {
  const auto rec = make_recording(2, 1000, {{100, 1}}, 100.0);
  EXPECT_THROW(extract_epochs(rec, 3.0, 0.5), ConfigError);
}

TEST(Epochs, OutOfBoundsNamesTrial) {
  const auto rec = make_recording(2, 1000, {{100, 1}, {800, 2}}, 100.0);
  try {
    extract_epochs(rec, 0.5, 3.0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("trial 1"), std::string::npos) << e.what();
  }
}

TEST(Epochs, MixedLengthsRejectedOnConstruction) {
  std::vector<Epoch> epochs(2);
  epochs[0] = {Matrix::Ones(2, 10), 1, 0, 100.0};
  epochs[1] = {Matrix::Ones(2, 11), 2, 1, 100.0};
  EXPECT_THROW(EpochSet(epochs, {"a", "b"}), DataError);
  epochs[1] = {Matrix::Ones(2, 1), 2, 1, 100.0};
  EXPECT_THROW(EpochSet(epochs, {"a", "b"}), DataError);
}

TEST(Synthetic, SameSeedBitIdentical) {
  SyntheticSpec spec;
  spec.seed = 7;
  spec.n_trials_per_class = 20;
  spec.class1_channels = {0};
  spec.class2_channels = {1};
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  EXPECT_TRUE(bit_equal(a.recording.samples, b.recording.samples));
  EXPECT_EQ(a.recording.manifest.markers, b.recording.manifest.markers);
  spec.seed = 8;
  EXPECT_FALSE(bit_equal(a.recording.samples, generate_synthetic(spec).recording.samples));
}

TEST(Synthetic, LabelsBalanced) {
  SyntheticSpec spec;
  spec.n_trials_per_class = 37;
  spec.class1_channels = {0};
  spec.class2_channels = {1};
  const auto gen = generate_synthetic(spec);
  int n1 = 0, n2 = 0;
  for (const auto& m : gen.recording.manifest.markers) (m.label == 1 ? n1 : n2)++;
  EXPECT_EQ(n1, 37);
  EXPECT_EQ(n2, 37);
}

TEST(Synthetic, BoostedVarianceRatio) {
  SyntheticSpec spec;
  spec.boost = 5.0;
  spec.class1_channels = {2, 5, 8};
  spec.class2_channels = {17, 20, 23};
  const auto gen = generate_synthetic(spec);
  const auto& rec = gen.recording;
  const double ratio_a = pooled_variance(rec, 1, spec.class1_channels, spec.epoch_samples) /
                         pooled_variance(rec, 2, spec.class1_channels, spec.epoch_samples);
  const double ratio_b = pooled_variance(rec, 2, spec.class2_channels, spec.epoch_samples) /
                         pooled_variance(rec, 1, spec.class2_channels, spec.epoch_samples);
  EXPECT_NEAR(ratio_a, 5.0, 1.0);
  EXPECT_NEAR(ratio_b, 5.0, 1.0);
}

TEST(Synthetic, UnitBoostHasNoClassEffect) {
  SyntheticSpec spec;
  spec.boost = 1.0;
  spec.class1_channels = {2, 5, 8};
  spec.class2_channels = {17, 20, 23};
  const auto gen = generate_synthetic(spec);
  // 100 trials x 350 samples x 3 channels per class: relative sd of each estimate is ~0.4%
  const double ratio = pooled_variance(gen.recording, 1, spec.class1_channels, spec.epoch_samples) /
                       pooled_variance(gen.recording, 2, spec.class1_channels, spec.epoch_samples);
  EXPECT_NEAR(ratio, 1.0, 0.05);
}

TEST(Synthetic, OverlapWarnsAndInvalidSpecRejected) {
  SyntheticSpec spec;
  spec.n_trials_per_class = 2;
  spec.class1_channels = {1, 3};
  spec.class2_channels = {3};
  EXPECT_EQ(generate_synthetic(spec).warnings.size(), 1u);
  spec.class2_channels = {30};
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec.class2_channels = {4};
  spec.noise_std = 0.0;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(EpochFile, RandomSetRoundTripsBitExact) {
  const auto dir = scratch_dir("epochs");
  const auto set = boosted_epochs(6, 5, 40, {0}, {1}, 3.0, 11);
  persist_epochs(set, dir / "e.bin");
  expect_sets_identical(set, read_epochs(dir / "e.bin"));
  fs::remove_all(dir);
}

TEST(EpochFile, EmptySetRoundTrips) {
  const auto dir = scratch_dir("empty");
  const EpochSet empty({}, {"a", "b", "c"});
  persist_epochs(empty, dir / "e.bin");
  const auto back = read_epochs(dir / "e.bin");
  EXPECT_TRUE(back.empty());
  EXPECT_EQ(back.channel_names(), empty.channel_names());
  fs::remove_all(dir);
}

TEST(EpochFile, IvaShapedSetKeepsLabelHistogram) {
  const auto dir = scratch_dir("iva_epochs");
  std::mt19937_64 rng(3);
  std::vector<Epoch> epochs;
  std::map<int, int> hist;
  for (int i = 0; i < 280; ++i) {
    const int label = std::uniform_int_distribution<int>(1, 2)(rng);
    hist[label]++;
    epochs.push_back({random_matrix(rng, 118, 250), label, i, 100.0});
  }
  std::vector<std::string> names;
  for (int c = 0; c < 118; ++c) names.push_back("e" + std::to_string(c));
  const EpochSet set(std::move(epochs), names);
  persist_epochs(set, dir / "iva.bin");
  const auto back = read_epochs(dir / "iva.bin");
  std::map<int, int> back_hist;
  for (int l : back.labels()) back_hist[l]++;
  EXPECT_EQ(back_hist, hist);
  expect_sets_identical(set, back);
  fs::remove_all(dir);
}

TEST(EpochFile, CorruptHeaderAndTruncationRejected) {
  const auto dir = scratch_dir("corrupt");
  const auto set = boosted_epochs(3, 2, 20, {0}, {1}, 2.0, 5);
  persist_epochs(set, dir / "e.bin");
  std::string bytes;
  {
    std::ifstream in(dir / "e.bin", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(dir / "x.bin", std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  std::string bad = bytes;
  bad[0] = 'X';
  write(bad);
  EXPECT_THROW(read_epochs(dir / "x.bin"), DataError);
  write(bytes.substr(0, bytes.size() - 9));
  EXPECT_THROW(read_epochs(dir / "x.bin"), DataError);
  write(bytes + "z");
  EXPECT_THROW(read_epochs(dir / "x.bin"), DataError);
  fs::remove_all(dir);
}
