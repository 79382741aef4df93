// mi-fuse: command-line front end for the region-fusion motor-imagery pipeline.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mifuse/mifuse.hpp"

namespace {

namespace fs = std::filesystem;
using namespace mifuse;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

std::pair<double, double> parse_pair(const std::string& text, const char* what) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError(std::string(what) + " must be given as A,B");
  try {
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
  } catch (const std::logic_error&) {
    throw ConfigError(std::string(what) + " '" + text + "' is not a pair of numbers");
  }
}

void print_summary(const CvReport& r) {
  std::printf("%s  %s  selection=%s\n", r.subject.c_str(), r.protocol.c_str(), r.selection.c_str());
  for (const auto& f : r.folds)
    std::printf("  fold %d: acc %.2f  (%ld/%ld)  features %zu -> %zu\n", f.fold, f.metrics.accuracy, f.metrics.tc,
                f.metrics.tt, f.fused_features, f.selected_features);
  std::printf("  accuracy  %.2f +/- %.2f\n", r.accuracy.mean, r.accuracy.std);
  std::printf("  precision %.4f  recall %.4f  f1 %.4f\n", r.precision.mean, r.recall.mean, r.f1.mean);
}

std::string subject_name(const std::string& given, const fs::path& epochs) {
  return given.empty() ? epochs.stem().string() : given;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brain-region feature fusion for two-class motor-imagery EEG"};
  app.require_subcommand(1);

  std::string manifest, window = "0.5,3.0", out;
  auto* epochs_cmd = app.add_subcommand("epochs", "Cut labeled epochs from a recording manifest");
  epochs_cmd->add_option("--manifest", manifest, "Recording manifest (JSON)")->required();
  epochs_cmd->add_option("--window", window, "Window start,end in seconds after the cue")->capture_default_str();
  epochs_cmd->add_option("--out", out, "Epoch-set file to write")->required();

  std::string spec_path;
  std::uint64_t seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic oracle recording");
  synth_cmd->add_option("--spec", spec_path, "Synthetic spec (JSON)")->required();
  auto* seed_opt = synth_cmd->add_option("--seed", seed, "Overrides the spec's seed");
  synth_cmd->add_option("--out", out, "Manifest path to write (data file is placed alongside)")->required();

  std::string epochs_path, config_path, subject, csv_path;
  auto* cv_cmd = app.add_subcommand("cv", "Cross-validate the pipeline on an epoch set");
  cv_cmd->add_option("--epochs", epochs_path, "Epoch-set file")->required();
  cv_cmd->add_option("--config", config_path, "Pipeline config (JSON)")->required();
  cv_cmd->add_option("--out", out, "Report JSON to write")->required();
  cv_cmd->add_option("--subject", subject, "Subject label (default: epoch file stem)");
  cv_cmd->add_option("--csv", csv_path, "Also write the report as CSV");

  auto* ablate_cmd = app.add_subcommand("ablate", "Paired run with and without feature selection");
  ablate_cmd->add_option("--epochs", epochs_path, "Epoch-set file")->required();
  ablate_cmd->add_option("--config", config_path, "Pipeline config (JSON)")->required();
  ablate_cmd->add_option("--out", out, "Output directory")->required();
  ablate_cmd->add_option("--subject", subject, "Subject label (default: epoch file stem)");

  std::string in_path;
  auto* report_cmd = app.add_subcommand("report", "Summarize a report and convert it to CSV");
  report_cmd->add_option("--in", in_path, "Report JSON")->required();
  report_cmd->add_option("--csv", csv_path, "CSV file to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*epochs_cmd) {
      const auto [start, end] = parse_pair(window, "--window");
      const auto rec = load_dataset(manifest);
      const auto set = extract_epochs(rec, start, end);
      persist_epochs(set, out);
      std::printf("%zu epochs of %lld channels x %lld samples -> %s\n", set.size(),
                  static_cast<long long>(set.channels()), static_cast<long long>(set.length()), out.c_str());
    } else if (*synth_cmd) {
      auto spec = synthetic_spec_from_json(detail::read_json_file(spec_path, "synthetic spec"));
      if (*seed_opt) spec.seed = seed;
      auto result = generate_synthetic(spec);
      for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      result.recording.manifest.data_file = fs::path(out).stem().string() + ".f64";
      write_dataset(result.recording, out);
      std::printf("%zu trials, %d channels -> %s\n", result.recording.manifest.markers.size(), spec.n_channels,
                  out.c_str());
    } else if (*cv_cmd) {
      const auto config = load_config(config_path);
      const auto set = read_epochs(epochs_path);
      const auto report = run_cv(set, config, subject_name(subject, epochs_path));
      emit_report(report, ReportFormat::json, out);
      if (!csv_path.empty()) emit_report(report, ReportFormat::csv, csv_path);
      print_summary(report);
    } else if (*ablate_cmd) {
      const auto config = load_config(config_path);
      const auto set = read_epochs(epochs_path);
      const auto result = run_ablation(set, config, subject_name(subject, epochs_path));
      const fs::path dir(out);
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
      emit_report(result.with_selection, ReportFormat::json, dir / "with_selection.json");
      emit_report(result.without_selection, ReportFormat::json, dir / "without_selection.json");
      detail::write_text(dir / "comparison.csv", ablation_csv_text(result));
      print_summary(result.with_selection);
      print_summary(result.without_selection);
    } else if (*report_cmd) {
      const auto report = read_report(in_path);
      if (!csv_path.empty()) emit_report(report, ReportFormat::csv, csv_path);
      print_summary(report);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
