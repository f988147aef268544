#pragma once

// Configuration files and the end-to-end experiment protocol: normalize,
// split, train, evaluate, plus the patch-size and training-fraction sweeps.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "energyformer/train.hpp"

namespace ef {

/// Flat JSON document; keys mirror ModelConfig / TrainConfig field names.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool deterministic = true;
  std::vector<std::size_t> sweep_patch_sizes{8, 10, 12, 14, 16, 18, 20};
  std::vector<double> sweep_fractions{0.01, 0.03, 0.05, 0.07, 0.09, 0.10};
};

/// Unknown keys and wrongly typed values are rejected with ConfigError.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& cfg);

/// Normalized cube, an untrained model sized from the data, and the split.
struct PreparedRun {
  HsiCube data;
  Model model;
  Split split;
};

PreparedRun prepare_run(const HsiCube& cube, const LabelMap& labels, const RunConfig& cfg);

struct ExperimentResult {
  Model model;
  Split split;
  TrainResult training;
  EvalReport report;
};

/// `cube` is raw; it is normalized here. Model bands/classes come from the data.
ExperimentResult run_experiment(const HsiCube& cube, const LabelMap& labels, const RunConfig& cfg,
                                const EpochCallback& on_epoch = {});

struct SweepRow {
  std::string axis;   // "patch_size" or "train_fraction"
  double setting = 0;
  std::size_t train_samples = 0;
  double kappa = 0, oa = 0, aa = 0, seconds = 0;
};

std::vector<SweepRow> sweep_patch_size(const HsiCube& cube, const LabelMap& labels, const RunConfig& cfg,
                                       const EpochCallback& on_epoch = {});
std::vector<SweepRow> sweep_fraction(const HsiCube& cube, const LabelMap& labels, const RunConfig& cfg,
                                     const EpochCallback& on_epoch = {});
void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

void write_loss_csv(const std::vector<double>& epoch_loss, std::ostream& out);

}  // namespace ef
