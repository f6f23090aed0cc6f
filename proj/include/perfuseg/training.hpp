#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "perfuseg/labels.hpp"
#include "perfuseg/models.hpp"
#include "perfuseg/nn/loss.hpp"
#include "perfuseg/tiling.hpp"
#include "perfuseg/volume.hpp"

namespace perfuseg {

enum class StopSignal { Validation, Training };

struct TrainConfig {
  int epochs = 100;
  int patience = 10;
  int batch_size = 32;
  nn::OptimizerConfig optimizer;
  int stride = kTileSize;
  bool augment = true;
  std::uint64_t seed = 1;
  double min_delta = 1e-5;
  double dice_epsilon = nn::kDefaultDiceEpsilon;
  StopSignal stop_on = StopSignal::Validation;
  /// Leave out tiles whose target is entirely background.
  bool skip_background_tiles = false;
  DecoderReading decoder = DecoderReading::ChannelHalving;

  /// Config error on patience >= epochs, batch < 1 and similar.
  void validate() const;
};

struct FoldPlan {
  std::vector<std::string> held_out;  // one id for leave-one-patient-out
  std::vector<std::string> training;
  std::filesystem::path checkpoint_path;  // empty: not written
  std::filesystem::path log_path;

  std::string name() const;  // held-out ids joined by '+'
};

/// One fold per patient, in cohort order. Config error on fewer than two
/// patients or a repeated id.
std::vector<FoldPlan> lopo_split(const std::vector<std::string>& cohort);

/// k contiguous groups of the cohort, each held out once.
std::vector<FoldPlan> group_split(const std::vector<std::string>& cohort, int k);

/// Preprocessed volume and ground truth of one patient.
struct PatientData {
  std::string id;
  CtpVolume volume;
  std::vector<LabelMap> labels;  // one per slice
};

/// Reads `<data_dir>/<id>.ctpv` and `<labels_dir>/<id>/labels/slice_NNN.pgm`;
/// Io error prefixed "fold setup" when a file is missing.
PatientData load_patient(const std::filesystem::path& data_dir, const std::filesystem::path& labels_dir,
                         const std::string& id);

/// Tiles every slice of the given patients at `stride`; labels are set.
std::vector<TileSample> make_tiles(const std::vector<const PatientData*>& patients, int stride,
                                   bool skip_background);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_cost = 0;  // mean per-tile loss over the epoch
  double val_cost = 0;    // mean per-tile loss on held-out tiles, NaN when none
  double seconds = 0;
};

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochRecord& r);

struct TrainResult {
  Network<float> network;  // best-epoch weights
  nn::Checkpoint checkpoint;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mean per-tile cost of `samples` without recording gradients.
double evaluate_cost(const Network<float>& net, const std::vector<TileSample>& samples, int batch_size,
                     double dice_epsilon = nn::kDefaultDiceEpsilon);

/// The epoch loop on prepared samples. Batch cost is the sum of per-tile
/// losses (soft Dice for mJ-Net, cross-entropy for the classifiers).
/// Divergence error naming epoch and batch on a non-finite cost.
TrainResult train_samples(const std::vector<TileSample>& train, const std::vector<TileSample>& validation,
                          ModelName model, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Builds tiles for the plan (augmenting only the training side), trains,
/// and writes the checkpoint and CSV log when the plan has paths. Every
/// training tile's provenance is checked against the held-out ids.
TrainResult train_fold(const FoldPlan& plan, const std::vector<PatientData>& cohort, ModelName model,
                       const TrainConfig& config);

}  // namespace perfuseg
