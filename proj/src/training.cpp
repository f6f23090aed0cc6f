#include "perfuseg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "perfuseg/error.hpp"
#include "perfuseg/io.hpp"
#include "perfuseg/log.hpp"
#include "perfuseg/nn/loss.hpp"

namespace perfuseg {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorKind::Config, "epochs must be >= 1");
  require(patience >= 1 && patience < epochs, ErrorKind::Config,
          "patience must lie in [1, epochs), got " + std::to_string(patience));
  require(batch_size >= 1, ErrorKind::Config, "batch size must be >= 1");
  require(stride >= 1 && stride <= kTileSize, ErrorKind::Config, "stride must lie in [1, 16]");
  require(min_delta >= 0, ErrorKind::Config, "min_delta must be >= 0");
  require(dice_epsilon > 0, ErrorKind::Config, "Dice epsilon must be > 0");
  require(optimizer.learning_rate >= 0, ErrorKind::Config, "learning rate must be >= 0");
}

std::string FoldPlan::name() const {
  std::string out;
  for (const auto& id : held_out) out += (out.empty() ? "" : "+") + id;
  return out;
}

namespace {

void check_cohort(const std::vector<std::string>& cohort) {
  require(cohort.size() >= 2, ErrorKind::Config,
          "cross-validation needs at least 2 patients, got " + std::to_string(cohort.size()));
  std::set<std::string> seen;
  for (const auto& id : cohort) require(seen.insert(id).second, ErrorKind::Config, "duplicate patient id '" + id + "'");
}

}  // namespace

std::vector<FoldPlan> lopo_split(const std::vector<std::string>& cohort) {
  return group_split(cohort, static_cast<int>(cohort.size()));
}

std::vector<FoldPlan> group_split(const std::vector<std::string>& cohort, int k) {
  check_cohort(cohort);
  const int n = static_cast<int>(cohort.size());
  require(k >= 2 && k <= n, ErrorKind::Config, "fold count must lie in [2, " + std::to_string(n) + "]");
  std::vector<FoldPlan> folds(k);
  for (int f = 0; f < k; ++f) {
    const int begin = n * f / k, end = n * (f + 1) / k;
    for (int i = 0; i < n; ++i) (i >= begin && i < end ? folds[f].held_out : folds[f].training).push_back(cohort[i]);
  }
  return folds;
}

PatientData load_patient(const fs::path& data_dir, const fs::path& labels_dir, const std::string& id) {
  const auto volume_path = data_dir / (id + ".ctpv");
  require(fs::exists(volume_path), ErrorKind::Io, "fold setup: missing " + volume_path.string());
  PatientData p;
  p.id = id;
  p.volume = io::read_ctpv(volume_path);
  p.volume.set_patient_id(id);
  for (int s = 0; s < p.volume.slices(); ++s) {
    const auto path = labels_dir / id / "labels" / io::slice_file_name(s);
    require(fs::exists(path), ErrorKind::Io, "fold setup: missing " + path.string());
    p.labels.push_back(io::read_label_map(path, s));
    p.labels.back().validate_ground_truth();
  }
  return p;
}

std::vector<TileSample> make_tiles(const std::vector<const PatientData*>& patients, int stride, bool skip_background) {
  std::vector<TileSample> out;
  for (const auto* p : patients) {
    require(static_cast<int>(p->labels.size()) == p->volume.slices(), ErrorKind::Shape,
            p->id + ": one label map per slice required");
    for (int s = 0; s < p->volume.slices(); ++s) {
      auto tiles = tile_slice(p->volume, s, p->labels[s], stride);
      for (auto& t : tiles) {
        if (skip_background && (t.target.array() == 255.0f).all()) continue;
        out.push_back(std::move(t));
      }
    }
  }
  label_tiles(out);
  return out;
}

std::string epoch_csv_header() { return "epoch,train_cost,val_cost,seconds\n"; }

std::string epoch_csv_row(const EpochRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.3f\n", r.epoch, r.train_cost, r.val_cost, r.seconds);
  return buf;
}

namespace {

struct Batch {
  nn::Tensor<float> input;
  nn::Tensor<float> target;
};

Batch make_batch(const std::vector<TileSample>& samples, const std::vector<std::size_t>& order, std::size_t begin,
                 std::size_t end, bool classifier) {
  const int n = static_cast<int>(end - begin);
  const int frames = samples[order[begin]].frames;
  const std::size_t per = static_cast<std::size_t>(frames) * kTileSize * kTileSize;
  std::vector<float> input(per * n);
  std::vector<float> target(classifier ? 4u * n : static_cast<std::size_t>(kTileSize) * kTileSize * n, 0.0f);
  for (int i = 0; i < n; ++i) {
    const auto& s = samples[order[begin + i]];
    require(s.frames == frames && s.input.size() == per, ErrorKind::Shape, "tiles in a batch differ in frame count");
    std::copy(s.input.begin(), s.input.end(), input.begin() + per * i);
    if (classifier) {
      const auto label = s.label ? *s.label : assign_tile_label(s.target);
      target[4u * i + static_cast<std::size_t>(label)] = 1.0f;
    } else {
      for (int y = 0; y < kTileSize; ++y)
        for (int x = 0; x < kTileSize; ++x)
          target[(static_cast<std::size_t>(i) * kTileSize + y) * kTileSize + x] = s.target(y, x) / 255.0f;
    }
  }
  Batch b;
  b.input = nn::Tensor<float>::from({n, frames, kTileSize, kTileSize, 1}, std::move(input));
  b.target = classifier ? nn::Tensor<float>::from({n, 4}, std::move(target))
                        : nn::Tensor<float>::from({n, kTileSize, kTileSize}, std::move(target));
  return b;
}

nn::Tensor<float> batch_cost(const nn::Tensor<float>& pred, const nn::Tensor<float>& target, bool classifier,
                             double epsilon) {
  return classifier ? nn::cross_entropy(pred, target) : nn::soft_dice_cost(pred, target, epsilon);
}

std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  return order;
}

}  // namespace

double evaluate_cost(const Network<float>& net, const std::vector<TileSample>& samples, int batch_size,
                     double dice_epsilon) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  nn::NoGradGuard guard;
  const bool classifier = is_classifier(net.spec().name);
  const auto order = identity_order(samples.size());
  double total = 0;
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const auto end = std::min(samples.size(), b + batch_size);
    const auto batch = make_batch(samples, order, b, end, classifier);
    total += batch_cost(net.forward(batch.input), batch.target, classifier, dice_epsilon).item();
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train_samples(const std::vector<TileSample>& train, const std::vector<TileSample>& validation,
                          ModelName model, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  require(!train.empty(), ErrorKind::Config, "no training tiles");
  const bool classifier = is_classifier(model);
  const bool use_validation = config.stop_on == StopSignal::Validation && !validation.empty();
  if (config.stop_on == StopSignal::Validation && validation.empty())
    log::warn("no held-out tiles; early stopping follows the training cost");

  ModelConfig mc;
  mc.frames = train.front().frames;
  mc.decoder = config.decoder;
  auto net = build_model<float>(model, mc, config.seed);
  nn::Optimizer<float> opt(config.optimizer);
  std::mt19937_64 rng(config.seed ^ 0x5eedba7c4e5ULL);

  TrainResult result{net, {}, {}, 0, false};
  auto best_params = nn::export_parameters(net.parameters());
  std::optional<nn::OptimizerState> best_opt;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  auto order = identity_order(train.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batch_id = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size, ++batch_id) {
      const auto end = std::min(order.size(), b + config.batch_size);
      const auto batch = make_batch(train, order, b, end, classifier);
      nn::zero_grad(net.parameters());
      const auto cost = batch_cost(net.forward(batch.input), batch.target, classifier, config.dice_epsilon);
      const double value = cost.item();
      require(std::isfinite(value), ErrorKind::Divergence,
              "non-finite cost at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_id));
      nn::backward(cost);
      opt.step(net.parameters());
      total += value;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_cost = total / static_cast<double>(train.size());
    rec.val_cost = evaluate_cost(net, validation, std::max(config.batch_size, 64), config.dice_epsilon);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    log::info("epoch ", epoch, " train ", rec.train_cost, " val ", rec.val_cost, " (", rec.seconds, " s)");

    const double monitored = use_validation ? rec.val_cost : rec.train_cost;
    require(std::isfinite(monitored), ErrorKind::Divergence, "non-finite validation cost at epoch " + std::to_string(epoch));
    if (monitored < best - config.min_delta) {
      best = monitored;
      result.best_epoch = epoch;
      best_params = nn::export_parameters(net.parameters());
      best_opt = opt.state();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.stopped_early = epoch < config.epochs;
      log::info("early stop at epoch ", epoch, ", best epoch ", result.best_epoch);
      break;
    }
  }

  nn::import_parameters(best_params, net.parameters());
  result.network = net;
  result.checkpoint = make_checkpoint(net, best_opt);
  result.checkpoint.metadata["best_epoch"] = std::to_string(result.best_epoch);
  result.checkpoint.metadata["seed"] = std::to_string(config.seed);
  return result;
}

TrainResult train_fold(const FoldPlan& plan, const std::vector<PatientData>& cohort, ModelName model,
                       const TrainConfig& config) {
  config.validate();
  const std::set<std::string> held(plan.held_out.begin(), plan.held_out.end());
  auto find = [&](const std::string& id) -> const PatientData* {
    for (const auto& p : cohort)
      if (p.id == id) return &p;
    fail(ErrorKind::Io, "fold setup: no data for patient '" + id + "'");
  };
  std::vector<const PatientData*> train_patients, held_patients;
  for (const auto& id : plan.training) {
    require(!held.count(id), ErrorKind::Config, "patient '" + id + "' is both training and held out");
    train_patients.push_back(find(id));
  }
  for (const auto& id : plan.held_out) held_patients.push_back(find(id));

  auto train = make_tiles(train_patients, config.stride, config.skip_background_tiles);
  if (config.augment) train = augment_core_tiles(train, config.seed);
  for (const auto& t : train)
    require(!held.count(t.origin.patient_id), ErrorKind::Validation,
            "held-out tile from '" + t.origin.patient_id + "' in the training set");
  const auto validation = make_tiles(held_patients, kTileSize, config.skip_background_tiles);
  log::info("fold ", plan.name(), ": ", train.size(), " training tiles, ", validation.size(), " held-out tiles");

  std::ofstream log_file;
  if (!plan.log_path.empty()) {
    if (plan.log_path.has_parent_path()) fs::create_directories(plan.log_path.parent_path());
    log_file.open(plan.log_path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(log_file), ErrorKind::Io, "cannot write " + plan.log_path.string());
    log_file << epoch_csv_header() << std::flush;
  }
  auto result = train_samples(train, validation, model, config, [&](const EpochRecord& r) {
    if (log_file.is_open()) log_file << epoch_csv_row(r) << std::flush;
  });
  result.checkpoint.metadata["held_out"] = plan.name();
  if (!plan.checkpoint_path.empty()) {
    if (plan.checkpoint_path.has_parent_path()) fs::create_directories(plan.checkpoint_path.parent_path());
    nn::save_checkpoint(result.checkpoint, plan.checkpoint_path);
  }
  return result;
}

}  // namespace perfuseg
