// perfuseg command line: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include "perfuseg/dicom.hpp"
#include "perfuseg/error.hpp"
#include "perfuseg/inference.hpp"
#include "perfuseg/io.hpp"
#include "perfuseg/log.hpp"
#include "perfuseg/metrics.hpp"
#include "perfuseg/models.hpp"
#include "perfuseg/nn/gradcheck.hpp"
#include "perfuseg/parallel.hpp"
#include "perfuseg/param_maps.hpp"
#include "perfuseg/phantom.hpp"
#include "perfuseg/preprocess.hpp"
#include "perfuseg/training.hpp"

namespace fs = std::filesystem;
using namespace perfuseg;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  int threads = 0;
  std::string log_level = "info";
  std::string config;
};

// Fills options of `sub` that were not given on the command line from a
// key = value file whose keys are the long flag names.
void apply_config(CLI::App* sub, const std::string& path, const std::string& what = "config") {
  require(fs::exists(path), ErrorKind::Io, what + " file '" + path + "' not found");
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::Error& e) {
    fail(ErrorKind::Config, path + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    auto* opt = sub->get_option_no_throw("--" + item.name);
    require(opt != nullptr && item.name != "config" && item.name != "spec", ErrorKind::Config,
            path + ": unknown key '" + item.name + "' for '" + sub->get_name() + "'");
    if (opt->count() > 0) continue;  // the flag wins
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

std::vector<std::string> ctpv_stems(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::Io, "'" + dir.string() + "' is not a directory");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ctpv") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<int> slice_list(const std::string& spec, int slices) {
  std::vector<int> out;
  if (spec == "all") {
    for (int s = 0; s < slices; ++s) out.push_back(s);
    return out;
  }
  for (const auto& item : split_list(spec)) {
    int s = -1;
    try {
      s = std::stoi(item);
    } catch (const std::exception&) {
      fail(ErrorKind::Usage, "bad slice '" + item + "'");
    }
    require(s >= 0 && s < slices, ErrorKind::Usage, "slice " + item + " out of range");
    out.push_back(s);
  }
  return out;
}

std::vector<Mask> read_masks(const fs::path& dir, int slices) {
  std::vector<Mask> masks;
  for (int s = 0; s < slices; ++s) {
    const auto bytes = io::read_pgm(dir / io::slice_file_name(s));
    masks.push_back((bytes > 0).cast<std::uint8_t>());
  }
  return masks;
}

void write_mask(const Mask& m, const fs::path& path) {
  io::write_pgm((m > 0).select(Image<std::uint8_t>::Constant(m.rows(), m.cols(), 255),
                         Image<std::uint8_t>::Zero(m.rows(), m.cols())),
                path);
}

void write_maps(const ParametricMaps& maps, const fs::path& dir) {
  for (std::size_t s = 0; s < maps.slices.size(); ++s)
    for (auto kind : {MapKind::Ttp, MapKind::Cbv, MapKind::Cbf, MapKind::Tmax, MapKind::Rcbv, MapKind::Rcbf}) {
      const auto& m = maps.slices[s].map(kind);
      const auto name = fs::path(std::string(to_string(kind)) + "_" + io::slice_file_name(static_cast<int>(s)));
      io::write_raw_f32(std::span(m.data(), static_cast<std::size_t>(m.size())),
                        dir / fs::path(name).replace_extension(".f32"));
    }
}

// ---- ingest ----------------------------------------------------------------

struct IngestArgs {
  std::string dicom, out, patient;
};

int run_ingest(const IngestArgs& a) {
  const auto frames = dicom::read_dicom_directory(a.dicom);
  auto volume = dicom::assemble_volume(frames);
  if (!a.patient.empty()) volume.set_patient_id(a.patient);
  volume.validate();
  io::write_ctpv(volume, a.out);
  log::info("wrote ", a.out, ": T=", volume.frames(), " S=", volume.slices(), " ", volume.height(), "x",
            volume.width());
  return 0;
}

// ---- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::string spec = "default";
  std::string out;
  PhantomSpec p;
};

int run_phantom(PhantomArgs a, std::uint64_t seed) {
  a.p.seed = seed;
  const auto cohort = generate_cohort(a.p);
  const fs::path out = a.out;
  fs::create_directories(out);
  std::ostringstream ids;
  for (const auto& patient : cohort) {
    const auto& id = patient.volume.patient_id();
    io::write_ctpv(patient.volume, out / (id + ".ctpv"));
    const auto dir = out / id;
    for (int s = 0; s < patient.volume.slices(); ++s) {
      io::write_label_map(patient.labels[s], dir / "labels" / io::slice_file_name(s));
      write_mask(patient.brain_masks[s], dir / "brain" / io::slice_file_name(s));
      for (auto r : kAllRules)
        write_mask(engineered_region(patient, s, r), dir / "regions" / (rule(r).name + "_" + io::slice_file_name(s)));
    }
    write_maps(patient.analytic, dir / "analytic");
    std::ostringstream motion;
    motion << "frame,rotation_deg,dx,dy\n";
    for (std::size_t t = 0; t < patient.motion.size(); ++t)
      motion << t << ',' << patient.motion[t].rotation_deg << ',' << patient.motion[t].dx << ','
             << patient.motion[t].dy << '\n';
    io::write_text(dir / "motion.csv", motion.str());
    ids << id << '\n';
  }
  io::write_text(out / "cohort.txt", ids.str());
  log::info("wrote ", cohort.size(), " phantom patients to ", out.string());
  return 0;
}

// ---- preprocess ------------------------------------------------------------

struct PreprocessArgs {
  std::string in, out;
  bool no_register = false;
  std::string normalization = "global";
  std::string stripped;
  std::string dump_masks;
};

void preprocess_one(const PreprocessArgs& a, const fs::path& in, const fs::path& out) {
  const auto volume = io::read_ctpv(in);
  PreprocessConfig cfg;
  cfg.register_frames = !a.no_register;
  if (a.normalization == "global")
    cfg.enhance.scope = NormalizationScope::Global;
  else if (a.normalization == "slice")
    cfg.enhance.scope = NormalizationScope::PerSlice;
  else if (a.normalization == "frame")
    cfg.enhance.scope = NormalizationScope::PerFrame;
  else
    fail(ErrorKind::Config, "normalization must be global, slice or frame");
  const auto pre = preprocess(volume, cfg);
  io::write_ctpv(pre.enhanced, out);
  const auto side = out.parent_path() / volume.patient_id();
  const auto masks = a.dump_masks.empty() ? side / "masks" : fs::path(a.dump_masks) / volume.patient_id();
  for (std::size_t s = 0; s < pre.masks.size(); ++s)
    write_mask(pre.masks[s], masks / io::slice_file_name(static_cast<int>(s)));
  if (!pre.transforms.empty()) {
    std::ostringstream csv;
    csv << "frame,slice,rotation_deg,dx,dy\n";
    for (int t = 0; t < volume.frames(); ++t)
      for (int s = 0; s < volume.slices(); ++s) {
        const auto& tr = pre.transforms[static_cast<std::size_t>(t) * volume.slices() + s];
        csv << t << ',' << s << ',' << tr.rotation_deg << ',' << tr.dx << ',' << tr.dy << '\n';
      }
    io::write_text(side / "transforms.csv", csv.str());
  }
  if (!a.stripped.empty()) {
    const fs::path target = fs::is_directory(a.stripped) ? fs::path(a.stripped) / out.filename() : fs::path(a.stripped);
    io::write_ctpv(pre.stripped, target);
  }
  log::info("preprocessed ", in.string(), " -> ", out.string());
}

int run_preprocess(const PreprocessArgs& a) {
  if (fs::is_directory(a.in)) {
    fs::create_directories(a.out);
    for (const auto& id : ctpv_stems(a.in))
      preprocess_one(a, fs::path(a.in) / (id + ".ctpv"), fs::path(a.out) / (id + ".ctpv"));
  } else {
    preprocess_one(a, a.in, a.out);
  }
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string model = "mjnet";
  std::string data, labels, out = "runs";
  std::string fold = "all";
  int groups = 0;
  std::string cohort;
  int epochs = 100, patience = 10, batch = 32, stride = kTileSize;
  double lr = 0.01, momentum = 0.9, min_delta = 1e-5, dice_epsilon = nn::kDefaultDiceEpsilon;
  std::string optimizer = "sgd";
  bool augment = true;
  std::string stop_on = "validation";
  bool skip_background = false;
  std::string decoder = "channel_halving";
};

DecoderReading decoder_from_name(const std::string& s) {
  if (s == "channel_halving") return DecoderReading::ChannelHalving;
  if (s == "depth_stack") return DecoderReading::DepthStack;
  fail(ErrorKind::Config, "decoder must be channel_halving or depth_stack");
}

int run_train(const TrainArgs& a, std::uint64_t seed) {
  const auto model = model_from_name(a.model);
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.patience = a.patience;
  cfg.batch_size = a.batch;
  cfg.stride = a.stride;
  cfg.optimizer.kind = nn::optimizer_from_name(a.optimizer);
  cfg.optimizer.learning_rate = a.lr;
  cfg.optimizer.momentum = a.momentum;
  cfg.min_delta = a.min_delta;
  cfg.dice_epsilon = a.dice_epsilon;
  cfg.augment = a.augment;
  cfg.seed = seed;
  cfg.skip_background_tiles = a.skip_background;
  cfg.decoder = decoder_from_name(a.decoder);
  if (a.stop_on == "validation")
    cfg.stop_on = StopSignal::Validation;
  else if (a.stop_on == "training")
    cfg.stop_on = StopSignal::Training;
  else
    fail(ErrorKind::Config, "stop-on must be validation or training");
  cfg.validate();

  const auto ids = a.cohort.empty() ? ctpv_stems(a.data) : split_list(a.cohort);
  std::vector<FoldPlan> plans;
  if (a.groups > 0) {
    plans = group_split(ids, a.groups);
  } else {
    plans = lopo_split(ids);
    if (a.fold != "all") {
      const auto wanted = split_list(a.fold);
      std::vector<FoldPlan> picked;
      FoldPlan plan;
      plan.held_out = wanted;
      for (const auto& id : wanted)
        require(std::find(ids.begin(), ids.end(), id) != ids.end(), ErrorKind::Io,
                "fold setup: patient '" + id + "' not in the cohort");
      for (const auto& id : ids)
        if (std::find(wanted.begin(), wanted.end(), id) == wanted.end()) plan.training.push_back(id);
      plans = {plan};
    }
  }
  const fs::path labels = a.labels.empty() ? a.data : a.labels;
  std::vector<PatientData> cohort;
  for (const auto& id : ids) cohort.push_back(load_patient(a.data, labels, id));
  for (auto& plan : plans) {
    plan.checkpoint_path = fs::path(a.out) / ("fold_" + plan.name() + ".psck");
    plan.log_path = fs::path(a.out) / ("fold_" + plan.name() + "_log.csv");
    const auto result = train_fold(plan, cohort, model, cfg);
    log::info("fold ", plan.name(), ": best epoch ", result.best_epoch, " of ", result.log.size(), ", checkpoint ",
              plan.checkpoint_path.string());
  }
  return 0;
}

// ---- predict ---------------------------------------------------------------

struct PredictArgs {
  std::string model = "mjnet";
  std::string ckpt, in, out;
  std::string slice = "all";
  int stride = kTileSize;
  std::string masks;
  bool no_mask = false;
  std::string truth;
  bool histogram = false;
  std::vector<float> bands{60.0f, 135.0f, 234.0f};
};

int run_predict(const PredictArgs& a) {
  const auto model = model_from_name(a.model);
  const auto ckpt = nn::load_checkpoint(a.ckpt);
  const auto volume = io::read_ctpv(a.in);
  const auto net = network_from_checkpoint(ckpt, model);
  require(net.spec().config.frames == volume.frames(), ErrorKind::Load,
          "checkpoint expects " + std::to_string(net.spec().config.frames) + " frames, volume has " +
              std::to_string(volume.frames()));
  require(a.bands.size() == 3, ErrorKind::Config, "bands takes three values");
  const ClassBands bands{a.bands[0], a.bands[1], a.bands[2]};
  bands.validate();

  std::vector<Mask> masks;
  if (!a.no_mask) {
    const fs::path dir = !a.masks.empty() ? fs::path(a.masks) : fs::path(a.in).parent_path() / volume.patient_id() / "masks";
    if (fs::exists(dir / io::slice_file_name(0)))
      masks = read_masks(dir, volume.slices());
    else if (!a.masks.empty())
      fail(ErrorKind::Io, "no masks in " + dir.string());
    else
      log::warn("no brain masks next to ", a.in, "; classifying without a mask");
  }

  const fs::path out = a.out;
  fs::create_directories(out);
  PredictConfig pc;
  pc.stride = a.stride;
  const auto tm = tile_model(net);
  for (int s : slice_list(a.slice, volume.slices())) {
    const auto raw = predict_slice(tm, volume, s, pc);
    const auto cls = classify_pixels(raw, bands, masks.empty() ? nullptr : &masks[s]);
    render_output(cls, out / io::slice_file_name(s));
    render_output(raw, out / io::slice_file_name(s, "_raw"));
    if (a.histogram) io::write_text(out / fs::path(io::slice_file_name(s, "_hist")).replace_extension(".csv"),
                     histogram_csv(value_histogram(raw)));
    if (!a.truth.empty()) {
      const auto truth = io::read_label_map(fs::path(a.truth) / io::slice_file_name(s), s);
      render_panel(cls, truth, out / io::slice_file_name(s, "_panel"));
    }
  }
  log::info("predictions written to ", out.string());
  return 0;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> pred, truth, group;
  std::string out;
  std::string pooling = "pixels";
};

std::vector<int> truth_slices(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::Io, "'" + dir.string() + "' is not a directory");
  std::vector<int> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() == 13 && name.rfind("slice_", 0) == 0 && e.path().extension() == ".pgm")
      out.push_back(std::stoi(name.substr(6, 3)));
  }
  std::sort(out.begin(), out.end());
  require(!out.empty(), ErrorKind::Io, "no slice_NNN.pgm files in " + dir.string());
  return out;
}

int run_evaluate(const EvaluateArgs& a) {
  require(a.pred.size() == a.truth.size(), ErrorKind::Usage, "give one --truth per --pred");
  require(a.group.empty() || a.group.size() == a.pred.size(), ErrorKind::Usage, "give one --group per --pred");
  Pooling pooling;
  if (a.pooling == "pixels")
    pooling = Pooling::Pixels;
  else if (a.pooling == "slice")
    pooling = Pooling::SliceAverage;
  else
    fail(ErrorKind::Config, "pooling must be pixels or slice");

  std::vector<MetricReport> reports;
  MetricAccumulator all("all");
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    const fs::path pred = a.pred[i], truth = a.truth[i];
    const auto name = a.group.empty() ? pred.filename().string() : a.group[i];
    MetricAccumulator acc(name);
    for (int s : truth_slices(truth)) {
      const auto t = io::read_label_map(truth / io::slice_file_name(s), s);
      t.validate_ground_truth();
      const auto cls = io::read_label_map(pred / io::slice_file_name(s), s);
      const auto raw_path = pred / io::slice_file_name(s, "_raw");
      const auto raw = fs::exists(raw_path) ? io::read_label_map(raw_path, s) : cls;
      acc.add(raw, cls, t);
      all.add(raw, cls, t);
    }
    reports.push_back(acc.report(pooling));
  }
  if (a.pred.size() > 1) reports.push_back(all.report(pooling));
  const auto csv = metrics_csv(reports);
  if (a.out.empty())
    std::cout << csv;
  else
    io::write_text(a.out, csv);
  return 0;
}

// ---- baseline --------------------------------------------------------------

struct BaselineArgs {
  std::string in, out;
  std::string rules = "all";
  bool no_register = false;
  std::string truth;
  bool maps = false;
};

int run_baseline(const BaselineArgs& a) {
  const auto volume = io::read_ctpv(a.in);
  PreprocessConfig cfg;
  cfg.register_frames = !a.no_register;
  const auto pre = preprocess(volume, cfg);
  const auto maps = compute_maps(pre.stripped, pre.masks);
  const fs::path out = a.out;
  fs::create_directories(out);
  if (a.maps) write_maps(maps, out / "maps");

  std::vector<RuleId> ids;
  if (a.rules == "all")
    ids.assign(kAllRules.begin(), kAllRules.end());
  else
    for (const auto& name : split_list(a.rules)) ids.push_back(rule_from_name(name).id);

  std::ostringstream csv;
  csv << "rule,slice,dice\n";
  for (auto id : ids) {
    const auto& r = rule(id);
    const auto masks = apply_rule(maps, r);
    for (std::size_t s = 0; s < masks.size(); ++s) {
      write_mask(masks[s], out / (r.name + "_" + io::slice_file_name(static_cast<int>(s))));
      if (a.truth.empty()) continue;
      const auto want = io::read_pgm(fs::path(a.truth) / (r.name + "_" + io::slice_file_name(static_cast<int>(s))));
      const auto d = dice(masks[s], (want > 0).cast<std::uint8_t>());
      csv << r.name << ',' << s << ',';
      if (d)
        csv << *d;
      else
        csv << "nan";
      csv << '\n';
    }
  }
  if (!a.truth.empty()) io::write_text(out / "dice.csv", csv.str());
  log::info("baseline masks written to ", out.string());
  return 0;
}

// ---- model audit / gradcheck -----------------------------------------------

struct AuditArgs {
  std::string model = "all";
  int frames = 30;
  std::string decoder = "channel_halving";
};

int run_audit(const AuditArgs& a) {
  std::vector<ModelName> names;
  if (a.model == "all")
    names = {ModelName::Arch1, ModelName::Arch2, ModelName::Arch3, ModelName::MjNet};
  else
    names = {model_from_name(a.model)};
  ModelConfig mc;
  mc.frames = a.frames;
  mc.decoder = decoder_from_name(a.decoder);
  for (auto n : names) std::cout << format_audit(count_parameters(make_spec(n, mc))) << '\n';
  return 0;
}

struct GradcheckArgs {
  int trials = 10;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a, std::uint64_t seed) {
  nn::GradCheckConfig cfg;
  cfg.seed = seed;
  cfg.trials = a.trials;
  cfg.tolerance = a.tolerance;
  bool ok = true;
  for (const auto& r : nn::run_gradcheck_suite(cfg)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.op << " trials=" << r.trials << " max_rel_error=" << r.max_error
              << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

log::Level level_from_name(const std::string& s) {
  if (s == "debug") return log::Level::Debug;
  if (s == "info") return log::Level::Info;
  if (s == "warn") return log::Level::Warn;
  if (s == "error") return log::Level::Error;
  if (s == "off") return log::Level::Off;
  fail(ErrorKind::Config, "log level must be debug, info, warn, error or off");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perfuseg: CT perfusion segmentation pipeline"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every stochastic choice")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0: hardware concurrency; 1: bit-exact)");
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or off")->capture_default_str();

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", g.config, "key = value file; keys are flag names, flags override");
    return sub;
  };

  IngestArgs ingest;
  auto* c_ingest = with_config(app.add_subcommand("ingest", "Assemble a DICOM series into a CTPV volume"));
  c_ingest->add_option("--in,--dicom", ingest.dicom, "Directory of .dcm files")->required();
  c_ingest->add_option("--out", ingest.out, "Output .ctpv")->required();
  c_ingest->add_option("--patient", ingest.patient, "Patient id (default: file stem)");

  PhantomArgs phantom;
  auto* c_phantom = app.add_subcommand("phantom", "Generate the synthetic perfusion cohort");
  c_phantom->add_option("--spec", phantom.spec, "'default' or a key = value file of the flags below")->capture_default_str();
  c_phantom->add_option("--out", phantom.out, "Output directory")->required();
  auto& ps = phantom.p;
  c_phantom->add_option("--patients", ps.patients)->capture_default_str();
  c_phantom->add_option("--slices", ps.slices)->capture_default_str();
  c_phantom->add_option("--size", ps.size)->capture_default_str();
  c_phantom->add_option("--frames", ps.frames)->capture_default_str();
  c_phantom->add_option("--frame-interval", ps.frame_interval)->capture_default_str();
  c_phantom->add_option("--noise-sigma", ps.noise_sigma)->capture_default_str();
  c_phantom->add_option("--baseline", ps.baseline)->capture_default_str();
  c_phantom->add_option("--alpha", ps.alpha)->capture_default_str();
  c_phantom->add_option("--beta", ps.beta)->capture_default_str();
  c_phantom->add_option("--healthy-amplitude", ps.healthy_amplitude)->capture_default_str();
  c_phantom->add_option("--healthy-t0", ps.healthy_t0)->capture_default_str();
  c_phantom->add_option("--artery-t0", ps.artery_t0)->capture_default_str();
  c_phantom->add_option("--penumbra-delay", ps.penumbra_delay)->capture_default_str();
  c_phantom->add_option("--penumbra-amplitude", ps.penumbra_amplitude_factor)->capture_default_str();
  c_phantom->add_option("--core-delay", ps.core_delay)->capture_default_str();
  c_phantom->add_option("--core-amplitude", ps.core_amplitude_factor)->capture_default_str();
  c_phantom->add_option("--jitter-shift", ps.jitter_shift, "px")->capture_default_str();
  c_phantom->add_option("--jitter-rotation", ps.jitter_rotation, "degrees")->capture_default_str();

  PreprocessArgs prep;
  auto* c_prep = with_config(app.add_subcommand("preprocess", "Register, skull strip and enhance"));
  c_prep->add_option("--in", prep.in, ".ctpv file or directory of them")->required();
  c_prep->add_option("--out", prep.out, ".ctpv file or directory")->required();
  c_prep->add_flag("--skip-registration,--no-register", prep.no_register, "Skip frame registration");
  c_prep->add_option("--dump-masks", prep.dump_masks, "Write brain masks under <dir>/<id>/ (default: <out dir>/<id>/masks)");
  c_prep->add_option("--normalization", prep.normalization, "global, slice or frame")->capture_default_str();
  c_prep->add_option("--stripped", prep.stripped, "Also write the skull-stripped volume in original units");

  TrainArgs train;
  auto* c_train = with_config(app.add_subcommand("train", "Cross-validated training"));
  c_train->add_option("--model", train.model, "arch1, arch2, arch3 or mjnet")->capture_default_str();
  c_train->add_option("--data", train.data, "Directory of preprocessed .ctpv volumes")->required();
  c_train->add_option("--labels", train.labels, "Directory holding <id>/labels/ (default: --data)");
  c_train->add_option("--fold", train.fold, "Held-out patient id(s), comma separated, or 'all'")->capture_default_str();
  c_train->add_option("--groups", train.groups, "Split the cohort into this many contiguous folds instead");
  c_train->add_option("--cohort", train.cohort, "Comma-separated patient ids (default: every .ctpv in --data)");
  c_train->add_option("--out", train.out, "Output directory")->capture_default_str();
  c_train->add_option("--epochs", train.epochs)->capture_default_str();
  c_train->add_option("--patience", train.patience)->capture_default_str();
  c_train->add_option("--batch", train.batch)->capture_default_str();
  c_train->add_option("--stride", train.stride)->capture_default_str();
  c_train->add_option("--optimizer", train.optimizer, "sgd or adam")->capture_default_str();
  c_train->add_option("--lr", train.lr)->capture_default_str();
  c_train->add_option("--momentum", train.momentum)->capture_default_str();
  c_train->add_option("--min-delta", train.min_delta)->capture_default_str();
  c_train->add_option("--dice-epsilon", train.dice_epsilon)->capture_default_str();
  c_train->add_flag("--augment,!--no-augment", train.augment, "Rotate and mirror core tiles")->capture_default_str();
  c_train->add_option("--stop-on", train.stop_on, "validation or training")->capture_default_str();
  c_train->add_flag("--skip-background", train.skip_background, "Drop all-background tiles");
  c_train->add_option("--decoder", train.decoder, "channel_halving or depth_stack")->capture_default_str();

  PredictArgs pred;
  auto* c_pred = with_config(app.add_subcommand("predict", "Segment slices with a trained model"));
  c_pred->add_option("--model", pred.model)->capture_default_str();
  c_pred->add_option("--ckpt", pred.ckpt, "PSCK checkpoint")->required();
  c_pred->add_option("--in", pred.in, "Preprocessed .ctpv")->required();
  c_pred->add_option("--slice", pred.slice, "Index list or 'all'")->capture_default_str();
  c_pred->add_option("--stride", pred.stride)->capture_default_str();
  c_pred->add_option("--out", pred.out, "Output directory")->required();
  c_pred->add_option("--masks", pred.masks, "Brain masks (default: <in dir>/<id>/masks)");
  c_pred->add_flag("--no-mask", pred.no_mask, "Classify without a brain mask");
  c_pred->add_option("--truth", pred.truth, "Label directory; writes side-by-side panels");
  c_pred->add_flag("--histogram", pred.histogram, "Dump value histograms of the continuous maps");
  c_pred->add_option("--bands", pred.bands, "Upper edges of brain, penumbra, core")->delimiter(',')->capture_default_str();

  EvaluateArgs eval;
  auto* c_eval = with_config(app.add_subcommand("evaluate", "Score predictions against ground truth"));
  c_eval->add_option("--pred", eval.pred, "Prediction directory (repeatable)")->required();
  c_eval->add_option("--truth", eval.truth, "Label directory (repeatable)")->required();
  c_eval->add_option("--group", eval.group, "Row name per --pred (default: directory name)");
  c_eval->add_option("--out", eval.out, "CSV path (default: stdout)");
  c_eval->add_option("--pooling", eval.pooling, "pixels or slice")->capture_default_str();

  BaselineArgs base;
  auto* c_base = with_config(app.add_subcommand("baseline", "Threshold rules on parametric maps"));
  c_base->add_option("--in", base.in, "Raw .ctpv")->required();
  c_base->add_option("--out", base.out, "Output directory")->required();
  c_base->add_option("--rule", base.rules, "Rule names, comma separated, or 'all'")->capture_default_str();
  c_base->add_flag("--no-register", base.no_register);
  c_base->add_option("--truth", base.truth, "Directory of <rule>_slice_NNN.pgm reference regions");
  c_base->add_flag("--maps", base.maps, "Also write the parametric maps as raw f32");

  AuditArgs audit;
  auto* c_model = app.add_subcommand("model", "Model utilities");
  c_model->require_subcommand(1);
  auto* c_audit = c_model->add_subcommand("audit", "Per-layer parameter audit");
  c_audit->add_option("--model", audit.model, "arch1, arch2, arch3, mjnet or all")->capture_default_str();
  c_audit->add_option("--frames", audit.frames)->capture_default_str();
  c_audit->add_option("--decoder", audit.decoder)->capture_default_str();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  c_gc->add_option("--trials", gc.trials)->capture_default_str();
  c_gc->add_option("--tolerance", gc.tolerance)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
    return exit_code(ErrorKind::Usage);
  }

  try {
    log::set_threshold(level_from_name(g.log_level));
    set_thread_count(g.threads > 0 ? g.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
    auto* sub = app.get_subcommands().front();
    if (!g.config.empty()) apply_config(sub, g.config);
    if (sub == c_phantom && phantom.spec != "default") apply_config(c_phantom, phantom.spec, "spec");

    if (sub == c_ingest) return run_ingest(ingest);
    if (sub == c_phantom) return run_phantom(phantom, g.seed);
    if (sub == c_prep) return run_preprocess(prep);
    if (sub == c_train) return run_train(train, g.seed);
    if (sub == c_pred) return run_predict(pred);
    if (sub == c_eval) return run_evaluate(eval);
    if (sub == c_base) return run_baseline(base);
    if (sub == c_model) return run_audit(audit);
    if (sub == c_gc) return run_gradcheck(gc, g.seed);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return exit_code(ErrorKind::Io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
