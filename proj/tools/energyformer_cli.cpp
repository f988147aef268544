// energyformer: synthesize scenes, train, evaluate, render maps and run the
// patch-size / training-fraction sweeps.
//
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 format, 4 numeric divergence.
// Results go to stdout, diagnostics to stderr (level from EF_LOG).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "energyformer/checkpoint.hpp"
#include "energyformer/error.hpp"
#include "energyformer/pipeline.hpp"
#include "energyformer/render.hpp"
#include "energyformer/synth.hpp"

namespace fs = std::filesystem;
using namespace ef;

namespace {

enum class Level { error = 0, info = 1, debug = 2 };
Level g_level = Level::info;

Level level_from_env() {
  const char* v = std::getenv("EF_LOG");
  if (!v || !*v) return Level::info;
  const std::string s = v;
  if (s == "error") return Level::error;
  if (s == "info") return Level::info;
  if (s == "debug") return Level::debug;
  throw ArgumentError("EF_LOG must be error, info or debug, got '" + s + "'");
}

void log(Level at, const std::string& msg) {
  if (static_cast<int>(at) <= static_cast<int>(g_level)) std::cerr << msg << '\n';
}

int exit_code(Error::Kind kind) {
  switch (kind) {
    case Error::Kind::usage: return 1;
    case Error::Kind::io: return 2;
    case Error::Kind::format: return 3;
    case Error::Kind::numeric: return 4;
  }
  return 1;
}

// Options shared by the subcommands that run the protocol.
struct Common {
  std::string config, cube, labels, model, out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> patch_size, epochs, threads;
  std::optional<double> fraction;
  bool deterministic = false;
};

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Flat JSON config file");
  cmd->add_option("--seed", c.seed, "Seed for initialization, split and shuffling");
  cmd->add_option("--patch-size", c.patch_size, "Patch side S")->check(CLI::PositiveNumber);
  cmd->add_option("--fraction", c.fraction, "Training fraction per class")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--epochs", c.epochs, "Training epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", c.threads, "Batch worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", c.deterministic, "Fixed reduction order (always honoured)");
}

void add_data_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--cube", c.cube, "HSIC1 cube file")->required();
  cmd->add_option("--labels", c.labels, "HSIL1 label file")->required();
}

// A config error raised while reading the file is a malformed config (exit 3);
// later semantic checks stay usage errors.
RunConfig read_config(const std::string& path) {
  try {
    return load_config(path);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), 0);
  }
}

RunConfig resolve(const Common& c, const fs::path& fallback = {}) {
  RunConfig cfg;
  if (!c.config.empty())
    cfg = read_config(c.config);
  else if (!fallback.empty() && fs::exists(fallback))
    cfg = read_config(fallback.string());
  if (c.seed) cfg.train.seed = *c.seed;
  if (c.patch_size) cfg.train.patch_size = cfg.model.patch_size = *c.patch_size;
  if (c.fraction) cfg.train.train_fraction = *c.fraction;
  if (c.epochs) cfg.train.epochs = *c.epochs;
  if (c.threads) cfg.train.threads = *c.threads;
  if (c.deterministic) cfg.deterministic = true;
  cfg.train.validate();
  return cfg;
}

fs::path out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create output directory " + p.string() + ": " + ec.message());
  return p;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void print_metrics(const Metrics& m) {
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << "oa=" << m.oa << " aa=" << m.aa << " kappa=" << m.kappa;
  std::cout << s.str() << '\n';
  for (std::size_t c : m.undefined_classes)
    log(Level::error, "warning: class " + std::to_string(c + 1) + " has no test pixels; left out of AA");
}

EpochCallback epoch_logger() {
  return [](std::size_t epoch, double loss) {
    std::ostringstream s;
    s << "epoch " << epoch << " loss " << loss;
    log(Level::debug, s.str());
  };
}

int run_synth(const SynthConfig& sc, const std::string& out) {
  const fs::path dir = out_dir(out);
  const SynthScene scene = synthesize(sc);
  write_cube(scene.cube, dir / "cube.hsic");
  write_labels(scene.labels, dir / "labels.hsil");
  std::cout << (dir / "cube.hsic").string() << '\n' << (dir / "labels.hsil").string() << '\n';
  return 0;
}

int run_train(const Common& c) {
  const RunConfig cfg = resolve(c);
  const HsiCube cube = read_cube(c.cube);
  const LabelMap labels = read_labels(c.labels);
  PreparedRun p = prepare_run(cube, labels, cfg);
  log(Level::info, "training on " + std::to_string(p.split.train.size()) + " pixels, " +
                       std::to_string(p.split.test.size()) + " held out");
  const TrainResult r = train(p.model, p.data, labels, p.split, cfg.train, epoch_logger());
  const fs::path dir = out_dir(c.out);
  save_checkpoint(p.model, dir / "model.efck");
  auto loss = open_out(dir / "loss.csv");
  write_loss_csv(r.epoch_loss, loss);
  auto conf = open_out(dir / "config.json");
  conf << to_json(cfg) << '\n';
  std::ostringstream s;
  s.precision(6);
  s << "final_loss=" << r.epoch_loss.back() << " seconds=" << r.seconds;
  std::cout << s.str() << '\n';
  return 0;
}

// Settings the model was trained with: --config, else config.json beside the checkpoint.
RunConfig model_run_config(const Common& c) { return resolve(c, fs::path(c.model).parent_path() / "config.json"); }

int run_eval(const Common& c) {
  const RunConfig cfg = model_run_config(c);
  const Model model = load_checkpoint(c.model);
  const HsiCube cube = read_cube(c.cube);
  const LabelMap labels = read_labels(c.labels);
  if (labels.rows != cube.rows || labels.cols != cube.cols) throw DataError("label map and cube dimensions differ");
  const Split split = stratified_split(labels, cfg.train.train_fraction, cfg.train.seed);
  const EvalReport report = evaluate(model, normalize(cube), labels, split.test, cfg.train.threads);
  print_metrics(report.metrics);
  auto f = open_out(out_dir(c.out) / "report.csv");
  write_report_csv(report, f);
  return 0;
}

int run_predict(const Common& c, bool all_pixels) {
  const RunConfig cfg = model_run_config(c);
  const Model model = load_checkpoint(c.model);
  const HsiCube cube = read_cube(c.cube);
  const LabelMap labels = read_labels(c.labels);
  const LabelMap map = predict_map(model, normalize(cube), labels, all_pixels, cfg.train.threads);
  const fs::path dir = out_dir(c.out);
  write_ppm(map, model.config().classes, dir / "map.ppm");
  write_labels(map, dir / "prediction.hsil");
  std::cout << (dir / "map.ppm").string() << '\n';
  return 0;
}

int run_sweep(const Common& c, bool patch) {
  const RunConfig cfg = resolve(c);
  const HsiCube cube = read_cube(c.cube);
  const LabelMap labels = read_labels(c.labels);
  const auto rows = patch ? sweep_patch_size(cube, labels, cfg, epoch_logger()) : sweep_fraction(cube, labels, cfg, epoch_logger());
  std::ostringstream csv;
  write_sweep_csv(rows, csv);
  auto f = open_out(out_dir(c.out) / (patch ? "sweep_patch.csv" : "sweep_fraction.csv"));
  f << csv.str();
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EnergyFormer hyperspectral classifier"};
  app.require_subcommand(1);

  SynthConfig sc;
  std::string synth_out = ".";
  auto* synth = app.add_subcommand("synth", "Write a synthetic cube.hsic and labels.hsil");
  synth->add_option("--classes", sc.classes, "Number of classes")->check(CLI::Range(2, 65535));
  synth->add_option("--rows", sc.rows)->check(CLI::PositiveNumber);
  synth->add_option("--cols", sc.cols)->check(CLI::PositiveNumber);
  synth->add_option("--bands", sc.bands)->check(CLI::PositiveNumber);
  synth->add_option("--sigma", sc.noise_sigma, "Gaussian noise standard deviation")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", sc.seed);
  synth->add_option("--out", synth_out, "Output directory");

  Common tr, ev, pr, sp, sf;
  bool all_pixels = false;

  auto* train_cmd = app.add_subcommand("train", "Train and write model.efck, loss.csv, config.json");
  add_config_flags(train_cmd, tr);
  add_data_flags(train_cmd, tr);
  train_cmd->add_option("--out", tr.out, "Output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Score the held-out pixels and write report.csv");
  add_config_flags(eval_cmd, ev);
  add_data_flags(eval_cmd, ev);
  eval_cmd->add_option("--model", ev.model, "Checkpoint")->required();
  eval_cmd->add_option("--out", ev.out, "Output directory");

  auto* predict_cmd = app.add_subcommand("predict", "Write map.ppm and prediction.hsil");
  add_config_flags(predict_cmd, pr);
  add_data_flags(predict_cmd, pr);
  predict_cmd->add_option("--model", pr.model, "Checkpoint")->required();
  predict_cmd->add_flag("--all", all_pixels, "Also label unlabeled pixels");
  predict_cmd->add_option("--out", pr.out, "Output directory");

  auto* sweep_patch = app.add_subcommand("sweep-patch", "Train and evaluate for each patch size");
  add_config_flags(sweep_patch, sp);
  add_data_flags(sweep_patch, sp);
  sweep_patch->add_option("--out", sp.out, "Output directory");

  auto* sweep_frac = app.add_subcommand("sweep-fraction", "Train and evaluate for each training fraction");
  add_config_flags(sweep_frac, sf);
  add_data_flags(sweep_frac, sf);
  sweep_frac->add_option("--out", sf.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    g_level = level_from_env();
    if (*synth) return run_synth(sc, synth_out);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*predict_cmd) return run_predict(pr, all_pixels);
    if (*sweep_patch) return run_sweep(sp, true);
    if (*sweep_frac) return run_sweep(sf, false);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
