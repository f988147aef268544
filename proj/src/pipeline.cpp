#include "energyformer/pipeline.hpp"

#include <fstream>
#include <ostream>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "energyformer/error.hpp"

namespace ef {

namespace {

using nlohmann::json;

template <class T>
T field(const json& j, const std::string& key) {
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
    if (!j.at(key).is_number_unsigned()) throw ConfigError("config key '" + key + "' must be a non-negative integer");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed config JSON: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw FormatError("config must be a JSON object", 0);
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    ModelConfig& m = c.model;
    TrainConfig& t = c.train;
    if (key == "learning_rate") t.learning_rate = field<double>(j, key);
    else if (key == "beta1") t.beta1 = field<double>(j, key);
    else if (key == "beta2") t.beta2 = field<double>(j, key);
    else if (key == "epsilon") t.epsilon = field<double>(j, key);
    else if (key == "epochs") t.epochs = field<std::size_t>(j, key);
    else if (key == "batch_size") t.batch_size = field<std::size_t>(j, key);
    else if (key == "seed") t.seed = field<std::uint64_t>(j, key);
    else if (key == "patch_size") t.patch_size = m.patch_size = field<std::size_t>(j, key);
    else if (key == "train_fraction") t.train_fraction = field<double>(j, key);
    else if (key == "threads") t.threads = field<std::size_t>(j, key);
    else if (key == "embed_dim") m.embed_dim = field<std::size_t>(j, key);
    else if (key == "heads") m.heads = field<std::size_t>(j, key);
    else if (key == "hidden_mult") m.hidden_mult = field<std::size_t>(j, key);
    else if (key == "steps") m.steps = field<std::size_t>(j, key);
    else if (key == "depth") m.depth = field<std::size_t>(j, key);
    else if (key == "beta") m.beta = field<double>(j, key);
    else if (key == "step_size") m.step_size = field<double>(j, key);
    else if (key == "spatial_kernel") m.spatial_kernel = field<std::size_t>(j, key);
    else if (key == "reduction") m.reduction = field<std::size_t>(j, key);
    else if (key == "fope_harmonics") m.fope_harmonics = field<std::size_t>(j, key);
    else if (key == "fope_base") m.fope_base = field<double>(j, key);
    else if (key == "fope_enabled") m.fope_enabled = field<bool>(j, key);
    else if (key == "ln_eps") m.ln_eps = field<double>(j, key);
    else if (key == "encoder") m.encoder = encoder_kind_from_string(field<std::string>(j, key));
    else if (key == "deterministic") c.deterministic = field<bool>(j, key);
    else if (key == "sweep_patch_sizes") {
      for (const auto& v : value)
        if (!v.is_number_unsigned()) throw ConfigError("sweep_patch_sizes must hold non-negative integers");
      c.sweep_patch_sizes = field<std::vector<std::size_t>>(j, key);
    }
    else if (key == "sweep_fractions") c.sweep_fractions = field<std::vector<double>>(j, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.train.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const RunConfig& c) {
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  json j = {
      {"learning_rate", t.learning_rate}, {"beta1", t.beta1},
      {"beta2", t.beta2},                 {"epsilon", t.epsilon},
      {"epochs", t.epochs},               {"batch_size", t.batch_size},
      {"seed", t.seed},                   {"patch_size", t.patch_size},
      {"train_fraction", t.train_fraction}, {"threads", t.threads},
      {"embed_dim", m.embed_dim},         {"heads", m.heads},
      {"hidden_mult", m.hidden_mult},     {"steps", m.steps},
      {"depth", m.depth},                 {"beta", m.beta},
      {"step_size", m.step_size},         {"spatial_kernel", m.spatial_kernel},
      {"reduction", m.reduction},         {"fope_harmonics", m.fope_harmonics},
      {"fope_base", m.fope_base},         {"fope_enabled", m.fope_enabled},
      {"ln_eps", m.ln_eps},               {"encoder", to_string(m.encoder)},
      {"deterministic", c.deterministic}, {"sweep_patch_sizes", c.sweep_patch_sizes},
      {"sweep_fractions", c.sweep_fractions},
  };
  return j.dump(2);
}

PreparedRun prepare_run(const HsiCube& cube, const LabelMap& labels, const RunConfig& cfg) {
  cfg.train.validate();
  if (labels.rows != cube.rows || labels.cols != cube.cols) throw DataError("label map and cube dimensions differ");
  ModelConfig mc = cfg.model;
  mc.bands = cube.bands;
  mc.classes = labels.num_classes();
  mc.patch_size = cfg.train.patch_size;
  return {normalize(cube), Model(mc, cfg.train.seed), stratified_split(labels, cfg.train.train_fraction, cfg.train.seed)};
}

ExperimentResult run_experiment(const HsiCube& cube, const LabelMap& labels, const RunConfig& cfg,
                                const EpochCallback& on_epoch) {
  PreparedRun p = prepare_run(cube, labels, cfg);
  ExperimentResult r{std::move(p.model), std::move(p.split), {}, {}};
  r.training = train(r.model, p.data, labels, r.split, cfg.train, on_epoch);
  r.report = evaluate(r.model, p.data, labels, r.split.test, cfg.train.threads);
  r.report.train_time_seconds = r.training.seconds;
  return r;
}

namespace {

SweepRow row_from(const std::string& axis, double setting, const ExperimentResult& r) {
  return {axis, setting, r.split.train.size(), r.report.metrics.kappa, r.report.metrics.oa, r.report.metrics.aa,
          r.training.seconds};
}

}  // namespace

std::vector<SweepRow> sweep_patch_size(const HsiCube& cube, const LabelMap& labels, const RunConfig& cfg,
                                       const EpochCallback& on_epoch) {
  std::vector<SweepRow> rows;
  for (std::size_t s : cfg.sweep_patch_sizes) {
    RunConfig c = cfg;
    c.train.patch_size = c.model.patch_size = s;
    rows.push_back(row_from("patch_size", static_cast<double>(s), run_experiment(cube, labels, c, on_epoch)));
  }
  return rows;
}

std::vector<SweepRow> sweep_fraction(const HsiCube& cube, const LabelMap& labels, const RunConfig& cfg,
                                     const EpochCallback& on_epoch) {
  std::vector<SweepRow> rows;
  for (double f : cfg.sweep_fractions) {
    RunConfig c = cfg;
    c.train.train_fraction = f;
    rows.push_back(row_from("train_fraction", f, run_experiment(cube, labels, c, on_epoch)));
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << "axis,setting,train_samples,kappa,oa,aa,time_s\n";
  out.precision(10);
  for (const auto& r : rows)
    out << r.axis << ',' << r.setting << ',' << r.train_samples << ',' << r.kappa << ',' << r.oa << ',' << r.aa << ','
        << r.seconds << '\n';
}

void write_loss_csv(const std::vector<double>& epoch_loss, std::ostream& out) {
  out << "epoch,mean_loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < epoch_loss.size(); ++i) out << i << ',' << epoch_loss[i] << '\n';
}

}  // namespace ef
