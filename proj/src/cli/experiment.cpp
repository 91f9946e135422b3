#include "cwhar/experiment.h"

#include <set>

#include "cwhar/container.h"
#include "cwhar/errors.h"

namespace cwhar::cli {

namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& target, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

StageConfig read_stage(const json& j, StageConfig stage, const std::string& where) {
  reject_unknown(j, {"epochs", "batch_size", "learning_rate", "optimizer"}, where);
  read(j, "epochs", stage.epochs, where);
  read(j, "batch_size", stage.batch_size, where);
  read(j, "learning_rate", stage.learning_rate, where);
  if (j.contains("optimizer")) stage.optimizer = train::parse_optimizer(j.at("optimizer").get<std::string>());
  if (stage.epochs < 1) throw ConfigError(where + ".epochs must be at least 1");
  if (stage.batch_size < 1) throw ConfigError(where + ".batch_size must be at least 1");
  if (!(stage.learning_rate >= 0.0)) throw ConfigError(where + ".learning_rate must be non-negative");
  return stage;
}

json stage_json(const StageConfig& s) {
  return {{"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"learning_rate", s.learning_rate},
          {"optimizer", train::optimizer_name(s.optimizer)}};
}

json shots_json(const std::optional<std::size_t>& s) { return s ? json(*s) : json("all"); }

}  // namespace

std::optional<std::size_t> parse_shots(const std::string& text) {
  if (text == "all") return std::nullopt;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || v < 1) throw ArgumentError("shots must be a positive integer or 'all', got '" + text + "'");
  return static_cast<std::size_t>(v);
}

contrastive::ViewPair parse_view_pair(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ArgumentError("view pair must look like csi1,csi2 (got '" + text + "')");
  const Modality a = parse_modality(text.substr(0, comma));
  const Modality b = parse_modality(text.substr(comma + 1));
  if (a == b) throw ArgumentError("view pair needs two different modalities");
  return {a, b};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  const std::string top = "experiment config";
  reject_unknown(j, {"data", "out", "seed", "seeds", "split", "view_pair", "encoder", "model", "loss", "pretrain",
                     "finetune", "baseline", "shots", "baselines", "validation"},
                 top);
  ExperimentConfig c;
  try {
    if (j.contains("data") && !j.at("data").is_null()) c.data = j.at("data").get<std::string>();
    if (j.contains("out") && !j.at("out").is_null()) c.out = j.at("out").get<std::string>();
  } catch (const json::exception&) {
    throw ConfigError("data and out must be strings");
  }
  read(j, "seed", c.seed, top);
  read(j, "seeds", c.seeds, top);
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (j.contains("split")) {
    const json& s = j.at("split");
    reject_unknown(s, {"train_fraction", "stratified", "seed"}, "split");
    read(s, "train_fraction", c.train_fraction, "split");
    read(s, "stratified", c.stratified, "split");
    if (s.contains("seed") && !s.at("seed").is_null()) c.split_seed = s.at("seed").get<std::uint64_t>();
    if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("split.train_fraction must lie in (0, 1)");
  }
  if (j.contains("view_pair")) {
    const auto names = j.at("view_pair").get<std::vector<std::string>>();
    if (names.size() != 2) throw ConfigError("view_pair must list two modalities");
    c.view_pair = parse_view_pair(names[0] + "," + names[1]);
  }
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    reject_unknown(e, {"architecture", "upsample", "widths"}, "encoder");
    if (e.contains("architecture")) c.architecture = nn::parse_architecture(e.at("architecture").get<std::string>());
    if (e.contains("upsample") && !e.at("upsample").is_null()) {
      std::size_t u = 0;
      read(e, "upsample", u, "encoder");
      if (u < 1 || u > 3) throw ConfigError("encoder.upsample must be 1, 2 or 3");
      c.upsample = u;
    }
    read(e, "widths", c.widths, "encoder");
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"projection_dim", "hidden_units", "fusion"}, "model");
    read(m, "projection_dim", c.projection_dim, "model");
    read(m, "hidden_units", c.hidden_units, "model");
    if (m.contains("fusion")) c.fusion = nn::parse_fusion(m.at("fusion").get<std::string>());
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, {"temperature"}, "loss");
    read(l, "temperature", c.temperature, "loss");
    if (!(c.temperature > 0.0)) throw ConfigError("loss.temperature must be positive");
  }
  if (j.contains("pretrain")) c.pretrain = read_stage(j.at("pretrain"), c.pretrain, "pretrain");
  if (j.contains("finetune")) c.finetune = read_stage(j.at("finetune"), c.finetune, "finetune");
  if (j.contains("baseline")) c.baseline = read_stage(j.at("baseline"), c.baseline, "baseline");
  if (c.pretrain.batch_size < 2) throw ConfigError("pretrain.batch_size must be at least 2");
  if (j.contains("shots")) {
    c.shots.clear();
    for (const auto& s : j.at("shots")) c.shots.push_back(s.is_string() ? parse_shots(s.get<std::string>()) : parse_shots(s.dump()));
  }
  if (j.contains("baselines")) {
    c.baselines.clear();
    for (const auto& b : j.at("baselines")) c.baselines.push_back(train::parse_baseline_views(b.get<std::string>()));
  }
  read(j, "validation", c.log_validation, top);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    return from_json(j);
  } catch (const ArgumentError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json ExperimentConfig::to_json() const {
  json shots_arr = json::array();
  for (const auto& s : shots) shots_arr.push_back(shots_json(s));
  json bl = json::array();
  for (auto b : baselines) bl.push_back(train::baseline_views_name(b));
  return {{"data", data ? json(*data) : json(nullptr)},
          {"out", out ? json(*out) : json(nullptr)},
          {"seed", seed},
          {"seeds", seeds},
          {"split",
           {{"train_fraction", train_fraction},
            {"stratified", stratified},
            {"seed", split_seed ? json(*split_seed) : json(nullptr)}}},
          {"view_pair", {modality_name(view_pair.first), modality_name(view_pair.second)}},
          {"encoder", {{"architecture", nn::architecture_name(architecture)}, {"upsample", upsample ? json(*upsample) : json(nullptr)}, {"widths", widths}}},
          {"model", {{"projection_dim", projection_dim}, {"hidden_units", hidden_units}, {"fusion", nn::fusion_name(fusion)}}},
          {"loss", {{"temperature", temperature}}},
          {"pretrain", stage_json(pretrain)},
          {"finetune", stage_json(finetune)},
          {"baseline", stage_json(baseline)},
          {"shots", shots_arr},
          {"baselines", bl},
          {"validation", log_validation}};
}

train::TrainConfig ExperimentConfig::train_config(const StageConfig& stage, std::uint64_t run_seed,
                                                  std::optional<std::size_t> run_shots) const {
  train::TrainConfig t;
  t.epochs = stage.epochs;
  t.batch_size = stage.batch_size;
  t.learning_rate = stage.learning_rate;
  t.optimizer = stage.optimizer;
  t.temperature = temperature;
  t.seed = run_seed;
  t.shots = run_shots;
  return t;
}

nn::EncoderConfig ExperimentConfig::encoder_config(Modality m, std::size_t height, std::size_t width) const {
  nn::EncoderConfig e;
  e.architecture = architecture;
  e.input_height = height;
  e.input_width = width;
  e.upsample = resolved_upsample(m);
  e.widths = widths;
  e.embedding_dim();  // validates the stack against the input size
  return e;
}

}  // namespace cwhar::cli
