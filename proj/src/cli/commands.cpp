#include "cwhar/commands.h"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "cwhar/container.h"
#include "cwhar/errors.h"
#include "cwhar/svg.h"
#include "cwhar/synthetic.h"

namespace cwhar::cli {

using json = nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ArgumentError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return kExitArgument;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e) ||
      dynamic_cast<const json::exception*>(&e)) {
    return kExitIo;
  }
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kExitData;
  return kExitFailure;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw FormatError("failed writing " + path.string());
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << v;
  return out.str();
}

std::string run_label(const RunResult& r) {
  return r.method + " seed " + std::to_string(r.seed) + (r.shots || r.method != "pretrain" ? " shots " + eval::shots_label(r.shots) : "");
}

void log_line(const std::string& text) { std::cerr << text << '\n'; }

std::pair<std::size_t, std::size_t> view_shape(const Dataset& data, Modality m) {
  for (const auto& s : data.samples) {
    auto it = s.views.find(m);
    if (it != s.views.end()) return {it->second.height, it->second.width};
  }
  throw DataError("dataset has no " + std::string(modality_name(m)) + " views");
}

Split split_for(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed) {
  if (data.samples.empty()) throw DataError("dataset is empty");
  return split_dataset(data.samples, cfg.train_fraction, cfg.stratified, cfg.resolved_split_seed(seed));
}

json split_json(const ExperimentConfig& cfg, std::uint64_t seed) {
  return {{"train_fraction", cfg.train_fraction}, {"stratified", cfg.stratified}, {"seed", cfg.resolved_split_seed(seed)}};
}

json resolved(const ExperimentConfig& cfg, std::uint64_t seed) {
  json j = cfg.to_json();
  j["seed"] = seed;
  j["split"]["seed"] = cfg.resolved_split_seed(seed);
  return j;
}

std::vector<SyncedSample> labelled_subset(const std::vector<SyncedSample>& train_set, std::optional<std::size_t> shots,
                                          std::uint64_t seed) {
  if (!shots) return train_set;
  return train::few_shot_sample(train_set, *shots, seed);
}

void write_run_files(const RunResult& r, const json& config) {
  json run = r.record.to_json();
  run["method"] = r.method;
  run["shots"] = r.shots ? json(*r.shots) : json("all");
  write_text(r.dir / kRunRecordFile, run.dump(2) + "\n");
  write_text(r.dir / "loss.csv", r.record.loss_csv());
  write_text(r.dir / kResolvedConfigFile, config.dump(2) + "\n");
  if (r.metrics) {
    write_text(r.dir / kMetricsFile, r.metrics->to_json().dump(2) + "\n");
    write_text(r.dir / "confusion.csv", r.metrics->confusion.to_csv());
  }
}

std::vector<SyncedSample> validation_set(const ExperimentConfig& cfg, const Split& split) {
  return cfg.log_validation ? split.test : std::vector<SyncedSample>{};
}

}  // namespace

Dataset load_data(const std::optional<fs::path>& flag, const ExperimentConfig& cfg) {
  if (flag) return load_dataset(*flag);
  if (cfg.data) return load_dataset(*cfg.data);
  throw ArgumentError("no dataset given: pass --data or set \"data\" in the config");
}

fs::path resolve_out(const std::optional<fs::path>& flag, const ExperimentConfig& cfg) {
  if (flag) return *flag;
  if (cfg.out) return *cfg.out;
  throw ArgumentError("no output directory given: pass --out or set \"out\" in the config");
}

void run_generate(const GenerateOptions& opt) {
  SyntheticOptions so = synthetic_profile(opt.profile);
  so.per_class = opt.per_class;
  so.seed = opt.seed;
  so.rho = opt.rho;
  so.noise_sigma = opt.sigma;
  so.onset_jitter = opt.onset_jitter;
  so.projection_floor = opt.projection_floor;
  const auto samples = generate_synthetic_dataset(so);
  save_dataset(samples, opt.out, so.to_json());
  log_line("wrote " + std::to_string(samples.size()) + " samples to " + opt.out.string());
}

RunResult pretrain_run(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed, const fs::path& out) {
  const Split split = split_for(cfg, data, seed);
  nn::BundleConfig bc;
  for (Modality m : {cfg.view_pair.first, cfg.view_pair.second}) {
    const auto [h, w] = view_shape(data, m);
    bc.views.push_back({m, cfg.encoder_config(m, h, w)});
  }
  bc.fusion = cfg.fusion;
  bc.projection_dim = cfg.projection_dim;
  bc.hidden_units = cfg.hidden_units;
  nn::ModelBundle bundle = nn::ModelBundle::create(bc, seed);

  RunResult r{out, "pretrain", seed, std::nullopt, {}, std::nullopt};
  const auto validation = validation_set(cfg, split);
  r.record = train::pretrain(split.train, bundle, cfg.view_pair, cfg.train_config(cfg.pretrain, seed), validation);

  std::vector<std::uint64_t> train_ids;
  for (const auto& s : split.train) train_ids.push_back(s.id);
  const json config = resolved(cfg, seed);
  save_checkpoint(bundle, out / kCheckpointDir,
                  {{"stage", "pretrain"},
                   {"experiment", config},
                   {"seed", seed},
                   {"split", split_json(cfg, seed)},
                   {"dataset_fingerprint", hex64(dataset_fingerprint(data.samples))},
                   {"train_ids", train_ids}});
  write_run_files(r, config);
  std::string gap;
  if (r.record.details.contains("val_alignment_gap")) {
    gap = ", held-out alignment gap " + std::to_string(r.record.details["val_alignment_gap"].back().get<double>());
  }
  log_line(run_label(r) + ": loss " + std::to_string(r.record.loss.front()) + " -> " +
           std::to_string(r.record.loss.back()) + gap);
  return r;
}

RunResult finetune_run(const fs::path& checkpoint, const std::optional<ExperimentConfig>& cfg_flag, const Dataset& data,
                       std::optional<std::size_t> shots, std::uint64_t seed, const fs::path& out) {
  json meta;
  nn::ModelBundle bundle = nn::load_checkpoint(checkpoint, &meta);
  if (meta.value("stage", "") != "pretrain" || !meta.contains("experiment") || !meta.contains("split")) {
    throw FormatError(checkpoint.string() + " is not a pretraining checkpoint");
  }
  if (meta.value("dataset_fingerprint", "") != hex64(dataset_fingerprint(data.samples))) {
    throw DataError("dataset differs from the one the checkpoint was pretrained on");
  }
  const ExperimentConfig cfg = cfg_flag ? *cfg_flag : ExperimentConfig::from_json(meta.at("experiment"));
  const json& sj = meta.at("split");
  const Split split = split_dataset(data.samples, sj.at("train_fraction").get<double>(), sj.at("stratified").get<bool>(),
                                    sj.at("seed").get<std::uint64_t>());

  bundle.freeze("encoders");
  bundle.freeze("heads");
  bundle.reset_classifier(seed);
  const auto subset = labelled_subset(split.train, shots, seed);
  const auto validation = validation_set(cfg, split);

  RunResult r{out, "contrastive", seed, shots, {}, std::nullopt};
  r.record = train::finetune(subset, bundle, cfg.train_config(cfg.finetune, seed, shots), validation);
  r.metrics = eval::evaluate(bundle, split.test);

  // Frozen encoders must match the checkpoint byte for byte.
  const nn::ModelBundle original = nn::load_checkpoint(checkpoint);
  const bool identical = nn::bitwise_equal(original.parameters("encoders"), bundle.parameters("encoders")) &&
                         nn::bitwise_equal(original.buffers("encoders"), bundle.buffers("encoders"));
  r.record.details["checkpoint_encoders_identical"] = identical;
  if (!identical) throw std::logic_error("frozen encoder parameters changed during fine-tuning");

  json config = resolved(cfg, seed);
  config["shots"] = json::array({shots ? json(*shots) : json("all")});
  save_checkpoint(bundle, out / kCheckpointDir,
                  {{"stage", "finetune"},
                   {"experiment", config},
                   {"seed", seed},
                   {"shots", shots ? json(*shots) : json("all")},
                   {"split", sj},
                   {"dataset_fingerprint", meta.at("dataset_fingerprint")},
                   {"subset_ids", r.record.details["subset_ids"]}});
  write_run_files(r, config);
  log_line(run_label(r) + ": macro F1 " + std::to_string(r.metrics->macro_f1) + ", accuracy " +
           std::to_string(r.metrics->accuracy));
  return r;
}

RunResult baseline_run(const ExperimentConfig& cfg, const Dataset& data, train::BaselineViews views,
                       std::optional<std::size_t> shots, std::uint64_t seed, const fs::path& out) {
  const Split split = split_for(cfg, data, seed);
  const auto [h, w] = view_shape(data, Modality::csi1);
  if (views == train::BaselineViews::joint && view_shape(data, Modality::csi2) != std::make_pair(h, w)) {
    throw ConfigError("joint baseline needs csi1 and csi2 views of the same size");
  }
  const auto subset = labelled_subset(split.train, shots, seed);
  const auto validation = validation_set(cfg, split);

  auto result = train::train_supervised_baseline(subset, cfg.encoder_config(Modality::csi1, h, w), views,
                                                 cfg.train_config(cfg.baseline, seed, shots), validation, cfg.hidden_units);
  RunResult r{out, "baseline-" + std::string(train::baseline_views_name(views)), seed, shots, std::move(result.record),
              std::nullopt};
  r.metrics = eval::evaluate(result.model, split.test);

  json config = resolved(cfg, seed);
  config["shots"] = json::array({shots ? json(*shots) : json("all")});
  config["baselines"] = json::array({train::baseline_views_name(views)});
  save_checkpoint(result.model, out / kCheckpointDir,
                  {{"stage", "baseline"},
                   {"experiment", config},
                   {"seed", seed},
                   {"shots", shots ? json(*shots) : json("all")},
                   {"split", split_json(cfg, seed)},
                   {"dataset_fingerprint", hex64(dataset_fingerprint(data.samples))},
                   {"subset_ids", r.record.details["subset_ids"]}});
  write_run_files(r, config);
  log_line(run_label(r) + ": macro F1 " + std::to_string(r.metrics->macro_f1) + ", accuracy " +
           std::to_string(r.metrics->accuracy));
  return r;
}

// ----------------------------------------------------------------------------
// Report

namespace {

struct LoadedRun {
  std::string name;
  std::string method;
  std::optional<std::size_t> shots;
  train::RunRecord record;
  std::optional<eval::MetricsReport> metrics;
};

std::vector<fs::path> find_run_dirs(const fs::path& root) {
  std::set<fs::path> dirs;
  if (!fs::exists(root)) throw ArgumentError("run directory " + root.string() + " does not exist");
  if (fs::exists(root / kRunRecordFile)) dirs.insert(root);
  if (fs::is_directory(root)) {
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.is_regular_file() && entry.path().filename() == kRunRecordFile) dirs.insert(entry.path().parent_path());
    }
  }
  return {dirs.begin(), dirs.end()};
}

std::string group_label(const std::string& method, const std::optional<std::size_t>& shots) {
  return method == "pretrain" ? method : method + " k=" + eval::shots_label(shots);
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

ReportResult report_run(const std::vector<fs::path>& roots, const fs::path& out) {
  if (roots.empty()) throw ArgumentError("no run directories given");
  std::vector<LoadedRun> runs;
  for (const auto& root : roots) {
    for (const auto& dir : find_run_dirs(root)) {
      const json j = read_json_file(dir / kRunRecordFile);
      LoadedRun run;
      const fs::path rel = dir == root ? root.filename() : fs::relative(dir, root);
      run.name = rel.generic_string();
      run.record = train::RunRecord::from_json(j);
      run.method = j.value("method", run.record.kind);
      if (j.contains("shots") && j.at("shots").is_number()) run.shots = j.at("shots").get<std::size_t>();
      if (fs::exists(dir / kMetricsFile)) run.metrics = eval::MetricsReport::from_json(read_json_file(dir / kMetricsFile));
      runs.push_back(std::move(run));
    }
  }
  if (runs.empty()) throw ArgumentError("no runs found under the given directories");

  ReportResult result;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out / name, text);
    result.files.push_back(out / name);
  };
  json run_names = json::array();
  for (const auto& r : runs) run_names.push_back(r.name);

  // Loss and validation curves, averaged per method and shot count.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const LoadedRun*>> groups;
  for (const auto& r : runs) {
    const std::string g = group_label(r.method, r.shots);
    if (!groups.count(g)) order.push_back(g);
    groups[g].push_back(&r);
  }
  eval::LineChart loss_chart{"Training loss", "epoch", "mean epoch loss", {}, {}, std::nullopt, std::nullopt,
                             {{"runs", run_names}, {"statistic", "mean over runs"}}};
  eval::LineChart val_chart{"Held-out macro F1 during training", "epoch", "macro F1", {}, {}, 0.0, 1.0,
                            {{"runs", run_names}, {"split", "held-out 20% test split"}}};
  std::ostringstream loss_csv;
  loss_csv << "group,epoch,mean_loss,mean_val_macro_f1\n";
  for (const auto& g : order) {
    const auto& members = groups[g];
    std::size_t len = members[0]->record.loss.size();
    for (const auto* m : members) len = std::min(len, m->record.loss.size());
    eval::Series ls{g, {}, {}}, vs{g, {}, {}};
    for (std::size_t e = 0; e < len; ++e) {
      double loss = 0.0, f1 = 0.0;
      std::size_t f1n = 0;
      for (const auto* m : members) {
        loss += m->record.loss[e];
        if (e < m->record.val_macro_f1.size() && m->record.val_macro_f1[e]) {
          f1 += *m->record.val_macro_f1[e];
          ++f1n;
        }
      }
      loss /= static_cast<double>(members.size());
      ls.x.push_back(static_cast<double>(e + 1));
      ls.y.push_back(loss);
      loss_csv << g << ',' << (e + 1) << ',' << fixed(loss) << ',';
      if (f1n) {
        vs.x.push_back(static_cast<double>(e + 1));
        vs.y.push_back(f1 / static_cast<double>(f1n));
        loss_csv << fixed(f1 / static_cast<double>(f1n));
      }
      loss_csv << '\n';
    }
    loss_chart.series.push_back(std::move(ls));
    if (!vs.x.empty()) val_chart.series.push_back(std::move(vs));
  }
  emit("loss_curves.csv", loss_csv.str());
  emit("loss_curves.svg", eval::render_svg(loss_chart));
  if (!val_chart.series.empty()) emit("val_f1_curves.svg", eval::render_svg(val_chart));

  std::vector<eval::RunSummary> summaries;
  for (const auto& r : runs) {
    if (r.metrics) summaries.push_back({r.name, r.method, r.shots, *r.metrics});
  }
  if (summaries.size() >= 2) {
    std::optional<std::string> reference;
    for (const auto& s : summaries) {
      if (s.method == "baseline-csi1") reference = s.method;
    }
    eval::Comparison cmp = eval::compare_runs(summaries, reference);
    json cj = cmp.to_json();
    cj["published_results"] = {{"non_contrastive_macro_f1", 0.579},
                               {"contrastive_macro_f1", 0.756},
                               {"reproducible_here", false},
                               {"note", "measured on a private dataset; listed for context only"}};
    emit("comparison.json", cj.dump(2) + "\n");
    emit("comparison.csv", cmp.table_csv());
    emit("curves.csv", cmp.curves_csv());

    std::vector<std::optional<std::size_t>> shot_axis;
    for (const auto& c : cmp.curves) {
      for (const auto& p : c.points) {
        if (std::find(shot_axis.begin(), shot_axis.end(), p.shots) == shot_axis.end()) shot_axis.push_back(p.shots);
      }
    }
    std::sort(shot_axis.begin(), shot_axis.end(), [](const auto& a, const auto& b) {
      if (!a) return false;
      if (!b) return true;
      return *a < *b;
    });
    const json meta = {{"runs", run_names}, {"reference_method", cmp.reference_method}, {"statistic", "mean over runs"}};
    eval::LineChart shots_chart{"Macro F1 vs labelled examples per class", "shots", "macro F1", {}, {}, 0.0, 1.0, meta};
    for (const auto& s : shot_axis) shots_chart.x_categories.push_back(eval::shots_label(s));
    eval::BarChart bars{"Macro F1 by method", "macro F1", {}, 1.0, meta};
    for (const auto& c : cmp.curves) {
      eval::Series s{c.method, {}, {}};
      for (const auto& p : c.points) {
        const auto pos = std::find(shot_axis.begin(), shot_axis.end(), p.shots) - shot_axis.begin();
        s.x.push_back(static_cast<double>(pos));
        s.y.push_back(p.mean_macro_f1);
        bars.bars.push_back({group_label(c.method, p.shots), p.mean_macro_f1, p.std_macro_f1});
      }
      shots_chart.series.push_back(std::move(s));
    }
    emit("f1_vs_shots.svg", eval::render_svg(shots_chart));
    emit("f1_by_method.svg", eval::render_svg(bars));
    result.comparison = std::move(cmp);
  }
  log_line("report over " + std::to_string(runs.size()) + " runs written to " + out.string());
  return result;
}

ExperimentResult experiment_run(const ExperimentConfig& cfg, const Dataset& data, const fs::path& out) {
  ExperimentResult result;
  write_text(out / kResolvedConfigFile, cfg.to_json().dump(2) + "\n");
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path seed_dir = out / ("seed-" + std::to_string(seed));
    const RunResult pre = pretrain_run(cfg, data, seed, seed_dir / "pretrain");
    result.runs.push_back(pre);
    for (const auto& shots : cfg.shots) {
      const std::string k = eval::shots_label(shots);
      result.runs.push_back(finetune_run(pre.dir / kCheckpointDir, cfg, data, shots, seed, seed_dir / ("contrastive-k" + k)));
      for (auto views : cfg.baselines) {
        const std::string name = "baseline-" + std::string(train::baseline_views_name(views)) + "-k" + k;
        result.runs.push_back(baseline_run(cfg, data, views, shots, seed, seed_dir / name));
      }
    }
  }
  std::vector<fs::path> roots;
  for (std::uint64_t seed : cfg.seeds) roots.push_back(out / ("seed-" + std::to_string(seed)));
  result.report = report_run(roots, out / "report");
  return result;
}

}  // namespace cwhar::cli
