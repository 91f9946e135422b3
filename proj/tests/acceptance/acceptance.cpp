// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cwhar/commands.h"
#include "cwhar/container.h"
#include "cwhar/contrastive.h"
#include "cwhar/grad_check.h"
#include "cwhar/metrics.h"
#include "cwhar/synthetic.h"

namespace {

using namespace cwhar;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void verdict(int id, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

Tensor gaussian(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ----------------------------------------------------------------------------

void criterion_1() {
  const auto start = Clock::now();
  Rng rng(101);
  const std::size_t ns[] = {2, 4, 8};
  const double taus[] = {0.1, 0.5, 1.0};
  double worst = 0.0;
  for (int b = 0; b < 100; ++b) {
    const std::size_t n = ns[b % 3];
    const double tau = taus[(b / 3) % 3];
    const Tensor z = gaussian({2 * n, 128}, rng);
    const auto result = contrastive::nt_xent(contrastive::make_projection_batch(z), {tau});

    // Naive summation straight from the definition.
    const std::size_t m = 2 * n;
    std::vector<double> norm(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t d = 0; d < 128; ++d) norm[i] += z.at({i, d}) * z.at({i, d});
      norm[i] = std::sqrt(norm[i]);
    }
    auto sim = [&](std::size_t i, std::size_t j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < 128; ++d) dot += z.at({i, d}) * z.at({j, d});
      return dot / (norm[i] * norm[j]);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double denom = 0.0;
      for (std::size_t k = 0; k < m; ++k)
        if (k != i) denom += std::exp(sim(i, k) / tau);
      const double li = -std::log(std::exp(sim(i, (i + n) % m) / tau) / denom);
      worst = std::max(worst, std::abs(result.per_element.data()[i] - li) / std::abs(li));
      total += li;
    }
    total /= static_cast<double>(m);
    worst = std::max(worst, std::abs(result.loss.item() - total) / std::abs(total));
  }
  const double secs = seconds_since(start);
  verdict(1, worst <= 1e-6 && secs < 10.0,
          "100 batches, max rel error " + fmt(worst, 3) + " (<= 1e-6), " + fmt(secs, 3) + " s (< 10 s)");
}

void criterion_2() {
  double worst_identical = 0.0;
  for (double tau : {0.05, 0.1, 0.5, 1.0, 2.0, 10.0}) {
    const Tensor z = Tensor::full({4, 8}, 0.7);
    const double l = contrastive::nt_xent(contrastive::make_projection_batch(z), {tau}).loss.item();
    worst_identical = std::max(worst_identical, std::abs(l - std::log(3.0)));
  }
  const Tensor sep = Tensor::from({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
  const double l = contrastive::nt_xent(contrastive::make_projection_batch(sep), {0.5}).loss.item();
  const double err = std::abs(l - std::log1p(2.0 * std::exp(-2.0)));
  verdict(2, worst_identical <= 1e-9 && err <= 1e-9,
          "identical batch |L - ln 3| max " + fmt(worst_identical, 3) + " over 6 temperatures; separated case L = " +
              fmt(l, 8) + ", |L - ln(1+2e^-2)| = " + fmt(err, 3));
}

// Two 8×8 views through independent 2/2/2 shallow encoders into NT-Xent.
struct TinySetup {
  nn::ModelBundle bundle;
  std::vector<SyncedSample> samples;
};

TinySetup tiny_setup(std::uint64_t seed) {
  nn::EncoderConfig e;
  e.input_height = 8;
  e.input_width = 8;
  e.upsample = 1;
  e.widths = {2, 2, 2};
  nn::BundleConfig bc;
  bc.views = {{Modality::csi1, e}, {Modality::csi2, e}};
  bc.projection_dim = 8;
  TinySetup s{nn::ModelBundle::create(bc, seed), {}};
  Rng rng = Rng::stream(seed, {0x4743});
  for (std::uint64_t i = 0; i < 4; ++i) {
    SyncedSample x;
    x.id = i;
    x.label = i;
    for (Modality m : {Modality::csi1, Modality::csi2}) {
      Spectrogram sp{m, 8, 8, {}};
      for (int k = 0; k < 64; ++k) sp.values.push_back(static_cast<float>(rng.uniform(0, 1)));
      x.views[m] = sp;
    }
    s.samples.push_back(x);
  }
  return s;
}

GradCheckReport tiny_grad_check(TinySetup& s, BatchNormMode mode) {
  return grad_check(
      [&] {
        const auto pb = contrastive::assemble_projection_batch(std::span<const SyncedSample>(s.samples), s.bundle,
                                                               {Modality::csi1, Modality::csi2}, mode);
        return contrastive::nt_xent(pb).loss;
      },
      s.bundle.parameters(), 1e-6, 1e-4);
}

bool is_conv_bias(const std::string& name) { return name.find(".conv") != std::string::npos && name.ends_with(".bias"); }

void criterion_3() {
  const auto start = Clock::now();
  double eval_worst = 0.0, train_worst = 0.0, zero_worst = 0.0;
  std::size_t entries = 0, zero_entries = 0;
  std::string worst_name;
  for (std::uint64_t seed : {0, 1, 2}) {
    // Eval-mode BN: every parameter, conv biases included, has a live gradient.
    // Biases, shifts and running statistics are moved off their initial values
    // so no unit sits exactly on a ReLU kink.
    TinySetup s = tiny_setup(seed);
    Rng rng = Rng::stream(seed, {0x5052});
    for (auto& p : s.bundle.parameters()) {
      if (p.name.ends_with("bias") || p.name.ends_with("beta"))
        for (double& v : p.tensor.mutable_data()) v = rng.uniform(-0.5, 0.5);
    }
    for (auto& b : s.bundle.buffers()) {
      const bool var = b.name.ends_with("running_var");
      for (double& v : b.tensor.mutable_data()) v = var ? rng.uniform(0.5, 1.5) : rng.uniform(-0.3, 0.3);
    }
    const GradCheckReport ev = tiny_grad_check(s, BatchNormMode::eval);
    entries += ev.entries.size();
    if (ev.max_rel_error > eval_worst) {
      eval_worst = ev.max_rel_error;
      worst_name = ev.worst()->name;
    }

    // Train-mode BN as used in pretraining. A conv bias is followed by batch
    // normalization, which subtracts it again, so its exact gradient is zero
    // and the relative error of two round-off values is meaningless; those
    // entries must instead be zero to within 1e-8 in both estimates.
    TinySetup t = tiny_setup(seed);
    const GradCheckReport tr = tiny_grad_check(t, BatchNormMode::train);
    for (const auto& e : tr.entries) {
      if (is_conv_bias(e.name)) {
        ++zero_entries;
        zero_worst = std::max({zero_worst, std::abs(e.analytic), std::abs(e.numeric)});
      } else {
        train_worst = std::max(train_worst, e.rel_error);
      }
    }
  }
  const double secs = seconds_since(start);
  const bool pass = eval_worst <= 1e-4 && train_worst <= 1e-4 && zero_worst <= 1e-8 && secs < 120.0;
  verdict(3, pass,
          "3 seeds, " + std::to_string(entries / 3) + " parameter entries each; eval-mode BN max rel " + fmt(eval_worst, 3) +
              " (" + worst_name + ") over every parameter; train-mode BN max rel " + fmt(train_worst, 3) +
              " excluding " + std::to_string(zero_entries) + " conv-bias entries with structurally zero gradient (max |g| " +
              fmt(zero_worst, 3) + " <= 1e-8); " + fmt(secs, 3) + " s");
}

void criterion_4() {
  Rng rng(404);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    eval::ConfusionMatrix cm;
    std::vector<std::vector<double>> m(7, std::vector<double>(7));
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        m[i][j] = static_cast<double>(rng.uniform(0, 1) < 0.25 ? 0 : rng.below(30));
        if (t == 0 && i == 0 && j == 0) m[i][j] += 1;
        cm.set(i, j, static_cast<std::uint64_t>(m[i][j]));
      }
    double f1_sum = 0.0, trace = 0.0, total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      double col = 0.0, row = 0.0;
      for (std::size_t o = 0; o < 7; ++o) {
        col += m[o][c];
        row += m[c][o];
        total += m[c][o];
      }
      trace += m[c][c];
      const double p = col > 0 ? m[c][c] / col : 0.0;
      const double r = row > 0 ? m[c][c] / row : 0.0;
      f1_sum += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    if (total == 0) continue;
    worst = std::max(worst, std::abs(eval::macro_f1(cm) - f1_sum / 7.0));
    worst = std::max(worst, std::abs(eval::accuracy(cm) - trace / total));
  }
  eval::ConfusionMatrix hand({"a", "b"});
  hand.set(0, 0, 1);
  hand.set(0, 1, 1);
  hand.set(1, 1, 2);
  const double macro = eval::macro_f1(hand);
  verdict(4, worst <= 1e-12 && std::abs(macro - 11.0 / 15.0) <= 1e-12 && std::abs(macro - 0.73333) < 5e-6,
          "100 random 7x7 matrices, max |diff| " + fmt(worst, 3) + "; [[1,1],[0,2]] macro F1 " + fmt(macro, 6));
}

// ----------------------------------------------------------------------------

struct Canonical {
  Dataset data;
  std::vector<cli::RunResult> runs;
  double seconds = 0.0;
};

SyntheticOptions canonical_options() {
  SyntheticOptions o = synthetic_profile("desk");
  o.per_class = 63;
  o.rho = 0.9;
  o.noise_sigma = 0.15;
  o.seed = 0;
  return o;
}

Canonical run_canonical(const fs::path& out) {
  cli::ExperimentConfig cfg = cli::ExperimentConfig::load(fs::path(CWHAR_SOURCE_DIR) / "configs" / "desk.json");
  cfg.baselines = {train::BaselineViews::single};
  // Per-epoch held-out logging is a diagnostic; criterion 8 measures alignment
  // from the checkpoints instead.
  cfg.log_validation = false;
  fs::remove_all(out);
  const SyntheticOptions o = canonical_options();
  save_dataset(generate_synthetic_dataset(o), out / "data", o.to_json());
  Canonical c;
  c.data = load_dataset(out / "data");
  const auto start = Clock::now();
  c.runs = cli::experiment_run(cfg, c.data, out / "runs").runs;
  c.seconds = seconds_since(start);
  return c;
}

void criterion_5(const Canonical& c) {
  std::size_t checked = 0, ok = 0;
  for (const auto& r : c.runs) {
    if (r.method != "contrastive") continue;
    ++checked;
    const auto& d = r.record.details;
    if (d.value("checkpoint_encoders_identical", false) && d.value("frozen_bitwise_identical", false) &&
        d.at("encoder_checksum_before") == d.at("encoder_checksum_after")) {
      ++ok;
    }
  }
  verdict(5, checked > 0 && ok == checked,
          std::to_string(ok) + "/" + std::to_string(checked) +
              " fine-tune runs keep encoder parameters and BN statistics byte-identical to the checkpoint");
}

using ShotMeans = std::map<std::size_t, std::vector<double>>;

ShotMeans f1_by_shots(const Canonical& c, const std::string& method) {
  ShotMeans out;
  for (const auto& r : c.runs)
    if (r.method == method && r.shots && r.metrics) out[*r.shots].push_back(r.metrics->macro_f1);
  return out;
}

void criterion_6(const Canonical& c) {
  const ShotMeans con = f1_by_shots(c, "contrastive"), base = f1_by_shots(c, "baseline-csi1");
  if (!con.count(10) || !base.count(10)) {
    verdict(6, false, "missing 10-shot runs");
    return;
  }
  const double delta = 100.0 * (mean_of(con.at(10)) - mean_of(base.at(10)));
  verdict(6, delta >= 5.0 && c.seconds <= 600.0 && con.at(10).size() == 5,
          "10-shot macro F1 over " + std::to_string(con.at(10).size()) + " seeds: contrastive " + fmt(mean_of(con.at(10))) +
              " vs csi1 baseline " + fmt(mean_of(base.at(10))) + ", delta " + fmt(delta, 3) +
              " pp (>= 5); experiment runtime " + fmt(c.seconds, 4) + " s (<= 600)");
}

void criterion_7(const Canonical& c) {
  const ShotMeans con = f1_by_shots(c, "contrastive"), base = f1_by_shots(c, "baseline-csi1");
  bool pass = con.size() == 3 && base.size() == 3;
  std::string detail = "contrastive";
  double prev = -1.0;
  for (const auto& [k, v] : con) {
    const double m = mean_of(v);
    detail += " k=" + std::to_string(k) + " " + fmt(m);
    if (prev >= 0.0 && m < prev - 0.01) pass = false;
    prev = m;
  }
  detail += "; baseline";
  for (const auto& [k, v] : base) {
    detail += " k=" + std::to_string(k) + " " + fmt(mean_of(v));
    if (!con.count(k) || mean_of(con.at(k)) <= mean_of(v)) pass = false;
  }
  verdict(7, pass, detail + " (non-decreasing within 1 pp, contrastive ahead at every k)");
}

void criterion_8(const Canonical& c) {
  std::vector<double> gaps;
  std::size_t held_out = 0;
  for (const auto& r : c.runs) {
    if (r.method != "pretrain") continue;
    json meta;
    nn::ModelBundle bundle = nn::load_checkpoint(r.dir / cli::kCheckpointDir, &meta);
    const json& sj = meta.at("split");
    const Split split = split_dataset(c.data.samples, sj.at("train_fraction").get<double>(),
                                      sj.at("stratified").get<bool>(), sj.at("seed").get<std::uint64_t>());
    held_out = split.test.size();
    const auto& views = meta.at("experiment").at("view_pair");
    NoGradGuard no_grad;
    const auto pb = contrastive::assemble_projection_batch(
        std::span<const SyncedSample>(split.test), bundle,
        {parse_modality(views[0].get<std::string>()), parse_modality(views[1].get<std::string>())}, BatchNormMode::eval);
    gaps.push_back(contrastive::alignment(pb).gap());
  }
  bool each = !gaps.empty();
  std::string per_seed;
  for (double g : gaps) {
    each = each && g >= 0.2;
    per_seed += (per_seed.empty() ? "" : ", ") + fmt(g, 3);
  }
  verdict(8, each && gaps.size() == 5,
          "positive minus negative cosine on the " + std::to_string(held_out) +
              "-sample held-out split after pretraining, per seed [" + per_seed + "], mean " +
              fmt(gaps.empty() ? 0.0 : mean_of(gaps), 3) + " (each >= 0.2)");
}

// ----------------------------------------------------------------------------

int run_binary(const std::string& args) {
  const std::string cmd = std::string(CWHAR_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void strip_wall_clock(json& j) {
  if (j.is_object()) {
    j.erase("wall_clock_seconds");
    for (auto& [k, v] : j.items()) strip_wall_clock(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_wall_clock(v);
  }
}

void criterion_9(const fs::path& root) {
  fs::remove_all(root);
  json cfg = read_json_file(fs::path(CWHAR_SOURCE_DIR) / "configs" / "desk.json");
  cfg.erase("data");
  cfg.erase("out");
  cfg["seeds"] = {3};
  for (const char* stage : {"pretrain", "finetune", "baseline"}) cfg[stage]["epochs"] = 3;
  cfg["shots"] = {1, 5};
  write_json_file(root / "config.json", cfg);

  bool ok = true;
  for (const char* tag : {"a", "b"}) {
    const fs::path d = root / tag;
    ok = ok && run_binary("generate --per-class 8 --seed 5 --out '" + (d / "data").string() + "'") == 0;
    ok = ok && run_binary("experiment --config '" + (root / "config.json").string() + "' --data '" + (d / "data").string() +
                          "' --out '" + (d / "runs").string() + "'") == 0;
  }
  if (!ok) {
    verdict(9, false, "cwhar invocation failed");
    return;
  }
  std::size_t files = 0, checkpoints = 0, records = 0, svgs = 0, mismatches = 0;
  std::string first_mismatch;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), root / "a");
    const fs::path other = root / "b" / rel;
    ++files;
    bool same;
    if (rel.filename() == cli::kRunRecordFile) {
      ++records;
      json x = read_json_file(entry.path()), y = fs::exists(other) ? read_json_file(other) : json();
      strip_wall_clock(x);
      strip_wall_clock(y);
      same = x == y;
    } else {
      same = fs::exists(other) && slurp(entry.path()) == slurp(other);
      if (rel.extension() == ".svg") ++svgs;
      if (rel.string().find(cli::kCheckpointDir) != std::string::npos) ++checkpoints;
    }
    if (!same) {
      ++mismatches;
      if (first_mismatch.empty()) first_mismatch = rel.string();
    }
  }
  verdict(9, mismatches == 0 && checkpoints > 0 && records > 0 && svgs > 0,
          "two invocations of generate + experiment: " + std::to_string(files) + " files compared (" +
              std::to_string(checkpoints) + " checkpoint files, " + std::to_string(records) + " run records without wall clock, " +
              std::to_string(svgs) + " SVGs), " + std::to_string(mismatches) + " differ" +
              (first_mismatch.empty() ? "" : " (first: " + first_mismatch + ")"));
}

void criterion_10(const fs::path& root) {
  fs::remove_all(root);
  const SyntheticOptions o = canonical_options();
  const auto data = generate_synthetic_dataset(o);
  save_dataset(data, root / "a", o.to_json());
  const Dataset back = load_dataset(root / "a");
  save_dataset(back.samples, root / "b", back.generator);
  const bool round_trip = back.samples == data && slurp(root / "a" / "data.bin") == slurp(root / "b" / "data.bin") &&
                          slurp(root / "a" / kManifestName) == slurp(root / "b" / kManifestName);

  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    total += contrastive::nt_xent(contrastive::make_projection_batch(gaussian({64, 128}, rng))).loss.item();
  }
  const double mean = total / 10.0;
  verdict(10, round_trip && std::abs(mean - std::log(63.0)) <= 0.5,
          std::string("container round trip of ") + std::to_string(data.size()) + " samples " +
              (round_trip ? "bit-exact" : "NOT bit-exact") + "; random-embedding loss (N=32, d=128, 10 seeds) " +
              fmt(mean) + " vs ln 63 = " + fmt(std::log(63.0)));
}

}  // namespace

int main() {
  const fs::path work = CWHAR_ACCEPTANCE_DIR;
  try {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    std::cout << "running the canonical experiment (5 seeds, shots 1/5/10)..." << std::endl;
    const Canonical c = run_canonical(work / "canonical");
    criterion_5(c);
    criterion_6(c);
    criterion_7(c);
    criterion_8(c);
    criterion_9(work / "determinism");
    criterion_10(work / "container");
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
