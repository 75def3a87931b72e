// Copyright 2026 The cetq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// cetq command-line driver.
//
//   cetq gen-data --kind two-gaussians --seed 0 --out-prefix data/toy
//   cetq train    --data data/toy.train.ds --widths 2,16,16,2 --out m.ckpt
//   cetq plan     --checkpoint m.ckpt --calib data/toy.calib.ds --target-bits 4 --out plan.json
//   cetq eval     --checkpoint m.ckpt --plan plan.json --data data/toy.eval.ds --out eval.json
//   cetq search   --checkpoint m.ckpt --data data/toy.eval.ds --out search.json
//   cetq report   --report plan.json.report.json --eval eval.json
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cetq/error.hpp"
#include "cetq/harness.hpp"
#include "cetq/io.hpp"
#include "cetq/planner.hpp"

namespace fs = std::filesystem;
using namespace cetq;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Raised for option values that parse but make no sense.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t thread_count() {
  const char* env = std::getenv("CETQ_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw UsageError("CETQ_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

template <class F>
auto parse_value(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string kind = "two-gaussians";
  std::uint64_t seed = 0;
  std::size_t train = 512, calib = 256, eval = 512;
  std::size_t input_dim = 2;
  double separation = 2.0;
  double noise = 0.1;
  std::size_t teacher_hidden = 8;
  std::size_t outputs = 1;
  std::string prefix;
};

void run_gen_data(const GenDataArgs& a) {
  GeneratorConfig g;
  g.kind = parse_value([&] { return generator_kind_from_string(a.kind); });
  g.seed = a.seed;
  g.train = a.train;
  g.calibration = a.calib;
  g.eval = a.eval;
  g.input_dim = a.input_dim;
  g.separation = a.separation;
  g.noise = a.noise;
  g.teacher_hidden = a.teacher_hidden;
  g.teacher_outputs = a.outputs;
  const DatasetSplits s = generate_data(g);
  const fs::path prefix(a.prefix);
  ensure_parent(prefix);
  save_dataset(prefix.string() + ".train.ds", s.train);
  save_dataset(prefix.string() + ".calib.ds", s.calibration);
  save_dataset(prefix.string() + ".eval.ds", s.eval);
  std::cout << "wrote " << prefix.string() << ".{train,calib,eval}.ds (" << s.train.size() << '/'
            << s.calibration.size() << '/' << s.eval.size() << " rows)\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::vector<std::size_t> widths;
  std::string activation = "tanh";
  std::string loss = "cross_entropy";
  std::size_t epochs = 3000;
  double lr = 0.01;
  std::size_t decay = 1000;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
  std::string out;
};

void run_train(const TrainArgs& a) {
  const Activation act = parse_value([&] { return activation_from_string(a.activation); });
  const LossKind lk = parse_value([&] { return loss_kind_from_string(a.loss); });
  const ModelSpec spec = parse_value([&] { return ModelSpec::mlp(a.widths, act, lk); });
  const Dataset train = load_dataset(a.data);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.learning_rate = a.lr;
  tc.decay_interval = a.decay;
  tc.gradient_tolerance = a.tolerance;
  tc.seed = a.seed;
  tc.threads = thread_count();
  const Checkpoint ck = train_toy(spec, train, tc);
  ensure_parent(a.out);
  save_checkpoint(a.out, ck);
  std::cout << "trained " << ck.params.size() << " parameters for " << ck.metadata.epochs
            << " epochs: loss " << ck.metadata.final_loss << ", gradient inf-norm "
            << ck.metadata.gradient_inf_norm << (ck.metadata.converged ? "" : " (not converged)") << '\n';
}

// ---------------------------------------------------------------------------

struct PlanArgs {
  std::string checkpoint, calib, out;
  std::string report;
  std::string csv_dir;
  double target_bits = 4.0;
  std::size_t m = 200;
  std::size_t lanczos_iterations = 100;
  std::size_t restarts = 5;
  std::size_t solver_iterations = 2000;
  double lr = 0.1;
  std::uint64_t seed = 0;
  std::vector<int> allowed{2, 3, 4, 8};
  std::string spectrum_cache;
  std::string aggregation = "best_objective";
  std::string axes = "largest";
  std::string units = "rounding_noise";
  double gap_threshold = kDefaultGapThreshold;
};

void run_plan(const PlanArgs& a) {
  PlannerConfig cfg;
  cfg.target_bits_per_weight = a.target_bits;
  cfg.lanczos.max_iterations = a.lanczos_iterations;
  cfg.lanczos.num_eigenpairs = a.lanczos_iterations;
  cfg.lanczos.seed = a.seed;
  cfg.solver.m = a.m;
  cfg.solver.restarts = a.restarts;
  cfg.solver.max_iterations = a.solver_iterations;
  cfg.solver.learning_rate = a.lr;
  cfg.solver.seed = a.seed;
  cfg.profile_seed = a.seed;
  cfg.allowed_bits = parse_value([&] { return normalize_allowed_bits(a.allowed); });
  cfg.aggregation = parse_value([&] { return aggregation_rule_from_string(a.aggregation); });
  cfg.axis_selection = parse_value([&] { return axis_selection_from_string(a.axes); });
  cfg.budget_units = parse_value([&] { return budget_units_from_string(a.units); });
  cfg.gap_threshold = a.gap_threshold;
  if (!a.spectrum_cache.empty()) cfg.spectrum_cache = a.spectrum_cache;
  parse_value([&] {
    cfg.validate();
    return 0;
  });

  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset calib = load_dataset(a.calib);
  const PlanResult r = plan(ck, calib, cfg, thread_count());

  ensure_parent(a.out);
  save_bit_plan(a.out, r.plan);
  const fs::path report = a.report.empty() ? fs::path(a.out + ".report.json") : fs::path(a.report);
  ensure_parent(report);
  write_json(report, to_json(r.report));
  if (!a.csv_dir.empty()) write_plan_csv_bundle(a.csv_dir, r.report);

  for (const auto& w : r.report.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "plan: " << r.plan.average_bits() << " bits/weight, ratio " << r.plan.compression_ratio()
            << "x, widths";
  for (int b : r.plan.bits()) std::cout << ' ' << b;
  std::cout << "\nreport: " << report.string() << '\n';
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, plan, data, out;
  std::string quantized_out;
};

void run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const BitPlan p = load_bit_plan(a.plan);
  const Dataset data = load_dataset(a.data);
  const EvalResult r = evaluate_plan(ck, p, data, thread_count());
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_json(a.out, to_json(r));
  }
  if (!a.quantized_out.empty()) {
    ensure_parent(a.quantized_out);
    save_quantized_checkpoint(a.quantized_out, ck, p);
  }
  std::cout << "loss " << r.full_loss << " -> " << r.quant_loss << " (drop " << r.loss_drop << "), accuracy "
            << r.full_accuracy << " -> " << r.quant_accuracy << ", ratio " << r.compression_ratio << "x\n";
}

// ---------------------------------------------------------------------------

struct SearchArgs {
  std::string checkpoint, data, out;
  std::vector<int> allowed{2, 3, 4, 8};
  std::string plan;
};

void run_search(const SearchArgs& a) {
  const std::vector<int> allowed = parse_value([&] { return normalize_allowed_bits(a.allowed); });
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset data = load_dataset(a.data);
  const SearchResult r = brute_force_search(ck, data, allowed, thread_count());
  Json j = to_json(r);
  std::cout << r.points.size() << " plans evaluated, " << r.front.size() << " on the Pareto front\n";
  if (!a.plan.empty()) {
    const BitPlan p = load_bit_plan(a.plan);
    const double l = loss(ck.spec, apply_plan(ck.params, p), data);
    const std::size_t dom = r.dominating_count(p.total_bits(), l);
    j["reference"] = {{"total_bits", p.total_bits()}, {"loss", l}, {"dominated_by", dom}};
    std::cout << "reference plan dominated by " << dom << " of " << r.points.size() << '\n';
  }
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_json(a.out, j);
  }
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string report;
  std::string eval;
  std::string search;
  std::string out;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void run_report(const ReportArgs& a) {
  const Json r = read_json(a.report);
  if (r.value("kind", "") != "plan_report") throw UsageError(a.report + " is not a plan report");
  std::ostringstream s;
  s << "model " << r.at("model_checksum").get<std::string>() << ", " << r.at("dimension").get<std::size_t>()
    << " parameters in " << r.at("num_layers").get<std::size_t>() << " layers\n";
  const Json& g = r.at("geometry");
  s << "geometry: " << g.at("class").get<std::string>() << ", eigenvalues in ["
    << fmt(g.at("min_eigenvalue").get<double>()) << ", " << fmt(g.at("max_eigenvalue").get<double>()) << "]\n";
  const Json& ax = r.at("short_axes");
  s << "short axes: " << ax.at("used").get<std::size_t>() << " of " << ax.at("requested").get<std::size_t>()
    << (ax.at("clamped").get<bool>() ? " (clamped)" : "") << '\n';
  s << "\nlayer  size  budget     frac   closed  bits  mapping\n";
  for (const auto& d : r.at("decisions")) {
    char line[160];
    std::snprintf(line, sizeof line, "%5zu %5zu  %-9s  %-5s  %6d  %4d  %s%s\n", d.at("layer_id").get<std::size_t>(),
                  d.at("size").get<std::size_t>(), fmt(d.at("budget").get<double>()).c_str(),
                  fmt(d.at("fractional_bits").get<double>()).c_str(), d.at("closed_form_bits").get<int>(),
                  d.at("bits").get<int>(), d.at("mapping_used").get<std::string>().c_str(),
                  d.value("reverted", false) ? " (reverted)" : "");
    s << line;
  }
  const Json& bp = r.at("bit_plan");
  s << "\naverage bits " << fmt(bp.at("average_bits").get<double>()) << ", ratio "
    << fmt(bp.at("compression_ratio").get<double>()) << "x\n";
  const Json& gap = r.at("gap_check");
  s << "predicted loss change " << fmt(r.at("predicted_delta_loss").get<double>()) << ", gap "
    << fmt(gap.at("gap").get<double>()) << " vs threshold " << fmt(gap.at("threshold").get<double>())
    << (r.at("advisory").get<bool>() ? " (advisory plan)" : "") << '\n';
  for (const auto& w : r.at("warnings")) s << "warning: " << w.get<std::string>() << '\n';

  if (!a.eval.empty()) {
    const Json e = read_json(a.eval);
    s << "\neval: loss " << fmt(e.at("full_loss").get<double>()) << " -> " << fmt(e.at("quant_loss").get<double>())
      << ", accuracy " << fmt(e.at("full_accuracy").get<double>()) << " -> "
      << fmt(e.at("quant_accuracy").get<double>()) << ", implied gap " << fmt(e.at("implied_gap").get<double>())
      << '\n';
  }
  if (!a.search.empty()) {
    const Json sr = read_json(a.search);
    s << "\nsearch: " << sr.at("count").get<std::size_t>() << " plans, front of "
      << sr.at("front").size() << '\n';
    if (sr.contains("reference")) {
      s << "reference plan dominated by " << sr["reference"].at("dominated_by").get<std::size_t>() << '\n';
    }
  }
  if (a.out.empty()) {
    std::cout << s.str();
  } else {
    ensure_parent(a.out);
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw IoError("cannot write " + a.out);
    f << s.str();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curvature-guided mixed-precision weight quantisation"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Generate synthetic train/calibration/eval splits");
  c_gen->add_option("--kind", gen.kind, "two-gaussians, two-moons or teacher")->capture_default_str();
  c_gen->add_option("--seed", gen.seed)->capture_default_str();
  c_gen->add_option("--train", gen.train)->capture_default_str();
  c_gen->add_option("--calib", gen.calib)->capture_default_str();
  c_gen->add_option("--eval", gen.eval)->capture_default_str();
  c_gen->add_option("--input-dim", gen.input_dim)->capture_default_str();
  c_gen->add_option("--separation", gen.separation)->capture_default_str();
  c_gen->add_option("--noise", gen.noise)->capture_default_str();
  c_gen->add_option("--teacher-hidden", gen.teacher_hidden)->capture_default_str();
  c_gen->add_option("--outputs", gen.outputs, "teacher output width")->capture_default_str();
  c_gen->add_option("--out-prefix", gen.prefix)->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a toy MLP to a near-stationary point");
  c_train->add_option("--data", tr.data)->required()->check(CLI::ExistingFile);
  c_train->add_option("--widths", tr.widths, "layer widths, input first")->required()->delimiter(',');
  c_train->add_option("--activation", tr.activation)->capture_default_str();
  c_train->add_option("--loss", tr.loss, "cross_entropy or mse")->capture_default_str();
  c_train->add_option("--epochs", tr.epochs)->capture_default_str();
  c_train->add_option("--lr", tr.lr)->capture_default_str();
  c_train->add_option("--decay", tr.decay, "halve the step every N epochs")->capture_default_str();
  c_train->add_option("--tolerance", tr.tolerance, "stop at this gradient inf-norm")->capture_default_str();
  c_train->add_option("--seed", tr.seed)->capture_default_str();
  c_train->add_option("--out", tr.out)->required();

  PlanArgs pl;
  auto* c_plan = app.add_subcommand("plan", "Plan per-layer bit widths");
  c_plan->add_option("--checkpoint", pl.checkpoint)->required()->check(CLI::ExistingFile);
  c_plan->add_option("--calib", pl.calib)->required()->check(CLI::ExistingFile);
  c_plan->add_option("--target-bits", pl.target_bits, "average bits per weight")->capture_default_str();
  c_plan->add_option("--out", pl.out, "bit plan JSON")->required();
  c_plan->add_option("--report", pl.report, "plan report JSON (default: <out>.report.json)");
  c_plan->add_option("--csv-dir", pl.csv_dir, "write trajectory/profile/spectrum/decision CSVs here");
  c_plan->add_option("--m", pl.m, "short axes to constrain")->capture_default_str();
  c_plan->add_option("--lanczos-iterations", pl.lanczos_iterations)->capture_default_str();
  c_plan->add_option("--restarts", pl.restarts)->capture_default_str();
  c_plan->add_option("--solver-iterations", pl.solver_iterations)->capture_default_str();
  c_plan->add_option("--lr", pl.lr)->capture_default_str();
  c_plan->add_option("--seed", pl.seed)->capture_default_str();
  c_plan->add_option("--allowed", pl.allowed)->delimiter(',')->capture_default_str();
  c_plan->add_option("--spectrum-cache", pl.spectrum_cache);
  c_plan->add_option("--aggregation", pl.aggregation, "best_objective or median_budget")->capture_default_str();
  c_plan->add_option("--axes", pl.axes, "largest or smallest")->capture_default_str();
  c_plan->add_option("--units", pl.units, "rounding_noise or absolute")->capture_default_str();
  c_plan->add_option("--gap-threshold", pl.gap_threshold)->capture_default_str();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a bit plan");
  c_eval->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--plan", ev.plan)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", ev.out, "eval result JSON");
  c_eval->add_option("--quantized-out", ev.quantized_out, "also write the quantised checkpoint");

  SearchArgs se;
  auto* c_search = app.add_subcommand("search", "Enumerate every bit assignment (at most 8 layers)");
  c_search->add_option("--checkpoint", se.checkpoint)->required()->check(CLI::ExistingFile);
  c_search->add_option("--data", se.data)->required()->check(CLI::ExistingFile);
  c_search->add_option("--allowed", se.allowed)->delimiter(',')->capture_default_str();
  c_search->add_option("--plan", se.plan, "count the enumerated plans that dominate this one")
      ->check(CLI::ExistingFile);
  c_search->add_option("--out", se.out, "search result JSON");

  ReportArgs rp;
  auto* c_report = app.add_subcommand("report", "Summarise a plan report");
  c_report->add_option("--report", rp.report)->required()->check(CLI::ExistingFile);
  c_report->add_option("--eval", rp.eval)->check(CLI::ExistingFile);
  c_report->add_option("--search", rp.search)->check(CLI::ExistingFile);
  c_report->add_option("--out", rp.out, "write the summary here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    if (sub == c_gen) run_gen_data(gen);
    if (sub == c_train) run_train(tr);
    if (sub == c_plan) run_plan(pl);
    if (sub == c_eval) run_eval(ev);
    if (sub == c_search) run_search(se);
    if (sub == c_report) run_report(rp);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const StageError& e) {
    std::cerr << "error " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error [" << sub->get_name() << "] " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
