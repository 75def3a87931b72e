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


#include "cetq/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <thread>

#include "cetq/error.hpp"
#include "cetq/taylor.hpp"

namespace cetq {

namespace {

// Calls f(i) for i in [0, count) over `threads` workers; each index is
// written by exactly one worker so results do not depend on scheduling.
template <typename F>
void parallel_for(std::size_t count, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) f(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<int> sorted_allowed(std::span<const int> allowed) {
  return normalize_allowed_bits(std::vector<int>(allowed.begin(), allowed.end()));
}

}  // namespace

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::kTwoGaussians: return "two-gaussians";
    case GeneratorKind::kTwoMoons: return "two-moons";
    case GeneratorKind::kTeacher: return "teacher";
  }
  return "two-gaussians";
}

GeneratorKind generator_kind_from_string(const std::string& s) {
  for (auto k : {GeneratorKind::kTwoGaussians, GeneratorKind::kTwoMoons, GeneratorKind::kTeacher}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown generator '" + s + "'");
}

DatasetSplits generate_data(const GeneratorConfig& cfg) {
  if (cfg.input_dim == 0) throw ConfigError("input dimension must be positive");
  if (cfg.calibration == 0) throw ConfigError("calibration split must be non-empty");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const std::size_t total = cfg.train + cfg.calibration + cfg.eval;

  const bool teacher = cfg.kind == GeneratorKind::kTeacher;
  const std::size_t dim = cfg.kind == GeneratorKind::kTwoMoons ? 2 : cfg.input_dim;
  const Shape shape{1, 1, dim};
  Dataset all(shape, teacher ? 0 : 2, Split::kTrain, teacher ? cfg.teacher_outputs : 0);

  // Teacher: dim -> hidden (tanh) -> outputs, weights N(0, 1/fan_in).
  Eigen::MatrixXd w1, w2;
  Eigen::VectorXd b1;
  if (teacher) {
    w1.resize(static_cast<Eigen::Index>(cfg.teacher_hidden), static_cast<Eigen::Index>(dim));
    w2.resize(static_cast<Eigen::Index>(cfg.teacher_outputs), static_cast<Eigen::Index>(cfg.teacher_hidden));
    b1.resize(static_cast<Eigen::Index>(cfg.teacher_hidden));
    for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = normal(rng) / std::sqrt(static_cast<double>(dim));
    for (Eigen::Index i = 0; i < b1.size(); ++i) b1[i] = 0.5 * normal(rng);
    for (Eigen::Index i = 0; i < w2.size(); ++i) {
      w2.data()[i] = normal(rng) / std::sqrt(static_cast<double>(cfg.teacher_hidden));
    }
  }

  std::vector<double> x(dim);
  for (std::size_t s = 0; s < total; ++s) {
    std::int32_t label = 0;
    std::vector<double> target;
    switch (cfg.kind) {
      case GeneratorKind::kTwoGaussians: {
        label = uniform(rng) < 0.5 ? 0 : 1;
        const double shift = (label == 0 ? -0.5 : 0.5) * cfg.separation / std::sqrt(static_cast<double>(dim));
        for (auto& v : x) v = shift + normal(rng);
        break;
      }
      case GeneratorKind::kTwoMoons: {
        label = uniform(rng) < 0.5 ? 0 : 1;
        const double t = std::numbers::pi * uniform(rng);
        if (label == 0) {
          x[0] = std::cos(t);
          x[1] = std::sin(t);
        } else {
          x[0] = 1.0 - std::cos(t);
          x[1] = 0.5 - std::sin(t);
        }
        x[0] += cfg.noise * normal(rng);
        x[1] += cfg.noise * normal(rng);
        break;
      }
      case GeneratorKind::kTeacher: {
        for (auto& v : x) v = normal(rng);
        const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(dim));
        const Eigen::VectorXd h = (w1 * xv + b1).array().tanh().matrix();
        const Eigen::VectorXd y = w2 * h;
        target.resize(cfg.teacher_outputs);
        for (std::size_t o = 0; o < cfg.teacher_outputs; ++o) {
          target[o] = y[static_cast<Eigen::Index>(o)] + cfg.noise * normal(rng);
        }
        break;
      }
    }
    all.add(x, label, target);
  }

  DatasetSplits out;
  out.train = all.slice(0, cfg.train, Split::kTrain);
  out.calibration = all.slice(cfg.train, cfg.train + cfg.calibration, Split::kCalibration);
  out.eval = all.slice(cfg.train + cfg.calibration, total, Split::kEval);
  return out;
}

Checkpoint train_toy(const ModelSpec& spec, const Dataset& train, const TrainConfig& cfg) {
  spec.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  ParameterVector w = init_params(spec, cfg.seed);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-12;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w.size()));
  Eigen::VectorXd m2 = m1;

  Checkpoint out;
  out.spec = spec;
  out.metadata.seed = cfg.seed;
  LossAndGradient lg = loss_and_gradient(spec, w, train, cfg.threads);
  std::size_t epoch = 0;
  for (;; ++epoch) {
    const double inf_norm = lg.gradient.values().cwiseAbs().maxCoeff();
    if (inf_norm < cfg.gradient_tolerance) {
      out.metadata.converged = true;
      break;
    }
    if (epoch >= cfg.epochs) break;
    double lr = cfg.learning_rate;
    if (cfg.decay_interval > 0) lr *= std::exp2(-static_cast<double>(epoch / cfg.decay_interval));
    const double step = static_cast<double>(epoch + 1);
    const Eigen::VectorXd& g = lg.gradient.values();
    m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
    m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(kBeta1, step);
    const double c2 = 1.0 - std::pow(kBeta2, step);
    w.values().array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + kEps);
    lg = loss_and_gradient(spec, w, train, cfg.threads);
  }
  out.metadata.epochs = epoch;
  out.metadata.final_loss = lg.loss;
  out.metadata.gradient_inf_norm = lg.gradient.values().cwiseAbs().maxCoeff();
  out.params = std::move(w);
  return out;
}

EvalResult evaluate_plan(const Checkpoint& checkpoint, const BitPlan& plan, const Dataset& eval_set,
                         std::size_t threads) {
  plan.validate(checkpoint.params.segments());
  const ParameterVector quantized = apply_plan(checkpoint.params, plan);
  EvalResult r;
  r.full_loss = loss(checkpoint.spec, checkpoint.params, eval_set, threads);
  r.full_accuracy = accuracy(checkpoint.spec, checkpoint.params, eval_set);
  r.quant_loss = loss(checkpoint.spec, quantized, eval_set, threads);
  r.quant_accuracy = accuracy(checkpoint.spec, quantized, eval_set);
  r.loss_drop = r.quant_loss - r.full_loss;
  r.accuracy_drop = r.full_accuracy - r.quant_accuracy;
  r.compression_ratio = plan.compression_ratio();
  r.total_bits = plan.total_bits();
  r.average_bits = plan.average_bits();
  const ParameterVector delta = quantized - checkpoint.params;
  r.layer_quant_rms = delta.segment_rms();
  r.implied_delta_norm = delta.norm();
  const NetworkObjective objective(checkpoint.spec, checkpoint.params, eval_set, threads);
  const GapProbe probe = probe_gap(objective, delta);
  r.implied_predicted_delta_loss = probe.first_order + probe.second_order;
  r.implied_gap = probe.gap;
  return r;
}

Json to_json(const EvalResult& r) {
  return {{"schema_version", kSchemaVersion},
          {"kind", "eval_result"},
          {"full_loss", r.full_loss},
          {"full_accuracy", r.full_accuracy},
          {"quant_loss", r.quant_loss},
          {"quant_accuracy", r.quant_accuracy},
          {"loss_drop", r.loss_drop},
          {"accuracy_drop", r.accuracy_drop},
          {"compression_ratio", r.compression_ratio},
          {"total_bits", r.total_bits},
          {"average_bits", r.average_bits},
          {"layer_quant_rms", r.layer_quant_rms},
          {"implied_delta_norm", r.implied_delta_norm},
          {"implied_predicted_delta_loss", r.implied_predicted_delta_loss},
          {"implied_gap", r.implied_gap}};
}

BitPlan baseline_uniform(const ParameterVector& weights, int bits, std::span<const int> allowed) {
  const std::vector<int> a = sorted_allowed(allowed);
  if (std::find(a.begin(), a.end(), bits) == a.end()) {
    throw ConfigError("bit width " + std::to_string(bits) + " is not in the allowed set");
  }
  return BitPlan::uniform(weights, bits, MappingKind::kUniform);
}

BitPlan baseline_random(const ParameterVector& weights, double target_total_bits, std::uint64_t seed,
                        std::span<const int> allowed) {
  const std::vector<int> a = sorted_allowed(allowed);
  const SegmentMap& segs = weights.segments();
  const double floor_bits = static_cast<double>(segs.total()) * a.front();
  if (floor_bits > target_total_bits) {
    throw InfeasibleTarget("target of " + std::to_string(target_total_bits) +
                           " bits is below the narrowest plan (" + std::to_string(floor_bits) + ")");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, a.size() - 1);
  std::vector<std::size_t> idx(segs.size());
  for (auto& i : idx) i = pick(rng);
  auto total = [&] {
    double t = 0.0;
    for (std::size_t l = 0; l < segs.size(); ++l) t += static_cast<double>(segs[l].length) * a[idx[l]];
    return t;
  };
  while (total() > target_total_bits) {
    std::vector<std::size_t> lowerable;
    for (std::size_t l = 0; l < segs.size(); ++l) {
      if (idx[l] > 0) lowerable.push_back(l);
    }
    std::uniform_int_distribution<std::size_t> which(0, lowerable.size() - 1);
    --idx[lowerable[which(rng)]];
  }
  std::vector<int> bits(segs.size());
  for (std::size_t l = 0; l < segs.size(); ++l) bits[l] = a[idx[l]];
  return BitPlan::from_bits(weights, bits, MappingKind::kRandom);
}

std::size_t SearchResult::dominating_count(std::size_t total_bits, double loss_value) const {
  std::size_t n = 0;
  for (const auto& p : points) {
    if (p.total_bits <= total_bits && p.loss <= loss_value &&
        (p.total_bits < total_bits || p.loss < loss_value)) {
      ++n;
    }
  }
  return n;
}

SearchResult brute_force_search(const Checkpoint& checkpoint, const Dataset& eval_set,
                                std::span<const int> allowed, std::size_t threads) {
  const SegmentMap& segs = checkpoint.params.segments();
  if (segs.size() > kMaxSearchLayers) {
    throw ConfigError("refused: " + std::to_string(segs.size()) + " layers exceeds the search cap of " +
                      std::to_string(kMaxSearchLayers));
  }
  SearchResult r;
  r.allowed = sorted_allowed(allowed);
  r.layers = segs.size();
  std::size_t count = 1;
  for (std::size_t l = 0; l < r.layers; ++l) count *= r.allowed.size();
  r.points.resize(count);

  // Pre-quantise every layer at every width once.
  std::vector<std::vector<std::vector<double>>> cache(r.layers);
  for (std::size_t l = 0; l < r.layers; ++l) {
    for (int b : r.allowed) cache[l].push_back(fake_quantize(checkpoint.params.segment(l), b, r.allowed));
  }

  parallel_for(count, threads, [&](std::size_t index) {
    SearchPoint& p = r.points[index];
    p.bits.resize(r.layers);
    ParameterVector w = checkpoint.params;
    std::size_t rem = index;
    for (std::size_t l = r.layers; l-- > 0;) {
      const std::size_t k = rem % r.allowed.size();
      rem /= r.allowed.size();
      p.bits[l] = r.allowed[k];
      std::copy(cache[l][k].begin(), cache[l][k].end(), w.segment(l).begin());
      p.total_bits += segs[l].length * static_cast<std::size_t>(r.allowed[k]);
    }
    p.loss = loss(checkpoint.spec, w, eval_set);
  });

  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (r.points[a].total_bits != r.points[b].total_bits) return r.points[a].total_bits < r.points[b].total_bits;
    return r.points[a].loss < r.points[b].loss;
  });
  double best_smaller = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count;) {
    std::size_t j = i;
    const std::size_t size = r.points[order[i]].total_bits;
    const double group_min = r.points[order[i]].loss;
    while (j < count && r.points[order[j]].total_bits == size) {
      if (r.points[order[j]].loss == group_min && group_min < best_smaller) r.front.push_back(order[j]);
      ++j;
    }
    best_smaller = std::min(best_smaller, group_min);
    i = j;
  }
  return r;
}

Json to_json(const SearchResult& r) {
  Json points = Json::array();
  for (const auto& p : r.points) points.push_back({{"bits", p.bits}, {"total_bits", p.total_bits}, {"loss", p.loss}});
  return {{"schema_version", kSchemaVersion},
          {"kind", "search_result"},
          {"allowed_bits", r.allowed},
          {"layers", r.layers},
          {"count", r.points.size()},
          {"points", points},
          {"front", r.front}};
}

double win_rate(double reference_loss, std::span<const double> losses) {
  if (losses.empty()) return 0.0;
  std::size_t wins = 0;
  for (double l : losses) {
    if (l > reference_loss) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(losses.size());
}

MonteCarloResult compare_random_plans(const Checkpoint& checkpoint, const Dataset& eval_set,
                                      const BitPlan& reference, double target_total_bits,
                                      std::size_t count, std::uint64_t seed,
                                      std::span<const int> allowed, std::size_t threads) {
  MonteCarloResult r;
  r.reference_loss = loss(checkpoint.spec, apply_plan(checkpoint.params, reference), eval_set);
  r.losses.resize(count);
  r.total_bits.resize(count);
  parallel_for(count, threads, [&](std::size_t k) {
    const BitPlan p = baseline_random(checkpoint.params, target_total_bits, seed * 1000003ULL + k, allowed);
    r.total_bits[k] = p.total_bits();
    r.losses[k] = loss(checkpoint.spec, apply_plan(checkpoint.params, p), eval_set);
  });
  r.win_rate = win_rate(r.reference_loss, r.losses);
  return r;
}

DirectionComparison compare_random_directions(const Objective& objective, const ParameterVector& delta,
                                              std::size_t count, std::uint64_t seed) {
  DirectionComparison out;
  const double base = objective.loss();
  const double norm = delta.norm();
  out.reference_delta_loss = objective.perturbed_loss(delta) - base;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  for (std::size_t k = 0; k < count; ++k) {
    ParameterVector d(delta.segments());
    for (double& x : d.span()) x = normal(rng);
    d *= norm / d.norm();
    const double dl = objective.perturbed_loss(d) - base;
    out.random_delta_losses.push_back(dl);
    if (dl > out.reference_delta_loss) ++out.beaten;
  }
  return out;
}

std::vector<AblationRow> eigen_count_ablation(const Objective& objective, const Spectrum& spectrum,
                                              std::span<const std::size_t> ms, double norm,
                                              const SolverConfig& cfg, const DeltaBitMapper& mapper) {
  std::vector<AblationRow> rows;
  const double base = objective.loss();
  for (std::size_t m : ms) {
    const auto start = std::chrono::steady_clock::now();
    AblationRow row;
    row.m = m;
    const ShortAxisSet short_axes = select_short_axes(spectrum, m);
    row.used = short_axes.size();
    SolverConfig c = cfg;
    c.m = m;
    PerturbationSolution sol = solve_delta(short_axes, objective.segments(), c, mapper);
    ParameterVector delta = sol.delta;
    delta *= norm / delta.norm();
    row.delta_loss = objective.perturbed_loss(delta) - base;
    row.quadratic = quadratic_delta(objective, delta);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    row.seconds = dt.count();
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "m,used,delta_loss,quadratic,seconds\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.m << ',' << r.used << ',' << r.delta_loss << ',' << r.quadratic << ',' << r.seconds << '\n';
  }
}

}  // namespace cetq
