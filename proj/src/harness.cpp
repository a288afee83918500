#include "rxsim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "rxsim/pruning.hpp"
#include "rxsim/rng.hpp"

namespace rxsim {
namespace {

using nlohmann::json;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
// Seed-derivation tag for fine-tune runs ("fine" in ASCII).
constexpr std::uint64_t kFineTuneTag = 0x66696e65ULL;

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double get_num(const json& j, const char* key, double fallback = kNan) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) return fallback;
  return it->get<double>();
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

PointStats evaluate_with_faults(const Model& model, const Dataset& eval_data, MappingScheme scheme,
                                const FaultModel& fault, const EvalOptions& opts) {
  if (opts.trials < 1) throw std::invalid_argument("evaluate_with_faults: trials must be >= 1");
  const Dataset* data = &eval_data;
  Dataset holder;
  if (opts.eval_subset > 0 && opts.eval_subset < eval_data.size()) {
    holder = subset(eval_data, opts.eval_subset);
    data = &holder;
  }

  PointStats out;
  out.trial_acc.reserve(static_cast<std::size_t>(opts.trials));

  if (fault.p_off == 0.0 && fault.p_on == 0.0) {
    // No faults: the device computes the programmed weights, so report the
    // model's own accuracy exactly, with zero spread.
    const double acc = evaluate_accuracy(model, *data);
    out.trial_acc.assign(static_cast<std::size_t>(opts.trials), acc);
    out.acc_mean = out.acc_min = out.acc_max = acc;
    out.acc_std = 0.0;
    return out;
  }

  struct LayerMap {
    int layer_index;
    MappedLayer clean;
    std::int64_t cells;
    std::int64_t weights;
  };
  std::vector<LayerMap> mapped;
  for (int li : model.prunable_layers()) {
    MappedLayer ml = map_layer(model.layers[li], scheme, opts.tile_rows, opts.tile_cols);
    ml.layer_index = li;
    const std::int64_t cells = ml.occupied_cells();
    const std::int64_t weights = ml.weight_rows * ml.weight_cols;
    mapped.push_back({li, std::move(ml), cells, weights});
  }
  if (mapped.empty()) throw std::invalid_argument("evaluate_with_faults: model has no mappable weight layers");

  Model work = model;
  double sum = 0.0, mis_cell_sum = 0.0, mis_weight_sum = 0.0;
  for (int t = 0; t < opts.trials; ++t) {
    double cell_num = 0.0, cell_den = 0.0, weight_num = 0.0, weight_den = 0.0;
    for (const auto& lm : mapped) {
      const std::uint64_t mask_seed = derive_seed(
          opts.seed, {opts.fixed_device ? 0ULL : static_cast<std::uint64_t>(t),
                      static_cast<std::uint64_t>(lm.layer_index)});
      const FaultMask mask = sample_fault_mask(lm.clean, fault, mask_seed, opts.include_padding);
      const MappedLayer faulted = apply_faults(lm.clean, mask);
      const MismatchRates mr = mismatch_rate(lm.clean, faulted);
      cell_num += mr.per_cell * static_cast<double>(lm.cells);
      cell_den += static_cast<double>(lm.cells);
      weight_num += mr.per_weight * static_cast<double>(lm.weights);
      weight_den += static_cast<double>(lm.weights);
      const Tensor effective = reconstruct_effective_weights(faulted);
      set_layer_weights_from_matrix(work.layers[lm.layer_index], effective);
    }
    const double acc = evaluate_accuracy(work, *data);
    out.trial_acc.push_back(acc);
    sum += acc;
    mis_cell_sum += cell_num / cell_den;
    mis_weight_sum += weight_num / weight_den;
  }

  const int n = opts.trials;
  out.acc_mean = sum / n;
  out.acc_min = *std::min_element(out.trial_acc.begin(), out.trial_acc.end());
  out.acc_max = *std::max_element(out.trial_acc.begin(), out.trial_acc.end());
  // Identical trials (e.g. a fixed device) have exactly zero spread; skip the
  // mean-centered sum so its rounding cannot fabricate a tiny one.
  if (n > 1 && out.acc_min != out.acc_max) {
    double ss = 0.0;
    for (double a : out.trial_acc) ss += (a - out.acc_mean) * (a - out.acc_mean);
    out.acc_std = std::sqrt(ss / (n - 1));
  }
  out.mismatch_cell_mean = mis_cell_sum / n;
  out.mismatch_weight_mean = mis_weight_sum / n;
  return out;
}

json spec_to_json(const ExperimentSpec& s) {
  json schemes = json::array();
  for (auto sc : s.schemes) schemes.push_back(scheme_name(sc));
  return json{{"model", s.model_path},
              {"images", s.images_path},
              {"labels", s.labels_path},
              {"train_images", s.train_images_path},
              {"train_labels", s.train_labels_path},
              {"schemes", schemes},
              {"rates", s.rates},
              {"on_off_ratio", s.on_off_ratio},
              {"prune_ratios", s.prune_ratios},
              {"trials", s.trials},
              {"seed", s.seed},
              {"jobs", s.jobs},
              {"out_csv", s.out_csv},
              {"out_json", s.out_json},
              {"ft_epochs", s.ft_epochs},
              {"ft_lr", s.ft_lr},
              {"ft_momentum", s.ft_momentum},
              {"ft_batch_size", s.ft_batch_size},
              {"eval_subset", s.eval_subset},
              {"include_padding", s.include_padding},
              {"fixed_device", s.fixed_device},
              {"tile_rows", s.tile_rows},
              {"tile_cols", s.tile_cols}};
}

void apply_spec_json(ExperimentSpec& s, const json& j) {
  s.model_path = j.value("model", s.model_path);
  s.images_path = j.value("images", s.images_path);
  s.labels_path = j.value("labels", s.labels_path);
  s.train_images_path = j.value("train_images", s.train_images_path);
  s.train_labels_path = j.value("train_labels", s.train_labels_path);
  if (j.contains("schemes")) {
    s.schemes.clear();
    for (const auto& name : j.at("schemes")) s.schemes.push_back(parse_scheme(name.get<std::string>()));
  }
  if (j.contains("rates")) s.rates = j.at("rates").get<std::vector<double>>();
  s.on_off_ratio = j.value("on_off_ratio", s.on_off_ratio);
  if (j.contains("prune_ratios")) s.prune_ratios = j.at("prune_ratios").get<std::vector<double>>();
  s.trials = j.value("trials", s.trials);
  s.seed = j.value("seed", s.seed);
  s.jobs = j.value("jobs", s.jobs);
  s.out_csv = j.value("out_csv", s.out_csv);
  s.out_json = j.value("out_json", s.out_json);
  s.ft_epochs = j.value("ft_epochs", s.ft_epochs);
  s.ft_lr = j.value("ft_lr", s.ft_lr);
  s.ft_momentum = j.value("ft_momentum", s.ft_momentum);
  s.ft_batch_size = j.value("ft_batch_size", s.ft_batch_size);
  s.eval_subset = j.value("eval_subset", s.eval_subset);
  s.include_padding = j.value("include_padding", s.include_padding);
  s.fixed_device = j.value("fixed_device", s.fixed_device);
  s.tile_rows = j.value("tile_rows", s.tile_rows);
  s.tile_cols = j.value("tile_cols", s.tile_cols);
}

ExperimentSpec spec_from_json(const json& j) {
  ExperimentSpec s;
  apply_spec_json(s, j);
  return s;
}

std::uint64_t spec_hash(const ExperimentSpec& spec) {
  json j = spec_to_json(spec);
  j.erase("jobs");
  j.erase("out_csv");
  j.erase("out_json");
  return fnv1a64(j.dump());
}

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string make_csv_row(const SweepPoint& p, int trials) {
  std::string row;
  row += scheme_name(p.scheme);
  row += ',';
  row += format_double(p.p_off);
  row += ',';
  row += format_double(p.p_on);
  row += ',';
  row += format_double(p.prune_ratio_nominal);
  row += ',';
  row += std::to_string(trials);
  row += ',';
  row += format_double(p.stats.acc_mean);
  row += ',';
  row += format_double(p.stats.acc_std);
  row += ',';
  row += format_double(p.stats.acc_min);
  row += ',';
  row += format_double(p.stats.acc_max);
  row += ',';
  row += format_double(p.stats.mismatch_cell_mean);
  row += ',';
  row += format_double(p.stats.mismatch_weight_mean);
  row += ',';
  row += format_double(p.expectation_e_prime);
  row += ',';
  row += std::to_string(p.point_seed);
  return row;
}

json make_point_json(const SweepPoint& p, double rate, int trials) {
  json pj;
  pj["point_id"] = p.point_id;
  pj["scheme"] = scheme_name(p.scheme);
  pj["rate"] = rate;
  pj["p_off"] = p.p_off;
  pj["p_on"] = p.p_on;
  pj["prune_ratio"] = p.prune_ratio_nominal;
  pj["prune_ratio_measured"] = p.prune_ratio_measured;
  pj["trials"] = trials;
  pj["acc_mean"] = p.stats.acc_mean;
  pj["acc_std"] = p.stats.acc_std;
  pj["acc_min"] = p.stats.acc_min;
  pj["acc_max"] = p.stats.acc_max;
  pj["mismatch_cell"] = p.stats.mismatch_cell_mean;
  pj["mismatch_weight"] = p.stats.mismatch_weight_mean;
  pj["expectation_E_prime"] = p.expectation_e_prime;
  pj["seed"] = p.point_seed;
  pj["status"] = p.failed ? "error" : "ok";
  if (p.failed) pj["error"] = p.error;
  pj["trial_acc"] = p.stats.trial_acc;
  return pj;
}

void restore_point_from_json(SweepPoint& p) {
  const json& pj = p.point_json;
  p.prune_ratio_measured = get_num(pj, "prune_ratio_measured", p.prune_ratio_nominal);
  p.stats.acc_mean = get_num(pj, "acc_mean");
  p.stats.acc_std = get_num(pj, "acc_std");
  p.stats.acc_min = get_num(pj, "acc_min");
  p.stats.acc_max = get_num(pj, "acc_max");
  p.stats.mismatch_cell_mean = get_num(pj, "mismatch_cell");
  p.stats.mismatch_weight_mean = get_num(pj, "mismatch_weight");
  p.expectation_e_prime = get_num(pj, "expectation_E_prime");
  p.failed = pj.value("status", "ok") != std::string("ok");
  p.error = pj.value("error", "");
  if (pj.contains("trial_acc") && pj.at("trial_acc").is_array()) {
    p.stats.trial_acc.clear();
    for (const auto& a : pj.at("trial_acc"))
      p.stats.trial_acc.push_back(a.is_number() ? a.get<double>() : kNan);
  }
}

void validate_spec(const ExperimentSpec& spec) {
  if (spec.schemes.empty()) throw std::invalid_argument("sweep: at least one scheme required");
  if (spec.rates.empty()) throw std::invalid_argument("sweep: at least one fault rate required");
  if (spec.prune_ratios.empty()) throw std::invalid_argument("sweep: at least one prune ratio required");
  for (double r : spec.rates)
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("sweep: fault rates must lie in [0, 1]");
  for (double r : spec.prune_ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("sweep: prune ratios must lie in [0, 1]");
  if (spec.trials < 1) throw std::invalid_argument("sweep: trials must be >= 1");
  if (!(spec.on_off_ratio > 0.0)) throw std::invalid_argument("sweep: on/off ratio must be positive");
  if (spec.tile_rows < 1 || spec.tile_cols < 1) throw std::invalid_argument("sweep: tile dims must be >= 1");
}

}  // namespace

SweepResult sweep(const ExperimentSpec& spec, const Model& model, const Dataset& eval_data,
                  const Dataset* train_data) {
  validate_spec(spec);
  const auto t_start = std::chrono::steady_clock::now();
  const std::uint64_t hash = spec_hash(spec);
  const std::string hash_str = hash_hex(hash);

  // Prepare one model per distinct prune ratio (prune + optional masked
  // fine-tune), sequentially and up front, so results never depend on jobs.
  const std::size_t n_ratios = spec.prune_ratios.size();
  std::vector<Model> prepared;
  std::vector<double> prepared_measured;
  std::vector<int> model_of_ratio(n_ratios, -1);
  std::vector<double> measured_of_ratio(n_ratios, 0.0);
  std::map<double, int> seen;
  const BlockPartition partition = partition_blocks(model);
  for (std::size_t i = 0; i < n_ratios; ++i) {
    const double r = spec.prune_ratios[i];
    auto it = seen.find(r);
    if (it != seen.end()) {
      model_of_ratio[i] = it->second;
      measured_of_ratio[i] = prepared_measured[static_cast<std::size_t>(it->second)];
      continue;
    }
    Model m = model;
    if (r > 0.0) {
      for (const auto& block : partition.blocks) m = magnitude_prune(m, block, r);
      if (spec.ft_epochs > 0) {
        if (train_data == nullptr)
          throw std::invalid_argument("sweep: fine-tuning requested but no training data provided");
        TrainConfig cfg;
        cfg.epochs = spec.ft_epochs;
        cfg.lr = spec.ft_lr;
        cfg.momentum = spec.ft_momentum;
        cfg.batch_size = spec.ft_batch_size;
        cfg.seed = derive_seed(spec.seed, {kFineTuneTag, static_cast<std::uint64_t>(i)});
        cfg.respect_mask = true;
        m = train_sgd(m, *train_data, cfg);
      }
    }
    const int idx = static_cast<int>(prepared.size());
    prepared.push_back(std::move(m));
    prepared_measured.push_back(prune_ratio(prepared.back()));
    model_of_ratio[i] = idx;
    measured_of_ratio[i] = prepared_measured.back();
    seen.emplace(r, idx);
  }

  // Grid in fixed order: scheme x rate x prune ratio.
  SweepResult result;
  const std::int64_t n_points = static_cast<std::int64_t>(spec.schemes.size() * spec.rates.size() * n_ratios);
  result.points.resize(static_cast<std::size_t>(n_points));
  {
    std::int64_t id = 0;
    for (auto scheme : spec.schemes)
      for (double rate : spec.rates)
        for (std::size_t ri = 0; ri < n_ratios; ++ri) {
          SweepPoint& p = result.points[static_cast<std::size_t>(id)];
          p.point_id = id;
          p.scheme = scheme;
          p.rate = rate;
          const FaultModel fm = FaultModel::from_total_rate(rate, spec.on_off_ratio);
          p.p_off = fm.p_off;
          p.p_on = fm.p_on;
          p.prune_ratio_nominal = spec.prune_ratios[ri];
          p.prune_ratio_measured = measured_of_ratio[ri];
          p.point_seed = derive_seed(spec.seed, {static_cast<std::uint64_t>(id)});
          ++id;
        }
  }
  std::vector<std::size_t> ratio_index_of_point(static_cast<std::size_t>(n_points));
  {
    std::int64_t id = 0;
    for (std::size_t si = 0; si < spec.schemes.size(); ++si)
      for (std::size_t qi = 0; qi < spec.rates.size(); ++qi)
        for (std::size_t ri = 0; ri < n_ratios; ++ri) ratio_index_of_point[static_cast<std::size_t>(id++)] = ri;
  }

  // Resume: trust previously logged rows for this exact spec hash verbatim.
  const std::string progress_path = spec.out_csv.empty() ? "" : spec.out_csv + ".progress.jsonl";
  std::vector<bool> done(static_cast<std::size_t>(n_points), false);
  if (!progress_path.empty()) {
    std::ifstream in(progress_path);
    std::string line;
    while (in && std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        json entry = json::parse(line);
        if (entry.value("spec_hash", "") != hash_str) continue;
        const std::int64_t pid = entry.value("point", static_cast<std::int64_t>(-1));
        if (pid < 0 || pid >= n_points) continue;
        SweepPoint& p = result.points[static_cast<std::size_t>(pid)];
        p.csv_row = entry.value("csv", "");
        p.point_json = entry.value("data", json::object());
        restore_point_from_json(p);
        done[static_cast<std::size_t>(pid)] = true;
      } catch (const json::exception&) {
        // Skip lines truncated by an interrupted run.
      }
    }
  }

  std::vector<std::int64_t> pending;
  for (std::int64_t id = 0; id < n_points; ++id)
    if (!done[static_cast<std::size_t>(id)]) pending.push_back(id);

  std::ofstream progress;
  if (!progress_path.empty() && !pending.empty()) {
    progress.open(progress_path, std::ios::app);
    if (!progress) throw std::runtime_error("sweep: cannot open progress log " + progress_path);
  }

  auto compute_point = [&](std::int64_t pid) {
    SweepPoint& p = result.points[static_cast<std::size_t>(pid)];
    const std::size_t ri = ratio_index_of_point[static_cast<std::size_t>(pid)];
    try {
      const FaultModel fm{p.p_off, p.p_on};
      EvalOptions opts;
      opts.trials = spec.trials;
      opts.seed = p.point_seed;
      opts.fixed_device = spec.fixed_device;
      opts.include_padding = spec.include_padding;
      opts.eval_subset = spec.eval_subset;
      opts.tile_rows = spec.tile_rows;
      opts.tile_cols = spec.tile_cols;
      p.stats = evaluate_with_faults(prepared[static_cast<std::size_t>(model_of_ratio[ri])], eval_data,
                                     p.scheme, fm, opts);
      p.expectation_e_prime = mismatch_expectation(p.p_off, p.p_on, p.prune_ratio_measured);
      p.failed = false;
    } catch (const std::exception& e) {
      p.failed = true;
      p.error = e.what();
      p.stats = PointStats{};
      p.stats.acc_mean = p.stats.acc_std = p.stats.acc_min = p.stats.acc_max = kNan;
      p.stats.mismatch_cell_mean = p.stats.mismatch_weight_mean = kNan;
      p.expectation_e_prime = kNan;
    }
    p.csv_row = make_csv_row(p, spec.trials);
    p.point_json = make_point_json(p, p.rate, spec.trials);
  };

  std::mutex mu;
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= pending.size()) break;
      const std::int64_t pid = pending[i];
      compute_point(pid);
      std::lock_guard<std::mutex> lock(mu);
      if (progress.is_open()) {
        json entry;
        entry["point"] = pid;
        entry["spec_hash"] = hash_str;
        entry["csv"] = result.points[static_cast<std::size_t>(pid)].csv_row;
        entry["data"] = result.points[static_cast<std::size_t>(pid)].point_json;
        progress << entry.dump() << "\n";
        progress.flush();
      }
    }
  };
  const int jobs = std::max(1, spec.jobs);
  if (jobs == 1 || pending.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    const int n_threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(jobs), pending.size()));
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  result.csv_text = kSweepCsvHeader;
  result.csv_text += "\n";
  for (const auto& p : result.points) {
    result.csv_text += p.csv_row;
    result.csv_text += "\n";
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  json report;
  report["config"] = spec_to_json(spec);
  report["spec_hash"] = hash_str;
  json pts = json::array();
  for (const auto& p : result.points) pts.push_back(p.point_json);
  report["points"] = pts;
  report["environment"] = json{{"tool", "rxsim"}, {"compiler", __VERSION__}, {"jobs", jobs}};
  report["wall_seconds"] = wall;  // timing lives only in the JSON report
  result.report = report;

  if (!spec.out_csv.empty()) {
    std::ofstream out(spec.out_csv, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("sweep: cannot open " + spec.out_csv + " for writing");
    out << result.csv_text;
    if (!out) throw std::runtime_error("sweep: write failed for " + spec.out_csv);
  }
  if (!spec.out_json.empty()) {
    std::ofstream out(spec.out_json, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("sweep: cannot open " + spec.out_json + " for writing");
    out << report.dump(2) << "\n";
    if (!out) throw std::runtime_error("sweep: write failed for " + spec.out_json);
  }
  return result;
}

std::vector<ExpectationRow> verify_expectation(std::int64_t cells, const std::vector<double>& rates,
                                               double on_off_ratio, const std::vector<double>& ratios,
                                               int trials, std::uint64_t seed) {
  if (cells < 1) throw std::invalid_argument("verify_expectation: cells must be >= 1");
  if (trials < 1) throw std::invalid_argument("verify_expectation: trials must be >= 1");
  if (rates.empty() || ratios.empty())
    throw std::invalid_argument("verify_expectation: need at least one rate and one prune ratio");
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("verify_expectation: prune ratios must lie in [0, 1]");

  std::vector<ExpectationRow> rows;
  for (std::size_t qi = 0; qi < rates.size(); ++qi) {
    const FaultModel fm = FaultModel::from_total_rate(rates[qi], on_off_ratio);
    for (std::size_t pi = 0; pi < ratios.size(); ++pi) {
      const double rp = ratios[pi];
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(qi), static_cast<std::uint64_t>(pi)}));
      // Programmed conductances: pruned cells sit at 0, live cells away from
      // both stuck values so any fault on them counts as a disturbance.
      const std::int64_t pruned = static_cast<std::int64_t>(rp * static_cast<double>(cells));
      std::vector<double> g(static_cast<std::size_t>(cells));
      for (std::int64_t c = 0; c < cells; ++c)
        g[static_cast<std::size_t>(c)] = c < pruned ? 0.0 : rng.uniform(0.1, 0.9);
      std::int64_t mismatches = 0;
      for (int t = 0; t < trials; ++t) {
        for (std::int64_t c = 0; c < cells; ++c) {
          const double u = rng.uniform();
          const double programmed = g[static_cast<std::size_t>(c)];
          double faulted = programmed;
          if (u < fm.p_off)
            faulted = 0.0;
          else if (u < fm.p_off + fm.p_on)
            faulted = 1.0;
          if (faulted != programmed) ++mismatches;
        }
      }
      ExpectationRow row;
      row.rate = rates[qi];
      row.p_off = fm.p_off;
      row.p_on = fm.p_on;
      row.prune_ratio = rp;
      row.e_prime = mismatch_expectation(fm.p_off, fm.p_on, rp);
      row.empirical = static_cast<double>(mismatches) / (static_cast<double>(cells) * trials);
      const double se = std::sqrt(row.e_prime * (1.0 - row.e_prime) /
                                  (static_cast<double>(cells) * trials));
      if (se > 0.0)
        row.z = (row.empirical - row.e_prime) / se;
      else
        row.z = (row.empirical == row.e_prime) ? 0.0 : std::numeric_limits<double>::infinity();
      row.cells = cells;
      row.trials = trials;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace rxsim
