#include "rxsim/cli.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rxsim/dataset.hpp"
#include "rxsim/harness.hpp"
#include "rxsim/model_io.hpp"
#include "rxsim/nn.hpp"
#include "rxsim/pruning.hpp"
#include "rxsim/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

namespace rxsim {
namespace {

using nlohmann::json;

// Usage-class failures (bad values, missing inputs, invalid config) exit 2;
// anything thrown by the pipeline itself exits 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kFormatVersion = 1;

std::vector<double> parse_value_list_impl(const std::string& text) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string tok =
        text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    pos = comma == std::string::npos ? text.size() + 1 : comma + 1;
    if (tok.empty()) {
      if (comma == std::string::npos && values.empty() && text.empty()) break;
      throw UsageError("empty entry in value list \"" + text + "\"");
    }
    auto to_double = [&](const std::string& s) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        throw UsageError("not a number: \"" + s + "\"");
      }
      if (used != s.size()) throw UsageError("not a number: \"" + s + "\"");
      return v;
    };
    const std::size_t c1 = tok.find(':');
    if (c1 == std::string::npos) {
      values.push_back(to_double(tok));
    } else {
      const std::size_t c2 = tok.find(':', c1 + 1);
      if (c2 == std::string::npos)
        throw UsageError("range must be start:stop:step, got \"" + tok + "\"");
      const double start = to_double(tok.substr(0, c1));
      const double stop = to_double(tok.substr(c1 + 1, c2 - c1 - 1));
      const double step = to_double(tok.substr(c2 + 1));
      if (!(step > 0.0)) throw UsageError("range step must be positive in \"" + tok + "\"");
      if (stop + step * 1e-9 < start) throw UsageError("range stop below start in \"" + tok + "\"");
      // Inclusive endpoints, tolerant of float accumulation.
      for (int i = 0;; ++i) {
        const double v = start + step * i;
        if (v > stop + step * 1e-9) break;
        values.push_back(v);
      }
    }
  }
  return values;
}

std::string join_path(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

// Explicit flag wins; otherwise fall back to the conventional name in
// --data-dir. Empty when neither is given.
std::string resolve_data_path(const std::string& explicit_path, const std::string& data_dir,
                              const char* default_name) {
  if (!explicit_path.empty()) return explicit_path;
  if (!data_dir.empty()) return join_path(data_dir, default_name);
  return "";
}

void require_input_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing " + what);
  if (!std::filesystem::exists(path)) throw UsageError(what + " not found: " + path);
}

FaultModel resolve_fault(double rate, double p_off, double p_on, double on_off_ratio) {
  if (p_off >= 0.0 || p_on >= 0.0) {
    if (p_off < 0.0 || p_on < 0.0)
      throw UsageError("--p-off and --p-on must be given together");
    if (p_off + p_on > 1.0) throw UsageError("--p-off + --p-on must not exceed 1");
    return FaultModel{p_off, p_on};
  }
  return FaultModel::from_total_rate(rate, on_off_ratio);
}

void emit_provenance(std::ostream& out, const char* command, const json& config,
                     const std::uint64_t* seed) {
  json block;
  block["command"] = command;
  block["format_version"] = kFormatVersion;
  block["config"] = config;
  if (seed != nullptr) block["seed"] = *seed;
  out << block.dump(2) << "\n";
}

void write_text_file(const std::string& path, const std::string& text, const char* what) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(std::string(what) + ": cannot open " + path + " for writing");
  f << text;
  if (!f) throw std::runtime_error(std::string(what) + ": write failed for " + path);
}

// ---- per-subcommand argument bundles (defaults double as documentation) ----

struct TrainArgs {
  std::string arch = "mlp";
  std::string data_dir;
  std::string train_images, train_labels, test_images, test_labels;
  int epochs = 5;
  float lr = 0.1f;
  float momentum = 0.9f;
  int batch_size = 128;
  std::uint64_t seed = 7;
  std::string out;
};

json train_config_json(const TrainArgs& a) {
  return json{{"arch", a.arch},
              {"data_dir", a.data_dir},
              {"train_images", a.train_images},
              {"train_labels", a.train_labels},
              {"test_images", a.test_images},
              {"test_labels", a.test_labels},
              {"epochs", a.epochs},
              {"lr", a.lr},
              {"momentum", a.momentum},
              {"batch_size", a.batch_size},
              {"seed", a.seed},
              {"out", a.out}};
}

void apply_train_config(TrainArgs& a, const json& j) {
  a.arch = j.value("arch", a.arch);
  a.data_dir = j.value("data_dir", a.data_dir);
  a.train_images = j.value("train_images", a.train_images);
  a.train_labels = j.value("train_labels", a.train_labels);
  a.test_images = j.value("test_images", a.test_images);
  a.test_labels = j.value("test_labels", a.test_labels);
  a.epochs = j.value("epochs", a.epochs);
  a.lr = j.value("lr", a.lr);
  a.momentum = j.value("momentum", a.momentum);
  a.batch_size = j.value("batch_size", a.batch_size);
  a.seed = j.value("seed", a.seed);
  a.out = j.value("out", a.out);
}

struct PruneArgs {
  std::string model;
  std::string out;
  double ratio = -1.0;
  int ft_epochs = 0;
  float ft_lr = 0.02f;
  float ft_momentum = 0.9f;
  int ft_batch_size = 128;
  std::string data_dir;
  std::string train_images, train_labels, test_images, test_labels;
  std::uint64_t seed = 1;
};

json prune_config_json(const PruneArgs& a) {
  return json{{"model", a.model},
              {"out", a.out},
              {"ratio", a.ratio},
              {"ft_epochs", a.ft_epochs},
              {"ft_lr", a.ft_lr},
              {"ft_momentum", a.ft_momentum},
              {"ft_batch_size", a.ft_batch_size},
              {"data_dir", a.data_dir},
              {"train_images", a.train_images},
              {"train_labels", a.train_labels},
              {"test_images", a.test_images},
              {"test_labels", a.test_labels},
              {"seed", a.seed}};
}

void apply_prune_config(PruneArgs& a, const json& j) {
  a.model = j.value("model", a.model);
  a.out = j.value("out", a.out);
  a.ratio = j.value("ratio", a.ratio);
  a.ft_epochs = j.value("ft_epochs", a.ft_epochs);
  a.ft_lr = j.value("ft_lr", a.ft_lr);
  a.ft_momentum = j.value("ft_momentum", a.ft_momentum);
  a.ft_batch_size = j.value("ft_batch_size", a.ft_batch_size);
  a.data_dir = j.value("data_dir", a.data_dir);
  a.train_images = j.value("train_images", a.train_images);
  a.train_labels = j.value("train_labels", a.train_labels);
  a.test_images = j.value("test_images", a.test_images);
  a.test_labels = j.value("test_labels", a.test_labels);
  a.seed = j.value("seed", a.seed);
}

struct SearchArgs {
  std::string model;
  std::string out = "best.rfsm";
  std::string trace_out; // default: <out>.trace.jsonl
  std::string data_dir;
  std::string images, labels;
  std::string ratios = "0.1:0.9:0.1";
  double th = 0.5; // accuracy points; the search itself works in fractions
  int trials = 100;
  std::string scheme = "differential";
  double fault_rate = 0.0;
  double p_off = -1.0;
  double p_on = -1.0;
  double on_off_ratio = 5.2;
  std::int64_t eval_subset = 0;
  std::uint64_t seed = 1;
};

json search_config_json(const SearchArgs& a) {
  return json{{"model", a.model},
              {"out", a.out},
              {"trace_out", a.trace_out},
              {"data_dir", a.data_dir},
              {"images", a.images},
              {"labels", a.labels},
              {"ratios", a.ratios},
              {"th", a.th},
              {"trials", a.trials},
              {"scheme", a.scheme},
              {"fault_rate", a.fault_rate},
              {"p_off", a.p_off},
              {"p_on", a.p_on},
              {"on_off_ratio", a.on_off_ratio},
              {"eval_subset", a.eval_subset},
              {"seed", a.seed}};
}

void apply_search_config(SearchArgs& a, const json& j) {
  a.model = j.value("model", a.model);
  a.out = j.value("out", a.out);
  a.trace_out = j.value("trace_out", a.trace_out);
  a.data_dir = j.value("data_dir", a.data_dir);
  a.images = j.value("images", a.images);
  a.labels = j.value("labels", a.labels);
  a.ratios = j.value("ratios", a.ratios);
  a.th = j.value("th", a.th);
  a.trials = j.value("trials", a.trials);
  a.scheme = j.value("scheme", a.scheme);
  a.fault_rate = j.value("fault_rate", a.fault_rate);
  a.p_off = j.value("p_off", a.p_off);
  a.p_on = j.value("p_on", a.p_on);
  a.on_off_ratio = j.value("on_off_ratio", a.on_off_ratio);
  a.eval_subset = j.value("eval_subset", a.eval_subset);
  a.seed = j.value("seed", a.seed);
}

struct InjectArgs {
  std::string model;
  std::string data_dir;
  std::string images, labels;
  std::string scheme = "two-column";
  double fault_rate = 0.0;
  double p_off = -1.0;
  double p_on = -1.0;
  double on_off_ratio = 5.2;
  int trials = 100;
  std::uint64_t seed = 1;
  bool fixed_device = false;
  bool include_padding = false;
  std::int64_t eval_subset = 0;
  int tile_rows = 128;
  int tile_cols = 128;
  std::string out;
};

json inject_config_json(const InjectArgs& a) {
  return json{{"model", a.model},
              {"data_dir", a.data_dir},
              {"images", a.images},
              {"labels", a.labels},
              {"scheme", a.scheme},
              {"fault_rate", a.fault_rate},
              {"p_off", a.p_off},
              {"p_on", a.p_on},
              {"on_off_ratio", a.on_off_ratio},
              {"trials", a.trials},
              {"seed", a.seed},
              {"fixed_device", a.fixed_device},
              {"include_padding", a.include_padding},
              {"eval_subset", a.eval_subset},
              {"tile_rows", a.tile_rows},
              {"tile_cols", a.tile_cols},
              {"out", a.out}};
}

void apply_inject_config(InjectArgs& a, const json& j) {
  a.model = j.value("model", a.model);
  a.data_dir = j.value("data_dir", a.data_dir);
  a.images = j.value("images", a.images);
  a.labels = j.value("labels", a.labels);
  a.scheme = j.value("scheme", a.scheme);
  a.fault_rate = j.value("fault_rate", a.fault_rate);
  a.p_off = j.value("p_off", a.p_off);
  a.p_on = j.value("p_on", a.p_on);
  a.on_off_ratio = j.value("on_off_ratio", a.on_off_ratio);
  a.trials = j.value("trials", a.trials);
  a.seed = j.value("seed", a.seed);
  a.fixed_device = j.value("fixed_device", a.fixed_device);
  a.include_padding = j.value("include_padding", a.include_padding);
  a.eval_subset = j.value("eval_subset", a.eval_subset);
  a.tile_rows = j.value("tile_rows", a.tile_rows);
  a.tile_cols = j.value("tile_cols", a.tile_cols);
  a.out = j.value("out", a.out);
}

struct SweepArgs {
  ExperimentSpec spec;
  std::string data_dir;
  std::string schemes_text;
  std::string rates_text;
  std::string ratios_text;
  SweepArgs() { spec.seed = 1; }
};

struct VerifyArgs {
  std::int64_t cells = 1000000;
  std::string rates = "0.01,0.062";
  std::string ratios = "0,0.25,0.5,0.75,1";
  double on_off_ratio = 5.2;
  int trials = 1;
  std::uint64_t seed = 1;
  std::string out;
};

json verify_config_json(const VerifyArgs& a) {
  return json{{"cells", a.cells},   {"rates", a.rates},
              {"ratios", a.ratios}, {"on_off_ratio", a.on_off_ratio},
              {"trials", a.trials}, {"seed", a.seed},
              {"out", a.out}};
}

void apply_verify_config(VerifyArgs& a, const json& j) {
  a.cells = j.value("cells", a.cells);
  a.rates = j.value("rates", a.rates);
  a.ratios = j.value("ratios", a.ratios);
  a.on_off_ratio = j.value("on_off_ratio", a.on_off_ratio);
  a.trials = j.value("trials", a.trials);
  a.seed = j.value("seed", a.seed);
  a.out = j.value("out", a.out);
}

struct InspectArgs {
  std::string model;
};

struct CliState {
  TrainArgs train;
  PruneArgs prune;
  SearchArgs search;
  InjectArgs inject;
  SweepArgs sweep_args;
  VerifyArgs verify;
  InspectArgs inspect;
  std::string config_path; // documented; consumed by the pre-pass
};

// ---- handlers ----

Dataset load_idx_pair(const std::string& images, const std::string& labels, const char* what) {
  require_input_file(images, std::string(what) + " images (--data-dir or explicit path)");
  require_input_file(labels, std::string(what) + " labels (--data-dir or explicit path)");
  return load_idx_dataset(images, labels);
}

void run_train(const TrainArgs& a, std::ostream& out) {
  if (a.out.empty()) throw UsageError("missing --out model path");
  const std::string tri = resolve_data_path(a.train_images, a.data_dir, "train-images.idx");
  const std::string trl = resolve_data_path(a.train_labels, a.data_dir, "train-labels.idx");
  const std::string tei = resolve_data_path(a.test_images, a.data_dir, "test-images.idx");
  const std::string tel = resolve_data_path(a.test_labels, a.data_dir, "test-labels.idx");
  emit_provenance(out, "train", train_config_json(a), &a.seed);

  const Dataset train_ds = load_idx_pair(tri, trl, "training");
  Model model = a.arch == "cnn" ? make_reference_cnn(derive_seed(a.seed, {1}))
                                : make_reference_mlp(derive_seed(a.seed, {1}));
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.momentum = a.momentum;
  cfg.batch_size = a.batch_size;
  cfg.seed = derive_seed(a.seed, {2});
  model = train_sgd(model, train_ds, cfg);

  json results;
  results["train_accuracy"] = evaluate_accuracy(model, train_ds);
  if (!tei.empty() && !tel.empty() && std::filesystem::exists(tei) && std::filesystem::exists(tel)) {
    const Dataset test_ds = load_idx_dataset(tei, tel);
    results["test_accuracy"] = evaluate_accuracy(model, test_ds);
  }
  json meta;
  meta["config"] = train_config_json(a);
  meta["results"] = results;
  save_model(model, a.out, meta);
  results["model"] = a.out;
  out << results.dump(2) << "\n";
}

void run_prune(const PruneArgs& a, std::ostream& out) {
  require_input_file(a.model, "--model");
  if (a.out.empty()) throw UsageError("missing --out model path");
  if (!(a.ratio >= 0.0 && a.ratio <= 1.0)) throw UsageError("--ratio must lie in [0, 1]");
  emit_provenance(out, "prune", prune_config_json(a), &a.seed);

  Model model = load_model(a.model);
  const double before = prune_ratio(model);
  const BlockPartition partition = partition_blocks(model);
  for (const auto& block : partition.blocks) model = magnitude_prune(model, block, a.ratio);
  if (a.ft_epochs > 0) {
    const std::string tri = resolve_data_path(a.train_images, a.data_dir, "train-images.idx");
    const std::string trl = resolve_data_path(a.train_labels, a.data_dir, "train-labels.idx");
    const Dataset train_ds = load_idx_pair(tri, trl, "fine-tune training");
    TrainConfig cfg;
    cfg.epochs = a.ft_epochs;
    cfg.lr = a.ft_lr;
    cfg.momentum = a.ft_momentum;
    cfg.batch_size = a.ft_batch_size;
    cfg.seed = derive_seed(a.seed, {1});
    cfg.respect_mask = true;
    model = train_sgd(model, train_ds, cfg);
  }

  json results;
  results["prune_ratio_before"] = before;
  results["prune_ratio_after"] = prune_ratio(model);
  const std::string tei = resolve_data_path(a.test_images, a.data_dir, "test-images.idx");
  const std::string tel = resolve_data_path(a.test_labels, a.data_dir, "test-labels.idx");
  if (!tei.empty() && !tel.empty() && std::filesystem::exists(tei) && std::filesystem::exists(tel)) {
    const Dataset test_ds = load_idx_dataset(tei, tel);
    results["test_accuracy"] = evaluate_accuracy(model, test_ds);
  }
  json meta;
  meta["config"] = prune_config_json(a);
  meta["results"] = results;
  save_model(model, a.out, meta);
  results["model"] = a.out;
  out << results.dump(2) << "\n";
}

void run_search(const SearchArgs& a, std::ostream& out) {
  require_input_file(a.model, "--model");
  const std::string imgs = resolve_data_path(a.images, a.data_dir, "test-images.idx");
  const std::string labs = resolve_data_path(a.labels, a.data_dir, "test-labels.idx");
  emit_provenance(out, "search", search_config_json(a), &a.seed);

  Model model = load_model(a.model);
  const Dataset eval_ds = load_idx_pair(imgs, labs, "evaluation");

  PruneSearchConfig cfg;
  try {
    cfg.ratios = parse_value_list(a.ratios);
    cfg.scheme = parse_scheme(a.scheme);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  cfg.th = a.th / 100.0; // flag is in accuracy points
  cfg.trials = a.trials;
  cfg.fault = resolve_fault(a.fault_rate, a.p_off, a.p_on, a.on_off_ratio);
  cfg.seed = a.seed;

  auto evaluator = [&](const Model& m, int round_index) {
    EvalOptions opts;
    opts.trials = cfg.trials;
    opts.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(round_index)});
    opts.eval_subset = a.eval_subset;
    const PointStats st = evaluate_with_faults(m, eval_ds, cfg.scheme, cfg.fault, opts);
    return std::make_pair(st.acc_mean, st.acc_std);
  };

  const BlockPartition partition = partition_blocks(model);
  const SearchResult res = hierarchical_progressive_prune(model, partition, cfg, evaluator);

  const std::string trace_path = a.trace_out.empty() ? a.out + ".trace.jsonl" : a.trace_out;
  std::string trace_text;
  {
    json head;
    head["command"] = "search";
    head["format_version"] = kFormatVersion;
    head["config"] = search_config_json(a);
    trace_text += head.dump() + "\n";
    json initial;
    initial["round"] = 0;
    initial["initial"] = true;
    initial["acc_mean"] = res.initial_acc_mean;
    initial["acc_std"] = res.initial_acc_std;
    trace_text += initial.dump() + "\n";
    int round = 1;
    for (const auto& r : res.trace) {
      json rec;
      rec["round"] = round++;
      rec["ratio"] = r.ratio;
      rec["active_blocks"] = r.active_blocks;
      rec["acc_mean"] = r.acc_mean;
      rec["acc_std"] = r.acc_std;
      rec["accepted"] = r.accepted;
      trace_text += rec.dump() + "\n";
    }
  }
  write_text_file(trace_path, trace_text, "search");

  json meta;
  meta["config"] = search_config_json(a);
  meta["best_acc"] = res.best_acc;
  save_model(res.best, a.out, meta);

  json results;
  results["initial_acc_mean"] = res.initial_acc_mean;
  results["best_acc"] = res.best_acc;
  results["best_prune_ratio"] = prune_ratio(res.best);
  results["rounds"] = res.trace.size();
  results["model"] = a.out;
  results["trace"] = trace_path;
  out << results.dump(2) << "\n";
}

void run_inject(const InjectArgs& a, std::ostream& out) {
  require_input_file(a.model, "--model");
  const std::string imgs = resolve_data_path(a.images, a.data_dir, "test-images.idx");
  const std::string labs = resolve_data_path(a.labels, a.data_dir, "test-labels.idx");
  emit_provenance(out, "inject", inject_config_json(a), &a.seed);

  const Model model = load_model(a.model);
  const Dataset eval_ds = load_idx_pair(imgs, labs, "evaluation");
  MappingScheme scheme;
  try {
    scheme = parse_scheme(a.scheme);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const FaultModel fm = resolve_fault(a.fault_rate, a.p_off, a.p_on, a.on_off_ratio);

  EvalOptions opts;
  opts.trials = a.trials;
  opts.seed = a.seed;
  opts.fixed_device = a.fixed_device;
  opts.include_padding = a.include_padding;
  opts.eval_subset = a.eval_subset;
  opts.tile_rows = a.tile_rows;
  opts.tile_cols = a.tile_cols;
  const PointStats st = evaluate_with_faults(model, eval_ds, scheme, fm, opts);
  const double measured = prune_ratio(model);

  json results;
  results["p_off"] = fm.p_off;
  results["p_on"] = fm.p_on;
  results["prune_ratio"] = measured;
  results["acc_mean"] = st.acc_mean;
  results["acc_std"] = st.acc_std;
  results["acc_min"] = st.acc_min;
  results["acc_max"] = st.acc_max;
  results["mismatch_cell"] = st.mismatch_cell_mean;
  results["mismatch_weight"] = st.mismatch_weight_mean;
  results["expectation_E_prime"] = mismatch_expectation(fm.p_off, fm.p_on, measured);
  results["trial_acc"] = st.trial_acc;
  json doc;
  doc["command"] = "inject";
  doc["format_version"] = kFormatVersion;
  doc["config"] = inject_config_json(a);
  doc["seed"] = a.seed;
  doc["results"] = results;
  if (!a.out.empty()) write_text_file(a.out, doc.dump(2) + "\n", "inject");
  out << results.dump(2) << "\n";
}

void run_sweep(const SweepArgs& a, std::ostream& out) {
  ExperimentSpec spec = a.spec;
  try {
    if (!a.schemes_text.empty()) spec.schemes = parse_scheme_list(a.schemes_text);
    if (!a.rates_text.empty()) spec.rates = parse_value_list(a.rates_text);
    if (!a.ratios_text.empty()) spec.prune_ratios = parse_value_list(a.ratios_text);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  spec.images_path = resolve_data_path(spec.images_path, a.data_dir, "test-images.idx");
  spec.labels_path = resolve_data_path(spec.labels_path, a.data_dir, "test-labels.idx");
  if (spec.ft_epochs > 0) {
    spec.train_images_path = resolve_data_path(spec.train_images_path, a.data_dir, "train-images.idx");
    spec.train_labels_path = resolve_data_path(spec.train_labels_path, a.data_dir, "train-labels.idx");
  }
  if (spec.out_csv.empty()) throw UsageError("missing --out CSV path");
  if (spec.out_json.empty()) spec.out_json = spec.out_csv + ".json";
  if (spec.rates.empty()) throw UsageError("missing --rates");
  require_input_file(spec.model_path, "--model");
  emit_provenance(out, "sweep", spec_to_json(spec), &spec.seed);

  const Model model = load_model(spec.model_path);
  const Dataset eval_ds = load_idx_pair(spec.images_path, spec.labels_path, "evaluation");
  Dataset train_ds;
  const Dataset* train_ptr = nullptr;
  if (spec.ft_epochs > 0) {
    bool needs_ft = false;
    for (double r : spec.prune_ratios) needs_ft = needs_ft || r > 0.0;
    if (needs_ft) {
      train_ds = load_idx_pair(spec.train_images_path, spec.train_labels_path, "fine-tune training");
      train_ptr = &train_ds;
    }
  }
  const SweepResult res = sweep(spec, model, eval_ds, train_ptr);

  int failures = 0;
  for (const auto& p : res.points) failures += p.failed ? 1 : 0;
  json results;
  results["points"] = res.points.size();
  results["failed_points"] = failures;
  results["csv"] = spec.out_csv;
  results["json"] = spec.out_json;
  results["wall_seconds"] = res.report.value("wall_seconds", 0.0);
  out << results.dump(2) << "\n";
}

void run_verify(const VerifyArgs& a, std::ostream& out) {
  std::vector<double> rates, ratios;
  try {
    rates = parse_value_list(a.rates);
    ratios = parse_value_list(a.ratios);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  emit_provenance(out, "verify-expectation", verify_config_json(a), &a.seed);
  const auto rows = verify_expectation(a.cells, rates, a.on_off_ratio, ratios, a.trials, a.seed);

  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %-12s %-12s %-12s %-12s %-12s %-9s %-9s %s",
                "rate", "p_off", "p_on", "prune_ratio", "E_prime", "empirical", "z", "cells",
                "trials");
  out << line << "\n";
  json jrows = json::array();
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-10s %-12s %-12s %-12s %-12s %-12s %-9.3f %-9lld %d",
                  format_double(r.rate).c_str(), format_double(r.p_off).c_str(),
                  format_double(r.p_on).c_str(), format_double(r.prune_ratio).c_str(),
                  format_double(r.e_prime).c_str(), format_double(r.empirical).c_str(), r.z,
                  static_cast<long long>(r.cells), r.trials);
    out << line << "\n";
    jrows.push_back(json{{"rate", r.rate},
                         {"p_off", r.p_off},
                         {"p_on", r.p_on},
                         {"prune_ratio", r.prune_ratio},
                         {"E_prime", r.e_prime},
                         {"empirical", r.empirical},
                         {"z", r.z},
                         {"cells", r.cells},
                         {"trials", r.trials}});
  }
  if (!a.out.empty()) {
    json doc;
    doc["command"] = "verify-expectation";
    doc["format_version"] = kFormatVersion;
    doc["config"] = verify_config_json(a);
    doc["seed"] = a.seed;
    doc["rows"] = jrows;
    write_text_file(a.out, doc.dump(2) + "\n", "verify-expectation");
  }
}

void run_inspect(const InspectArgs& a, std::ostream& out) {
  require_input_file(a.model, "--model");
  const json header = read_model_header(a.model);
  const Model model = load_model(a.model);
  json doc;
  doc["header"] = header;
  json layers = json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    json lj;
    lj["index"] = i;
    lj["kind"] = layer_kind_name(l.kind);
    if (l.has_weights()) {
      lj["weights_shape"] = l.weights.shape;
      lj["params"] = l.weights.numel() + l.bias.numel();
      std::int64_t zeros = 0;
      for (float w : l.weights.data) zeros += w == 0.0f ? 1 : 0;
      lj["zero_fraction"] = static_cast<double>(zeros) / static_cast<double>(l.weights.numel());
      if (!l.prune_mask.empty()) {
        std::int64_t masked = 0;
        for (auto m : l.prune_mask) masked += m == 0 ? 1 : 0;
        lj["mask_zero_fraction"] =
            static_cast<double>(masked) / static_cast<double>(l.prune_mask.size());
      }
    }
    layers.push_back(lj);
  }
  doc["layers"] = layers;
  doc["prune_ratio"] = prune_ratio(model);
  doc["weight_params"] = model.weight_count();
  out << doc.dump(2) << "\n";
}

// ---- app wiring ----

void add_common_config_flag(CLI::App* sub, CliState& st) {
  sub->add_option("--config", st.config_path,
                  "JSON config file (same schema as the provenance echo); flags override");
}

void build_app(CLI::App& app, CliState& st, std::ostream& out) {
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train a reference classifier and save it");
  train->add_option("--arch", st.train.arch, "Architecture: mlp or cnn")
      ->check(CLI::IsMember({"mlp", "cnn"}))
      ->capture_default_str();
  train->add_option("--data-dir", st.train.data_dir,
                    "Directory holding train-images.idx / train-labels.idx / test-images.idx / test-labels.idx");
  train->add_option("--train-images", st.train.train_images, "Training images (IDX)");
  train->add_option("--train-labels", st.train.train_labels, "Training labels (IDX)");
  train->add_option("--test-images", st.train.test_images, "Test images (IDX, optional)");
  train->add_option("--test-labels", st.train.test_labels, "Test labels (IDX, optional)");
  train->add_option("--epochs", st.train.epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", st.train.lr, "Learning rate")->capture_default_str();
  train->add_option("--momentum", st.train.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--batch-size", st.train.batch_size, "Mini-batch size")->capture_default_str();
  train->add_option("--seed", st.train.seed, "Base seed (init and shuffle derive from it)")
      ->capture_default_str();
  train->add_option("--out", st.train.out, "Output model path");
  add_common_config_flag(train, st);
  train->callback([&st, &out]() { run_train(st.train, out); });

  auto* prune = app.add_subcommand("prune", "Magnitude-prune a model per block, optionally fine-tune");
  prune->add_option("--model", st.prune.model, "Input model path");
  prune->add_option("--out", st.prune.out, "Output model path");
  prune->add_option("--ratio", st.prune.ratio, "Prune ratio in [0,1], applied to every block");
  prune->add_option("--ft-epochs", st.prune.ft_epochs, "Masked fine-tune epochs (0 = off)")
      ->capture_default_str();
  prune->add_option("--ft-lr", st.prune.ft_lr, "Fine-tune learning rate")->capture_default_str();
  prune->add_option("--ft-momentum", st.prune.ft_momentum, "Fine-tune momentum")->capture_default_str();
  prune->add_option("--ft-batch-size", st.prune.ft_batch_size, "Fine-tune batch size")
      ->capture_default_str();
  prune->add_option("--data-dir", st.prune.data_dir, "Directory with conventionally named IDX files");
  prune->add_option("--train-images", st.prune.train_images, "Fine-tune images (IDX)");
  prune->add_option("--train-labels", st.prune.train_labels, "Fine-tune labels (IDX)");
  prune->add_option("--test-images", st.prune.test_images, "Test images for the summary (optional)");
  prune->add_option("--test-labels", st.prune.test_labels, "Test labels for the summary (optional)");
  prune->add_option("--seed", st.prune.seed, "Base seed for fine-tuning")->capture_default_str();
  add_common_config_flag(prune, st);
  prune->callback([&st, &out]() { run_prune(st.prune, out); });

  auto* search = app.add_subcommand(
      "search", "Progressive prune search maximizing fault-injected accuracy");
  search->add_option("--model", st.search.model, "Input model path");
  search->add_option("--out", st.search.out, "Best-model output path")->capture_default_str();
  search->add_option("--trace-out", st.search.trace_out,
                     "Trace log path (default: <out>.trace.jsonl)");
  search->add_option("--data-dir", st.search.data_dir, "Directory with conventionally named IDX files");
  search->add_option("--images", st.search.images, "Evaluation images (IDX)");
  search->add_option("--labels", st.search.labels, "Evaluation labels (IDX)");
  search->add_option("--ratios", st.search.ratios,
                     "Ascending candidate ratios: comma list and/or start:stop:step")
      ->capture_default_str();
  search->add_option("--th", st.search.th, "Acceptable accuracy drop, in accuracy points")
      ->capture_default_str();
  search->add_option("--trials", st.search.trials, "Fault trials per evaluation round")
      ->capture_default_str();
  search->add_option("--scheme", st.search.scheme, "Mapping scheme: two-column, offset, differential")
      ->capture_default_str();
  search->add_option("--fault-rate", st.search.fault_rate, "Total stuck-at rate, split by --on-off-ratio")
      ->capture_default_str();
  search->add_option("--p-off", st.search.p_off, "Explicit stuck-off probability (with --p-on)");
  search->add_option("--p-on", st.search.p_on, "Explicit stuck-on probability (with --p-off)");
  search->add_option("--on-off-ratio", st.search.on_off_ratio, "Stuck-on : stuck-off ratio")
      ->capture_default_str();
  search->add_option("--eval-subset", st.search.eval_subset,
                     "Evaluate on the first N samples only (0 = full set)")
      ->capture_default_str();
  search->add_option("--seed", st.search.seed, "Base seed")->capture_default_str();
  add_common_config_flag(search, st);
  search->callback([&st, &out]() { run_search(st.search, out); });

  auto* inject = app.add_subcommand("inject", "Fault-injected evaluation of one model/scheme/rate point");
  inject->add_option("--model", st.inject.model, "Input model path");
  inject->add_option("--data-dir", st.inject.data_dir, "Directory with conventionally named IDX files");
  inject->add_option("--images", st.inject.images, "Evaluation images (IDX)");
  inject->add_option("--labels", st.inject.labels, "Evaluation labels (IDX)");
  inject->add_option("--scheme", st.inject.scheme, "Mapping scheme: two-column, offset, differential")
      ->capture_default_str();
  inject->add_option("--fault-rate", st.inject.fault_rate, "Total stuck-at rate, split by --on-off-ratio")
      ->capture_default_str();
  inject->add_option("--p-off", st.inject.p_off, "Explicit stuck-off probability (with --p-on)");
  inject->add_option("--p-on", st.inject.p_on, "Explicit stuck-on probability (with --p-off)");
  inject->add_option("--on-off-ratio", st.inject.on_off_ratio, "Stuck-on : stuck-off ratio")
      ->capture_default_str();
  inject->add_option("--trials", st.inject.trials, "Independent fault-mask trials")->capture_default_str();
  inject->add_option("--seed", st.inject.seed, "Base seed")->capture_default_str();
  inject->add_flag("--fixed-device", st.inject.fixed_device, "Share one fault mask across all trials");
  inject->add_flag("--include-padding", st.inject.include_padding,
                   "Let faults land on unoccupied tile cells");
  inject->add_option("--eval-subset", st.inject.eval_subset,
                     "Evaluate on the first N samples only (0 = full set)")
      ->capture_default_str();
  inject->add_option("--tile-rows", st.inject.tile_rows, "Crossbar tile rows")->capture_default_str();
  inject->add_option("--tile-cols", st.inject.tile_cols, "Crossbar tile columns")->capture_default_str();
  inject->add_option("--out", st.inject.out, "Write full JSON report here (stats always print)");
  add_common_config_flag(inject, st);
  inject->callback([&st, &out]() { run_inject(st.inject, out); });

  auto* sweep_cmd = app.add_subcommand("sweep", "Scheme x rate x prune-ratio grid evaluation");
  sweep_cmd->add_option("--model", st.sweep_args.spec.model_path, "Input model path");
  sweep_cmd->add_option("--data-dir", st.sweep_args.data_dir,
                        "Directory with conventionally named IDX files");
  sweep_cmd->add_option("--images", st.sweep_args.spec.images_path, "Evaluation images (IDX)");
  sweep_cmd->add_option("--labels", st.sweep_args.spec.labels_path, "Evaluation labels (IDX)");
  sweep_cmd->add_option("--train-images", st.sweep_args.spec.train_images_path,
                        "Fine-tune images (needed when --ft-epochs > 0)");
  sweep_cmd->add_option("--train-labels", st.sweep_args.spec.train_labels_path,
                        "Fine-tune labels (needed when --ft-epochs > 0)");
  sweep_cmd->add_option("--scheme,--schemes", st.sweep_args.schemes_text,
                        "Comma list of mapping schemes (default: all three)");
  sweep_cmd->add_option("--rates", st.sweep_args.rates_text,
                        "Total stuck-at rates: comma list and/or start:stop:step");
  sweep_cmd->add_option("--ratios", st.sweep_args.ratios_text, "Prune ratios (default: 0)");
  sweep_cmd->add_option("--on-off-ratio", st.sweep_args.spec.on_off_ratio, "Stuck-on : stuck-off ratio")
      ->capture_default_str();
  sweep_cmd->add_option("--trials", st.sweep_args.spec.trials, "Fault trials per grid point")
      ->capture_default_str();
  sweep_cmd->add_option("--seed", st.sweep_args.spec.seed, "Base seed; per-point seeds derive from it")
      ->capture_default_str();
  sweep_cmd->add_option("--jobs", st.sweep_args.spec.jobs,
                        "Worker threads (results are independent of this)")
      ->capture_default_str();
  sweep_cmd->add_option("--out", st.sweep_args.spec.out_csv, "Output CSV path");
  sweep_cmd->add_option("--out-json", st.sweep_args.spec.out_json,
                        "Output JSON report path (default: <out>.json)");
  sweep_cmd->add_option("--ft-epochs", st.sweep_args.spec.ft_epochs,
                        "Masked fine-tune epochs per pruned model (0 = off)")
      ->capture_default_str();
  sweep_cmd->add_option("--ft-lr", st.sweep_args.spec.ft_lr, "Fine-tune learning rate")
      ->capture_default_str();
  sweep_cmd->add_option("--ft-momentum", st.sweep_args.spec.ft_momentum, "Fine-tune momentum")
      ->capture_default_str();
  sweep_cmd->add_option("--ft-batch-size", st.sweep_args.spec.ft_batch_size, "Fine-tune batch size")
      ->capture_default_str();
  sweep_cmd->add_option("--eval-subset", st.sweep_args.spec.eval_subset,
                        "Evaluate on the first N samples only (0 = full set)")
      ->capture_default_str();
  sweep_cmd->add_flag("--include-padding", st.sweep_args.spec.include_padding,
                      "Let faults land on unoccupied tile cells");
  sweep_cmd->add_flag("--fixed-device", st.sweep_args.spec.fixed_device,
                      "Share one fault mask across trials at each point");
  sweep_cmd->add_option("--tile-rows", st.sweep_args.spec.tile_rows, "Crossbar tile rows")
      ->capture_default_str();
  sweep_cmd->add_option("--tile-cols", st.sweep_args.spec.tile_cols, "Crossbar tile columns")
      ->capture_default_str();
  add_common_config_flag(sweep_cmd, st);
  sweep_cmd->callback([&st, &out]() { run_sweep(st.sweep_args, out); });

  auto* verify = app.add_subcommand("verify-expectation",
                                    "Monte-Carlo check of the pruned-cell mismatch expectation");
  verify->add_option("--cells", st.verify.cells, "Single-cell weights per point")->capture_default_str();
  verify->add_option("--rates,--rate", st.verify.rates,
                     "Total stuck-at rates: comma list and/or start:stop:step")
      ->capture_default_str();
  verify->add_option("--ratios,--ratio", st.verify.ratios, "Prune ratios in [0,1]")
      ->capture_default_str();
  verify->add_option("--on-off-ratio", st.verify.on_off_ratio, "Stuck-on : stuck-off ratio")
      ->capture_default_str();
  verify->add_option("--trials", st.verify.trials, "Fault trials per point")->capture_default_str();
  verify->add_option("--seed", st.verify.seed, "Base seed")->capture_default_str();
  verify->add_option("--out", st.verify.out, "Write full JSON report here (table always prints)");
  add_common_config_flag(verify, st);
  verify->callback([&st, &out]() { run_verify(st.verify, out); });

  auto* inspect = app.add_subcommand("inspect", "Print a model file's header and per-layer stats");
  inspect->add_option("--model", st.inspect.model, "Model path");
  inspect->callback([&st, &out]() { run_inspect(st.inspect, out); });
}

// Reads --config from raw args (before CLI11 parses) so its values become the
// defaults that explicit flags then override.
void preload_config(const std::vector<std::string>& args, CliState& st) {
  std::string sub;
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (sub.empty() && !a.empty() && a[0] != '-') sub = a;
    if (a == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      break;
    }
    if (a.rfind("--config=", 0) == 0) {
      path = a.substr(9);
      break;
    }
  }
  if (path.empty()) return;
  std::ifstream f(path);
  if (!f) throw UsageError("config file not found: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw UsageError("invalid config JSON in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config must be a JSON object: " + path);
  try {
    if (sub == "train")
      apply_train_config(st.train, j);
    else if (sub == "prune")
      apply_prune_config(st.prune, j);
    else if (sub == "search")
      apply_search_config(st.search, j);
    else if (sub == "inject")
      apply_inject_config(st.inject, j);
    else if (sub == "sweep")
      apply_spec_json(st.sweep_args.spec, j);
    else if (sub == "verify-expectation")
      apply_verify_config(st.verify, j);
  } catch (const json::exception& e) {
    throw UsageError("invalid config value in " + path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError("invalid config value in " + path + ": " + e.what());
  }
}

}  // namespace

std::vector<double> parse_value_list(const std::string& text) { return parse_value_list_impl(text); }

std::vector<MappingScheme> parse_scheme_list(const std::string& text) {
  std::vector<MappingScheme> schemes;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string tok =
        text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    pos = comma == std::string::npos ? text.size() + 1 : comma + 1;
    if (tok.empty()) throw UsageError("empty entry in scheme list \"" + text + "\"");
    try {
      schemes.push_back(parse_scheme(tok));
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  return schemes;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ReRAM crossbar fault-tolerance experiments", "rxsim"};
  CliState st;
  try {
    preload_config(args, st);
    build_app(app, st, out);
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

std::vector<std::string> cli_subcommand_names() {
  return {"train", "prune", "search", "inject", "sweep", "verify-expectation", "inspect"};
}

namespace {

// Builds a throwaway app for help/flag introspection.
struct IntrospectionApp {
  CLI::App app{"ReRAM crossbar fault-tolerance experiments", "rxsim"};
  CliState st;
  std::ostringstream sink;
  IntrospectionApp() { build_app(app, st, sink); }
};

}  // namespace

std::string cli_help_text(const std::string& subcommand) {
  IntrospectionApp ia;
  return ia.app.get_subcommand(subcommand)->help();
}

std::vector<std::string> cli_flag_names(const std::string& subcommand) {
  IntrospectionApp ia;
  CLI::App* sub = ia.app.get_subcommand(subcommand);
  std::vector<std::string> names;
  for (const CLI::Option* opt : sub->get_options())
    for (const auto& n : opt->get_lnames()) names.push_back("--" + n);
  return names;
}

}  // namespace rxsim
