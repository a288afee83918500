#pragma once
// Experiment harness: fault-injection evaluation of a model under a mapping
// scheme, grid sweeps with resumable progress and deterministic CSV output,
// and a Monte-Carlo check of the closed-form per-cell mismatch expectation.
#include <cstdint>
#include <string>
#include <vector>

#include "rxsim/dataset.hpp"
#include "rxsim/faults.hpp"
#include "rxsim/mapping.hpp"
#include "rxsim/nn.hpp"

#include <json.hpp>

namespace rxsim {

struct EvalOptions {
  int trials = 100;
  std::uint64_t seed = 0;
  bool fixed_device = false;    // one fault mask shared by all trials
  bool include_padding = false; // let faults land on unoccupied tile cells too
  std::int64_t eval_subset = 0; // 0 = full evaluation set
  int tile_rows = 128;
  int tile_cols = 128;
};

struct PointStats {
  double acc_mean = 0.0;
  double acc_std = 0.0; // sample std (ddof=1), 0 when trials == 1
  double acc_min = 0.0;
  double acc_max = 0.0;
  double mismatch_cell_mean = 0.0;   // disturbed fraction of programmed cells
  double mismatch_weight_mean = 0.0; // fraction of weights whose value changed
  std::vector<double> trial_acc;
};

// Maps every prunable layer once, then for each trial samples a fresh fault
// mask per layer, applies it, reconstructs effective weights, and evaluates
// accuracy on the dataset. A zero fault rate short-circuits to a single exact
// fault-free evaluation replicated across trials.
PointStats evaluate_with_faults(const Model& model, const Dataset& eval_data, MappingScheme scheme,
                                const FaultModel& fault, const EvalOptions& opts);

struct ExperimentSpec {
  std::string model_path;
  std::string images_path;        // evaluation images (IDX)
  std::string labels_path;        // evaluation labels (IDX)
  std::string train_images_path;  // optional, needed only when ft_epochs > 0
  std::string train_labels_path;
  std::vector<MappingScheme> schemes{MappingScheme::TwoColumn, MappingScheme::Offset,
                                     MappingScheme::Differential};
  std::vector<double> rates;            // total stuck-at rates
  double on_off_ratio = 5.2;            // stuck-on : stuck-off split
  std::vector<double> prune_ratios{0.0};
  int trials = 100;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out_csv;
  std::string out_json;
  int ft_epochs = 0; // masked fine-tune applied to each pruned model (ratio > 0)
  float ft_lr = 0.02f;
  float ft_momentum = 0.9f;
  int ft_batch_size = 128;
  std::int64_t eval_subset = 0;
  bool include_padding = false;
  bool fixed_device = false;
  int tile_rows = 128;
  int tile_cols = 128;
};

nlohmann::json spec_to_json(const ExperimentSpec& spec);
ExperimentSpec spec_from_json(const nlohmann::json& j);
// Assigns only the keys present in j, leaving other fields untouched (used to
// layer a config file under command-line overrides).
void apply_spec_json(ExperimentSpec& spec, const nlohmann::json& j);
// Hash over everything that influences results (excludes jobs and output
// paths); resume entries are honored only when this hash matches.
std::uint64_t spec_hash(const ExperimentSpec& spec);

struct SweepPoint {
  std::int64_t point_id = 0;
  MappingScheme scheme = MappingScheme::TwoColumn;
  double rate = 0.0;
  double p_off = 0.0;
  double p_on = 0.0;
  double prune_ratio_nominal = 0.0;
  double prune_ratio_measured = 0.0;
  std::uint64_t point_seed = 0;
  PointStats stats;
  double expectation_e_prime = 0.0;
  bool failed = false;
  std::string error;
  std::string csv_row;       // formatted once; reused verbatim on resume
  nlohmann::json point_json; // entry for the JSON report / progress log
};

struct SweepResult {
  std::vector<SweepPoint> points; // grid order: scheme x rate x prune ratio
  std::string csv_text;           // header + rows, byte-stable across jobs/resume
  nlohmann::json report;
};

// Runs the full scheme x rate x prune-ratio grid. Pruned variants (and their
// optional masked fine-tunes) are prepared once up front; points then run on
// `jobs` worker threads. Each finished point is appended to
// "<out_csv>.progress.jsonl" so an interrupted sweep resumes without
// recomputing. A point that throws is recorded with nan statistics and an
// error status; the sweep continues. train_data may be null when no
// fine-tuning is requested.
SweepResult sweep(const ExperimentSpec& spec, const Model& model, const Dataset& eval_data,
                  const Dataset* train_data = nullptr);

struct ExpectationRow {
  double rate = 0.0;
  double p_off = 0.0;
  double p_on = 0.0;
  double prune_ratio = 0.0;
  double e_prime = 0.0;   // closed form: p_off * (1 - prune_ratio) + p_on
  double empirical = 0.0; // Monte-Carlo disturbed-cell fraction
  double z = 0.0;         // (empirical - e_prime) / binomial standard error
  std::int64_t cells = 0;
  int trials = 0;
};

// Single-cell Monte Carlo: floor(ratio * cells) cells hold pruned weights
// (conductance 0, immune to stuck-off), the rest hold magnitudes drawn from
// U(0.1, 0.9); each trial faults every cell independently and counts value
// changes. One row per (rate, ratio) pair.
std::vector<ExpectationRow> verify_expectation(std::int64_t cells, const std::vector<double>& rates,
                                               double on_off_ratio, const std::vector<double>& ratios,
                                               int trials, std::uint64_t seed);

// Number formatting used for CSV cells (shortest %.12g form, nan spelled
// "nan"); exposed so output consumers can reproduce byte-identical rows.
std::string format_double(double v);

inline constexpr char kSweepCsvHeader[] =
    "scheme,p_off,p_on,prune_ratio,trials,acc_mean,acc_std,acc_min,acc_max,"
    "mismatch_cell,mismatch_weight,expectation_E_prime,seed";

}  // namespace rxsim
