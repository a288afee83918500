#pragma once
// Unstructured magnitude pruning, size-based block partitioning, and the
// progressive prune-ratio search: walk candidate ratios in ascending order,
// prune the active blocks, keep the candidate if its mean faulted accuracy
// stays within `th` of the current model's, otherwise drop the smallest block
// from the active set and retry the same ratio. The returned model is the
// accepted candidate with the highest mean accuracy.
//
// Analytic mismatch expectation for single-cell mappings: an unpruned weight
// is disturbed by either stuck fault (rate p_off + p_on); a pruned weight's
// zero cell only by stuck-on. Expected per-weight mismatch at zero-fraction
// R_p is therefore p_off*(1-R_p) + p_on.
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "rxsim/faults.hpp"
#include "rxsim/nn.hpp"

namespace rxsim {

// Exact fraction of prunable-layer weights that are exactly zero.
double prune_ratio(const Model& model);

// Pools the block's layers, zeroes the floor(ratio*N) smallest-|w| weights
// (ties resolve to the lowest flat index in block order), and clears their
// mask bits. Other layers are untouched. Already-zero weights sort first, so
// repeated pruning is cumulative.
Model magnitude_prune(const Model& model, const std::vector<int>& block_layers, double ratio);

struct BlockPartition {
  std::vector<std::vector<int>> blocks;  // layer indices; ascending total weight count
};

// Groups prunable layers by equal output-feature count (dense) or output
// channels (conv); blocks sorted ascending by weight-parameter count.
BlockPartition partition_blocks(const Model& model);

// Same, but with caller-chosen groups of layer indices (must cover all
// prunable layers exactly once); only the ascending ordering is applied.
BlockPartition partition_blocks(const Model& model, const std::vector<std::vector<int>>& groups);

struct PruneSearchConfig {
  std::vector<double> ratios;     // strictly ascending, in [0,1)
  double th = 0.005;              // max acceptable mean-accuracy drop, absolute
  int trials = 100;               // Monte-Carlo evaluations per round
  MappingScheme scheme = MappingScheme::TwoColumn;
  FaultModel fault;
  std::uint64_t seed = 0;
};

struct SearchRound {
  double ratio = 0.0;
  std::vector<int> active_blocks;  // block indices active during this round
  double acc_mean = 0.0;
  double acc_std = 0.0;
  bool accepted = false;
};

struct SearchResult {
  Model best;                      // argmax-accuracy accepted candidate; input model if none accepted
  double best_acc = 0.0;
  double initial_acc_mean = 0.0;   // dedicated evaluation round of the input model
  double initial_acc_std = 0.0;
  std::vector<SearchRound> trace;  // one record per candidate evaluation round
};

// (mean, std) of a model's accuracy; round_index 0 is the input model's
// dedicated round, candidates count from 1. Injectable so the decision logic
// is testable against hand-written traces.
using RoundEvaluator = std::function<std::pair<double, double>(const Model&, int round_index)>;

SearchResult hierarchical_progressive_prune(const Model& model, const BlockPartition& partition,
                                            const PruneSearchConfig& cfg, const RoundEvaluator& evaluate);

// p_off*(1-R_p) + p_on; reduces to p_off + p_on at R_p = 0.
double mismatch_expectation(double p_off, double p_on, double R_p);

}  // namespace rxsim
