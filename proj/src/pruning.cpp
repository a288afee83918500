#include "rxsim/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace rxsim {

double prune_ratio(const Model& model) {
  std::int64_t zeros = 0, total = 0;
  for (const auto& l : model.layers) {
    if (!l.has_weights()) continue;
    total += l.weights.numel();
    for (float v : l.weights.data) zeros += v == 0.0f ? 1 : 0;
  }
  if (total == 0) throw std::invalid_argument("prune_ratio: model has no weights");
  return static_cast<double>(zeros) / static_cast<double>(total);
}

Model magnitude_prune(const Model& model, const std::vector<int>& block_layers, double ratio) {
  if (block_layers.empty()) throw std::invalid_argument("magnitude_prune: empty block");
  if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("magnitude_prune: ratio must be in [0,1]");
  Model out = model;

  std::vector<int> block = block_layers;
  std::sort(block.begin(), block.end());
  std::int64_t total = 0;
  for (int li : block) {
    if (li < 0 || li >= static_cast<int>(out.layers.size()) || !out.layers[static_cast<std::size_t>(li)].has_weights())
      throw std::invalid_argument("magnitude_prune: layer " + std::to_string(li) + " is not prunable");
    total += out.layers[static_cast<std::size_t>(li)].weights.numel();
  }
  const std::int64_t k = static_cast<std::int64_t>(ratio * static_cast<double>(total));
  if (k == 0) return out;

  // (|w|, pooled flat index); stable magnitude order with index tie-break.
  std::vector<std::pair<float, std::int64_t>> mags(static_cast<std::size_t>(total));
  std::int64_t base = 0;
  for (int li : block) {
    const Tensor& w = out.layers[static_cast<std::size_t>(li)].weights;
    for (std::int64_t i = 0; i < w.numel(); ++i)
      mags[static_cast<std::size_t>(base + i)] = {std::fabs(w[i]), base + i};
    base += w.numel();
  }
  std::nth_element(mags.begin(), mags.begin() + (k - 1), mags.end());
  std::sort(mags.begin(), mags.begin() + k);

  std::vector<std::int64_t> cut(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) cut[static_cast<std::size_t>(i)] = mags[static_cast<std::size_t>(i)].second;
  std::sort(cut.begin(), cut.end());

  base = 0;
  std::size_t next = 0;
  for (int li : block) {
    Layer& l = out.layers[static_cast<std::size_t>(li)];
    if (l.prune_mask.empty()) l.prune_mask.assign(static_cast<std::size_t>(l.weights.numel()), 1);
    const std::int64_t n = l.weights.numel();
    while (next < cut.size() && cut[next] < base + n) {
      const std::int64_t i = cut[next] - base;
      l.weights[i] = 0.0f;
      l.prune_mask[static_cast<std::size_t>(i)] = 0;
      ++next;
    }
    base += n;
  }
  return out;
}

namespace {
std::int64_t output_features(const Layer& l) {
  return l.kind == LayerKind::Dense ? l.weights.dim(1) : l.weights.dim(0);
}

BlockPartition sort_ascending(const Model& model, std::vector<std::vector<int>> blocks) {
  for (auto& b : blocks) std::sort(b.begin(), b.end());
  std::stable_sort(blocks.begin(), blocks.end(), [&](const auto& a, const auto& b) {
    std::int64_t pa = 0, pb = 0;
    for (int li : a) pa += model.layers[static_cast<std::size_t>(li)].weights.numel();
    for (int li : b) pb += model.layers[static_cast<std::size_t>(li)].weights.numel();
    return pa < pb;
  });
  BlockPartition p;
  p.blocks = std::move(blocks);
  return p;
}
}  // namespace

BlockPartition partition_blocks(const Model& model) {
  const auto prunable = model.prunable_layers();
  if (prunable.empty()) throw std::invalid_argument("partition_blocks: model has no prunable layers");
  std::map<std::int64_t, std::vector<int>> by_width;
  for (int li : prunable) by_width[output_features(model.layers[static_cast<std::size_t>(li)])].push_back(li);
  std::vector<std::vector<int>> blocks;
  for (auto& [width, layers] : by_width) blocks.push_back(std::move(layers));
  return sort_ascending(model, std::move(blocks));
}

BlockPartition partition_blocks(const Model& model, const std::vector<std::vector<int>>& groups) {
  const auto prunable = model.prunable_layers();
  std::vector<int> covered;
  for (const auto& g : groups) covered.insert(covered.end(), g.begin(), g.end());
  std::sort(covered.begin(), covered.end());
  if (covered != prunable)
    throw std::invalid_argument("partition_blocks: groups must cover every prunable layer exactly once");
  return sort_ascending(model, groups);
}

SearchResult hierarchical_progressive_prune(const Model& model, const BlockPartition& partition,
                                            const PruneSearchConfig& cfg, const RoundEvaluator& evaluate) {
  SearchResult result;
  result.best = model;
  result.initial_acc_mean = std::numeric_limits<double>::quiet_NaN();
  result.initial_acc_std = std::numeric_limits<double>::quiet_NaN();
  if (cfg.ratios.empty()) return result;

  for (std::size_t i = 1; i < cfg.ratios.size(); ++i)
    if (!(cfg.ratios[i] > cfg.ratios[i - 1])) throw std::invalid_argument("search ratios must be strictly ascending");
  for (double r : cfg.ratios)
    if (r < 0.0 || r >= 1.0) throw std::invalid_argument("search ratios must lie in [0,1)");
  if (cfg.trials < 1) throw std::invalid_argument("search trials must be >= 1");
  if (partition.blocks.empty()) throw std::invalid_argument("search needs a nonempty partition");

  std::vector<int> active(partition.blocks.size());
  for (std::size_t i = 0; i < active.size(); ++i) active[i] = static_cast<int>(i);

  Model current = model;
  auto [m0, s0] = evaluate(current, 0);  // dedicated round for the input model
  result.initial_acc_mean = m0;
  result.initial_acc_std = s0;
  double current_acc = m0;

  double best_acc = -std::numeric_limits<double>::infinity();
  bool any_accepted = false;
  int round = 1;

  for (double ratio : cfg.ratios) {
    bool accepted = false;
    while (!accepted) {
      if (active.empty()) break;
      Model candidate = current;
      for (int b : active) candidate = magnitude_prune(candidate, partition.blocks[static_cast<std::size_t>(b)], ratio);
      auto [mean, stdev] = evaluate(candidate, round++);
      accepted = current_acc - mean < cfg.th;
      result.trace.push_back({ratio, active, mean, stdev, accepted});
      if (accepted) {
        current = std::move(candidate);
        current_acc = mean;
        any_accepted = true;
        if (mean > best_acc) {
          best_acc = mean;
          result.best = current;
          result.best_acc = mean;
        }
      } else {
        active.erase(active.begin());  // drop the smallest block, retry this ratio
      }
    }
    if (active.empty()) break;
  }

  if (!any_accepted) {
    result.best = model;
    result.best_acc = m0;
  }
  return result;
}

double mismatch_expectation(double p_off, double p_on, double R_p) {
  if (p_off < 0.0 || p_on < 0.0 || p_off > 1.0 || p_on > 1.0 || p_off + p_on > 1.0)
    throw std::invalid_argument("mismatch_expectation: invalid probabilities");
  if (R_p < 0.0 || R_p > 1.0) throw std::invalid_argument("mismatch_expectation: R_p must be in [0,1]");
  return p_off * (1.0 - R_p) + p_on;
}

}  // namespace rxsim
