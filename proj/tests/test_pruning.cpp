#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "doctest.h"
#include "rxsim/nn.hpp"
#include "rxsim/pruning.hpp"
#include "rxsim/rng.hpp"

using namespace rxsim;

namespace {

// Single dense layer whose weights are given explicitly.
Model tiny_model(const std::vector<float>& w, std::int64_t in, std::int64_t out) {
  Model m;
  m.name = "tiny";
  m.input_shape = {in};
  m.num_classes = static_cast<int>(out);
  Layer l = Layer::dense(in, out);
  l.weights = Tensor({in, out}, std::vector<float>(w));
  m.layers.push_back(l);
  return m;
}

std::vector<float> weights_of(const Model& m, int layer = 0) {
  return m.layers[static_cast<std::size_t>(layer)].weights.data;
}

// Evaluator stub driven by a scripted list of (mean, std) per round.
RoundEvaluator scripted(std::vector<std::pair<double, double>> script) {
  return [script = std::move(script)](const Model&, int round) {
    REQUIRE(round >= 0);
    REQUIRE(round < static_cast<int>(script.size()));
    return script[static_cast<std::size_t>(round)];
  };
}

}  // namespace

TEST_CASE("magnitude pruning zeroes the smallest-magnitude half") {
  const Model m = tiny_model({1.0f, -3.0f, 2.0f, 0.5f}, 2, 2);
  const Model p = magnitude_prune(m, {0}, 0.5);
  CHECK(weights_of(p) == std::vector<float>{0.0f, -3.0f, 2.0f, 0.0f});
  CHECK(p.layers[0].prune_mask == std::vector<std::uint8_t>{0, 1, 1, 0});
  CHECK(prune_ratio(p) == doctest::Approx(0.5));
  CHECK(weights_of(m) == std::vector<float>{1.0f, -3.0f, 2.0f, 0.5f});  // input untouched
}

TEST_CASE("magnitude ties resolve to the lowest flat index") {
  const Model m = tiny_model({1.0f, 1.0f, 1.0f, 1.0f}, 2, 2);
  const Model p = magnitude_prune(m, {0}, 0.5);
  CHECK(weights_of(p) == std::vector<float>{0.0f, 0.0f, 1.0f, 1.0f});
}

TEST_CASE("ratio counts are floors and the edges behave") {
  const Model m = tiny_model({1, 2, 3, 4, 5, 6}, 2, 3);
  CHECK(weights_of(magnitude_prune(m, {0}, 0.0)) == weights_of(m));
  CHECK(weights_of(magnitude_prune(m, {0}, 0.33)) ==
        std::vector<float>{0, 2, 3, 4, 5, 6});  // floor(0.33*6) = 1
  CHECK(weights_of(magnitude_prune(m, {0}, 1.0)) == std::vector<float>(6, 0.0f));
  CHECK_THROWS_AS(magnitude_prune(m, {0}, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(magnitude_prune(m, {0}, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(magnitude_prune(m, {}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(magnitude_prune(m, {1}, 0.5), std::invalid_argument);  // not prunable
}

TEST_CASE("repeated pruning is cumulative: zeros stay zero and sort first") {
  const Model m = tiny_model({4.0f, -1.0f, 3.0f, 2.0f}, 2, 2);
  const Model p25 = magnitude_prune(m, {0}, 0.25);
  CHECK(weights_of(p25) == std::vector<float>{4.0f, 0.0f, 3.0f, 2.0f});
  const Model p50 = magnitude_prune(p25, {0}, 0.5);
  CHECK(weights_of(p50) == std::vector<float>{4.0f, 0.0f, 3.0f, 0.0f});
  CHECK(weights_of(p50) == weights_of(magnitude_prune(m, {0}, 0.5)));
  CHECK(p50.layers[0].prune_mask == std::vector<std::uint8_t>{1, 0, 1, 0});
}

TEST_CASE("multi-layer blocks pool their weights before ranking") {
  Model m;
  m.input_shape = {2};
  m.num_classes = 2;
  Layer a = Layer::dense(2, 2);
  a.weights = Tensor({2, 2}, {10.0f, 0.1f, 0.2f, 20.0f});
  Layer b = Layer::dense(2, 2);
  b.weights = Tensor({2, 2}, {0.3f, 30.0f, 40.0f, 0.4f});
  m.layers.push_back(a);
  m.layers.push_back(b);
  const Model p = magnitude_prune(m, {0, 1}, 0.5);  // drops the four smallest overall
  CHECK(weights_of(p, 0) == std::vector<float>{10.0f, 0.0f, 0.0f, 20.0f});
  CHECK(weights_of(p, 1) == std::vector<float>{0.0f, 30.0f, 40.0f, 0.0f});
}

TEST_CASE("prune_ratio counts exact zeros across prunable layers only") {
  Model m = tiny_model({0.0f, 1.0f, 0.0f, 2.0f}, 2, 2);
  m.layers.push_back(Layer::relu());  // no weights; ignored
  CHECK(prune_ratio(m) == doctest::Approx(0.5));
  Model empty;
  empty.layers.push_back(Layer::relu());
  CHECK_THROWS_AS(prune_ratio(empty), std::invalid_argument);
}

TEST_CASE("default partition groups by output width and sorts blocks ascending") {
  const Model mlp = make_reference_mlp(1);
  const BlockPartition p = partition_blocks(mlp);
  REQUIRE(p.blocks.size() == 2);
  CHECK(p.blocks[0] == std::vector<int>{2});  // 128*10 = 1280 weights
  CHECK(p.blocks[1] == std::vector<int>{0});  // 784*128 = 100352 weights
}

TEST_CASE("explicit partition must cover every prunable layer exactly once") {
  const Model mlp = make_reference_mlp(2);
  const BlockPartition p = partition_blocks(mlp, {{0}, {2}});
  CHECK(p.blocks[0] == std::vector<int>{2});  // still sorted ascending by size
  CHECK(p.blocks[1] == std::vector<int>{0});
  const BlockPartition joint = partition_blocks(mlp, {{0, 2}});
  CHECK(joint.blocks.size() == 1);
  CHECK_THROWS_AS(partition_blocks(mlp, {{0}}), std::invalid_argument);
  CHECK_THROWS_AS(partition_blocks(mlp, {{0}, {2}, {2}}), std::invalid_argument);
  CHECK_THROWS_AS(partition_blocks(mlp, {{0}, {1}, {2}}), std::invalid_argument);
}

TEST_CASE("layers sharing an output width fall into one block") {
  Model m;
  m.input_shape = {4};
  m.num_classes = 8;
  m.layers.push_back(Layer::dense(4, 8));   // out 8, 32 weights
  m.layers.push_back(Layer::dense(8, 8));   // out 8, 64 weights
  m.layers.push_back(Layer::dense(8, 16));  // out 16, 128 weights
  const BlockPartition p = partition_blocks(m);
  REQUIRE(p.blocks.size() == 2);
  CHECK(p.blocks[0] == std::vector<int>{0, 1});  // 96 weights
  CHECK(p.blocks[1] == std::vector<int>{2});     // 128 weights
}

TEST_CASE("mismatch expectation follows p_off*(1-R_p) + p_on") {
  CHECK(mismatch_expectation(0.01, 0.052, 0.0) == doctest::Approx(0.062));
  CHECK(mismatch_expectation(0.01, 0.052, 0.6) == doctest::Approx(0.056));
  CHECK(mismatch_expectation(0.01, 0.052, 1.0) == doctest::Approx(0.052));
  // Strictly decreasing in the pruned fraction whenever p_off > 0.
  double prev = 2.0;
  for (double rp : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double e = mismatch_expectation(0.01, 0.052, rp);
    CHECK(e < prev);
    prev = e;
  }
  CHECK_THROWS_AS(mismatch_expectation(-0.1, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(mismatch_expectation(0.6, 0.6, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(mismatch_expectation(0.1, 0.1, 1.5), std::invalid_argument);
}

// ---- progressive search against scripted evaluators ----

namespace {

Model search_model() {
  Model m;
  m.input_shape = {4};
  m.num_classes = 4;
  Layer small = Layer::dense(4, 2);  // 8 weights -> block 0
  Layer big = Layer::dense(4, 4);    // 16 weights -> block 1
  Rng rng(3);
  for (auto& w : small.weights.data) w = static_cast<float>(rng.uniform(0.5, 1.0));
  for (auto& w : big.weights.data) w = static_cast<float>(rng.uniform(0.5, 1.0));
  m.layers.push_back(small);
  m.layers.push_back(big);
  return m;
}

PruneSearchConfig search_cfg(std::vector<double> ratios, double th = 0.005) {
  PruneSearchConfig cfg;
  cfg.ratios = std::move(ratios);
  cfg.th = th;
  cfg.trials = 1;
  return cfg;
}

}  // namespace

TEST_CASE("all candidates accepted: trace in ratio order, best is the argmax") {
  const Model m = search_model();
  const BlockPartition part = partition_blocks(m);
  // Round 0 = input model; rounds 1..3 = ratios 0.2, 0.4, 0.6.
  const auto res = hierarchical_progressive_prune(
      m, part, search_cfg({0.2, 0.4, 0.6}),
      scripted({{0.90, 0.01}, {0.91, 0.01}, {0.93, 0.01}, {0.928, 0.01}}));
  CHECK(res.initial_acc_mean == 0.90);
  REQUIRE(res.trace.size() == 3);
  CHECK(res.trace[0].ratio == 0.2);
  CHECK(res.trace[1].ratio == 0.4);
  CHECK(res.trace[2].ratio == 0.6);
  for (const auto& r : res.trace) {
    CHECK(r.accepted);
    CHECK(r.active_blocks == std::vector<int>{0, 1});
  }
  CHECK(res.best_acc == 0.93);  // strict argmax over accepted rounds
  // The 0.4 candidate: floor-per-block pruning gives (3 + 6) / 24 zeros.
  CHECK(prune_ratio(res.best) == doctest::Approx(9.0 / 24.0));
}

TEST_CASE("a rejection drops the smallest block and retries the same ratio") {
  const Model m = search_model();
  const BlockPartition part = partition_blocks(m);
  // Round 1 rejected (drop > th), round 2 retries ratio 0.3 with block 0 gone
  // and is accepted; round 3 evaluates ratio 0.5.
  const auto res = hierarchical_progressive_prune(
      m, part, search_cfg({0.3, 0.5}),
      scripted({{0.90, 0.01}, {0.80, 0.01}, {0.899, 0.01}, {0.897, 0.01}}));
  REQUIRE(res.trace.size() == 3);
  CHECK(res.trace[0].ratio == 0.3);
  CHECK_FALSE(res.trace[0].accepted);
  CHECK(res.trace[0].active_blocks == std::vector<int>{0, 1});
  CHECK(res.trace[1].ratio == 0.3);  // same ratio, retried
  CHECK(res.trace[1].accepted);
  CHECK(res.trace[1].active_blocks == std::vector<int>{1});  // smallest block dropped
  CHECK(res.trace[2].ratio == 0.5);
  CHECK(res.trace[2].accepted);  // 0.899 - 0.897 = 0.002 < 0.005
  CHECK(res.best_acc == 0.899);
  // Only the big layer was pruned; the small one is untouched.
  CHECK(prune_ratio(res.best) > 0.0);
  for (float w : res.best.layers[0].weights.data) CHECK(w != 0.0f);
}

TEST_CASE("exhausting all blocks ends the search with the last accepted model") {
  const Model m = search_model();
  const BlockPartition part = partition_blocks(m);
  // Both candidate rounds at ratio 0.3 fail; the active set empties and the
  // search stops without touching ratio 0.5. Nothing accepted -> input model.
  const auto res = hierarchical_progressive_prune(
      m, part, search_cfg({0.3, 0.5}),
      scripted({{0.90, 0.01}, {0.50, 0.01}, {0.55, 0.01}}));
  REQUIRE(res.trace.size() == 2);
  CHECK_FALSE(res.trace[0].accepted);
  CHECK_FALSE(res.trace[1].accepted);
  CHECK(res.best_acc == 0.90);
  CHECK(prune_ratio(res.best) == 0.0);
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    CHECK(res.best.layers[i].weights.data == m.layers[i].weights.data);
}

TEST_CASE("the accept threshold compares against the current accepted mean, drifting") {
  const Model m = search_model();
  const BlockPartition part = partition_blocks(m);
  // Each step drops 0.004 < th from the previous accepted mean, so all pass
  // even though the total drop from round 0 exceeds th.
  const auto res = hierarchical_progressive_prune(
      m, part, search_cfg({0.1, 0.2, 0.3}),
      scripted({{0.900, 0.0}, {0.896, 0.0}, {0.892, 0.0}, {0.888, 0.0}}));
  REQUIRE(res.trace.size() == 3);
  for (const auto& r : res.trace) CHECK(r.accepted);
  CHECK(res.best_acc == 0.896);  // argmax is the first accepted candidate
}

TEST_CASE("trace length is bounded by ratios + blocks") {
  const Model m = search_model();
  const BlockPartition part = partition_blocks(m);
  // Worst case: every round rejected. 2 blocks -> 2 evaluations, then stop.
  const auto res = hierarchical_progressive_prune(
      m, part, search_cfg({0.1, 0.2, 0.3, 0.4}),
      scripted({{0.9, 0.0}, {0.1, 0.0}, {0.1, 0.0}, {0.1, 0.0}, {0.1, 0.0}, {0.1, 0.0}}));
  CHECK(res.trace.size() <= 4 + 2);
  CHECK(res.trace.size() == 2);
}

TEST_CASE("search validates its configuration") {
  const Model m = search_model();
  const BlockPartition part = partition_blocks(m);
  const auto eval = scripted({{0.9, 0.0}});
  CHECK_THROWS_AS(
      hierarchical_progressive_prune(m, part, search_cfg({0.4, 0.4}), eval),
      std::invalid_argument);
  CHECK_THROWS_AS(
      hierarchical_progressive_prune(m, part, search_cfg({0.5, 0.3}), eval),
      std::invalid_argument);
  CHECK_THROWS_AS(hierarchical_progressive_prune(m, part, search_cfg({1.0}), eval),
                  std::invalid_argument);
  CHECK_THROWS_AS(hierarchical_progressive_prune(m, part, search_cfg({-0.1}), eval),
                  std::invalid_argument);
  auto cfg = search_cfg({0.5});
  cfg.trials = 0;
  CHECK_THROWS_AS(hierarchical_progressive_prune(m, part, cfg, eval), std::invalid_argument);
  // Empty ratio list: a no-op search returning the input model.
  const auto res =
      hierarchical_progressive_prune(m, part, search_cfg({}), scripted({{0.9, 0.0}}));
  CHECK(res.trace.empty());
  CHECK(prune_ratio(res.best) == 0.0);
}

TEST_CASE("search candidates prune cumulatively on top of accepted models") {
  const Model m = search_model();
  const BlockPartition part = partition_blocks(m);
  std::vector<double> seen_ratios;
  const RoundEvaluator eval = [&](const Model& cand, int round) -> std::pair<double, double> {
    if (round > 0) seen_ratios.push_back(prune_ratio(cand));
    return {0.9, 0.0};  // accept everything
  };
  const auto res = hierarchical_progressive_prune(m, part, search_cfg({0.25, 0.5}), eval);
  REQUIRE(seen_ratios.size() == 2);
  CHECK(seen_ratios[0] == doctest::Approx(0.25));
  CHECK(seen_ratios[1] == doctest::Approx(0.5));
  // Equal means everywhere: the strict argmax keeps the first accepted model.
  CHECK(prune_ratio(res.best) == doctest::Approx(0.25));
}
