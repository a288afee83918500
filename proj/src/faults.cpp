#include "rxsim/faults.hpp"

#include <stdexcept>

#include "rxsim/rng.hpp"

namespace rxsim {

FaultModel FaultModel::from_total_rate(double rate, double on_off_ratio) {
  if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("fault rate must be in [0,1]");
  if (on_off_ratio < 0.0) throw std::invalid_argument("on:off ratio must be nonnegative");
  FaultModel fm;
  fm.p_off = rate / (1.0 + on_off_ratio);
  fm.p_on = rate * on_off_ratio / (1.0 + on_off_ratio);
  return fm;
}

FaultMask sample_fault_mask(const MappedLayer& ml, const FaultModel& fm, std::uint64_t seed, bool include_padding) {
  if (fm.p_off < 0.0 || fm.p_on < 0.0 || fm.p_off + fm.p_on > 1.0)
    throw std::invalid_argument("invalid fault probabilities");
  FaultMask mask;
  mask.seed = seed;
  mask.include_padding = include_padding;
  mask.tile_states.resize(ml.tiles.size());
  Rng rng(seed);
  for (std::size_t ti = 0; ti < ml.tiles.size(); ++ti) {
    const CrossbarTile& t = ml.tiles[ti];
    auto& states = mask.tile_states[ti];
    states.assign(static_cast<std::size_t>(t.conductance.numel()), CellState::Healthy);
    for (std::size_t i = 0; i < states.size(); ++i) {
      const double u = rng.uniform();  // drawn for every cell: masks are layout-stable
      CellState s = CellState::Healthy;
      if (u < fm.p_off)
        s = CellState::StuckOff;
      else if (u < fm.p_off + fm.p_on)
        s = CellState::StuckOn;
      if (!include_padding && !t.occupied[i]) s = CellState::Healthy;
      states[i] = s;
    }
  }
  return mask;
}

MappedLayer apply_faults(const MappedLayer& ml, const FaultMask& mask) {
  if (mask.tile_states.size() != ml.tiles.size())
    throw std::invalid_argument("apply_faults: mask does not match layer tiling");
  MappedLayer out = ml;
  for (std::size_t ti = 0; ti < out.tiles.size(); ++ti) {
    CrossbarTile& t = out.tiles[ti];
    const auto& states = mask.tile_states[ti];
    if (states.size() != static_cast<std::size_t>(t.conductance.numel()))
      throw std::invalid_argument("apply_faults: mask tile size mismatch");
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i] == CellState::StuckOff)
        t.conductance[static_cast<std::int64_t>(i)] = 0.0f;
      else if (states[i] == CellState::StuckOn)
        t.conductance[static_cast<std::int64_t>(i)] = 1.0f;
    }
  }
  return out;
}

MismatchRates mismatch_rate(const MappedLayer& clean, const MappedLayer& faulted) {
  if (clean.tiles.size() != faulted.tiles.size() || clean.weight_rows != faulted.weight_rows ||
      clean.weight_cols != faulted.weight_cols)
    throw std::invalid_argument("mismatch_rate: layers are not the same layout");
  std::int64_t occupied = 0, changed_cells = 0;
  for (std::size_t ti = 0; ti < clean.tiles.size(); ++ti) {
    const CrossbarTile& a = clean.tiles[ti];
    const CrossbarTile& b = faulted.tiles[ti];
    for (std::int64_t i = 0; i < a.conductance.numel(); ++i) {
      if (!a.occupied[static_cast<std::size_t>(i)]) continue;
      ++occupied;
      if (a.conductance[i] != b.conductance[i]) ++changed_cells;
    }
  }
  const Tensor wa = reconstruct_effective_weights(clean);
  const Tensor wb = reconstruct_effective_weights(faulted);
  std::int64_t changed_weights = 0;
  for (std::int64_t i = 0; i < wa.numel(); ++i)
    if (wa[i] != wb[i]) ++changed_weights;

  MismatchRates r;
  r.per_cell = occupied ? static_cast<double>(changed_cells) / static_cast<double>(occupied) : 0.0;
  r.per_weight = wa.numel() ? static_cast<double>(changed_weights) / static_cast<double>(wa.numel()) : 0.0;
  return r;
}

}  // namespace rxsim
