#pragma once
// Stuck-at fault injection for mapped layers. A stuck-off cell reads as
// conductance 0.0, a stuck-on cell as 1.0, regardless of what was programmed.
// Cell states are sampled independently per cell from (p_off, p_on); a total
// rate splits into the two via the on:off ratio. Sampling draws one uniform
// per physical cell in row-major tile order whether or not the cell is
// occupied, so a mask depends only on (layer geometry, fault model, seed).
#include <cstdint>
#include <vector>

#include "rxsim/mapping.hpp"

namespace rxsim {

enum class CellState : std::uint8_t { Healthy = 0, StuckOff = 1, StuckOn = 2 };

struct FaultModel {
  double p_off = 0.0;
  double p_on = 0.0;

  // rate r at on:off ratio q: p_off = r/(1+q), p_on = r*q/(1+q).
  static FaultModel from_total_rate(double rate, double on_off_ratio);
  double total() const { return p_off + p_on; }
};

struct FaultMask {
  std::uint64_t seed = 0;
  bool include_padding = false;
  std::vector<std::vector<CellState>> tile_states;  // per tile, row-major
};

// Padding (unoccupied) cells are forced Healthy unless include_padding is set.
FaultMask sample_fault_mask(const MappedLayer& ml, const FaultModel& fm, std::uint64_t seed,
                            bool include_padding = false);

// Returns a faulted copy; the input layer is untouched. Idempotent for a fixed mask.
MappedLayer apply_faults(const MappedLayer& ml, const FaultMask& mask);

struct MismatchRates {
  double per_cell = 0.0;    // occupied cells whose conductance changed
  double per_weight = 0.0;  // weights whose effective value changed
};

MismatchRates mismatch_rate(const MappedLayer& clean, const MappedLayer& faulted);

}  // namespace rxsim
