#pragma once
// Weight-to-conductance mapping for resistive crossbar tiles.
//
// Weights are first normalized to [-1,1] by the layer's max-|w| scale, then
// each weight is programmed onto one or two cells of a tile grid:
//   two-column:   g+ = max(w,0), g- = max(-w,0);    w = g+ - g-
//   offset:       g  = (w+1)/2;                     w = 2g - 1
//   differential: (ga,gb) with w = ga - gb and max(ga,gb) == 1; a zero weight
//                 programs both cells to full conductance, so a cell stuck at
//                 high conductance cannot disturb it.
// Reconstruction inverts the mapping (including the scale) to produce the
// effective weights actually realized by the - possibly faulted - cells.
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rxsim/nn.hpp"
#include "rxsim/tensor.hpp"

namespace rxsim {

enum class MappingScheme { TwoColumn, Offset, Differential };

int cells_per_weight(MappingScheme s);
const char* scheme_name(MappingScheme s);  // "two-column" | "offset" | "differential"
MappingScheme parse_scheme(const std::string& name);

struct CellPair {
  float a = 0.0f;
  float b = 0.0f;  // unused for offset
};

// scale = max|w| (1 if all-zero); returns (W/scale, scale).
std::pair<Tensor, float> normalize_weights(const Tensor& w);

// Per-weight cell values; inputs must already be normalized to [-1,1].
CellPair map_two_column(float w);
float map_offset(float w);
CellPair map_differential(float w);

struct CrossbarTile {
  int rows = 0;
  int cols = 0;
  Tensor conductance;                   // (rows, cols), values in [0,1]
  std::vector<std::uint8_t> occupied;   // row-major; 0 marks padding cells
};

struct CellRef {
  int tile = 0;
  int row = 0;
  int col = 0;
};

struct MappedLayer {
  MappingScheme scheme{};
  float scale = 1.0f;
  int layer_index = -1;                 // position in the source model, if any
  std::int64_t weight_rows = 0;         // logical weight matrix is rows x cols
  std::int64_t weight_cols = 0;
  int tile_rows = 128;
  int tile_cols = 128;
  int tiles_down = 0;                   // tile grid covering the weight matrix
  int tiles_across = 0;
  std::vector<CrossbarTile> tiles;

  // Bijective layout: weight (r,c) and cell role (0=a, 1=b) to a physical cell.
  // The two cells of one weight always occupy adjacent columns of one tile.
  CellRef cell_ref(std::int64_t r, std::int64_t c, int role) const;
  float cell_value(std::int64_t r, std::int64_t c, int role) const;
  std::int64_t weight_columns_per_tile() const;
  std::int64_t occupied_cells() const;
  std::int64_t total_cells() const;
};

// Dense weights map as-is; conv weights (OC,IC,KH,KW) flatten to (IC*KH*KW, OC).
Tensor weight_matrix_for_mapping(const Layer& layer);

// Writes a (rows, cols) effective-weight matrix back into the layer's native
// weight layout.
void set_layer_weights_from_matrix(Layer& layer, const Tensor& flat);

MappedLayer map_layer(const Layer& layer, MappingScheme scheme, int tile_rows = 128, int tile_cols = 128);

// Effective weight matrix (rows x cols) realized by the current cell values,
// scale included.
Tensor reconstruct_effective_weights(const MappedLayer& ml);

}  // namespace rxsim
