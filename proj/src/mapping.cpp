#include "rxsim/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rxsim {

int cells_per_weight(MappingScheme s) { return s == MappingScheme::Offset ? 1 : 2; }

const char* scheme_name(MappingScheme s) {
  switch (s) {
    case MappingScheme::TwoColumn: return "two-column";
    case MappingScheme::Offset: return "offset";
    case MappingScheme::Differential: return "differential";
  }
  return "?";
}

MappingScheme parse_scheme(const std::string& name) {
  if (name == "two-column" || name == "tc" || name == "twocolumn") return MappingScheme::TwoColumn;
  if (name == "offset" || name == "off") return MappingScheme::Offset;
  if (name == "differential" || name == "diff") return MappingScheme::Differential;
  throw std::invalid_argument("unknown mapping scheme: " + name +
                              " (expected two-column | offset | differential)");
}

std::pair<Tensor, float> normalize_weights(const Tensor& w) {
  float scale = 0.0f;
  for (float v : w.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("normalize_weights: non-finite weight");
    scale = std::max(scale, std::fabs(v));
  }
  if (scale == 0.0f) scale = 1.0f;
  Tensor norm = w;
  for (auto& v : norm.data) v /= scale;
  return {std::move(norm), scale};
}

namespace {
void check_range(float w, const char* who) {
  if (!(w >= -1.0f && w <= 1.0f)) throw std::invalid_argument(std::string(who) + ": weight outside [-1,1]");
}
}  // namespace

CellPair map_two_column(float w) {
  check_range(w, "map_two_column");
  return {w > 0.0f ? w : 0.0f, w < 0.0f ? -w : 0.0f};
}

float map_offset(float w) {
  check_range(w, "map_offset");
  return (w + 1.0f) / 2.0f;
}

CellPair map_differential(float w) {
  check_range(w, "map_differential");
  if (w >= 0.0f) return {1.0f, 1.0f - w};  // w == 0 programs (1,1)
  return {1.0f + w, 1.0f};
}

std::int64_t MappedLayer::weight_columns_per_tile() const { return tile_cols / cells_per_weight(scheme); }

CellRef MappedLayer::cell_ref(std::int64_t r, std::int64_t c, int role) const {
  const std::int64_t wpt = weight_columns_per_tile();
  const int cpw = cells_per_weight(scheme);
  CellRef ref;
  ref.tile = static_cast<int>((r / tile_rows) * tiles_across + (c / wpt));
  ref.row = static_cast<int>(r % tile_rows);
  ref.col = static_cast<int>((c % wpt) * cpw + role);
  return ref;
}

float MappedLayer::cell_value(std::int64_t r, std::int64_t c, int role) const {
  const CellRef ref = cell_ref(r, c, role);
  return tiles[static_cast<std::size_t>(ref.tile)].conductance(ref.row, ref.col);
}

std::int64_t MappedLayer::occupied_cells() const {
  std::int64_t n = 0;
  for (const auto& t : tiles)
    for (auto o : t.occupied) n += o ? 1 : 0;
  return n;
}

std::int64_t MappedLayer::total_cells() const {
  std::int64_t n = 0;
  for (const auto& t : tiles) n += t.conductance.numel();
  return n;
}

Tensor weight_matrix_for_mapping(const Layer& layer) {
  if (!layer.has_weights()) throw std::invalid_argument("weight_matrix_for_mapping: layer has no weights");
  if (layer.kind == LayerKind::Dense) return layer.weights;
  const std::int64_t oc = layer.weights.dim(0), ic = layer.weights.dim(1);
  const std::int64_t kh = layer.weights.dim(2), kw = layer.weights.dim(3);
  Tensor flat({ic * kh * kw, oc});
  for (std::int64_t o = 0; o < oc; ++o)
    for (std::int64_t c = 0; c < ic; ++c)
      for (std::int64_t a = 0; a < kh; ++a)
        for (std::int64_t b = 0; b < kw; ++b) flat((c * kh + a) * kw + b, o) = layer.weights(o, c, a, b);
  return flat;
}

void set_layer_weights_from_matrix(Layer& layer, const Tensor& flat) {
  if (layer.kind == LayerKind::Dense) {
    if (flat.shape != layer.weights.shape)
      throw std::invalid_argument("set_layer_weights_from_matrix: shape mismatch");
    layer.weights = flat;
    return;
  }
  const std::int64_t oc = layer.weights.dim(0), ic = layer.weights.dim(1);
  const std::int64_t kh = layer.weights.dim(2), kw = layer.weights.dim(3);
  if (flat.rank() != 2 || flat.dim(0) != ic * kh * kw || flat.dim(1) != oc)
    throw std::invalid_argument("set_layer_weights_from_matrix: shape mismatch");
  for (std::int64_t o = 0; o < oc; ++o)
    for (std::int64_t c = 0; c < ic; ++c)
      for (std::int64_t a = 0; a < kh; ++a)
        for (std::int64_t b = 0; b < kw; ++b) layer.weights(o, c, a, b) = flat((c * kh + a) * kw + b, o);
}

MappedLayer map_layer(const Layer& layer, MappingScheme scheme, int tile_rows, int tile_cols) {
  const int cpw = cells_per_weight(scheme);
  if (tile_rows < 1 || tile_cols < cpw) throw std::invalid_argument("map_layer: tile too small for scheme");
  const Tensor w = weight_matrix_for_mapping(layer);
  auto [norm, scale] = normalize_weights(w);

  MappedLayer ml;
  ml.scheme = scheme;
  ml.scale = scale;
  ml.weight_rows = w.dim(0);
  ml.weight_cols = w.dim(1);
  ml.tile_rows = tile_rows;
  ml.tile_cols = tile_cols;
  const std::int64_t wpt = tile_cols / cpw;
  ml.tiles_down = static_cast<int>((ml.weight_rows + tile_rows - 1) / tile_rows);
  ml.tiles_across = static_cast<int>((ml.weight_cols + wpt - 1) / wpt);
  ml.tiles.resize(static_cast<std::size_t>(ml.tiles_down) * static_cast<std::size_t>(ml.tiles_across));
  for (auto& t : ml.tiles) {
    t.rows = tile_rows;
    t.cols = tile_cols;
    t.conductance = Tensor({tile_rows, tile_cols});
    t.occupied.assign(static_cast<std::size_t>(tile_rows) * static_cast<std::size_t>(tile_cols), 0);
  }

  for (std::int64_t r = 0; r < ml.weight_rows; ++r) {
    for (std::int64_t c = 0; c < ml.weight_cols; ++c) {
      const float v = norm(r, c);
      CellPair p;
      switch (scheme) {
        case MappingScheme::TwoColumn: p = map_two_column(v); break;
        case MappingScheme::Offset: p = {map_offset(v), 0.0f}; break;
        case MappingScheme::Differential: p = map_differential(v); break;
      }
      for (int role = 0; role < cpw; ++role) {
        const CellRef ref = ml.cell_ref(r, c, role);
        CrossbarTile& t = ml.tiles[static_cast<std::size_t>(ref.tile)];
        t.conductance(ref.row, ref.col) = role == 0 ? p.a : p.b;
        t.occupied[static_cast<std::size_t>(ref.row) * static_cast<std::size_t>(t.cols) +
                   static_cast<std::size_t>(ref.col)] = 1;
      }
    }
  }
  return ml;
}

Tensor reconstruct_effective_weights(const MappedLayer& ml) {
  Tensor w({ml.weight_rows, ml.weight_cols});
  for (std::int64_t r = 0; r < ml.weight_rows; ++r) {
    for (std::int64_t c = 0; c < ml.weight_cols; ++c) {
      float v = 0.0f;
      switch (ml.scheme) {
        case MappingScheme::TwoColumn:
        case MappingScheme::Differential:
          v = ml.cell_value(r, c, 0) - ml.cell_value(r, c, 1);
          break;
        case MappingScheme::Offset:
          v = 2.0f * ml.cell_value(r, c, 0) - 1.0f;
          break;
      }
      w(r, c) = v * ml.scale;
    }
  }
  return w;
}

}  // namespace rxsim
