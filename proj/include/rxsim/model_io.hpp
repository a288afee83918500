#pragma once
// Model container format "RFSM", version 1:
//   bytes 0-3   magic "RFSM"
//   bytes 4-7   u32 little-endian version (= 1)
//   bytes 8-11  u32 little-endian JSON header length H
//   bytes 12..  UTF-8 JSON header (name, input shape, classes, layer specs,
//               declared tensor order, free-form metadata)
//   then        raw tensor blobs, concatenated in declared order:
//               f32 little-endian for weights/bias, u8 for prune masks.
// save -> load round trips are bit-exact. Malformed files fail with an error
// naming the byte offset.
#include <string>

#include "rxsim/nn.hpp"

#include <json.hpp>

namespace rxsim {

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const Model& model, const std::string& path, const nlohmann::json& metadata = nlohmann::json::object());

Model load_model(const std::string& path);

// Header JSON of a saved model (layer kinds, shapes, tensor order, metadata).
nlohmann::json read_model_header(const std::string& path);

}  // namespace rxsim
