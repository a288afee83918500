#include "rxsim/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace rxsim {
namespace {

using nlohmann::json;

[[noreturn]] void fail_at(const std::string& path, std::uint64_t offset, const std::string& what) {
  std::ostringstream os;
  os << path << ": " << what << " (byte offset " << offset << ")";
  throw std::runtime_error(os.str());
}

void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t read_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_f32_le(std::vector<std::uint8_t>& out, const std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(values.data());
    out.insert(out.end(), bytes, bytes + values.size() * 4);
  } else {
    for (float f : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      append_u32_le(out, bits);
    }
  }
}

void read_f32_le(const std::uint8_t* p, std::vector<float>& out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), p, out.size() * 4);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t bits = read_u32_le(p + i * 4);
      std::memcpy(&out[i], &bits, 4);
    }
  }
}

json shape_to_json(const std::vector<std::int64_t>& shape) {
  json arr = json::array();
  for (auto d : shape) arr.push_back(d);
  return arr;
}

std::vector<std::int64_t> shape_from_json(const json& arr) {
  std::vector<std::int64_t> shape;
  for (const auto& d : arr) shape.push_back(d.get<std::int64_t>());
  return shape;
}

struct TensorDecl {
  std::string name;
  std::string dtype;
  std::vector<std::int64_t> shape;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

void save_model(const Model& model, const std::string& path, const json& metadata) {
  json header;
  header["format"] = "RFSM";
  header["version"] = kModelFormatVersion;
  header["name"] = model.name;
  header["input_shape"] = shape_to_json(model.input_shape);
  header["num_classes"] = model.num_classes;

  json layers = json::array();
  json tensors = json::array();
  std::vector<std::uint8_t> blob;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    json lj;
    lj["kind"] = layer_kind_name(l.kind);
    lj["stride"] = l.stride;
    lj["padding"] = l.padding;
    lj["pool"] = l.pool;
    if (l.has_weights()) {
      lj["weights_shape"] = shape_to_json(l.weights.shape);
      lj["bias_shape"] = shape_to_json(l.bias.shape);
      lj["has_mask"] = !l.prune_mask.empty();
      const std::string prefix = "layer" + std::to_string(i) + ".";
      tensors.push_back({{"name", prefix + "weights"}, {"dtype", "f32"}, {"shape", shape_to_json(l.weights.shape)}});
      append_f32_le(blob, l.weights.data);
      tensors.push_back({{"name", prefix + "bias"}, {"dtype", "f32"}, {"shape", shape_to_json(l.bias.shape)}});
      append_f32_le(blob, l.bias.data);
      if (!l.prune_mask.empty()) {
        if (static_cast<std::int64_t>(l.prune_mask.size()) != l.weights.numel())
          throw std::runtime_error("save_model: prune mask size does not match weights for layer " + std::to_string(i));
        tensors.push_back({{"name", prefix + "mask"}, {"dtype", "u8"}, {"shape", shape_to_json(l.weights.shape)}});
        blob.insert(blob.end(), l.prune_mask.begin(), l.prune_mask.end());
      }
    }
    layers.push_back(lj);
  }
  header["layers"] = layers;
  header["tensors"] = tensors;
  header["metadata"] = metadata;

  const std::string header_str = header.dump();
  std::vector<std::uint8_t> file;
  file.reserve(12 + header_str.size() + blob.size());
  file.push_back('R');
  file.push_back('F');
  file.push_back('S');
  file.push_back('M');
  append_u32_le(file, kModelFormatVersion);
  append_u32_le(file, static_cast<std::uint32_t>(header_str.size()));
  file.insert(file.end(), header_str.begin(), header_str.end());
  file.insert(file.end(), blob.begin(), blob.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_model: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
  if (!out) throw std::runtime_error("save_model: write failed for " + path);
}

namespace {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("read failed for " + path);
  return bytes;
}

json parse_header(const std::string& path, const std::vector<std::uint8_t>& bytes, std::uint64_t* data_offset) {
  if (bytes.size() < 12) fail_at(path, bytes.size(), "file truncated before fixed 12-byte preamble");
  if (std::memcmp(bytes.data(), "RFSM", 4) != 0) fail_at(path, 0, "bad magic, expected \"RFSM\"");
  const std::uint32_t version = read_u32_le(bytes.data() + 4);
  if (version != kModelFormatVersion)
    fail_at(path, 4, "unsupported format version " + std::to_string(version) + ", expected " +
                         std::to_string(kModelFormatVersion));
  const std::uint32_t header_len = read_u32_le(bytes.data() + 8);
  if (12 + static_cast<std::uint64_t>(header_len) > bytes.size())
    fail_at(path, 8, "declared header length " + std::to_string(header_len) + " exceeds file size");
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    fail_at(path, 12, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "RFSM")
    fail_at(path, 12, "header missing format tag \"RFSM\"");
  *data_offset = 12 + header_len;
  return header;
}

}  // namespace

json read_model_header(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  std::uint64_t data_offset = 0;
  return parse_header(path, bytes, &data_offset);
}

Model load_model(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  std::uint64_t data_offset = 0;
  const json header = parse_header(path, bytes, &data_offset);

  Model model;
  try {
    model.name = header.value("name", "");
    model.input_shape = shape_from_json(header.at("input_shape"));
    model.num_classes = header.at("num_classes").get<int>();
    for (const auto& lj : header.at("layers")) {
      Layer l;
      l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
      l.stride = lj.value("stride", 1);
      l.padding = lj.value("padding", 0);
      l.pool = lj.value("pool", 2);
      if (lj.contains("weights_shape")) {
        l.weights = Tensor(shape_from_json(lj.at("weights_shape")));
        l.bias = Tensor(shape_from_json(lj.at("bias_shape")));
      }
      model.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    fail_at(path, 12, std::string("malformed header field: ") + e.what());
  }

  std::vector<TensorDecl> decls;
  try {
    for (const auto& tj : header.at("tensors")) {
      TensorDecl d;
      d.name = tj.at("name").get<std::string>();
      d.dtype = tj.at("dtype").get<std::string>();
      d.shape = shape_from_json(tj.at("shape"));
      decls.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    fail_at(path, 12, std::string("malformed tensor declaration: ") + e.what());
  }

  std::uint64_t offset = data_offset;
  for (const auto& d : decls) {
    // Names follow "layer<i>.<field>" with field in {weights, bias, mask}.
    const auto dot = d.name.find('.');
    if (d.name.rfind("layer", 0) != 0 || dot == std::string::npos)
      fail_at(path, 12, "unrecognized tensor name \"" + d.name + "\"");
    std::size_t idx = 0;
    try {
      idx = static_cast<std::size_t>(std::stoul(d.name.substr(5, dot - 5)));
    } catch (const std::exception&) {
      fail_at(path, 12, "unrecognized tensor name \"" + d.name + "\"");
    }
    if (idx >= model.layers.size()) fail_at(path, 12, "tensor \"" + d.name + "\" refers to a missing layer");
    Layer& l = model.layers[idx];
    if (!l.has_weights()) fail_at(path, 12, "tensor \"" + d.name + "\" targets a layer without parameters");
    const std::string field = d.name.substr(dot + 1);
    const std::int64_t count = shape_numel(d.shape);

    if (field == "weights" || field == "bias") {
      if (d.dtype != "f32") fail_at(path, 12, "tensor \"" + d.name + "\" must have dtype f32");
      Tensor& dst = (field == "weights") ? l.weights : l.bias;
      if (d.shape != dst.shape) fail_at(path, 12, "tensor \"" + d.name + "\" shape disagrees with layer header");
      const std::uint64_t nbytes = static_cast<std::uint64_t>(count) * 4;
      if (offset + nbytes > bytes.size())
        fail_at(path, offset, "file truncated inside tensor \"" + d.name + "\"");
      read_f32_le(bytes.data() + offset, dst.data);
      offset += nbytes;
    } else if (field == "mask") {
      if (d.dtype != "u8") fail_at(path, 12, "tensor \"" + d.name + "\" must have dtype u8");
      if (d.shape != l.weights.shape) fail_at(path, 12, "tensor \"" + d.name + "\" shape disagrees with layer header");
      const std::uint64_t nbytes = static_cast<std::uint64_t>(count);
      if (offset + nbytes > bytes.size())
        fail_at(path, offset, "file truncated inside tensor \"" + d.name + "\"");
      l.prune_mask.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                          bytes.begin() + static_cast<std::ptrdiff_t>(offset + nbytes));
      offset += nbytes;
    } else {
      fail_at(path, 12, "unrecognized tensor name \"" + d.name + "\"");
    }
  }
  if (offset != bytes.size()) fail_at(path, offset, "trailing bytes after declared tensor data");
  return model;
}

}  // namespace rxsim
