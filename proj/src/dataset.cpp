#include "rxsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace rxsim {
namespace {

[[noreturn]] void fail_at(const std::string& path, std::uint64_t offset, const std::string& what) {
  throw std::runtime_error(path + ": " + what + " at byte offset " + std::to_string(offset));
}

std::uint32_t read_be_u32(std::ifstream& f, const std::string& path, std::uint64_t& offset, const char* field) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) fail_at(path, offset, std::string("truncated while reading ") + field);
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

std::vector<std::uint8_t> read_payload(std::ifstream& f, const std::string& path, std::uint64_t& offset,
                                       std::uint64_t count) {
  std::vector<std::uint8_t> buf(count);
  if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count)))
    fail_at(path, offset + static_cast<std::uint64_t>(f.gcount()), "truncated payload");
  offset += count;
  return buf;
}

}  // namespace

Dataset subset(const Dataset& ds, std::int64_t n) {
  if (n <= 0 || n >= ds.size()) return ds;
  Dataset out;
  out.sample_shape = ds.sample_shape;
  out.num_classes = ds.num_classes;
  const std::int64_t d = ds.images.dim(1);
  out.images = Tensor({n, d});
  std::copy(ds.images.data.begin(), ds.images.data.begin() + n * d, out.images.data.begin());
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  return out;
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw std::runtime_error("cannot open " + images_path);
  std::uint64_t off = 0;
  const std::uint32_t magic_i = read_be_u32(fi, images_path, off, "magic");
  if (magic_i != 0x00000803u) fail_at(images_path, 0, "bad image magic (expected 0x00000803)");
  const std::uint32_t n = read_be_u32(fi, images_path, off, "count");
  const std::uint32_t rows = read_be_u32(fi, images_path, off, "rows");
  const std::uint32_t cols = read_be_u32(fi, images_path, off, "cols");
  const std::uint64_t d = std::uint64_t(rows) * cols;
  const auto pixels = read_payload(fi, images_path, off, std::uint64_t(n) * d);

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw std::runtime_error("cannot open " + labels_path);
  std::uint64_t loff = 0;
  const std::uint32_t magic_l = read_be_u32(fl, labels_path, loff, "magic");
  if (magic_l != 0x00000801u) fail_at(labels_path, 0, "bad label magic (expected 0x00000801)");
  const std::uint32_t nl = read_be_u32(fl, labels_path, loff, "count");
  if (nl != n)
    throw std::runtime_error(labels_path + ": label count " + std::to_string(nl) + " != image count " +
                             std::to_string(n));
  const auto labels = read_payload(fl, labels_path, loff, nl);

  Dataset ds;
  ds.sample_shape = {1, std::int64_t(rows), std::int64_t(cols)};
  ds.images = Tensor({std::int64_t(n), std::int64_t(d)});
  for (std::size_t i = 0; i < pixels.size(); ++i) ds.images.data[i] = static_cast<float>(pixels[i]) / 255.0f;
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = labels[i];
  return ds;
}

void save_idx_images(const std::string& path, const Tensor& images, std::int64_t rows, std::int64_t cols) {
  if (images.rank() != 2 || images.dim(1) != rows * cols)
    throw std::invalid_argument("save_idx_images: images must be (N, rows*cols)");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write_be_u32(f, 0x00000803u);
  write_be_u32(f, static_cast<std::uint32_t>(images.dim(0)));
  write_be_u32(f, static_cast<std::uint32_t>(rows));
  write_be_u32(f, static_cast<std::uint32_t>(cols));
  std::vector<std::uint8_t> buf(images.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, images.data[i]));
    buf[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  f.write(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

void save_idx_labels(const std::string& path, const std::vector<std::int32_t>& labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write_be_u32(f, 0x00000801u);
  write_be_u32(f, static_cast<std::uint32_t>(labels.size()));
  std::vector<std::uint8_t> buf(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) buf[i] = static_cast<std::uint8_t>(labels[i]);
  f.write(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

Dataset load_cifar10_batches(const std::vector<std::string>& paths) {
  constexpr std::int64_t kRecord = 1 + 3072;
  std::vector<std::uint8_t> all;
  for (const auto& p : paths) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + p);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.empty() || buf.size() % kRecord != 0)
      throw std::runtime_error(p + ": size " + std::to_string(buf.size()) + " is not a multiple of " +
                               std::to_string(kRecord) + "-byte records");
    all.insert(all.end(), buf.begin(), buf.end());
  }
  const std::int64_t n = static_cast<std::int64_t>(all.size()) / kRecord;
  Dataset ds;
  ds.sample_shape = {3, 32, 32};
  ds.images = Tensor({n, 3072});
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = all.data() + i * kRecord;
    ds.labels[static_cast<std::size_t>(i)] = rec[0];
    for (std::int64_t j = 0; j < 3072; ++j)
      ds.images(i, j) = static_cast<float>(rec[1 + j]) / 255.0f;
  }
  return ds;
}

}  // namespace rxsim
