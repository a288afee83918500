#include "rxsim/tensor.hpp"

#include <sstream>

namespace rxsim {

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: both operands must be rank-2");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul: inner dimensions differ: " + a.shape_str() + " vs " + b.shape_str());
  Tensor c({m, n});

  // B is widened to binary64 once; the k-major loop then runs pure f64 FMAs.
  std::vector<double> bd(static_cast<std::size_t>(k) * static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < bd.size(); ++i) bd[i] = static_cast<double>(b.data[i]);

  std::vector<double> acc(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < m; ++i) {
    for (auto& x : acc) x = 0.0;
    const float* arow = a.data.data() + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = static_cast<double>(arow[kk]);
      if (av == 0.0) continue;  // pruned weights and ReLU zeros are common
      const double* brow = bd.data() + static_cast<std::size_t>(kk) * static_cast<std::size_t>(n);
      for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += av * brow[j];
    }
    float* crow = c.data.data() + i * n;
    for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[static_cast<std::size_t>(j)]);
  }
  return c;
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose2d: rank-2 tensor required");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

void add_row_vector(Tensor& a, const Tensor& row) {
  if (a.rank() != 2 || row.numel() != a.dim(1)) throw std::invalid_argument("add_row_vector: shape mismatch");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  for (std::int64_t i = 0; i < m; ++i) {
    float* arow = a.data.data() + i * n;
    for (std::int64_t j = 0; j < n; ++j) arow[j] += row[j];
  }
}

}  // namespace rxsim
