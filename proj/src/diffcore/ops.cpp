#include "mrd/diffcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mrd/error.hpp"

namespace mrd {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool needs_grad = false;
  if (grad_mode_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->grad.assign(node->values.size(), 0.0);
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Tensor(std::move(node));
}

bool wants_grad(const std::shared_ptr<Node>& n) { return !n->grad.empty(); }

void require_rank(const Tensor& t, std::size_t lo, std::size_t hi, const char* op) {
  if (t.rank() < lo || t.rank() > hi) {
    throw DimensionError(std::string(op) + ": unsupported rank for shape " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void check_offsets(std::span<const std::size_t> offsets, std::size_t rows, const char* op) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows) {
    throw DimensionError(std::string(op) + ": segment offsets do not cover " +
                         std::to_string(rows) + " rows");
  }
  for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
    if (offsets[b + 1] <= offsets[b]) {
      throw DimensionError(std::string(op) + ": empty segment " + std::to_string(b));
    }
  }
}

// out[m x n] += a[m x k] * b[k x n]
void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out[m x k] += g[m x n] * b[k x n]^T
void gemm_nt_acc(const double* g, const double* b, double* out, std::size_t m, std::size_t n,
                 std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gr = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* br = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
      out[i * k + p] += s;
    }
  }
}

// out[k x n] += a[m x k]^T * g[m x n]
void gemm_tn_acc(const double* a, const double* g, double* out, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gr = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
    }
  }
}

void check_probability_rows(const Tensor& t, const char* which) {
  const auto n = t.cols();
  const auto v = t.values();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double x = v[r * n + j];
      if (!(x >= 0.0)) {
        throw ValidationError(std::string("kl_divergence: ") + which +
                              " has a negative or non-finite entry");
      }
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw ValidationError(std::string("kl_divergence: ") + which +
                            " is not normalized (sum = " + std::to_string(s) + ")");
    }
  }
}

}  // namespace

std::span<const double> AttentionTrace::row_weights(std::size_t query_row,
                                                    std::size_t head) const {
  std::size_t b = 0;
  while (q_offsets[b + 1] <= query_row) ++b;
  const std::size_t keys = k_offsets[b + 1] - k_offsets[b];
  return std::span<const double>(weights).subspan(row_start[query_row] + head * keys, keys);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (wants_grad(pa)) gemm_nt_acc(self.grad.data(), pb->values.data(), pa->grad.data(), m, n, k);
    if (wants_grad(pb)) gemm_tn_acc(pa->values.data(), self.grad.data(), pb->grad.data(), m, k, n);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const auto v = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (const auto& p : self.parents) {
      if (!wants_grad(p)) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (wants_grad(pa)) pa->grad[i] += self.grad[i];
      if (wants_grad(pb)) pb->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (wants_grad(pa)) pa->grad[i] += self.grad[i] * pb->values[i];
      if (wants_grad(pb)) pb->grad[i] += self.grad[i] * pa->values[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    const auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p->values[i] > 0.0) p->grad[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_result({1}, {s}, {a}, [](Node& self) {
    auto& g = self.parents[0]->grad;
    const double up = self.grad[0];
    for (auto& x : g) x += up;
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return make_result({1}, {s}, {a, b}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    const double up = self.grad[0];
    for (std::size_t i = 0; i < pa->values.size(); ++i) {
      if (wants_grad(pa)) pa->grad[i] += up * pb->values[i];
      if (wants_grad(pb)) pb->grad[i] += up * pa->values[i];
    }
  });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  require_rank(a, 1, 2, "mean");
  if (axis >= a.rank()) {
    throw DimensionError("mean: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(a.shape()));
  }
  const auto v = a.values();
  if (a.rank() == 1) {
    const double n = static_cast<double>(a.size());
    double s = 0.0;
    for (double x : v) s += x;
    return make_result({1}, {s / n}, {a}, [n](Node& self) {
      for (auto& g : self.parents[0]->grad) g += self.grad[0] / n;
    });
  }
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (axis == 0) {
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += v[i * n + j];
    for (auto& x : out) x /= static_cast<double>(m);
    return make_result({n}, std::move(out), {a}, [m, n](Node& self) {
      auto& g = self.parents[0]->grad;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] / static_cast<double>(m);
    });
  }
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i] += v[i * n + j];
    out[i] /= static_cast<double>(n);
  }
  return make_result({m}, std::move(out), {a}, [m, n](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i] / static_cast<double>(n);
  });
}

Tensor mean_of(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("mean_of: no inputs");
  for (const auto& p : parts) require_same_shape(parts[0], p, "mean_of");
  const double n = static_cast<double>(parts.size());
  std::vector<double> out(parts[0].size(), 0.0);
  for (const auto& p : parts) {
    const auto v = p.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  for (auto& x : out) x /= n;
  return make_result(parts[0].shape(), std::move(out), {parts.begin(), parts.end()},
                     [n](Node& self) {
                       for (const auto& p : self.parents) {
                         if (!wants_grad(p)) continue;
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           p->grad[i] += self.grad[i] / n;
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const auto rank = parts[0].rank();
  require_rank(parts[0], 1, 2, "concat");
  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank || p.rows() != rows) {
      throw DimensionError("concat: incompatible shapes " + shape_string(parts[0].shape()) +
                           " and " + shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + col);
    col += widths[k];
  }
  Shape shape = rank == 1 ? Shape{total} : Shape{rows, total};
  return make_result(std::move(shape), std::move(out), {parts.begin(), parts.end()},
                     [rows, total, widths](Node& self) {
                       std::size_t col = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         auto& p = self.parents[k];
                         if (wants_grad(p)) {
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               p->grad[r * widths[k] + j] += self.grad[r * total + col + j];
                         }
                         col += widths[k];
                       }
                     });
}

Tensor interleave_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("interleave_rows: no inputs");
  for (const auto& p : parts) {
    require_rank(p, 1, 2, "interleave_rows");
    if (p.rows() != parts[0].rows() || p.cols() != parts[0].cols()) {
      throw DimensionError("interleave_rows: shape mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
  }
  const std::size_t b = parts[0].rows(), d = parts[0].cols(), n = parts.size();
  std::vector<double> out(b * n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = parts[i].values();
    for (std::size_t s = 0; s < b; ++s)
      std::copy_n(v.data() + s * d, d, out.data() + (s * n + i) * d);
  }
  return make_result({b * n, d}, std::move(out), {parts.begin(), parts.end()},
                     [b, d, n](Node& self) {
                       for (std::size_t i = 0; i < n; ++i) {
                         auto& p = self.parents[i];
                         if (!wants_grad(p)) continue;
                         for (std::size_t s = 0; s < b; ++s)
                           for (std::size_t j = 0; j < d; ++j)
                             p->grad[s * d + j] += self.grad[(s * n + i) * d + j];
                       }
                     });
}

Tensor row(const Tensor& a, std::size_t r) {
  require_rank(a, 2, 2, "row");
  if (r >= a.rows()) {
    throw IndexError("row: index " + std::to_string(r) + " out of range for " +
                     shape_string(a.shape()));
  }
  const std::size_t n = a.cols();
  std::vector<double> out(a.values().begin() + r * n, a.values().begin() + (r + 1) * n);
  return make_result({n}, std::move(out), {a}, [r, n](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[j];
  });
}

Tensor project(const Tensor& x, const Tensor& w) {
  require_rank(x, 1, 2, "project");
  if (w.rank() != 2 || x.cols() != w.shape()[0]) {
    throw DimensionError("project: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(w.shape()));
  }
  const std::size_t m = x.rows(), k = x.cols(), n = w.shape()[1];
  std::vector<double> out(m * n, 0.0);
  gemm_acc(x.values().data(), w.values().data(), out.data(), m, k, n);
  Shape shape = x.rank() == 1 ? Shape{n} : Shape{m, n};
  return make_result(std::move(shape), std::move(out), {x, w}, [m, k, n](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    if (wants_grad(px)) gemm_nt_acc(self.grad.data(), pw->values.data(), px->grad.data(), m, n, k);
    if (wants_grad(pw)) gemm_tn_acc(px->values.data(), self.grad.data(), pw->grad.data(), m, k, n);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 1, 2, "linear");
  if (w.rank() != 2 || x.cols() != w.shape()[0]) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(w.shape()));
  }
  const std::size_t m = x.rows(), k = x.cols(), n = w.shape()[1];
  if (b.rank() != 1 || b.size() != n) {
    throw DimensionError("linear: bias " + shape_string(b.shape()) + " does not match weight " +
                         shape_string(w.shape()));
  }
  std::vector<double> out(m * n);
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * n);
  gemm_acc(x.values().data(), w.values().data(), out.data(), m, k, n);
  Shape shape = x.rank() == 1 ? Shape{n} : Shape{m, n};
  return make_result(std::move(shape), std::move(out), {x, w, b}, [m, k, n](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    const auto& pb = self.parents[2];
    if (wants_grad(px)) gemm_nt_acc(self.grad.data(), pw->values.data(), px->grad.data(), m, n, k);
    if (wants_grad(pw)) gemm_tn_acc(px->values.data(), self.grad.data(), pw->grad.data(), m, k, n);
    if (wants_grad(pb)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pb->grad[j] += self.grad[i * n + j];
    }
  });
}

Tensor softmax_temp(const Tensor& x, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("softmax_temp: temperature must be positive, got " + std::to_string(tau));
  }
  require_rank(x, 1, 2, "softmax_temp");
  const std::size_t rows = x.rows(), n = x.cols();
  const auto v = x.values();
  std::vector<double> out(rows * n);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp((in[j] - mx) / tau);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, n, tau](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = self.values.data() + r * n;
      const double* up = self.grad.data() + r * n;
      double inner = 0.0;
      for (std::size_t j = 0; j < n; ++j) inner += up[j] * s[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += s[j] * (up[j] - inner) / tau;
    }
  });
}

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  require_rank(p, 1, 2, "kl_divergence");
  if (p.shape() != q.shape()) {
    throw DimensionError("kl_divergence: length mismatch " + shape_string(p.shape()) + " vs " +
                         shape_string(q.shape()));
  }
  check_probability_rows(p, "p");
  check_probability_rows(q, "q");
  const std::size_t rows = p.rows(), n = p.cols();
  const auto pv = p.values(), qv = q.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double pj = pv[r * n + j];
      if (pj == 0.0) continue;
      const double qj = std::max(qv[r * n + j], kKlClamp);
      s += pj * (std::log(pj) - std::log(qj));
    }
    out[r] = s;
  }
  Shape shape = p.rank() == 1 ? Shape{1} : Shape{rows};
  return make_result(std::move(shape), std::move(out), {p, q}, [rows, n](Node& self) {
    const auto& pp = self.parents[0];
    const auto& pq = self.parents[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double up = self.grad[r];
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = r * n + j;
        const double pj = pp->values[i];
        const double qj = pq->values[i];
        if (wants_grad(pq) && qj > kKlClamp) pq->grad[i] -= up * pj / qj;
        if (wants_grad(pp) && pj > 0.0) {
          pp->grad[i] += up * (std::log(pj) - std::log(std::max(qj, kKlClamp)) + 1.0);
        }
      }
    }
  });
}

namespace {

Tensor cross_entropy_impl(const Tensor& logits, std::vector<int> labels, Shape out_shape) {
  const std::size_t rows = logits.rows(), c = logits.cols();
  const auto v = logits.values();
  std::vector<double> out(rows);
  std::vector<double> probs(rows * c);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * c;
    const double mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[r * c + j] = std::exp(in[j] - mx);
      z += probs[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= z;
    out[r] = std::log(z) - (in[labels[r]] - mx);
  }
  return make_result(std::move(out_shape), std::move(out), {logits},
                     [rows, c, labels = std::move(labels), probs = std::move(probs)](Node& self) {
                       auto& g = self.parents[0]->grad;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double up = self.grad[r];
                         for (std::size_t j = 0; j < c; ++j) {
                           const double target = static_cast<int>(j) == labels[r] ? 1.0 : 0.0;
                           g[r * c + j] += up * (probs[r * c + j] - target);
                         }
                       }
                     });
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  require_rank(logits, 1, 1, "cross_entropy");
  if (label >= logits.size()) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  return cross_entropy_impl(logits, {static_cast<int>(label)}, {1});
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 1, 2, "cross_entropy");
  if (labels.size() != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                       std::to_string(logits.cols()) + " classes");
    }
  }
  Shape shape = logits.rank() == 1 ? Shape{1} : Shape{logits.rows()};
  return cross_entropy_impl(logits, {labels.begin(), labels.end()}, std::move(shape));
}

Tensor segment_mean(const Tensor& x, std::span<const std::size_t> offsets) {
  require_rank(x, 2, 2, "segment_mean");
  check_offsets(offsets, x.rows(), "segment_mean");
  const std::size_t b = offsets.size() - 1, n = x.cols();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  const auto v = x.values();
  std::vector<double> out(b * n, 0.0);
  for (std::size_t s = 0; s < b; ++s) {
    const double len = static_cast<double>(off[s + 1] - off[s]);
    for (std::size_t r = off[s]; r < off[s + 1]; ++r)
      for (std::size_t j = 0; j < n; ++j) out[s * n + j] += v[r * n + j];
    for (std::size_t j = 0; j < n; ++j) out[s * n + j] /= len;
  }
  return make_result({b, n}, std::move(out), {x}, [b, n, off = std::move(off)](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t s = 0; s < b; ++s) {
      const double len = static_cast<double>(off[s + 1] - off[s]);
      for (std::size_t r = off[s]; r < off[s + 1]; ++r)
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[s * n + j] / len;
    }
  });
}

Tensor segment_first(const Tensor& x, std::span<const std::size_t> offsets) {
  require_rank(x, 2, 2, "segment_first");
  check_offsets(offsets, x.rows(), "segment_first");
  const std::size_t b = offsets.size() - 1, n = x.cols();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  const auto v = x.values();
  std::vector<double> out(b * n);
  for (std::size_t s = 0; s < b; ++s) std::copy_n(v.data() + off[s] * n, n, out.data() + s * n);
  return make_result({b, n}, std::move(out), {x}, [b, n, off = std::move(off)](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t j = 0; j < n; ++j) g[off[s] * n + j] += self.grad[s * n + j];
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::span<const std::size_t> q_offsets, std::span<const std::size_t> k_offsets,
                 AttentionTrace* trace) {
  require_rank(q, 2, 2, "attention");
  require_rank(k, 2, 2, "attention");
  require_same_shape(k, v, "attention");
  const std::size_t w = q.cols();
  if (k.cols() != w) {
    throw DimensionError("attention: query width " + shape_string(q.shape()) +
                         " does not match keys " + shape_string(k.shape()));
  }
  if (heads == 0 || w % heads != 0) {
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide width " +
                      std::to_string(w));
  }
  check_offsets(q_offsets, q.rows(), "attention");
  check_offsets(k_offsets, k.rows(), "attention");
  if (q_offsets.size() != k_offsets.size()) {
    throw DimensionError("attention: query and key segment counts differ");
  }
  const std::size_t dk = w / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const std::size_t nq = q.rows(), segs = q_offsets.size() - 1;
  std::vector<std::size_t> qo(q_offsets.begin(), q_offsets.end());
  std::vector<std::size_t> ko(k_offsets.begin(), k_offsets.end());

  // weights laid out per query row: [head][key]
  std::vector<std::size_t> row_start(nq);
  std::size_t total = 0;
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t keys = ko[s + 1] - ko[s];
    for (std::size_t i = qo[s]; i < qo[s + 1]; ++i) {
      row_start[i] = total;
      total += heads * keys;
    }
  }
  std::vector<double> weights(total);
  std::vector<double> out(nq * w, 0.0);
  const auto qv = q.values(), kv = k.values(), vv = v.values();
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t k0 = ko[s], keys = ko[s + 1] - ko[s];
    for (std::size_t i = qo[s]; i < qo[s + 1]; ++i) {
      for (std::size_t h = 0; h < heads; ++h) {
        double* wts = weights.data() + row_start[i] + h * keys;
        const double* qi = qv.data() + i * w + h * dk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < keys; ++j) {
          const double* kj = kv.data() + (k0 + j) * w + h * dk;
          double sc = 0.0;
          for (std::size_t t = 0; t < dk; ++t) sc += qi[t] * kj[t];
          wts[j] = sc * inv_sqrt;
          mx = std::max(mx, wts[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < keys; ++j) {
          wts[j] = std::exp(wts[j] - mx);
          z += wts[j];
        }
        for (std::size_t j = 0; j < keys; ++j) wts[j] /= z;
        double* oi = out.data() + i * w + h * dk;
        for (std::size_t j = 0; j < keys; ++j) {
          const double* vj = vv.data() + (k0 + j) * w + h * dk;
          for (std::size_t t = 0; t < dk; ++t) oi[t] += wts[j] * vj[t];
        }
      }
    }
  }
  if (trace) {
    trace->heads = heads;
    trace->q_offsets = qo;
    trace->k_offsets = ko;
    trace->row_start = row_start;
    trace->weights = weights;
  }
  return make_result(
      {nq, w}, std::move(out), {q, k, v},
      [=, weights = std::move(weights), row_start = std::move(row_start)](Node& self) {
        const auto& pq = self.parents[0];
        const auto& pk = self.parents[1];
        const auto& pv = self.parents[2];
        std::vector<double> dscore;
        for (std::size_t s = 0; s < segs; ++s) {
          const std::size_t k0 = ko[s], keys = ko[s + 1] - ko[s];
          dscore.resize(keys);
          for (std::size_t i = qo[s]; i < qo[s + 1]; ++i) {
            for (std::size_t h = 0; h < heads; ++h) {
              const double* wts = weights.data() + row_start[i] + h * keys;
              const double* go = self.grad.data() + i * w + h * dk;
              double inner = 0.0;
              for (std::size_t j = 0; j < keys; ++j) {
                const double* vj = pv->values.data() + (k0 + j) * w + h * dk;
                double dw = 0.0;
                for (std::size_t t = 0; t < dk; ++t) dw += go[t] * vj[t];
                dscore[j] = dw;
                inner += wts[j] * dw;
                if (wants_grad(pv)) {
                  double* gv = pv->grad.data() + (k0 + j) * w + h * dk;
                  for (std::size_t t = 0; t < dk; ++t) gv[t] += wts[j] * go[t];
                }
              }
              for (std::size_t j = 0; j < keys; ++j)
                dscore[j] = wts[j] * (dscore[j] - inner) * inv_sqrt;
              const double* qi = pq->values.data() + i * w + h * dk;
              for (std::size_t j = 0; j < keys; ++j) {
                const double* kj = pk->values.data() + (k0 + j) * w + h * dk;
                if (wants_grad(pq)) {
                  double* gq = pq->grad.data() + i * w + h * dk;
                  for (std::size_t t = 0; t < dk; ++t) gq[t] += dscore[j] * kj[t];
                }
                if (wants_grad(pk)) {
                  double* gk = pk->grad.data() + (k0 + j) * w + h * dk;
                  for (std::size_t t = 0; t < dk; ++t) gk[t] += dscore[j] * qi[t];
                }
              }
            }
          }
        }
      });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 AttentionTrace* trace) {
  require_rank(q, 2, 2, "attention");
  require_rank(k, 2, 2, "attention");
  const std::size_t qo[2] = {0, q.rows()};
  const std::size_t ko[2] = {0, k.rows()};
  return attention(q, k, v, heads, qo, ko, trace);
}

}  // namespace mrd
