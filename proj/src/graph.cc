// ctxlm/graph.cc

// Copyright 2026  The ctxlm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "ctxlm/graph.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "ctxlm/errors.h"

namespace ctxlm::ag {

namespace {

thread_local bool grad_enabled = true;

std::string Extents(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

[[noreturn]] void ShapeFail(const char* op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

void RequireDefined(const char* op, const Tensor& t) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor");
}

// Allocates the output node; parents and the backward closure are attached
// only when some input is tracked and grad mode is on.
std::shared_ptr<Node> MakeNode(int rows, int cols, std::vector<double> value,
                               std::initializer_list<const Tensor*> inputs) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  if (!grad_enabled) return n;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    // Undefined optional inputs keep their slot so closures can index parents.
    for (const Tensor* t : inputs) n->parents.push_back(t->defined() ? t->node() : nullptr);
  }
  return n;
}

std::shared_ptr<Node> MakeNode(int rows, int cols, std::vector<double> value,
                               std::span<const Tensor> inputs) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  if (!grad_enabled) return n;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
  }
  return n;
}

enum class Broadcast { kFull, kRow, kCol, kScalar };

Broadcast ResolveBroadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (b.rows() == a.rows() && b.cols() == a.cols()) return Broadcast::kFull;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.rows() == a.rows() && b.cols() == 1) return Broadcast::kCol;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  ShapeFail(op, "cannot broadcast " + Extents(b) + " onto " + Extents(a));
}

inline std::size_t BIndex(Broadcast mode, int r, int c, int cols) {
  switch (mode) {
    case Broadcast::kFull: return std::size_t(r) * cols + c;
    case Broadcast::kRow: return std::size_t(c);
    case Broadcast::kCol: return std::size_t(r);
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

template <typename F, typename D>
Tensor Unary(const Tensor& a, F f, D dfdx) {
  std::vector<double> out(a.size());
  auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  auto n = MakeNode(a.rows(), a.cols(), std::move(out), {&a});
  if (n->requires_grad) {
    n->backward = [dfdx](Node& self) {
      Node& p = *self.parents[0];
      double* g = p.GradBuffer();
      for (std::size_t i = 0; i < self.size(); ++i)
        g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
    };
  }
  return Tensor(n);
}

}  // namespace

double* Node::GradBuffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad.data();
}

Tensor Tensor::Constant(int rows, int cols, std::vector<double> values) {
  if (rows <= 0 || cols <= 0 || values.size() != std::size_t(rows) * cols)
    throw DimensionError("constant: " + std::to_string(values.size()) +
                         " values for shape " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  return Tensor(n);
}

Tensor Tensor::Zeros(int rows, int cols) {
  return Constant(rows, cols, std::vector<double>(std::size_t(rows) * cols, 0.0));
}

Tensor Tensor::Full(int rows, int cols, double v) {
  return Constant(rows, cols, std::vector<double>(std::size_t(rows) * cols, v));
}

Tensor Tensor::Parameter(int rows, int cols, std::vector<double> values) {
  Tensor t = Constant(rows, cols, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item: tensor is " + Extents(*this));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->GradBuffer();
  return node_->grad;
}

bool GradEnabled() { return grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

// ---------------------------------------------------------------------------

Tensor MatMul(const Tensor& a, const Tensor& b, bool transpose_b) {
  RequireDefined("matmul", a);
  RequireDefined("matmul", b);
  const int m = a.rows(), k = a.cols();
  const int bk = transpose_b ? b.cols() : b.rows();
  const int n = transpose_b ? b.rows() : b.cols();
  if (bk != k)
    ShapeFail("matmul", Extents(a) + (transpose_b ? " x transpose " : " x ") +
                            Extents(b));
  std::vector<double> out(std::size_t(m) * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  if (!transpose_b) {
    for (int i = 0; i < m; ++i) {
      double* c = &out[std::size_t(i) * n];
      for (int p = 0; p < k; ++p) {
        const double av = A[std::size_t(i) * k + p];
        const double* br = B + std::size_t(p) * n;
        for (int j = 0; j < n; ++j) c[j] += av * br[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      const double* ar = A + std::size_t(i) * k;
      for (int j = 0; j < n; ++j) {
        const double* br = B + std::size_t(j) * k;
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += ar[p] * br[p];
        out[std::size_t(i) * n + j] = s;
      }
    }
  }
  auto node = MakeNode(m, n, std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward = [m, k, n, transpose_b](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const double* G = self.grad.data();
      const double* A = pa.value.data();
      const double* B = pb.value.data();
      if (pa.requires_grad) {
        double* dA = pa.GradBuffer();
        for (int i = 0; i < m; ++i) {
          const double* gr = G + std::size_t(i) * n;
          double* da = dA + std::size_t(i) * k;
          if (!transpose_b) {
            // dA[i,p] += G[i,:] . B[p,:]
            for (int p = 0; p < k; ++p) {
              const double* br = B + std::size_t(p) * n;
              double s = 0.0;
              for (int j = 0; j < n; ++j) s += gr[j] * br[j];
              da[p] += s;
            }
          } else {
            for (int j = 0; j < n; ++j) {
              const double g = gr[j];
              if (g == 0.0) continue;
              const double* br = B + std::size_t(j) * k;
              for (int p = 0; p < k; ++p) da[p] += g * br[p];
            }
          }
        }
      }
      if (pb.requires_grad) {
        double* dB = pb.GradBuffer();
        for (int i = 0; i < m; ++i) {
          const double* ar = A + std::size_t(i) * k;
          const double* gr = G + std::size_t(i) * n;
          if (!transpose_b) {
            for (int p = 0; p < k; ++p) {
              const double av = ar[p];
              if (av == 0.0) continue;
              double* db = dB + std::size_t(p) * n;
              for (int j = 0; j < n; ++j) db[j] += av * gr[j];
            }
          } else {
            for (int j = 0; j < n; ++j) {
              const double g = gr[j];
              if (g == 0.0) continue;
              double* db = dB + std::size_t(j) * k;
              for (int p = 0; p < k; ++p) db[p] += g * ar[p];
            }
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor Add(const Tensor& a, const Tensor& b) {
  RequireDefined("add", a);
  RequireDefined("add", b);
  const Broadcast mode = ResolveBroadcast("add", a, b);
  const int rows = a.rows(), cols = a.cols();
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = std::size_t(r) * cols + c;
      out[i] = av[i] + bv[BIndex(mode, r, c, cols)];
    }
  auto n = MakeNode(rows, cols, std::move(out), {&a, &b});
  if (n->requires_grad) {
    n->backward = [mode, rows, cols](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      if (pa.requires_grad) {
        double* g = pa.GradBuffer();
        for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
      }
      if (pb.requires_grad) {
        double* g = pb.GradBuffer();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            g[BIndex(mode, r, c, cols)] += self.grad[std::size_t(r) * cols + c];
      }
    };
  }
  return Tensor(n);
}

Tensor Multiply(const Tensor& a, const Tensor& b) {
  RequireDefined("multiply", a);
  RequireDefined("multiply", b);
  const Broadcast mode = ResolveBroadcast("multiply", a, b);
  const int rows = a.rows(), cols = a.cols();
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = std::size_t(r) * cols + c;
      out[i] = av[i] * bv[BIndex(mode, r, c, cols)];
    }
  auto n = MakeNode(rows, cols, std::move(out), {&a, &b});
  if (n->requires_grad) {
    n->backward = [mode, rows, cols](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      if (pa.requires_grad) {
        double* g = pa.GradBuffer();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) {
            const std::size_t i = std::size_t(r) * cols + c;
            g[i] += self.grad[i] * pb.value[BIndex(mode, r, c, cols)];
          }
      }
      if (pb.requires_grad) {
        double* g = pb.GradBuffer();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) {
            const std::size_t i = std::size_t(r) * cols + c;
            g[BIndex(mode, r, c, cols)] += self.grad[i] * pa.value[i];
          }
      }
    };
  }
  return Tensor(n);
}

Tensor Scale(const Tensor& a, double factor) {
  RequireDefined("scale", a);
  return Unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor ConcatCols(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const Tensor& t : parts) {
    RequireDefined("concat", t);
    if (t.rows() != rows)
      ShapeFail("concat", "row mismatch " + Extents(parts[0]) + " vs " + Extents(t));
    cols += t.cols();
  }
  std::vector<double> out(std::size_t(rows) * cols);
  std::vector<int> offsets;
  int off = 0;
  for (const Tensor& t : parts) {
    offsets.push_back(off);
    auto v = t.values();
    for (int r = 0; r < rows; ++r)
      std::copy_n(&v[std::size_t(r) * t.cols()], t.cols(), &out[std::size_t(r) * cols + off]);
    off += t.cols();
  }
  auto n = MakeNode(rows, cols, std::move(out), parts);
  if (n->requires_grad) {
    n->backward = [offsets, rows, cols](Node& self) {
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        Node& p = *self.parents[i];
        if (!p.requires_grad) continue;
        double* g = p.GradBuffer();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < p.cols; ++c)
            g[std::size_t(r) * p.cols + c] += self.grad[std::size_t(r) * cols + offsets[i] + c];
      }
    };
  }
  return Tensor(n);
}

Tensor ConcatRows(std::span<const Tensor> parts, int blocks) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  if (blocks < 1) throw UsageError("concat_rows: blocks must be positive");
  const int cols = parts[0].cols();
  int rows = 0;
  for (const Tensor& t : parts) {
    RequireDefined("concat_rows", t);
    if (t.cols() != cols)
      ShapeFail("concat_rows", "column mismatch " + Extents(parts[0]) + " vs " + Extents(t));
    if (t.rows() % blocks != 0)
      ShapeFail("concat_rows", Extents(t) + " not divisible into " + std::to_string(blocks) + " blocks");
    rows += t.rows();
  }
  const int block_rows = rows / blocks;
  std::vector<double> out(std::size_t(rows) * cols);
  // offsets[i] = row offset of part i within each output block
  std::vector<int> offsets;
  int off = 0;
  for (const Tensor& t : parts) {
    offsets.push_back(off);
    const int pr = t.rows() / blocks;
    auto v = t.values();
    for (int b = 0; b < blocks; ++b)
      std::copy_n(&v[std::size_t(b) * pr * cols], std::size_t(pr) * cols,
                  &out[(std::size_t(b) * block_rows + off) * cols]);
    off += pr;
  }
  auto n = MakeNode(rows, cols, std::move(out), parts);
  if (n->requires_grad) {
    n->backward = [offsets, blocks, block_rows, cols](Node& self) {
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        Node& p = *self.parents[i];
        if (!p.requires_grad) continue;
        const int pr = p.rows / blocks;
        double* g = p.GradBuffer();
        for (int b = 0; b < blocks; ++b) {
          const double* src = &self.grad[(std::size_t(b) * block_rows + offsets[i]) * cols];
          double* dst = g + std::size_t(b) * pr * cols;
          for (std::size_t e = 0; e < std::size_t(pr) * cols; ++e) dst[e] += src[e];
        }
      }
    };
  }
  return Tensor(n);
}

Tensor SliceCols(const Tensor& a, int begin, int count) {
  RequireDefined("slice_cols", a);
  if (begin < 0 || count <= 0 || begin + count > a.cols())
    ShapeFail("slice_cols", "columns [" + std::to_string(begin) + "," +
                                std::to_string(begin + count) + ") of " + Extents(a));
  const int rows = a.rows(), cols = a.cols();
  std::vector<double> out(std::size_t(rows) * count);
  auto v = a.values();
  for (int r = 0; r < rows; ++r)
    std::copy_n(&v[std::size_t(r) * cols + begin], count, &out[std::size_t(r) * count]);
  auto n = MakeNode(rows, count, std::move(out), {&a});
  if (n->requires_grad) {
    n->backward = [rows, cols, begin, count](Node& self) {
      double* g = self.parents[0]->GradBuffer();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < count; ++c)
          g[std::size_t(r) * cols + begin + c] += self.grad[std::size_t(r) * count + c];
    };
  }
  return Tensor(n);
}

Tensor SliceRows(const Tensor& a, int begin, int count, int blocks) {
  RequireDefined("slice_rows", a);
  if (blocks < 1 || a.rows() % blocks != 0)
    ShapeFail("slice_rows", Extents(a) + " not divisible into " + std::to_string(blocks) + " blocks");
  const int block_rows = a.rows() / blocks;
  if (begin < 0 || count <= 0 || begin + count > block_rows)
    ShapeFail("slice_rows", "rows [" + std::to_string(begin) + "," +
                                std::to_string(begin + count) + ") of blocks of " +
                                std::to_string(block_rows));
  const int cols = a.cols();
  std::vector<double> out(std::size_t(blocks) * count * cols);
  auto v = a.values();
  for (int b = 0; b < blocks; ++b)
    std::copy_n(&v[(std::size_t(b) * block_rows + begin) * cols], std::size_t(count) * cols,
                &out[std::size_t(b) * count * cols]);
  auto n = MakeNode(blocks * count, cols, std::move(out), {&a});
  if (n->requires_grad) {
    n->backward = [blocks, block_rows, begin, count, cols](Node& self) {
      double* g = self.parents[0]->GradBuffer();
      for (int b = 0; b < blocks; ++b) {
        const double* src = &self.grad[std::size_t(b) * count * cols];
        double* dst = g + (std::size_t(b) * block_rows + begin) * cols;
        for (std::size_t e = 0; e < std::size_t(count) * cols; ++e) dst[e] += src[e];
      }
    };
  }
  return Tensor(n);
}

Tensor Sigmoid(const Tensor& a) {
  RequireDefined("sigmoid", a);
  return Unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor Tanh(const Tensor& a) {
  RequireDefined("tanh", a);
  return Unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor Gelu(const Tensor& a) {
  RequireDefined("gelu", a);
  constexpr double kS = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kC = 0.044715;
  return Unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kS * (x + kC * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(kS * (x + kC * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kS * (1.0 + 3.0 * kC * x * x);
      });
}

Tensor Softmax(const Tensor& a) {
  RequireDefined("softmax", a);
  const int rows = a.rows(), cols = a.cols();
  std::vector<double> out(a.size());
  auto v = a.values();
  for (int r = 0; r < rows; ++r) {
    const double* x = &v[std::size_t(r) * cols];
    double* y = &out[std::size_t(r) * cols];
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (int c = 0; c < cols; ++c) y[c] /= z;
  }
  auto n = MakeNode(rows, cols, std::move(out), {&a});
  if (n->requires_grad) {
    n->backward = [rows, cols](Node& self) {
      double* g = self.parents[0]->GradBuffer();
      for (int r = 0; r < rows; ++r) {
        const double* y = &self.value[std::size_t(r) * cols];
        const double* gy = &self.grad[std::size_t(r) * cols];
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += gy[c] * y[c];
        for (int c = 0; c < cols; ++c) g[std::size_t(r) * cols + c] += y[c] * (gy[c] - dot);
      }
    };
  }
  return Tensor(n);
}

Tensor LogSoftmax(const Tensor& a) {
  RequireDefined("log_softmax", a);
  const int rows = a.rows(), cols = a.cols();
  std::vector<double> out(a.size());
  auto v = a.values();
  for (int r = 0; r < rows; ++r) {
    const double* x = &v[std::size_t(r) * cols];
    double* y = &out[std::size_t(r) * cols];
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (int c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
  auto n = MakeNode(rows, cols, std::move(out), {&a});
  if (n->requires_grad) {
    n->backward = [rows, cols](Node& self) {
      double* g = self.parents[0]->GradBuffer();
      for (int r = 0; r < rows; ++r) {
        const double* y = &self.value[std::size_t(r) * cols];
        const double* gy = &self.grad[std::size_t(r) * cols];
        double total = 0.0;
        for (int c = 0; c < cols; ++c) total += gy[c];
        for (int c = 0; c < cols; ++c)
          g[std::size_t(r) * cols + c] += gy[c] - std::exp(y[c]) * total;
      }
    };
  }
  return Tensor(n);
}

Tensor EmbeddingLookup(const Tensor& table, std::span<const int> ids) {
  RequireDefined("embedding_lookup", table);
  if (ids.empty()) throw UsageError("embedding_lookup: no ids");
  const int cols = table.cols();
  for (int id : ids) {
    if (id < 0 || id >= table.rows())
      throw IndexError("embedding_lookup: id " + std::to_string(id) +
                       " outside table of " + std::to_string(table.rows()) + " rows");
  }
  std::vector<double> out(ids.size() * cols);
  auto v = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(&v[std::size_t(ids[i]) * cols], cols, &out[i * cols]);
  auto n = MakeNode(int(ids.size()), cols, std::move(out), {&table});
  if (n->requires_grad) {
    std::vector<int> rows(ids.begin(), ids.end());
    n->backward = [rows = std::move(rows), cols](Node& self) {
      double* g = self.parents[0]->GradBuffer();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double* dst = g + std::size_t(rows[i]) * cols;
        const double* src = &self.grad[i * cols];
        for (int c = 0; c < cols; ++c) dst[c] += src[c];
      }
    };
  }
  return Tensor(n);
}

Tensor Mean(const Tensor& a, int axis) {
  RequireDefined("mean", a);
  if (axis != 0 && axis != 1) throw UsageError("mean: axis must be 0 or 1");
  const int rows = a.rows(), cols = a.cols();
  auto v = a.values();
  std::vector<double> out(axis == 0 ? cols : rows, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[axis == 0 ? c : r] += v[std::size_t(r) * cols + c];
  const double denom = axis == 0 ? rows : cols;
  for (double& x : out) x /= denom;
  auto n = MakeNode(axis == 0 ? 1 : rows, axis == 0 ? cols : 1, std::move(out), {&a});
  if (n->requires_grad) {
    n->backward = [axis, rows, cols, denom](Node& self) {
      double* g = self.parents[0]->GradBuffer();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          g[std::size_t(r) * cols + c] += self.grad[axis == 0 ? c : r] / denom;
    };
  }
  return Tensor(n);
}

Tensor Sum(const Tensor& a) {
  RequireDefined("sum", a);
  auto v = a.values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  auto n = MakeNode(1, 1, {s}, {&a});
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      Node& p = *self.parents[0];
      double* g = p.GradBuffer();
      for (std::size_t i = 0; i < p.size(); ++i) g[i] += self.grad[0];
    };
  }
  return Tensor(n);
}

Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  RequireDefined("layer_norm", x);
  const int rows = x.rows(), cols = x.cols();
  if (gain.rows() != 1 || gain.cols() != cols || bias.rows() != 1 || bias.cols() != cols)
    ShapeFail("layer_norm", "gain " + Extents(gain) + " / bias " + Extents(bias) +
                                " for input " + Extents(x));
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  auto v = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (int r = 0; r < rows; ++r) {
    const double* xr = &v[std::size_t(r) * cols];
    double mu = 0.0;
    for (int c = 0; c < cols; ++c) mu += xr[c];
    mu /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= cols;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = std::size_t(r) * cols + c;
      xhat[i] = (xr[c] - mu) * inv_std[r];
      out[i] = xhat[i] * gv[c] + bv[c];
    }
  }
  auto n = MakeNode(rows, cols, std::move(out), {&x, &gain, &bias});
  if (n->requires_grad) {
    n->backward = [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
      Node& px = *self.parents[0];
      Node& pg = *self.parents[1];
      Node& pb = *self.parents[2];
      const double* G = self.grad.data();
      if (pg.requires_grad) {
        double* dg = pg.GradBuffer();
        for (std::size_t i = 0; i < self.size(); ++i) dg[i % cols] += G[i] * xhat[i];
      }
      if (pb.requires_grad) {
        double* db = pb.GradBuffer();
        for (std::size_t i = 0; i < self.size(); ++i) db[i % cols] += G[i];
      }
      if (px.requires_grad) {
        double* dx = px.GradBuffer();
        for (int r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (int c = 0; c < cols; ++c) {
            const std::size_t i = std::size_t(r) * cols + c;
            const double d = G[i] * pg.value[c];
            mean_d += d;
            mean_dx += d * xhat[i];
          }
          mean_d /= cols;
          mean_dx /= cols;
          for (int c = 0; c < cols; ++c) {
            const std::size_t i = std::size_t(r) * cols + c;
            const double d = G[i] * pg.value[c];
            dx[i] += inv_std[r] * (d - mean_d - xhat[i] * mean_dx);
          }
        }
      }
    };
  }
  return Tensor(n);
}

Tensor MaskedAttentionScore(const Tensor& query_content, const Tensor& keys,
                            const Tensor& query_position, const Tensor& positions,
                            const AttentionLayout& layout) {
  RequireDefined("masked_attention_score", query_content);
  RequireDefined("masked_attention_score", keys);
  const int B = layout.blocks, H = layout.heads;
  const int width = query_content.cols();
  if (B < 1 || H < 1 || width % H != 0)
    ShapeFail("masked_attention_score", "width " + std::to_string(width) + " with " +
                                            std::to_string(H) + " heads");
  if (query_content.rows() % B != 0 || keys.rows() % B != 0)
    ShapeFail("masked_attention_score", "rows not divisible into " + std::to_string(B) + " blocks");
  const int L = query_content.rows() / B;
  const int K = keys.rows() / B;
  const int dh = width / H;
  if (keys.cols() != width || K < L)
    ShapeFail("masked_attention_score", "queries " + Extents(query_content) + " keys " + Extents(keys));
  const bool rel = positions.defined();
  if (rel) {
    RequireDefined("masked_attention_score", query_position);
    if (query_position.rows() != query_content.rows() || query_position.cols() != width ||
        positions.rows() < K || positions.cols() != width)
      ShapeFail("masked_attention_score", "position queries " + Extents(query_position) +
                                              " positions " + Extents(positions));
  }
  const int mem = K - L;
  const double scale = layout.scale;
  std::vector<double> out(std::size_t(B) * H * L * K, kMaskedScore);
  const double* qc = query_content.values().data();
  const double* kk = keys.values().data();
  const double* qp = rel ? query_position.values().data() : nullptr;
  const double* rr = rel ? positions.values().data() : nullptr;
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      for (int i = 0; i < L; ++i) {
        const double* q = qc + std::size_t(b * L + i) * width + h * dh;
        double* row = &out[(std::size_t(b * H + h) * L + i) * K];
        for (int j = 0; j <= mem + i; ++j) {
          const double* k = kk + std::size_t(b * K + j) * width + h * dh;
          double s = 0.0;
          for (int d = 0; d < dh; ++d) s += q[d] * k[d];
          if (rel) {
            const double* qpp = qp + std::size_t(b * L + i) * width + h * dh;
            const double* r = rr + std::size_t(mem + i - j) * width + h * dh;
            for (int d = 0; d < dh; ++d) s += qpp[d] * r[d];
          }
          row[j] = scale * s;
        }
      }
  auto n = MakeNode(B * H * L, K, std::move(out),
                    {&query_content, &keys, &query_position, &positions});
  if (n->requires_grad) {
    n->backward = [B, H, L, K, dh, width, mem, scale, rel](Node& self) {
      Node& pqc = *self.parents[0];
      Node& pk = *self.parents[1];
      Node* pqp = rel ? self.parents[2].get() : nullptr;
      Node* pr = rel ? self.parents[3].get() : nullptr;
      double* dqc = pqc.requires_grad ? pqc.GradBuffer() : nullptr;
      double* dk = pk.requires_grad ? pk.GradBuffer() : nullptr;
      double* dqp = rel && pqp->requires_grad ? pqp->GradBuffer() : nullptr;
      double* dr = rel && pr->requires_grad ? pr->GradBuffer() : nullptr;
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
          for (int i = 0; i < L; ++i) {
            const std::size_t qoff = std::size_t(b * L + i) * width + h * dh;
            const double* grow = &self.grad[(std::size_t(b * H + h) * L + i) * K];
            for (int j = 0; j <= mem + i; ++j) {
              const double g = grow[j] * scale;
              if (g == 0.0) continue;
              const std::size_t koff = std::size_t(b * K + j) * width + h * dh;
              for (int d = 0; d < dh; ++d) {
                if (dqc) dqc[qoff + d] += g * pk.value[koff + d];
                if (dk) dk[koff + d] += g * pqc.value[qoff + d];
              }
              if (rel) {
                const std::size_t roff = std::size_t(mem + i - j) * width + h * dh;
                for (int d = 0; d < dh; ++d) {
                  if (dqp) dqp[qoff + d] += g * pr->value[roff + d];
                  if (dr) dr[roff + d] += g * pqp->value[qoff + d];
                }
              }
            }
          }
    };
  }
  return Tensor(n);
}

Tensor AttendValues(const Tensor& weights, const Tensor& values, const AttentionLayout& layout) {
  RequireDefined("attend_values", weights);
  RequireDefined("attend_values", values);
  const int B = layout.blocks, H = layout.heads;
  const int width = values.cols();
  if (B < 1 || H < 1 || width % H != 0 || values.rows() % B != 0)
    ShapeFail("attend_values", "values " + Extents(values));
  const int K = values.rows() / B;
  const int dh = width / H;
  if (weights.cols() != K || weights.rows() % (B * H) != 0)
    ShapeFail("attend_values", "weights " + Extents(weights) + " values " + Extents(values));
  const int L = weights.rows() / (B * H);
  std::vector<double> out(std::size_t(B) * L * width, 0.0);
  const double* P = weights.values().data();
  const double* V = values.values().data();
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      for (int i = 0; i < L; ++i) {
        const double* p = P + (std::size_t(b * H + h) * L + i) * K;
        double* o = &out[std::size_t(b * L + i) * width + h * dh];
        for (int j = 0; j < K; ++j) {
          if (p[j] == 0.0) continue;
          const double* v = V + std::size_t(b * K + j) * width + h * dh;
          for (int d = 0; d < dh; ++d) o[d] += p[j] * v[d];
        }
      }
  auto n = MakeNode(B * L, width, std::move(out), {&weights, &values});
  if (n->requires_grad) {
    n->backward = [B, H, L, K, dh, width](Node& self) {
      Node& pw = *self.parents[0];
      Node& pv = *self.parents[1];
      double* dw = pw.requires_grad ? pw.GradBuffer() : nullptr;
      double* dv = pv.requires_grad ? pv.GradBuffer() : nullptr;
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
          for (int i = 0; i < L; ++i) {
            const std::size_t prow = (std::size_t(b * H + h) * L + i) * K;
            const double* go = &self.grad[std::size_t(b * L + i) * width + h * dh];
            for (int j = 0; j < K; ++j) {
              const std::size_t voff = std::size_t(b * K + j) * width + h * dh;
              if (dw) {
                double s = 0.0;
                for (int d = 0; d < dh; ++d) s += go[d] * pv.value[voff + d];
                dw[prow + j] += s;
              }
              if (dv) {
                const double p = pw.value[prow + j];
                if (p == 0.0) continue;
                for (int d = 0; d < dh; ++d) dv[voff + d] += p * go[d];
              }
            }
          }
    };
  }
  return Tensor(n);
}

Tensor CrossEntropy(const Tensor& logits, std::span<const int> targets,
                    std::span<const double> weights) {
  RequireDefined("cross_entropy", logits);
  const int rows = logits.rows(), cols = logits.cols();
  if (int(targets.size()) != rows || int(weights.size()) != rows)
    ShapeFail("cross_entropy", std::to_string(targets.size()) + " targets / " +
                                   std::to_string(weights.size()) + " weights for " +
                                   Extents(logits));
  for (int t : targets)
    if (t < 0 || t >= cols)
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside " +
                       std::to_string(cols) + " classes");
  auto v = logits.values();
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double* x = &v[std::size_t(r) * cols];
    double* p = &probs[std::size_t(r) * cols];
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += (p[c] = std::exp(x[c] - mx));
    for (int c = 0; c < cols; ++c) p[c] /= z;
    if (weights[r] != 0.0) loss += weights[r] * (mx + std::log(z) - x[targets[r]]);
  }
  auto n = MakeNode(1, 1, {loss}, {&logits});
  if (n->requires_grad) {
    std::vector<int> t(targets.begin(), targets.end());
    std::vector<double> w(weights.begin(), weights.end());
    n->backward = [rows, cols, probs = std::move(probs), t = std::move(t),
                   w = std::move(w)](Node& self) {
      double* g = self.parents[0]->GradBuffer();
      const double up = self.grad[0];
      for (int r = 0; r < rows; ++r) {
        if (w[r] == 0.0) continue;
        const double s = up * w[r];
        for (int c = 0; c < cols; ++c) g[std::size_t(r) * cols + c] += s * probs[std::size_t(r) * cols + c];
        g[std::size_t(r) * cols + t[r]] -= s;
      }
    };
  }
  return Tensor(n);
}

Tensor StopGradient(const Tensor& a) {
  RequireDefined("stop_gradient", a);
  auto n = std::make_shared<Node>();
  n->rows = a.rows();
  n->cols = a.cols();
  n->value.assign(a.values().begin(), a.values().end());
  return Tensor(n);
}

void Backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward: undefined loss");
  if (loss.size() != 1) throw UsageError("backward: loss must be scalar, got " + Extents(loss));
  if (!loss.requires_grad()) throw UsageError("backward: loss was not recorded on a tracked graph");
  // Iterative post-order DFS for the topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->GradBuffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

bool AllFinite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  for (double g : t.node()->grad)
    if (!std::isfinite(g)) return false;
  return true;
}

// ---------------------------------------------------------------------------

Tensor& ParameterStore::Add(const std::string& name, int rows, int cols,
                            std::vector<double> values) {
  if (Contains(name)) throw UsageError("duplicate parameter '" + name + "'");
  entries_.emplace_back(name, Tensor::Parameter(rows, cols, std::move(values)));
  return entries_.back().second;
}

Tensor& ParameterStore::AddUniform(const std::string& name, int rows, int cols, double bound,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(std::size_t(rows) * cols);
  for (double& x : v) x = dist(rng);
  return Add(name, rows, cols, std::move(v));
}

Tensor& ParameterStore::AddConstant(const std::string& name, int rows, int cols, double v) {
  return Add(name, rows, cols, std::vector<double>(std::size_t(rows) * cols, v));
}

Tensor& ParameterStore::Get(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw UsageError("no parameter named '" + name + "'");
}

const Tensor& ParameterStore::Get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw UsageError("no parameter named '" + name + "'");
}

bool ParameterStore::Contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

std::size_t ParameterStore::ParameterCount() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ParameterStore::ZeroGrad() {
  for (auto& e : entries_) e.second.ZeroGrad();
}

std::vector<std::vector<double>> ParameterStore::Snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.second.values().begin(), e.second.values().end());
  return out;
}

void ParameterStore::Restore(const std::vector<std::vector<double>>& snapshot) {
  if (snapshot.size() != entries_.size()) throw DimensionError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].second.mutable_values();
    if (snapshot[i].size() != dst.size())
      throw DimensionError("restore: size mismatch for '" + entries_[i].first + "'");
    std::copy(snapshot[i].begin(), snapshot[i].end(), dst.begin());
  }
}

}  // namespace ctxlm::ag
