// ctxlm/graph.h

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

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// Every value is a 2-D matrix (vectors are 1 x n).  Operations build the
// graph as they execute; Backward() walks it in reverse topological order.
// A graph and its tensors belong to one thread; the grad-mode switch is
// thread-local so frozen models can be scored concurrently.

#ifndef CTXLM_GRAPH_H_
#define CTXLM_GRAPH_H_

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ctxlm::ag {

/// Score written into masked attention positions.  Finite, so every tensor
/// stays finite; exp() of it underflows to exactly zero.
inline constexpr double kMaskedScore = -1e30;

struct Node {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t size() const { return value.size(); }
  double* GradBuffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor Constant(int rows, int cols, std::vector<double> values);
  static Tensor Zeros(int rows, int cols);
  static Tensor Full(int rows, int cols, double v);
  /// Leaf whose gradient is tracked.
  static Tensor Parameter(int rows, int cols, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::array<int, 2> shape() const { return {node_->rows, node_->cols}; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double at(int r, int c) const { return node_->value[std::size_t(r) * node_->cols + c]; }
  double item() const;

  /// Gradient; all zeros when nothing has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void ZeroGrad() { node_->grad.clear(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// True while the calling thread records graph edges.
bool GradEnabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Operations.  Shape mismatches throw DimensionError naming the op.

/// [m,k] x [k,n] -> [m,n]; with transpose_b, b is [n,k].
Tensor MatMul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// Elementwise with broadcasting of b over a: b is [m,n], [1,n], [m,1] or [1,1].
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Multiply(const Tensor& a, const Tensor& b);
Tensor Scale(const Tensor& a, double factor);

/// Concatenation along the last axis.
Tensor ConcatCols(std::span<const Tensor> parts);
/// Row concatenation.  With blocks > 1 every input is split into `blocks`
/// equal row groups and the groups are interleaved block by block.
Tensor ConcatRows(std::span<const Tensor> parts, int blocks = 1);
Tensor SliceCols(const Tensor& a, int begin, int count);
/// Rows [begin, begin+count) of each of the `blocks` row groups.
Tensor SliceRows(const Tensor& a, int begin, int count, int blocks = 1);

Tensor Sigmoid(const Tensor& a);
Tensor Tanh(const Tensor& a);
/// tanh-approximated GELU.
Tensor Gelu(const Tensor& a);

/// Row-wise (last axis).  Max-subtracted.
Tensor Softmax(const Tensor& a);
Tensor LogSoftmax(const Tensor& a);

/// Rows of `table` selected by `ids`; throws IndexError on ids >= rows.
Tensor EmbeddingLookup(const Tensor& table, std::span<const int> ids);

/// axis 0 -> [1,n]; axis 1 -> [m,1].
Tensor Mean(const Tensor& a, int axis);
/// Scalar sum of all entries.
Tensor Sum(const Tensor& a);

/// Row-wise layer normalisation with gain and bias of shape [1,n].
Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-5);

struct AttentionLayout {
  int blocks = 1;  // independent sequences stacked by rows
  int heads = 1;   // column groups
  double scale = 1.0;
};

/// Causal multi-head attention logits with an optional relative-position term.
///
/// query_content, query_position: [blocks*L, heads*dh]; keys: [blocks*K,
/// heads*dh] with K >= L, the first K-L keys of each block being memory.
/// positions: [K, heads*dh], row d encoding relative distance d (may be
/// undefined to drop the term).  Query i sees key j iff
/// dist = (K-L+i) - j >= 0, with logit
///   scale * (qc_i . k_j + qp_i . r_dist)
/// and kMaskedScore elsewhere.  Output: [blocks*heads*L, K], rows ordered
/// (block, head, query).
Tensor MaskedAttentionScore(const Tensor& query_content, const Tensor& keys,
                            const Tensor& query_position, const Tensor& positions,
                            const AttentionLayout& layout);

/// Applies attention weights [blocks*heads*L, K] to values [blocks*K,
/// heads*dh], giving [blocks*L, heads*dh].
Tensor AttendValues(const Tensor& weights, const Tensor& values,
                    const AttentionLayout& layout);

/// Fused log-softmax + weighted negative log-likelihood over the rows of
/// `logits`.  Returns the scalar sum_i w_i * -log softmax(logits_i)[t_i].
Tensor CrossEntropy(const Tensor& logits, std::span<const int> targets,
                    std::span<const double> weights);

/// Same values, no gradient through this edge.
Tensor StopGradient(const Tensor& a);

/// Accumulates d(loss)/d(x) into every tracked tensor feeding `loss`.
/// Throws UsageError when `loss` is not a scalar or was not recorded.
void Backward(const Tensor& loss);

bool AllFinite(const Tensor& t);

// ---------------------------------------------------------------------------

/// Named parameters in insertion order.
class ParameterStore {
 public:
  Tensor& Add(const std::string& name, int rows, int cols, std::vector<double> values);
  Tensor& AddUniform(const std::string& name, int rows, int cols, double bound,
                     std::mt19937_64& rng);
  Tensor& AddConstant(const std::string& name, int rows, int cols, double v);

  Tensor& Get(const std::string& name);
  const Tensor& Get(const std::string& name) const;
  bool Contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t ParameterCount() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  void ZeroGrad();
  /// Deep copy of all values, in entry order.
  std::vector<std::vector<double>> Snapshot() const;
  void Restore(const std::vector<std::vector<double>>& snapshot);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace ctxlm::ag

#endif  // CTXLM_GRAPH_H_
