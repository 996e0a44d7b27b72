#pragma once

#include <span>
#include <vector>

#include "csdn/graph.hpp"
#include "csdn/tensor.hpp"

namespace csdn {

// ---------------------------------------------------------------------------
// Plain kernels. Every matrix product starts from c (or zero) and adds the
// terms for inner index 0, 1, ..., k-1 in that order, so results equal the
// naive triple loop bit for bit.

// c[m x n] (+)= a[m x k] * b[k x n]
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
// c[k x n] (+)= a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

Tensor matmul(const Tensor& a, const Tensor& b);
// Row-wise softmax of logits/scale restricted to allowed entries; masked
// entries are exactly zero. Throws DegenerateRowError on an all-false row.
Tensor masked_softmax(const Tensor& logits, const BoolMatrix& mask, double scale);

class DegenerateRowError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Differentiable operations.

Var matmul(Graph& g, Var a, Var b);
// x[n x in] * weight[in x out] + bias[out]
Var linear(Graph& g, Var x, Var weight, Var bias);
// mask == nullptr means every entry is allowed.
Var masked_softmax(Graph& g, Var logits, const BoolMatrix* mask, double scale);

Var add(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var sum(Graph& g, Var a);
// Σ weights[i] * scalars[i]
Var weighted_sum(Graph& g, std::span<const Var> scalars, std::span<const double> weights);

Var gelu(Graph& g, Var x);
Var sigmoid(Graph& g, Var x);
// log(p / (1 - p)) with p clipped to [clip, 1 - clip]; zero gradient where
// clipping is active.
Var inverse_sigmoid(Graph& g, Var x, double clip = 1e-6);
// Per-row normalization over the last axis with affine gamma/beta.
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-5);

Var reshape(Graph& g, Var x, Shape shape);
Var slice_cols(Graph& g, Var x, std::size_t begin, std::size_t end);
Var concat_cols(Graph& g, std::span<const Var> parts);

// Scaled dot-product attention over `heads` column groups of q, k, v:
// out[:, h] = softmax(q_h k_h^T / sqrt(d/heads), mask) v_h, heads
// concatenated back to [n x d]. q is [n x d], k and v are [m x d].
Var multi_head_attention(Graph& g, Var q, Var k, Var v, std::size_t heads,
                         const BoolMatrix* mask);

}  // namespace csdn
