// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives over Tensor/Tape. Every op records a single
// backward closure; gradients are accumulated into inputs that require grad.
#pragma once

#include <cstdint>
#include <vector>

#include "remoe/tensor.hpp"

namespace remoe::ops {

// y = a b, a:[m x k], b:[k x n]
TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr div(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scalar_mul(Tape& tape, const TensorPtr& a, double s);
TensorPtr exp(Tape& tape, const TensorPtr& a);
TensorPtr log(Tape& tape, const TensorPtr& a);

// Subgradient 0 at exactly 0: gradient passes only where x > 0.
TensorPtr relu(Tape& tape, const TensorPtr& a);
TensorPtr silu(Tape& tape, const TensorPtr& a);

// Row-wise softmax with row-max subtraction, x:[t x e].
TensorPtr softmax_rows(Tape& tape, const TensorPtr& x);

// Value identical to x; contributes zero gradient to x.
TensorPtr stop_gradient(const TensorPtr& x);

// y[t,i] = x[t,i] / rms(x[t,:]) * gain[i]
TensorPtr rms_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gain, double eps = 1e-6);

// Row lookup into table:[V x d] by token id.
TensorPtr embedding(Tape& tape, const TensorPtr& table, const std::vector<int>& ids);

// Fused causal self-attention over one sequence with RoPE and grouped
// query heads. q:[S x H*dh], k,v:[S x Hkv*dh]; H divisible by Hkv.
TensorPtr causal_attention(Tape& tape, const TensorPtr& q, const TensorPtr& k,
                           const TensorPtr& v, std::size_t n_heads,
                           std::size_t n_kv_heads, double rope_base = 10000.0);

// Mean token-level cross entropy, logits:[T x V].
TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets);

TensorPtr sum(Tape& tape, const TensorPtr& x);
TensorPtr mean(Tape& tape, const TensorPtr& x);

// Elementwise multiply by a constant 0/1 mask (mask is not differentiated).
TensorPtr apply_mask(Tape& tape, const TensorPtr& x, const std::vector<std::uint8_t>& mask);

// y[t,e] = x[t,e] * c[e], c constant.
TensorPtr scale_cols(Tape& tape, const TensorPtr& x, const std::vector<double>& c);

// Column e of x as a [T x 1] tensor.
TensorPtr take_col(Tape& tape, const TensorPtr& x, std::size_t e);

// y[t,:] = x[t,:] * s[t], s:[T x 1] or [T].
TensorPtr row_scale(Tape& tape, const TensorPtr& x, const TensorPtr& s);

TensorPtr gather_rows(Tape& tape, const TensorPtr& x, const std::vector<std::size_t>& idx);
// Inverse placement: row i of x lands at row idx[i] of a zero [out_rows x cols] tensor.
TensorPtr scatter_rows(Tape& tape, const TensorPtr& x, const std::vector<std::size_t>& idx,
                       std::size_t out_rows);

// Indicator-mask extraction, value-only (non-differentiable).
std::vector<std::uint8_t> positive_mask(const Tensor& x);

namespace testing {
// Deliberately corrupts the ReLU backward rule; negative control for gradcheck.
extern bool corrupt_relu_backward;
}  // namespace testing

}  // namespace remoe::ops
