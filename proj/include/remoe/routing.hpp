// SPDX-License-Identifier: Apache-2.0
//
// The three routers (TopK+Softmax, ReLU, deterministic hash) and the MoE
// combine step. ReLU routing keeps gate values = ReLU(x W) with a variable
// per-token active set; TopK zeroes softmax entries below the k-th largest
// without renormalizing.
#pragma once

#include <cstdint>
#include <vector>

#include "remoe/config.hpp"
#include "remoe/ops.hpp"
#include "remoe/tensor.hpp"

namespace remoe {

// Per-layer per-batch routing outcome.
struct RouterDecision {
    TensorPtr weights;                      // [T x E'] gate values R(x)
    TensorPtr softmax_probs;                // [T x E'] full softmax (topk router only)
    std::vector<std::uint8_t> active_mask;  // weights > 0, row-major T x E'
    std::vector<int> tokens_per_expert;     // length E'
    double batch_sparsity = 0.0;            // 1 - active/(T*E')

    std::size_t tokens() const { return weights->rows(); }
    std::size_t experts() const { return weights->cols(); }
};

struct RouterParams {
    TensorPtr W;  // [d x E'], no bias
};

// One SwiGLU expert: down( silu(x Wg) * (x Wu) ), intermediate d_ffn/G.
struct ExpertParams {
    TensorPtr w_gate;  // [d x dffn_g]
    TensorPtr w_up;    // [d x dffn_g]
    TensorPtr w_down;  // [dffn_g x d]
};

RouterDecision route_topk(Tape& tape, const TensorPtr& x, const RouterParams& w, std::size_t k);
RouterDecision route_relu(Tape& tape, const TensorPtr& x, const RouterParams& w);
RouterDecision route_hash(Tape& tape, const std::vector<int>& token_ids, std::size_t E,
                          std::size_t k);

// y_t = sum_e weights[t,e] * FFN_e(x_t). Dense-masked path by default;
// gather/scatter sparse path computes only active (token, expert) pairs.
TensorPtr moe_forward(Tape& tape, const TensorPtr& x, const RouterDecision& decision,
                      const std::vector<ExpertParams>& experts, bool sparse = false);

TensorPtr expert_ffn(Tape& tape, const TensorPtr& x, const ExpertParams& e);

}  // namespace remoe
