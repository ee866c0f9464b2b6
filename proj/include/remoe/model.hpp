// SPDX-License-Identifier: Apache-2.0
//
// Tiny decoder-only transformer: embedding -> L x [GQA attention + MoE FFN]
// with residuals and RMSNorm -> LM head. Router kind selects ReLU / TopK /
// hash routing or the dense / dense_xE baselines.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "remoe/config.hpp"
#include "remoe/routing.hpp"

namespace remoe {

struct LayerParams {
    TensorPtr ln_attn;  // [d]
    TensorPtr w_q;      // [d x d]
    TensorPtr w_k;      // [d x d*n_groups/n_heads]
    TensorPtr w_v;      // same as w_k
    TensorPtr w_o;      // [d x d]
    TensorPtr ln_ffn;   // [d]
    RouterParams router;               // absent columns for dense modes
    std::vector<ExpertParams> experts; // E' experts, or 1 for dense modes
};

struct ModelParams {
    MoEConfig cfg;
    TensorPtr embedding;  // [V x d]
    std::vector<LayerParams> layers;
    TensorPtr ln_final;  // [d]
    TensorPtr lm_head;   // [d x V]

    // Stable name -> tensor registry (optimizer and checkpoint order).
    std::vector<std::pair<std::string, TensorPtr>> named;

    std::size_t parameter_count() const;
    void zero_grad();
};

ModelParams init_model(const MoEConfig& cfg);

struct ForwardResult {
    TensorPtr logits;  // [B*S x V]
    std::vector<RouterDecision> decisions;  // one per MoE layer (empty for dense)
};

// tokens: B x S row-major. Throws UsageError on overlong sequences or
// out-of-vocab ids.
ForwardResult forward(Tape& tape, const ModelParams& params, const std::vector<int>& tokens,
                      std::size_t batch, std::size_t seq_len,
                      std::size_t topk_override = 0);

// Mean token-level cross entropy; targets are the next-token ids.
TensorPtr lm_loss(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets);

constexpr double kRopeBase = 10000.0;
constexpr double kRmsEps = 1e-6;
constexpr double kInitStd = 0.02;

}  // namespace remoe
