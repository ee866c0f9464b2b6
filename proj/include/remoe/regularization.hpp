// SPDX-License-Identifier: Apache-2.0
//
// Sparsity measurement, the adaptive lambda controller, plain and
// load-balance-refined L1 regularization for ReLU routing, and the
// Switch-style auxiliary loss used by the TopK baseline.
#pragma once

#include <vector>

#include "remoe/routing.hpp"
#include "remoe/tensor.hpp"

namespace remoe {

// State of the multiplicative lambda update:
//   lambda_{i+1} = lambda_i * alpha^sign(target - S_i),  sign(0) = 0.
struct SparsityController {
    double lambda = 1e-8;
    double alpha = 1.2;
    double target_sparsity = 0.875;  // 1 - k/E
    double last_S = 0.0;
    std::size_t step = 0;
};

// Per-layer per-expert activation ratio relative to k/E; constant in backward.
struct LoadFactors {
    std::size_t layers = 0;
    std::size_t experts = 0;
    std::vector<double> f;  // row-major L x E'

    double at(std::size_t l, std::size_t e) const { return f[l * experts + e]; }
};

// S = 1 - (1/(L T E')) * total active count over all layer decisions.
double measure_sparsity(const std::vector<RouterDecision>& decisions);

void update_lambda(SparsityController& c, double S_i);

// (1/(L T)) * sum of all router outputs.
TensorPtr l1_reg(Tape& tape, const std::vector<RouterDecision>& decisions);

// Load-balance-refined L1: outputs weighted by f_{l,e} = (E'/(kG T)) * count.
// f is computed per batch from the current masks and receives no gradient.
std::pair<TensorPtr, LoadFactors> l1_reg_lb(Tape& tape,
                                            const std::vector<RouterDecision>& decisions,
                                            std::size_t k, std::size_t E);

// E' * sum_e fracTokens_e * meanProb_e over the full softmax; lower bound 1
// at perfect balance.
TensorPtr switch_lb_loss(Tape& tape, const RouterDecision& decision);

}  // namespace remoe
