// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "remoe/config.hpp"
#include "remoe/tensor.hpp"

namespace remoe {

// AdamW with decoupled weight decay. Decay is applied to weight matrices
// only; norm gains are exempt.
class AdamW {
public:
    AdamW(const std::vector<std::pair<std::string, TensorPtr>>& params, double beta1,
          double beta2, double weight_decay, double eps = 1e-8);

    void step(double lr);

    std::size_t steps_taken() const { return t_; }
    const std::vector<double>& moment1(std::size_t i) const { return m_[i]; }
    const std::vector<double>& moment2(std::size_t i) const { return v_[i]; }

private:
    std::vector<TensorPtr> params_;
    std::vector<bool> decay_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, weight_decay_, eps_;
    std::size_t t_ = 0;
};

// Linear warmup to lr_peak, then cosine decay to min_lr_fraction * lr_peak
// at the final step.
double cosine_lr(std::size_t step, const TrainConfig& cfg);

// Scales all grads so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(const std::vector<std::pair<std::string, TensorPtr>>& params,
                        double max_norm);

}  // namespace remoe
