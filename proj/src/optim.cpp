// SPDX-License-Identifier: Apache-2.0

#include "remoe/optim.hpp"

#include <cmath>

namespace remoe {

AdamW::AdamW(const std::vector<std::pair<std::string, TensorPtr>>& params, double beta1,
             double beta2, double weight_decay, double eps)
    : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
    for (const auto& [name, t] : params) {
        params_.push_back(t);
        decay_.push_back(t->shape.size() >= 2);  // norm gains (1-D) exempt
        m_.emplace_back(t->size(), 0.0);
        v_.emplace_back(t->size(), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        auto& m = m_[i];
        auto& v = v_[i];
        const double wd = decay_[i] ? weight_decay_ : 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = p.grad[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.value[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd * p.value[j]);
        }
    }
}

double cosine_lr(std::size_t step, const TrainConfig& cfg) {
    const std::size_t warmup = cfg.effective_warmup(cfg.steps);
    const double peak = cfg.lr_peak;
    const double floor = cfg.min_lr_fraction * peak;
    if (step < warmup)
        return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (cfg.steps <= warmup + 1) return floor;
    const double progress = static_cast<double>(step - warmup) /
                            static_cast<double>(cfg.steps - 1 - warmup);
    const double clamped = progress > 1.0 ? 1.0 : progress;
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(M_PI * clamped));
}

double clip_global_norm(const std::vector<std::pair<std::string, TensorPtr>>& params,
                        double max_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : params)
        for (double g : t->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto& [name, t] : params)
            for (double& g : t->grad) g *= scale;
    }
    return norm;
}

}  // namespace remoe
