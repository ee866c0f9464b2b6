// SPDX-License-Identifier: Apache-2.0

#include "remoe/regularization.hpp"

namespace remoe {

double measure_sparsity(const std::vector<RouterDecision>& decisions) {
    if (decisions.empty()) throw UsageError("measure_sparsity: no decisions");
    const std::size_t t = decisions.front().tokens(), e = decisions.front().experts();
    std::size_t active = 0;
    for (const auto& d : decisions) {
        if (d.tokens() != t || d.experts() != e)
            throw UsageError("measure_sparsity: decisions disagree on T or E'");
        for (std::uint8_t m : d.active_mask) active += m;
    }
    const double slots = static_cast<double>(decisions.size()) * static_cast<double>(t) *
                         static_cast<double>(e);
    return 1.0 - static_cast<double>(active) / slots;
}

void update_lambda(SparsityController& c, double S_i) {
    const double diff = c.target_sparsity - S_i;
    if (diff > 0.0)
        c.lambda *= c.alpha;
    else if (diff < 0.0)
        c.lambda /= c.alpha;
    // sign(0) = 0: lambda unchanged at the exact target
    c.last_S = S_i;
    ++c.step;
}

namespace {

TensorPtr sum_decisions(Tape& tape, const std::vector<RouterDecision>& decisions,
                        const LoadFactors* lf) {
    TensorPtr total;
    for (std::size_t l = 0; l < decisions.size(); ++l) {
        const auto& w = decisions[l].weights;
        for (double v : w->value)
            if (v < 0.0)
                throw UsageError("l1_reg: negative router output (ReLU invariant violated)");
        TensorPtr term;
        if (lf) {
            std::vector<double> row(lf->f.begin() + static_cast<std::ptrdiff_t>(l * lf->experts),
                                    lf->f.begin() +
                                        static_cast<std::ptrdiff_t>((l + 1) * lf->experts));
            term = ops::sum(tape, ops::scale_cols(tape, w, row));
        } else {
            term = ops::sum(tape, w);
        }
        total = total ? ops::add(tape, total, term) : term;
    }
    return total;
}

}  // namespace

TensorPtr l1_reg(Tape& tape, const std::vector<RouterDecision>& decisions) {
    if (decisions.empty()) throw UsageError("l1_reg: no decisions");
    const double lt = static_cast<double>(decisions.size()) *
                      static_cast<double>(decisions.front().tokens());
    return ops::scalar_mul(tape, sum_decisions(tape, decisions, nullptr), 1.0 / lt);
}

std::pair<TensorPtr, LoadFactors> l1_reg_lb(Tape& tape,
                                            const std::vector<RouterDecision>& decisions,
                                            std::size_t k, std::size_t E) {
    if (decisions.empty()) throw UsageError("l1_reg_lb: no decisions");
    const std::size_t t = decisions.front().tokens(), ep = decisions.front().experts();
    LoadFactors lf;
    lf.layers = decisions.size();
    lf.experts = ep;
    lf.f.assign(lf.layers * ep, 0.0);
    // f_{l,e} = (E/(k T)) * active token count; fine-grained experts keep the
    // E/(k T) scale so a balanced batch still gives f = 1.
    const double scale = static_cast<double>(E) / (static_cast<double>(k) * static_cast<double>(t));
    for (std::size_t l = 0; l < lf.layers; ++l)
        for (std::size_t e = 0; e < ep; ++e)
            lf.f[l * ep + e] = scale * static_cast<double>(decisions[l].tokens_per_expert[e]);
    const double lt = static_cast<double>(lf.layers) * static_cast<double>(t);
    auto loss = ops::scalar_mul(tape, sum_decisions(tape, decisions, &lf), 1.0 / lt);
    return {loss, lf};
}

TensorPtr switch_lb_loss(Tape& tape, const RouterDecision& decision) {
    if (!decision.softmax_probs)
        throw UsageError("switch_lb_loss: decision has no softmax probabilities (TopK only)");
    const std::size_t t = decision.tokens(), e = decision.experts();
    std::size_t k_active = 0;
    for (std::uint8_t m : decision.active_mask) k_active += m;
    const double k = static_cast<double>(k_active) / static_cast<double>(t);
    // loss = (E/k) * sum_e fracTokens_e * meanProb_e; the 1/k keeps the
    // perfect-balance lower bound at 1 for any k.
    std::vector<double> coeff(e);
    for (std::size_t j = 0; j < e; ++j)
        coeff[j] = static_cast<double>(e) / k * static_cast<double>(decision.tokens_per_expert[j]) /
                   static_cast<double>(t);
    auto weighted = ops::scale_cols(tape, decision.softmax_probs, coeff);
    return ops::scalar_mul(tape, ops::sum(tape, weighted), 1.0 / static_cast<double>(t));
}

}  // namespace remoe
