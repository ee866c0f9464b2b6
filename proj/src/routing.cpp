// SPDX-License-Identifier: Apache-2.0

#include "remoe/routing.hpp"

#include <algorithm>
#include <numeric>

namespace remoe {

namespace {

void finalize_decision(RouterDecision& d) {
    const std::size_t t = d.tokens(), e = d.experts();
    d.active_mask = ops::positive_mask(*d.weights);
    d.tokens_per_expert.assign(e, 0);
    std::size_t active = 0;
    for (std::size_t r = 0; r < t; ++r) {
        for (std::size_t j = 0; j < e; ++j) {
            if (d.active_mask[r * e + j]) {
                ++d.tokens_per_expert[j];
                ++active;
            }
        }
    }
    d.batch_sparsity = 1.0 - static_cast<double>(active) / static_cast<double>(t * e);
}

}  // namespace

RouterDecision route_topk(Tape& tape, const TensorPtr& x, const RouterParams& w, std::size_t k) {
    const std::size_t e = w.W->cols();
    if (k < 1 || k > e)
        throw ConfigError("route_topk: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(e) + "]");
    auto logits = ops::matmul(tape, x, w.W);
    auto probs = ops::softmax_rows(tape, logits);
    const std::size_t t = probs->rows();

    // Keep the k largest per row; exact ties at the k-th value keep the
    // lowest expert index. No renormalization of the survivors.
    std::vector<std::uint8_t> mask(t * e, 0);
    std::vector<std::size_t> order(e);
    for (std::size_t r = 0; r < t; ++r) {
        const double* pr = probs->value.data() + r * e;
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [pr](std::size_t a, std::size_t b) { return pr[a] > pr[b]; });
        for (std::size_t i = 0; i < k; ++i) mask[r * e + order[i]] = 1;
    }

    RouterDecision d;
    d.weights = ops::apply_mask(tape, probs, mask);
    d.softmax_probs = probs;
    finalize_decision(d);
    return d;
}

RouterDecision route_relu(Tape& tape, const TensorPtr& x, const RouterParams& w) {
    auto logits = ops::matmul(tape, x, w.W);
    RouterDecision d;
    d.weights = ops::relu(tape, logits);
    finalize_decision(d);
    return d;
}

RouterDecision route_hash(Tape& tape, const std::vector<int>& token_ids, std::size_t E,
                          std::size_t k) {
    if (k != 1) throw ConfigError("route_hash: only k=1 is supported");
    if (E == 0) throw ConfigError("route_hash: E must be positive");
    const std::size_t t = token_ids.size();
    std::vector<double> w(t * E, 0.0);
    for (std::size_t r = 0; r < t; ++r) {
        if (token_ids[r] < 0) throw UsageError("route_hash: negative token id");
        w[r * E + static_cast<std::size_t>(token_ids[r]) % E] = 1.0;
    }
    RouterDecision d;
    d.weights = Tensor::constant({t, E}, std::move(w));
    (void)tape;
    finalize_decision(d);
    return d;
}

TensorPtr expert_ffn(Tape& tape, const TensorPtr& x, const ExpertParams& e) {
    auto gate = ops::silu(tape, ops::matmul(tape, x, e.w_gate));
    auto up = ops::matmul(tape, x, e.w_up);
    return ops::matmul(tape, ops::mul(tape, gate, up), e.w_down);
}

TensorPtr moe_forward(Tape& tape, const TensorPtr& x, const RouterDecision& decision,
                      const std::vector<ExpertParams>& experts, bool sparse) {
    const std::size_t t = x->rows(), e = decision.experts();
    if (experts.size() != e)
        throw ConfigError("moe_forward: " + std::to_string(experts.size()) + " experts for " +
                          std::to_string(e) + " router outputs");
    if (decision.tokens() != t) throw DimensionError("moe_forward: token count mismatch");

    TensorPtr y = tape.make(x->shape, false);  // zero accumulator
    for (std::size_t j = 0; j < e; ++j) {
        if (sparse) {
            std::vector<std::size_t> idx;
            for (std::size_t r = 0; r < t; ++r)
                if (decision.active_mask[r * e + j]) idx.push_back(r);
            if (idx.empty()) continue;
            auto sub_x = ops::gather_rows(tape, x, idx);
            auto sub_w = ops::gather_rows(tape, ops::take_col(tape, decision.weights, j), idx);
            auto sub_y = ops::row_scale(tape, expert_ffn(tape, sub_x, experts[j]), sub_w);
            y = ops::add(tape, y, ops::scatter_rows(tape, sub_y, idx, t));
        } else {
            auto out = expert_ffn(tape, x, experts[j]);
            // Mask the gate column so inactive tokens contribute nothing to
            // value or gradient even if weights carry stray nonzeros.
            auto col = ops::take_col(tape, decision.weights, j);
            std::vector<std::uint8_t> col_mask(t);
            for (std::size_t r = 0; r < t; ++r) col_mask[r] = decision.active_mask[r * e + j];
            auto gated = ops::row_scale(tape, out, ops::apply_mask(tape, col, col_mask));
            y = ops::add(tape, y, gated);
        }
    }
    return y;
}

}  // namespace remoe
