// SPDX-License-Identifier: Apache-2.0

#include "remoe/model.hpp"

#include <numeric>

namespace remoe {

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named) n += t->size();
    return n;
}

void ModelParams::zero_grad() {
    for (auto& [name, t] : named) t->zero_grad();
}

namespace {

TensorPtr init_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double std_dev) {
    auto t = Tensor::leaf({r, c});
    std::normal_distribution<double> dist(0.0, std_dev);
    for (auto& v : t->value) v = dist(rng);
    return t;
}

TensorPtr init_ones(std::size_t n) {
    auto t = Tensor::leaf({n});
    std::fill(t->value.begin(), t->value.end(), 1.0);
    return t;
}

}  // namespace

ModelParams init_model(const MoEConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    std::mt19937_64 rng(cfg.seed);

    const std::size_t d = cfg.d, v = cfg.vocab_size;
    const std::size_t kv_width = d / cfg.n_heads * cfg.n_groups;
    const bool dense = cfg.router == RouterKind::dense || cfg.router == RouterKind::dense_xe;
    const std::size_t n_experts = dense ? 1 : cfg.num_experts();
    std::size_t expert_width = cfg.ffn_width() / cfg.G;
    if (cfg.router == RouterKind::dense) expert_width = cfg.ffn_width();
    if (cfg.router == RouterKind::dense_xe) expert_width = cfg.ffn_width() * cfg.E;

    auto reg = [&p](const std::string& name, const TensorPtr& t) {
        p.named.emplace_back(name, t);
        return t;
    };

    p.embedding = reg("embedding", init_matrix(rng, v, d, kInitStd));
    for (std::size_t l = 0; l < cfg.L; ++l) {
        LayerParams lp;
        const std::string pre = "layer" + std::to_string(l) + ".";
        lp.ln_attn = reg(pre + "ln_attn", init_ones(d));
        lp.w_q = reg(pre + "w_q", init_matrix(rng, d, d, kInitStd));
        lp.w_k = reg(pre + "w_k", init_matrix(rng, d, kv_width, kInitStd));
        lp.w_v = reg(pre + "w_v", init_matrix(rng, d, kv_width, kInitStd));
        lp.w_o = reg(pre + "w_o", init_matrix(rng, d, d, kInitStd));
        lp.ln_ffn = reg(pre + "ln_ffn", init_ones(d));
        if (cfg.router == RouterKind::topk || cfg.router == RouterKind::relu)
            lp.router.W = reg(pre + "router", init_matrix(rng, d, cfg.num_experts(), kInitStd));
        for (std::size_t e = 0; e < n_experts; ++e) {
            const std::string ep = pre + "expert" + std::to_string(e) + ".";
            ExpertParams ex;
            ex.w_gate = reg(ep + "w_gate", init_matrix(rng, d, expert_width, kInitStd));
            ex.w_up = reg(ep + "w_up", init_matrix(rng, d, expert_width, kInitStd));
            ex.w_down = reg(ep + "w_down", init_matrix(rng, expert_width, d, kInitStd));
            lp.experts.push_back(std::move(ex));
        }
        p.layers.push_back(std::move(lp));
    }
    p.ln_final = reg("ln_final", init_ones(d));
    p.lm_head = reg("lm_head", init_matrix(rng, d, v, kInitStd));
    return p;
}

ForwardResult forward(Tape& tape, const ModelParams& params, const std::vector<int>& tokens,
                      std::size_t batch, std::size_t seq_len, std::size_t topk_override) {
    const MoEConfig& cfg = params.cfg;
    if (tokens.size() != batch * seq_len)
        throw UsageError("forward: token buffer does not match batch x seq_len");
    if (seq_len > cfg.context_len)
        throw UsageError("forward: sequence length " + std::to_string(seq_len) +
                         " exceeds context " + std::to_string(cfg.context_len));
    for (int id : tokens)
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
            throw UsageError("forward: token id out of vocabulary");

    const std::size_t t_total = batch * seq_len;
    const bool dense = cfg.router == RouterKind::dense || cfg.router == RouterKind::dense_xe;

    ForwardResult res;
    TensorPtr x = ops::embedding(tape, params.embedding, tokens);

    // Row index ranges per sequence (rows are b*S + s).
    std::vector<std::vector<std::size_t>> seq_rows(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        seq_rows[b].resize(seq_len);
        std::iota(seq_rows[b].begin(), seq_rows[b].end(), b * seq_len);
    }

    for (const auto& layer : params.layers) {
        auto h = ops::rms_norm(tape, x, layer.ln_attn, kRmsEps);
        auto q = ops::matmul(tape, h, layer.w_q);
        auto kk = ops::matmul(tape, h, layer.w_k);
        auto vv = ops::matmul(tape, h, layer.w_v);
        TensorPtr att = tape.make({t_total, cfg.d}, false);
        for (std::size_t b = 0; b < batch; ++b) {
            auto qb = ops::gather_rows(tape, q, seq_rows[b]);
            auto kb = ops::gather_rows(tape, kk, seq_rows[b]);
            auto vb = ops::gather_rows(tape, vv, seq_rows[b]);
            auto ab = ops::causal_attention(tape, qb, kb, vb, cfg.n_heads, cfg.n_groups, kRopeBase);
            att = ops::add(tape, att, ops::scatter_rows(tape, ab, seq_rows[b], t_total));
        }
        x = ops::add(tape, x, ops::matmul(tape, att, layer.w_o));

        auto h2 = ops::rms_norm(tape, x, layer.ln_ffn, kRmsEps);
        TensorPtr y;
        if (dense) {
            y = expert_ffn(tape, h2, layer.experts[0]);
        } else {
            RouterDecision dec;
            switch (cfg.router) {
                case RouterKind::relu:
                    dec = route_relu(tape, h2, layer.router);
                    break;
                case RouterKind::topk: {
                    const std::size_t k_eff = topk_override ? topk_override : cfg.k;
                    dec = route_topk(tape, h2, layer.router, k_eff * cfg.G);
                    break;
                }
                case RouterKind::hash:
                    dec = route_hash(tape, tokens, cfg.E, cfg.k);
                    break;
                default:
                    break;
            }
            y = moe_forward(tape, h2, dec, layer.experts, cfg.sparse_experts);
            res.decisions.push_back(std::move(dec));
        }
        x = ops::add(tape, x, y);
    }

    x = ops::rms_norm(tape, x, params.ln_final, kRmsEps);
    res.logits = ops::matmul(tape, x, params.lm_head);
    return res;
}

TensorPtr lm_loss(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets) {
    return ops::cross_entropy(tape, logits, targets);
}

}  // namespace remoe
