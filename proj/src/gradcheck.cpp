// SPDX-License-Identifier: Apache-2.0

#include "remoe/gradcheck.hpp"

#include <cmath>
#include <random>

#include "remoe/model.hpp"
#include "remoe/ops.hpp"
#include "remoe/regularization.hpp"

namespace remoe::gradcheck {

namespace {

double rel_err(double ad, double fd) {
    const double denom = std::max({1e-4, std::abs(ad), std::abs(fd)});
    return std::abs(ad - fd) / denom;
}

double eval(const std::function<TensorPtr(Tape&)>& build) {
    Tape tape;
    return build(tape)->value[0];
}

}  // namespace

double max_grad_error(const std::function<TensorPtr(Tape&)>& build,
                      const std::vector<TensorPtr>& leaves, double step,
                      std::size_t element_cap) {
    // Analytic pass.
    for (auto& l : leaves) l->zero_grad();
    {
        Tape tape;
        auto loss = build(tape);
        tape.backward(loss);
    }
    double worst = 0.0;
    for (auto& leaf : leaves) {
        const std::size_t n = leaf->size();
        const std::size_t stride =
            (element_cap > 0 && n > element_cap) ? (n + element_cap - 1) / element_cap : 1;
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = leaf->value[i];
            leaf->value[i] = saved + step;
            const double up = eval(build);
            leaf->value[i] = saved - step;
            const double down = eval(build);
            leaf->value[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            worst = std::max(worst, rel_err(leaf->grad[i], fd));
        }
    }
    return worst;
}

namespace {

TensorPtr random_leaf(std::mt19937_64& rng, std::vector<std::size_t> shape, double lo = -1.0,
                      double hi = 1.0) {
    auto t = Tensor::leaf(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t->value) v = dist(rng);
    return t;
}

// Random constant projection turning tensor output into a scalar loss.
TensorPtr project(Tape& tape, const TensorPtr& y, const std::vector<double>& coeff) {
    auto c = Tensor::constant(y->shape, coeff);
    return ops::sum(tape, ops::mul(tape, y, c));
}

std::vector<double> random_coeff(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> c(n);
    for (auto& v : c) v = dist(rng);
    return c;
}

void keep_away_from_zero(const TensorPtr& t, double margin) {
    for (auto& v : t->value)
        if (std::abs(v) < margin) v = v < 0.0 ? v - margin : v + margin;
}

}  // namespace

std::vector<CheckResult> op_suite(std::uint64_t seed, double tol) {
    std::mt19937_64 rng(seed);
    std::vector<CheckResult> results;
    auto run = [&](const std::string& name, const std::function<TensorPtr(Tape&)>& build,
                   const std::vector<TensorPtr>& leaves) {
        CheckResult r;
        r.name = name;
        r.max_rel_err = max_grad_error(build, leaves);
        r.pass = r.max_rel_err < tol;
        results.push_back(r);
    };

    {
        auto a = random_leaf(rng, {3, 4}), b = random_leaf(rng, {4, 2});
        auto c = random_coeff(rng, 6);
        run("matmul", [&](Tape& t) { return project(t, ops::matmul(t, a, b), c); }, {a, b});
    }
    {
        auto a = random_leaf(rng, {2, 5}), b = random_leaf(rng, {2, 5});
        auto c = random_coeff(rng, 10);
        run("add", [&](Tape& t) { return project(t, ops::add(t, a, b), c); }, {a, b});
        run("mul", [&](Tape& t) { return project(t, ops::mul(t, a, b), c); }, {a, b});
    }
    {
        auto a = random_leaf(rng, {2, 5}), b = random_leaf(rng, {2, 5});
        keep_away_from_zero(b, 0.2);
        auto c = random_coeff(rng, 10);
        run("div", [&](Tape& t) { return project(t, ops::div(t, a, b), c); }, {a, b});
    }
    {
        auto a = random_leaf(rng, {3, 3});
        auto c = random_coeff(rng, 9);
        run("scalar_mul", [&](Tape& t) { return project(t, ops::scalar_mul(t, a, 1.7), c); }, {a});
        run("exp", [&](Tape& t) { return project(t, ops::exp(t, a), c); }, {a});
        run("silu", [&](Tape& t) { return project(t, ops::silu(t, a), c); }, {a});
    }
    {
        auto a = random_leaf(rng, {3, 3}, 0.2, 2.0);
        auto c = random_coeff(rng, 9);
        run("log", [&](Tape& t) { return project(t, ops::log(t, a), c); }, {a});
    }
    {
        auto a = random_leaf(rng, {4, 4});
        keep_away_from_zero(a, 0.05);  // relu kink excluded; FD step is 1e-5
        auto c = random_coeff(rng, 16);
        run("relu", [&](Tape& t) { return project(t, ops::relu(t, a), c); }, {a});
    }
    {
        auto a = random_leaf(rng, {4, 8});
        auto c = random_coeff(rng, 32);
        run("softmax_rows", [&](Tape& t) { return project(t, ops::softmax_rows(t, a), c); }, {a});
    }
    {
        auto x = random_leaf(rng, {3, 6});
        auto g = random_leaf(rng, {6}, 0.5, 1.5);
        auto c = random_coeff(rng, 18);
        run("rms_norm", [&](Tape& t) { return project(t, ops::rms_norm(t, x, g), c); }, {x, g});
    }
    {
        auto table = random_leaf(rng, {7, 4});
        std::vector<int> ids = {3, 0, 6, 3, 1};
        auto c = random_coeff(rng, 20);
        run("embedding", [&](Tape& t) { return project(t, ops::embedding(t, table, ids), c); },
            {table});
    }
    {
        const std::size_t S = 5, H = 2, Hkv = 1, dh = 4;
        auto q = random_leaf(rng, {S, H * dh});
        auto k = random_leaf(rng, {S, Hkv * dh});
        auto v = random_leaf(rng, {S, Hkv * dh});
        auto c = random_coeff(rng, S * H * dh);
        run("causal_attention",
            [&](Tape& t) { return project(t, ops::causal_attention(t, q, k, v, H, Hkv), c); },
            {q, k, v});
    }
    {
        auto logits = random_leaf(rng, {4, 6});
        std::vector<int> targets = {1, 5, 0, 3};
        run("cross_entropy", [&](Tape& t) { return ops::cross_entropy(t, logits, targets); },
            {logits});
    }
    {
        auto a = random_leaf(rng, {3, 4});
        run("sum", [&](Tape& t) { return ops::sum(t, a); }, {a});
        run("mean", [&](Tape& t) { return ops::mean(t, a); }, {a});
    }
    {
        auto a = random_leaf(rng, {4, 3});
        auto scale = random_coeff(rng, 3);
        auto c = random_coeff(rng, 12);
        run("scale_cols", [&](Tape& t) { return project(t, ops::scale_cols(t, a, scale), c); },
            {a});
        std::vector<std::uint8_t> mask(12);
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3 != 0) ? 1 : 0;
        run("apply_mask", [&](Tape& t) { return project(t, ops::apply_mask(t, a, mask), c); },
            {a});
    }
    {
        auto a = random_leaf(rng, {5, 3});
        auto s = random_leaf(rng, {5, 1});
        auto c = random_coeff(rng, 15);
        auto c1 = random_coeff(rng, 5);
        run("take_col", [&](Tape& t) { return project(t, ops::take_col(t, a, 1), c1); }, {a});
        run("row_scale", [&](Tape& t) { return project(t, ops::row_scale(t, a, s), c); }, {a, s});
    }
    {
        auto a = random_leaf(rng, {6, 3});
        std::vector<std::size_t> idx = {4, 1, 1, 5};
        auto cg = random_coeff(rng, 12);
        run("gather_rows", [&](Tape& t) { return project(t, ops::gather_rows(t, a, idx), cg); },
            {a});
        auto b = random_leaf(rng, {3, 2});
        std::vector<std::size_t> sidx = {5, 0, 2};
        auto cs = random_coeff(rng, 14);
        run("scatter_rows",
            [&](Tape& t) { return project(t, ops::scatter_rows(t, b, sidx, 7), cs); }, {b});
    }
    {
        // stop_gradient: d/dx of stop(x)*x must equal the stopped value.
        auto x = random_leaf(rng, {2, 2});
        CheckResult r;
        r.name = "stop_gradient";
        x->zero_grad();
        Tape tape;
        auto y = ops::sum(tape, ops::mul(tape, ops::stop_gradient(x), x));
        tape.backward(y);
        double worst = 0.0;
        for (std::size_t i = 0; i < x->size(); ++i)
            worst = std::max(worst, rel_err(x->grad[i], x->value[i]));
        r.max_rel_err = worst;
        r.pass = worst < tol;
        results.push_back(r);
    }
    return results;
}

std::vector<CheckResult> model_suite(std::uint64_t seed, double tol) {
    MoEConfig cfg;
    cfg.vocab_size = 17;
    cfg.d = 8;
    cfg.L = 2;
    cfg.n_heads = 2;
    cfg.n_groups = 2;
    cfg.E = 4;
    cfg.k = 1;
    cfg.context_len = 8;
    cfg.router = RouterKind::relu;
    cfg.seed = seed;

    ModelParams params = init_model(cfg);
    std::mt19937_64 rng(seed ^ 0xabcdef);
    const std::size_t batch = 2, s = 4;
    std::vector<int> tokens(batch * s), targets(batch * s);
    std::uniform_int_distribution<int> tok(0, static_cast<int>(cfg.vocab_size) - 1);
    for (auto& t : tokens) t = tok(rng);
    for (auto& t : targets) t = tok(rng);

    auto build = [&](Tape& tape) {
        auto fwd = forward(tape, params, tokens, batch, s);
        auto lm = lm_loss(tape, fwd.logits, targets);
        // Include the regularizer so router gradients are exercised too.
        auto [reg, lf] = l1_reg_lb(tape, fwd.decisions, cfg.k, cfg.E);
        return ops::add(tape, lm, ops::scalar_mul(tape, reg, 0.01));
    };

    std::vector<CheckResult> results;
    for (const auto& [name, tensor] : params.named) {
        CheckResult r;
        r.name = name;
        r.max_rel_err = max_grad_error(build, {tensor}, 1e-5, 6);
        r.pass = r.max_rel_err < tol;
        results.push_back(r);
    }
    return results;
}

}  // namespace remoe::gradcheck
