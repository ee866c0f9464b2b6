// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "remoe/routing.hpp"

using namespace remoe;

namespace {

// Router whose logits equal the input (identity weight matrix).
RouterParams identity_router(std::size_t e) {
    RouterParams rp;
    rp.W = Tensor::leaf({e, e});
    for (std::size_t i = 0; i < e; ++i) rp.W->value[i * e + i] = 1.0;
    return rp;
}

std::vector<ExpertParams> random_experts(std::mt19937_64& rng, std::size_t n, std::size_t d,
                                         std::size_t width) {
    std::normal_distribution<double> dist(0.0, 0.3);
    std::vector<ExpertParams> out;
    for (std::size_t i = 0; i < n; ++i) {
        ExpertParams e;
        e.w_gate = Tensor::leaf({d, width});
        e.w_up = Tensor::leaf({d, width});
        e.w_down = Tensor::leaf({width, d});
        for (auto* t : {&e.w_gate, &e.w_up, &e.w_down})
            for (auto& v : (*t)->value) v = dist(rng);
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

TEST_CASE("topk keeps the k largest softmax entries without renormalizing") {
    Tape tape;
    auto rp = identity_router(2);
    // logits chosen so softmax is (0.51, 0.49)
    const double delta = std::log(0.51 / 0.49);
    auto x = Tensor::constant({1, 2}, {delta, 0.0});
    auto d = route_topk(tape, x, rp, 1);
    CHECK(d.weights->value[0] == doctest::Approx(0.51).epsilon(1e-9));
    CHECK(d.weights->value[1] == 0.0);
    CHECK(d.active_mask == std::vector<std::uint8_t>{1, 0});
}

TEST_CASE("topk with k = E returns the full softmax row") {
    Tape tape;
    auto rp = identity_router(3);
    auto x = Tensor::constant({1, 3}, {0.2, -0.4, 1.0});
    auto d = route_topk(tape, x, rp, 3);
    double s = 0.0;
    for (double v : d.weights->value) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(d.batch_sparsity == doctest::Approx(0.0));
}

TEST_CASE("topk (0.4, 0.35, 0.25) with k=2 zeroes the smallest") {
    Tape tape;
    auto rp = identity_router(3);
    auto x = Tensor::constant({1, 3}, {std::log(0.4), std::log(0.35), std::log(0.25)});
    auto d = route_topk(tape, x, rp, 2);
    CHECK(d.weights->value[0] == doctest::Approx(0.4).epsilon(1e-9));
    CHECK(d.weights->value[1] == doctest::Approx(0.35).epsilon(1e-9));
    CHECK(d.weights->value[2] == 0.0);
}

TEST_CASE("topk rows have exactly k active entries, ties to lowest index") {
    Tape tape;
    auto rp = identity_router(4);
    // two exactly-tied logits
    auto x = Tensor::constant({1, 4}, {1.0, 1.0, 0.0, 0.0});
    auto d = route_topk(tape, x, rp, 1);
    CHECK(d.active_mask == std::vector<std::uint8_t>{1, 0, 0, 0});

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    auto xr = Tensor::leaf({16, 4});
    for (auto& v : xr->value) v = dist(rng);
    auto dr = route_topk(tape, xr, rp, 2);
    for (std::size_t r = 0; r < 16; ++r) {
        int row = 0;
        for (std::size_t j = 0; j < 4; ++j) row += dr.active_mask[r * 4 + j];
        CHECK(row == 2);
    }
}

TEST_CASE("topk k out of range is a config error") {
    Tape tape;
    auto rp = identity_router(2);
    auto x = Tensor::constant({1, 2}, {0.0, 0.0});
    CHECK_THROWS_AS(route_topk(tape, x, rp, 0), ConfigError);
    CHECK_THROWS_AS(route_topk(tape, x, rp, 3), ConfigError);
}

TEST_CASE("relu routing basics") {
    Tape tape;
    auto rp = identity_router(2);
    auto x = Tensor::constant({1, 2}, {0.01, -0.2});
    auto d = route_relu(tape, x, rp);
    CHECK(d.weights->value[0] == doctest::Approx(0.01));
    CHECK(d.weights->value[1] == 0.0);
    CHECK(d.tokens_per_expert == std::vector<int>{1, 0});
    CHECK(d.batch_sparsity == doctest::Approx(0.5));

    auto neg = Tensor::constant({1, 2}, {-0.5, -0.2});
    auto dn = route_relu(tape, neg, rp);
    CHECK(dn.batch_sparsity == doctest::Approx(1.0));
    for (double v : dn.weights->value) CHECK(v == 0.0);
}

TEST_CASE("relu decision satisfies active_mask <=> weights > 0") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tape tape;
    auto rp = identity_router(8);
    auto x = Tensor::leaf({32, 8});
    for (auto& v : x->value) v = dist(rng);
    auto d = route_relu(tape, x, rp);
    for (std::size_t i = 0; i < d.weights->size(); ++i)
        CHECK(static_cast<bool>(d.active_mask[i]) == (d.weights->value[i] > 0.0));
}

TEST_CASE("relu routing is continuous across the activation boundary") {
    Tape tape;
    auto rp = identity_router(2);
    const double eps = 1e-3;
    auto a = route_relu(tape, Tensor::constant({1, 2}, {eps, 0.0}), rp);
    auto b = route_relu(tape, Tensor::constant({1, 2}, {0.0, eps}), rp);
    double l1 = 0.0;
    for (std::size_t i = 0; i < 2; ++i) l1 += std::abs(a.weights->value[i] - b.weights->value[i]);
    CHECK(l1 <= 2 * eps + 1e-12);
}

TEST_CASE("hash router: mod-E assignment with unit weights") {
    Tape tape;
    auto d = route_hash(tape, {13}, 8, 1);
    CHECK(d.weights->value[5] == 1.0);
    CHECK(d.tokens_per_expert[5] == 1);

    auto d0 = route_hash(tape, {0}, 8, 1);
    CHECK(d0.weights->value[0] == 1.0);

    CHECK_THROWS_AS(route_hash(tape, {1}, 8, 2), ConfigError);
}

TEST_CASE("hash router spreads uniform ids roughly uniformly (chi-square)") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> tok(0, 255);
    const std::size_t t = 4096, e = 8;
    std::vector<int> ids(t);
    for (auto& id : ids) id = tok(rng);
    Tape tape;
    auto d = route_hash(tape, ids, e, 1);
    double chi2 = 0.0;
    const double expected = static_cast<double>(t) / e;
    for (int c : d.tokens_per_expert)
        chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 30.0);  // df=7, p ~ 1e-4 cutoff
    for (std::size_t r = 0; r < t; ++r) {
        int row = 0;
        for (std::size_t j = 0; j < e; ++j) row += d.active_mask[r * e + j];
        CHECK(row == 1);
    }
}

TEST_CASE("moe_forward degenerate single expert with weight 1") {
    std::mt19937_64 rng(7);
    const std::size_t d = 6, width = 8, t = 5;
    auto experts = random_experts(rng, 1, d, width);
    Tape tape;
    auto x = Tensor::leaf({t, d});
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : x->value) v = dist(rng);

    RouterDecision dec;
    dec.weights = Tensor::constant({t, 1}, std::vector<double>(t, 1.0));
    dec.active_mask.assign(t, 1);
    dec.tokens_per_expert = {static_cast<int>(t)};
    auto y = moe_forward(tape, x, dec, experts);
    auto ref = expert_ffn(tape, x, experts[0]);
    for (std::size_t i = 0; i < y->size(); ++i)
        CHECK(y->value[i] == doctest::Approx(ref->value[i]).epsilon(1e-12));
}

TEST_CASE("moe_forward zero-weight token produces zero output") {
    std::mt19937_64 rng(9);
    const std::size_t d = 4, width = 4, t = 3, e = 2;
    auto experts = random_experts(rng, e, d, width);
    Tape tape;
    auto x = Tensor::leaf({t, d});
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : x->value) v = dist(rng);

    RouterDecision dec;
    std::vector<double> w(t * e, 0.7);
    for (std::size_t j = 0; j < e; ++j) w[1 * e + j] = 0.0;  // token 1 inactive everywhere
    dec.weights = Tensor::constant({t, e}, w);
    dec.active_mask = ops::positive_mask(*dec.weights);
    dec.tokens_per_expert = {2, 2};
    auto y = moe_forward(tape, x, dec, experts);
    for (std::size_t j = 0; j < d; ++j) CHECK(y->value[1 * d + j] == 0.0);
}

TEST_CASE("sparse and dense moe paths agree in values and gradients") {
    std::mt19937_64 rng(13);
    const std::size_t d = 6, width = 8, t = 12, e = 4;
    std::normal_distribution<double> dist(0.0, 0.6);

    for (int trial = 0; trial < 3; ++trial) {
        auto experts = random_experts(rng, e, d, width);
        auto rp = identity_router(d);  // unused; router below
        RouterParams router;
        router.W = Tensor::leaf({d, e});
        for (auto& v : router.W->value) v = dist(rng);

        auto run = [&](bool sparse, std::vector<double>& grads) {
            Tape tape;
            auto x = Tensor::leaf({t, d});
            std::mt19937_64 xr(100 + trial);
            std::normal_distribution<double> xd(0.0, 1.0);
            for (auto& v : x->value) v = xd(xr);
            for (const auto& ex : experts)
                for (auto* w : {&ex.w_gate, &ex.w_up, &ex.w_down}) (*w)->zero_grad();
            router.W->zero_grad();
            auto dec = route_relu(tape, x, router);
            auto y = moe_forward(tape, x, dec, experts, sparse);
            auto loss = ops::mean(tape, y);
            tape.backward(loss);
            grads.clear();
            for (const auto& ex : experts)
                for (auto* w : {&ex.w_gate, &ex.w_up, &ex.w_down})
                    grads.insert(grads.end(), (*w)->grad.begin(), (*w)->grad.end());
            grads.insert(grads.end(), router.W->grad.begin(), router.W->grad.end());
            return y->value;
        };

        std::vector<double> grads_dense, grads_sparse;
        auto y_dense = run(false, grads_dense);
        auto y_sparse = run(true, grads_sparse);
        REQUIRE(y_dense.size() == y_sparse.size());
        for (std::size_t i = 0; i < y_dense.size(); ++i)
            CHECK(std::abs(y_dense[i] - y_sparse[i]) < 1e-6);
        REQUIRE(grads_dense.size() == grads_sparse.size());
        for (std::size_t i = 0; i < grads_dense.size(); ++i)
            CHECK(std::abs(grads_dense[i] - grads_sparse[i]) < 1e-6);
    }
}

TEST_CASE("moe_forward with relu router is O(delta)-continuous in W") {
    // Perturb the router across an activation boundary; output must move by
    // O(delta) even though the active set changes.
    std::mt19937_64 rng(17);
    const std::size_t d = 4, width = 4, t = 1, e = 2;
    auto experts = random_experts(rng, e, d, width);
    const double delta = 1e-6;

    auto eval = [&](double w00) {
        Tape tape;
        auto x = Tensor::constant({t, d}, {1.0, 0.0, 0.0, 0.0});
        RouterParams router;
        router.W = Tensor::leaf({d, e});
        router.W->value[0] = w00;  // logit of expert 0 = w00 exactly
        router.W->value[1] = 0.5;
        auto dec = route_relu(tape, x, router);
        auto y = moe_forward(tape, x, dec, experts);
        return y->value;
    };

    auto below = eval(-delta);  // expert 0 inactive
    auto above = eval(+delta);  // expert 0 active
    double diff = 0.0;
    for (std::size_t i = 0; i < below.size(); ++i)
        diff = std::max(diff, std::abs(below[i] - above[i]));
    CHECK(diff < 100 * delta);
}

TEST_CASE("moe_forward with topk router jumps at the decision boundary") {
    // Crossing (0.51,0.49) -> (0.49,0.51) moves the 0.51 weight between two
    // different experts; the output changes by a non-vanishing amount.
    std::mt19937_64 rng(19);
    const std::size_t d = 4, width = 4, t = 1, e = 2;
    auto experts = random_experts(rng, e, d, width);
    const double logit = std::log(0.51 / 0.49);

    auto eval = [&](double l0, double l1) {
        Tape tape;
        auto x = Tensor::constant({t, d}, {1.0, 0.0, 0.0, 0.0});
        RouterParams router;
        router.W = Tensor::leaf({d, e});
        router.W->value[0] = l0;
        router.W->value[1] = l1;
        auto dec = route_topk(tape, x, router, 1);
        auto y = moe_forward(tape, x, dec, experts);
        return std::pair{dec, y->value};
    };

    auto [dec_a, ya] = eval(logit, 0.0);   // softmax (0.51, 0.49), expert 0 wins
    auto [dec_b, yb] = eval(0.0, logit);   // softmax (0.49, 0.51), expert 1 wins
    CHECK(dec_a.weights->value[0] == doctest::Approx(0.51).epsilon(1e-6));
    CHECK(dec_b.weights->value[1] == doctest::Approx(0.51).epsilon(1e-6));
    double jump = 0.0;
    for (std::size_t i = 0; i < ya.size(); ++i) jump = std::max(jump, std::abs(ya[i] - yb[i]));
    CHECK(jump > 1e-3);  // experts differ, so the jump is bounded below
}

TEST_CASE("moe_forward expert-count mismatch is a config error") {
    std::mt19937_64 rng(23);
    auto experts = random_experts(rng, 2, 4, 4);
    Tape tape;
    auto x = Tensor::constant({1, 4}, {1, 0, 0, 0});
    RouterDecision dec;
    dec.weights = Tensor::constant({1, 3}, {1.0, 0.0, 0.0});
    dec.active_mask = {1, 0, 0};
    dec.tokens_per_expert = {1, 0, 0};
    CHECK_THROWS_AS(moe_forward(tape, x, dec, experts), ConfigError);
}
