// SPDX-License-Identifier: Apache-2.0

#include "remoe/ops.hpp"

#include <cmath>
#include <cstdint>

#include "remoe/kernels.hpp"

namespace remoe::ops {

namespace testing {
bool corrupt_relu_backward = false;
}

namespace {

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
}

bool any_grad(const TensorPtr& a) { return a->requires_grad; }
bool any_grad(const TensorPtr& a, const TensorPtr& b) {
    return a->requires_grad || b->requires_grad;
}

}  // namespace

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw DimensionError("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto y = tape.make({m, n}, any_grad(a, b));
    kernels::matmul_nn(a->value.data(), b->value.data(), y->value.data(), m, k, n);
    if (y->requires_grad) {
        tape.record([a, b, y, m, k, n] {
            if (a->requires_grad)
                kernels::matmul_nt_acc(y->grad.data(), b->value.data(), a->grad.data(), m, n, k);
            if (b->requires_grad)
                kernels::matmul_tn_acc(a->value.data(), y->grad.data(), b->grad.data(), m, k, n);
        });
    }
    return y;
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "add");
    auto y = tape.make(a->shape, any_grad(a, b));
    for (std::size_t i = 0; i < y->size(); ++i) y->value[i] = a->value[i] + b->value[i];
    if (y->requires_grad) {
        tape.record([a, b, y] {
            if (a->requires_grad)
                for (std::size_t i = 0; i < y->size(); ++i) a->grad[i] += y->grad[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < y->size(); ++i) b->grad[i] += y->grad[i];
        });
    }
    return y;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "mul");
    auto y = tape.make(a->shape, any_grad(a, b));
    for (std::size_t i = 0; i < y->size(); ++i) y->value[i] = a->value[i] * b->value[i];
    if (y->requires_grad) {
        tape.record([a, b, y] {
            if (a->requires_grad)
                for (std::size_t i = 0; i < y->size(); ++i) a->grad[i] += y->grad[i] * b->value[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < y->size(); ++i) b->grad[i] += y->grad[i] * a->value[i];
        });
    }
    return y;
}

TensorPtr div(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "div");
    auto y = tape.make(a->shape, any_grad(a, b));
    for (std::size_t i = 0; i < y->size(); ++i) y->value[i] = a->value[i] / b->value[i];
    if (y->requires_grad) {
        tape.record([a, b, y] {
            if (a->requires_grad)
                for (std::size_t i = 0; i < y->size(); ++i) a->grad[i] += y->grad[i] / b->value[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < y->size(); ++i)
                    b->grad[i] -= y->grad[i] * a->value[i] / (b->value[i] * b->value[i]);
        });
    }
    return y;
}

TensorPtr scalar_mul(Tape& tape, const TensorPtr& a, double s) {
    auto y = tape.make(a->shape, any_grad(a));
    for (std::size_t i = 0; i < y->size(); ++i) y->value[i] = a->value[i] * s;
    if (y->requires_grad) {
        tape.record([a, y, s] {
            for (std::size_t i = 0; i < y->size(); ++i) a->grad[i] += y->grad[i] * s;
        });
    }
    return y;
}

TensorPtr exp(Tape& tape, const TensorPtr& a) {
    auto y = tape.make(a->shape, any_grad(a));
    for (std::size_t i = 0; i < y->size(); ++i) y->value[i] = std::exp(a->value[i]);
    if (y->requires_grad) {
        tape.record([a, y] {
            for (std::size_t i = 0; i < y->size(); ++i) a->grad[i] += y->grad[i] * y->value[i];
        });
    }
    return y;
}

TensorPtr log(Tape& tape, const TensorPtr& a) {
    auto y = tape.make(a->shape, any_grad(a));
    for (std::size_t i = 0; i < y->size(); ++i) y->value[i] = std::log(a->value[i]);
    if (y->requires_grad) {
        tape.record([a, y] {
            for (std::size_t i = 0; i < y->size(); ++i) a->grad[i] += y->grad[i] / a->value[i];
        });
    }
    return y;
}

TensorPtr relu(Tape& tape, const TensorPtr& a) {
    auto y = tape.make(a->shape, any_grad(a));
    for (std::size_t i = 0; i < y->size(); ++i) y->value[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    if (y->requires_grad) {
        tape.record([a, y] {
            if (testing::corrupt_relu_backward) {
                for (std::size_t i = 0; i < y->size(); ++i) a->grad[i] += y->grad[i] * 0.5;
                return;
            }
            for (std::size_t i = 0; i < y->size(); ++i)
                if (a->value[i] > 0.0) a->grad[i] += y->grad[i];
        });
    }
    return y;
}

TensorPtr silu(Tape& tape, const TensorPtr& a) {
    auto y = tape.make(a->shape, any_grad(a));
    for (std::size_t i = 0; i < y->size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-a->value[i]));
        y->value[i] = a->value[i] * s;
    }
    if (y->requires_grad) {
        tape.record([a, y] {
            for (std::size_t i = 0; i < y->size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-a->value[i]));
                a->grad[i] += y->grad[i] * (s + a->value[i] * s * (1.0 - s));
            }
        });
    }
    return y;
}

TensorPtr softmax_rows(Tape& tape, const TensorPtr& x) {
    const std::size_t t = x->rows(), e = x->cols();
    auto y = tape.make(x->shape, any_grad(x));
    for (std::size_t r = 0; r < t; ++r) {
        const double* xr = x->value.data() + r * e;
        double* yr = y->value.data() + r * e;
        double mx = xr[0];
        for (std::size_t j = 1; j < e; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < e; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            z += yr[j];
        }
        for (std::size_t j = 0; j < e; ++j) yr[j] /= z;
    }
    if (y->requires_grad) {
        tape.record([x, y, t, e] {
            for (std::size_t r = 0; r < t; ++r) {
                const double* p = y->value.data() + r * e;
                const double* dy = y->grad.data() + r * e;
                double dot = 0.0;
                for (std::size_t j = 0; j < e; ++j) dot += p[j] * dy[j];
                double* dx = x->grad.data() + r * e;
                for (std::size_t j = 0; j < e; ++j) dx[j] += p[j] * (dy[j] - dot);
            }
        });
    }
    return y;
}

TensorPtr stop_gradient(const TensorPtr& x) {
    auto t = std::make_shared<Tensor>();
    t->shape = x->shape;
    t->value = x->value;  // bit-identical copy
    t->requires_grad = false;
    return t;
}

TensorPtr rms_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gain, double eps) {
    const std::size_t t = x->rows(), d = x->cols();
    if (gain->size() != d)
        throw DimensionError("rms_norm: gain length " + shape_str(gain->shape) +
                             " does not match feature dim of " + shape_str(x->shape));
    auto y = tape.make(x->shape, any_grad(x, gain));
    std::vector<double> rms(t);
    for (std::size_t r = 0; r < t; ++r) {
        const double* xr = x->value.data() + r * d;
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
        rms[r] = std::sqrt(ss / static_cast<double>(d) + eps);
        double* yr = y->value.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) yr[j] = xr[j] / rms[r] * gain->value[j];
    }
    if (y->requires_grad) {
        tape.record([x, gain, y, rms = std::move(rms), t, d] {
            for (std::size_t r = 0; r < t; ++r) {
                const double* xr = x->value.data() + r * d;
                const double* dy = y->grad.data() + r * d;
                const double rr = rms[r];
                if (gain->requires_grad) {
                    for (std::size_t j = 0; j < d; ++j) gain->grad[j] += dy[j] * xr[j] / rr;
                }
                if (x->requires_grad) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < d; ++j) dot += dy[j] * gain->value[j] * xr[j];
                    const double c = dot / (static_cast<double>(d) * rr * rr * rr);
                    double* dx = x->grad.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j)
                        dx[j] += dy[j] * gain->value[j] / rr - c * xr[j];
                }
            }
        });
    }
    return y;
}

TensorPtr embedding(Tape& tape, const TensorPtr& table, const std::vector<int>& ids) {
    const std::size_t v = table->rows(), d = table->cols(), t = ids.size();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw UsageError("embedding: token id " + std::to_string(id) + " out of vocabulary " +
                             std::to_string(v));
    auto y = tape.make({t, d}, any_grad(table));
    for (std::size_t r = 0; r < t; ++r) {
        const double* src = table->value.data() + static_cast<std::size_t>(ids[r]) * d;
        std::copy(src, src + d, y->value.data() + r * d);
    }
    if (y->requires_grad) {
        tape.record([table, y, ids, t, d] {
            for (std::size_t r = 0; r < t; ++r) {
                double* dst = table->grad.data() + static_cast<std::size_t>(ids[r]) * d;
                const double* dy = y->grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += dy[j];
            }
        });
    }
    return y;
}

namespace {

// In-place RoPE rotation of one head slice, sign=+1 forward / -1 inverse.
void rope_rotate(double* x, std::size_t pos, std::size_t dh, double base, double sign) {
    for (std::size_t i = 0; i + 1 < dh; i += 2) {
        const double theta =
            static_cast<double>(pos) *
            std::pow(base, -static_cast<double>(i) / static_cast<double>(dh));
        const double c = std::cos(theta), s = std::sin(theta) * sign;
        const double x0 = x[i], x1 = x[i + 1];
        x[i] = x0 * c - x1 * s;
        x[i + 1] = x0 * s + x1 * c;
    }
}

}  // namespace

TensorPtr causal_attention(Tape& tape, const TensorPtr& q, const TensorPtr& k,
                           const TensorPtr& v, std::size_t n_heads, std::size_t n_kv_heads,
                           double rope_base) {
    const std::size_t s_len = q->rows();
    if (k->rows() != s_len || v->rows() != s_len)
        throw DimensionError("causal_attention: sequence length mismatch");
    if (n_kv_heads == 0 || n_heads % n_kv_heads != 0)
        throw ConfigError("causal_attention: n_heads must be divisible by n_kv_heads");
    if (q->cols() % n_heads != 0)
        throw DimensionError("causal_attention: q width not divisible by head count");
    const std::size_t dh = q->cols() / n_heads;
    if (k->cols() != n_kv_heads * dh || v->cols() != n_kv_heads * dh)
        throw DimensionError("causal_attention: k/v width mismatch");
    const std::size_t group = n_heads / n_kv_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto y = tape.make(q->shape, any_grad(q, k) || v->requires_grad);

    // Rotated q/k and per-head attention probabilities, saved for backward.
    auto qr = std::make_shared<std::vector<double>>(q->value);
    auto kr = std::make_shared<std::vector<double>>(k->value);
    // probs[h] is lower-triangular S x S stored dense.
    auto probs = std::make_shared<std::vector<std::vector<double>>>(
        n_heads, std::vector<double>(s_len * s_len, 0.0));

    const std::size_t qw = q->cols(), kw = k->cols();
    for (std::size_t p = 0; p < s_len; ++p) {
        for (std::size_t h = 0; h < n_heads; ++h)
            rope_rotate(qr->data() + p * qw + h * dh, p, dh, rope_base, 1.0);
        for (std::size_t h = 0; h < n_kv_heads; ++h)
            rope_rotate(kr->data() + p * kw + h * dh, p, dh, rope_base, 1.0);
    }

    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t hk = h / group;
        auto& ph = (*probs)[h];
        for (std::size_t i = 0; i < s_len; ++i) {
            const double* qi = qr->data() + i * qw + h * dh;
            double mx = -1e300;
            for (std::size_t j = 0; j <= i; ++j) {
                const double* kj = kr->data() + j * kw + hk * dh;
                double dot = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
                ph[i * s_len + j] = dot * scale;
                mx = std::max(mx, ph[i * s_len + j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                ph[i * s_len + j] = std::exp(ph[i * s_len + j] - mx);
                z += ph[i * s_len + j];
            }
            double* yi = y->value.data() + i * qw + h * dh;
            for (std::size_t j = 0; j <= i; ++j) {
                ph[i * s_len + j] /= z;
                const double* vj = v->value.data() + j * kw + hk * dh;
                const double pij = ph[i * s_len + j];
                for (std::size_t c = 0; c < dh; ++c) yi[c] += pij * vj[c];
            }
        }
    }

    if (y->requires_grad) {
        tape.record([q, k, v, y, qr, kr, probs, n_heads, group, dh, s_len, qw, kw, scale,
                     rope_base] {
            std::vector<double> dqr(q->size(), 0.0), dkr(k->size(), 0.0);
            std::vector<double> ds(s_len);
            for (std::size_t h = 0; h < n_heads; ++h) {
                const std::size_t hk = h / group;
                const auto& ph = (*probs)[h];
                for (std::size_t i = 0; i < s_len; ++i) {
                    const double* dyi = y->grad.data() + i * qw + h * dh;
                    // dp[i,j] = dy_i . v_j ; softmax backward to scores
                    double dot = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        const double* vj = v->value.data() + j * kw + hk * dh;
                        double dp = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) dp += dyi[c] * vj[c];
                        ds[j] = dp;
                        dot += ph[i * s_len + j] * dp;
                    }
                    for (std::size_t j = 0; j <= i; ++j) {
                        const double pij = ph[i * s_len + j];
                        const double dscore = pij * (ds[j] - dot) * scale;
                        if (v->requires_grad) {
                            double* dvj = v->grad.data() + j * kw + hk * dh;
                            for (std::size_t c = 0; c < dh; ++c) dvj[c] += pij * dyi[c];
                        }
                        const double* kj = kr->data() + j * kw + hk * dh;
                        const double* qi = qr->data() + i * qw + h * dh;
                        double* dqi = dqr.data() + i * qw + h * dh;
                        double* dkj = dkr.data() + j * kw + hk * dh;
                        for (std::size_t c = 0; c < dh; ++c) {
                            dqi[c] += dscore * kj[c];
                            dkj[c] += dscore * qi[c];
                        }
                    }
                }
            }
            // Un-rotate gradients (RoPE is orthogonal; inverse = rotate by -theta).
            for (std::size_t p = 0; p < s_len; ++p) {
                for (std::size_t h = 0; h < n_heads; ++h)
                    rope_rotate(dqr.data() + p * qw + h * dh, p, dh, rope_base, -1.0);
                for (std::size_t h = 0; h < n_heads / group; ++h)
                    rope_rotate(dkr.data() + p * kw + h * dh, p, dh, rope_base, -1.0);
            }
            if (q->requires_grad)
                for (std::size_t i = 0; i < q->size(); ++i) q->grad[i] += dqr[i];
            if (k->requires_grad)
                for (std::size_t i = 0; i < k->size(); ++i) k->grad[i] += dkr[i];
        });
    }
    return y;
}

TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits, const std::vector<int>& targets) {
    const std::size_t t = logits->rows(), vsz = logits->cols();
    if (targets.size() != t)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(t) + " rows");
    auto y = tape.make({1}, any_grad(logits));
    auto probs = std::make_shared<std::vector<double>>(t * vsz);
    double loss = 0.0;
    for (std::size_t r = 0; r < t; ++r) {
        const double* lr = logits->value.data() + r * vsz;
        double* pr = probs->data() + r * vsz;
        double mx = lr[0];
        for (std::size_t j = 1; j < vsz; ++j) mx = std::max(mx, lr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < vsz; ++j) {
            pr[j] = std::exp(lr[j] - mx);
            z += pr[j];
        }
        for (std::size_t j = 0; j < vsz; ++j) pr[j] /= z;
        const int tgt = targets[r];
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= vsz)
            throw UsageError("cross_entropy: target id out of range");
        loss -= std::log(pr[static_cast<std::size_t>(tgt)]);
    }
    y->value[0] = loss / static_cast<double>(t);
    if (y->requires_grad) {
        tape.record([logits, y, probs, targets, t, vsz] {
            const double g = y->grad[0] / static_cast<double>(t);
            for (std::size_t r = 0; r < t; ++r) {
                const double* pr = probs->data() + r * vsz;
                double* dl = logits->grad.data() + r * vsz;
                for (std::size_t j = 0; j < vsz; ++j) dl[j] += g * pr[j];
                dl[static_cast<std::size_t>(targets[r])] -= g;
            }
        });
    }
    return y;
}

TensorPtr sum(Tape& tape, const TensorPtr& x) {
    auto y = tape.make({1}, any_grad(x));
    double s = 0.0;
    for (double v : x->value) s += v;
    y->value[0] = s;
    if (y->requires_grad) {
        tape.record([x, y] {
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += y->grad[0];
        });
    }
    return y;
}

TensorPtr mean(Tape& tape, const TensorPtr& x) {
    if (x->size() == 0) throw UsageError("mean: empty tensor");
    auto y = sum(tape, x);
    return scalar_mul(tape, y, 1.0 / static_cast<double>(x->size()));
}

TensorPtr apply_mask(Tape& tape, const TensorPtr& x, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != x->size()) throw DimensionError("apply_mask: mask length mismatch");
    auto y = tape.make(x->shape, any_grad(x));
    for (std::size_t i = 0; i < y->size(); ++i) y->value[i] = mask[i] ? x->value[i] : 0.0;
    if (y->requires_grad) {
        tape.record([x, y, mask] {
            for (std::size_t i = 0; i < y->size(); ++i)
                if (mask[i]) x->grad[i] += y->grad[i];
        });
    }
    return y;
}

TensorPtr scale_cols(Tape& tape, const TensorPtr& x, const std::vector<double>& c) {
    const std::size_t t = x->rows(), e = x->cols();
    if (c.size() != e) throw DimensionError("scale_cols: scale length mismatch");
    auto y = tape.make(x->shape, any_grad(x));
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t j = 0; j < e; ++j) y->value[r * e + j] = x->value[r * e + j] * c[j];
    if (y->requires_grad) {
        tape.record([x, y, c, t, e] {
            for (std::size_t r = 0; r < t; ++r)
                for (std::size_t j = 0; j < e; ++j) x->grad[r * e + j] += y->grad[r * e + j] * c[j];
        });
    }
    return y;
}

TensorPtr take_col(Tape& tape, const TensorPtr& x, std::size_t e) {
    const std::size_t t = x->rows(), cols = x->cols();
    if (e >= cols) throw DimensionError("take_col: column out of range");
    auto y = tape.make({t, 1}, any_grad(x));
    for (std::size_t r = 0; r < t; ++r) y->value[r] = x->value[r * cols + e];
    if (y->requires_grad) {
        tape.record([x, y, e, t, cols] {
            for (std::size_t r = 0; r < t; ++r) x->grad[r * cols + e] += y->grad[r];
        });
    }
    return y;
}

TensorPtr row_scale(Tape& tape, const TensorPtr& x, const TensorPtr& s) {
    const std::size_t t = x->rows(), d = x->cols();
    if (s->size() != t) throw DimensionError("row_scale: scale length mismatch");
    auto y = tape.make(x->shape, any_grad(x, s));
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t j = 0; j < d; ++j) y->value[r * d + j] = x->value[r * d + j] * s->value[r];
    if (y->requires_grad) {
        tape.record([x, s, y, t, d] {
            for (std::size_t r = 0; r < t; ++r) {
                if (x->requires_grad)
                    for (std::size_t j = 0; j < d; ++j)
                        x->grad[r * d + j] += y->grad[r * d + j] * s->value[r];
                if (s->requires_grad) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < d; ++j) dot += y->grad[r * d + j] * x->value[r * d + j];
                    s->grad[r] += dot;
                }
            }
        });
    }
    return y;
}

TensorPtr gather_rows(Tape& tape, const TensorPtr& x, const std::vector<std::size_t>& idx) {
    const std::size_t d = x->cols();
    for (std::size_t r : idx)
        if (r >= x->rows()) throw UsageError("gather_rows: index out of range");
    auto y = tape.make({idx.size(), d}, any_grad(x));
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(x->value.data() + idx[i] * d, x->value.data() + (idx[i] + 1) * d,
                  y->value.data() + i * d);
    if (y->requires_grad) {
        tape.record([x, y, idx, d] {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                double* dst = x->grad.data() + idx[i] * d;
                const double* src = y->grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return y;
}

TensorPtr scatter_rows(Tape& tape, const TensorPtr& x, const std::vector<std::size_t>& idx,
                       std::size_t out_rows) {
    const std::size_t d = x->cols();
    if (idx.size() != x->rows()) throw DimensionError("scatter_rows: index count mismatch");
    for (std::size_t r : idx)
        if (r >= out_rows) throw UsageError("scatter_rows: index out of range");
    auto y = tape.make({out_rows, d}, any_grad(x));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        double* dst = y->value.data() + idx[i] * d;
        const double* src = x->value.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    if (y->requires_grad) {
        tape.record([x, y, idx, d] {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const double* src = y->grad.data() + idx[i] * d;
                double* dst = x->grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return y;
}

std::vector<std::uint8_t> positive_mask(const Tensor& x) {
    std::vector<std::uint8_t> m(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) m[i] = x.value[i] > 0.0 ? 1 : 0;
    return m;
}

}  // namespace remoe::ops
