// SPDX-License-Identifier: Apache-2.0

#include "remoe/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <memory>
#include <sstream>

namespace remoe {

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::I_dense: return "I";
        case Stage::II_sparsifying: return "II";
        case Stage::III_stable: return "III";
    }
    return "?";
}

StageDetector::StageDetector(double target, double band, std::size_t window)
    : target_(target), band_(band), window_(window) {}

Stage StageDetector::observe(double S) {
    ++steps_seen_;
    min_S_ = std::min(min_S_, S);
    if (stage_ != Stage::III_stable) {
        in_band_run_ = std::abs(S - target_) < band_ ? in_band_run_ + 1 : 0;
        if (in_band_run_ >= window_) {
            stage_ = Stage::III_stable;
            settled_at_ = steps_seen_ - 1;
            return stage_;
        }
    }
    // I -> II once S has both cleared half the target and risen clearly
    // above its running minimum (the sparsifying push has started).
    if (stage_ == Stage::I_dense && S >= 0.5 * target_ && S > min_S_ + 0.02)
        stage_ = Stage::II_sparsifying;
    return stage_;
}

TrainState::TrainState(MoEConfig m, TrainConfig t, CorpusStream c)
    : mcfg(m),
      tcfg(t),
      params(init_model(m)),
      opt(params.named, t.beta1, t.beta2, t.weight_decay),
      ctrl{t.lambda0, t.alpha, m.target_sparsity(), 0.0, 0},
      stage(m.target_sparsity(), t.stage_band, t.stage_window),
      corpus(std::move(c)),
      data_rng(t.seed) {
    mcfg.validate();
    tcfg.validate();
    // Fixed calibration batch for flip stats: first validation batch.
    calibration = corpus.valid_batch(0, tcfg.batch_sequences, mcfg.context_len);
}

namespace {

std::vector<std::uint8_t> collect_masks(const std::vector<RouterDecision>& decisions) {
    std::vector<std::uint8_t> all;
    for (const auto& d : decisions)
        all.insert(all.end(), d.active_mask.begin(), d.active_mask.end());
    return all;
}

double decisions_compute_units(const std::vector<RouterDecision>& decisions) {
    double units = 0.0;
    for (const auto& d : decisions)
        for (int c : d.tokens_per_expert) units += static_cast<double>(c);
    return units;
}

}  // namespace

MetricsRecord train_step(TrainState& st, const Batch& batch,
                         std::vector<RouterDecision>* out_decisions) {
    Tape tape;
    std::size_t topk_override = 0;
    if (st.mcfg.router == RouterKind::topk && st.tcfg.topk_warmup_steps > 0 &&
        st.step < st.tcfg.topk_warmup_steps)
        topk_override = st.tcfg.topk_warmup_k;

    auto fwd = forward(tape, st.params, batch.tokens, batch.batch, batch.seq_len, topk_override);
    auto lm = lm_loss(tape, fwd.logits, batch.targets);

    MetricsRecord rec;
    rec.step = st.step;
    rec.lm_loss = lm->value[0];
    rec.lambda = st.ctrl.lambda;

    TensorPtr total = lm;
    double S = 0.0;
    if (st.mcfg.router == RouterKind::relu) {
        S = measure_sparsity(fwd.decisions);
        TensorPtr reg;
        if (st.tcfg.use_lb_reg) {
            auto [loss, lf] = l1_reg_lb(tape, fwd.decisions, st.mcfg.k, st.mcfg.E);
            reg = loss;
            rec.f_matrix = lf.f;
        } else {
            reg = l1_reg(tape, fwd.decisions);
        }
        rec.reg_loss = reg->value[0];
        total = ops::add(tape, lm, ops::scalar_mul(tape, reg, st.ctrl.lambda));
    } else if (st.mcfg.router == RouterKind::topk) {
        TensorPtr lb;
        for (const auto& d : fwd.decisions) {
            auto term = switch_lb_loss(tape, d);
            lb = lb ? ops::add(tape, lb, term) : term;
        }
        lb = ops::scalar_mul(tape, lb, 1.0 / static_cast<double>(fwd.decisions.size()));
        rec.reg_loss = lb->value[0];
        total = ops::add(tape, lm, ops::scalar_mul(tape, lb, st.tcfg.lb_weight));
    }

    const double lr = cosine_lr(st.step, st.tcfg);
    rec.lr = lr;

    if (!std::isfinite(total->value[0])) {
        std::ostringstream os;
        os << "non-finite loss at step " << st.step << ": lm=" << rec.lm_loss
           << " reg=" << rec.reg_loss << " lambda=" << st.ctrl.lambda << " S=" << S
           << " lr=" << lr;
        throw NumericError(os.str());
    }

    st.params.zero_grad();
    tape.backward(total);
    clip_global_norm(st.params.named, st.tcfg.grad_clip);
    st.opt.step(lr);

    if (!fwd.decisions.empty()) {
        rec.S_per_layer.reserve(fwd.decisions.size());
        for (const auto& d : fwd.decisions) rec.S_per_layer.push_back(d.batch_sparsity);
        rec.S_overall = measure_sparsity(fwd.decisions);
        rec.mean_active_experts =
            (1.0 - rec.S_overall) * static_cast<double>(st.mcfg.num_experts());
        st.compute_units += decisions_compute_units(fwd.decisions);
    } else {
        st.compute_units += static_cast<double>(batch.tokens.size());
        rec.S_per_layer.assign(st.mcfg.L, 0.0);
    }

    // S is measured on this batch before the lambda update; the updated
    // lambda applies from the next step.
    if (st.mcfg.router == RouterKind::relu) {
        rec.stage = stage_name(st.stage.observe(S));
        update_lambda(st.ctrl, S);
    } else {
        rec.stage = "-";
    }
    rec.flip_rate = st.last_flip.flip_rate;
    rec.flip_count = st.last_flip.flip_count;
    if (out_decisions) *out_decisions = std::move(fwd.decisions);
    ++st.step;
    return rec;
}

double validation_loss(TrainState& st, std::size_t batches) {
    double total = 0.0;
    for (std::size_t i = 0; i < batches; ++i) {
        Tape tape;
        Batch b = st.corpus.valid_batch(i, st.tcfg.batch_sequences, st.mcfg.context_len);
        auto fwd = forward(tape, st.params, b.tokens, b.batch, b.seq_len);
        total += lm_loss(tape, fwd.logits, b.targets)->value[0];
    }
    return total / static_cast<double>(batches);
}

RunResult run_training(TrainState& st, const std::string& out_dir, double compute_target) {
    RunResult res;
    res.initial_valid_loss = validation_loss(st);

    std::unique_ptr<MetricsWriter> writer;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        writer = std::make_unique<MetricsWriter>(out_dir + "/metrics.csv", st.mcfg.L);
    }

    const bool routed = st.mcfg.router == RouterKind::relu ||
                        st.mcfg.router == RouterKind::topk ||
                        st.mcfg.router == RouterKind::hash;
    TokenProfileBuilder profile;
    const std::size_t profile_from = st.tcfg.steps - st.tcfg.steps / 4;

    for (std::size_t i = 0;; ++i) {
        const bool steps_done = i >= st.tcfg.steps;
        // Equal-compute mode extends the run until the target is matched.
        const bool compute_done = compute_target <= 0.0 || st.compute_units >= compute_target;
        if (steps_done && compute_done) break;

        Batch batch = st.corpus.sample_train(st.data_rng, st.tcfg.batch_sequences,
                                             st.mcfg.context_len);
        std::vector<RouterDecision> decisions;
        MetricsRecord rec = train_step(st, batch, &decisions);

        // Token profile over the final quarter of training.
        if (routed && !decisions.empty() && st.step > profile_from)
            profile.add(decisions, batch.tokens);

        if (routed && st.tcfg.eval_every > 0 && st.step % st.tcfg.eval_every == 0) {
            Tape tape;
            auto fwd = forward(tape, st.params, st.calibration.tokens, st.calibration.batch,
                               st.calibration.seq_len);
            auto mask = collect_masks(fwd.decisions);
            if (!st.calib_mask_prev.empty()) {
                st.last_flip = flip_stats(st.calib_mask_prev, mask, fwd.decisions.size(),
                                          fwd.decisions.front().tokens(),
                                          fwd.decisions.front().experts());
                st.last_flip.calibration_id = "valid0";
                rec.flip_rate = st.last_flip.flip_rate;
                rec.flip_count = st.last_flip.flip_count;
            }
            st.calib_mask_prev = std::move(mask);
            if (!out_dir.empty())
                write_heatmap_file(out_dir + "/heatmap_" + std::to_string(st.step),
                                   routed_ratio_heatmap({fwd.decisions}), st.mcfg.L,
                                   st.mcfg.num_experts());
        }

        if (st.mcfg.router == RouterKind::relu)
            res.stage_counts[rec.stage == "I" ? 0 : rec.stage == "II" ? 1 : 2] += 1;
        res.records.push_back(rec);
        if (writer) writer->push(std::move(rec));
    }

    if (routed) {
        std::vector<std::vector<RouterDecision>> eval_decisions;
        for (std::size_t i = 0; i < 4; ++i) {
            Tape tape;
            Batch b = st.corpus.valid_batch(i, st.tcfg.batch_sequences, st.mcfg.context_len);
            auto fwd = forward(tape, st.params, b.tokens, b.batch, b.seq_len);
            eval_decisions.push_back(std::move(fwd.decisions));
        }
        res.final_heatmap = routed_ratio_heatmap(eval_decisions);
        res.profile = profile.finish();
        if (!out_dir.empty()) {
            write_heatmap_file(out_dir + "/heatmap_final", res.final_heatmap, st.mcfg.L,
                               st.mcfg.num_experts());
            write_profile_file(out_dir + "/token_profile.csv", res.profile);
        }
    }

    res.final_valid_loss = validation_loss(st);
    res.settling_step = st.stage.settling_step();
    res.compute_units = st.compute_units;
    if (writer) writer->close();
    return res;
}

}  // namespace remoe
