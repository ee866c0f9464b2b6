// SPDX-License-Identifier: Apache-2.0
//
// Full training loop: batching, loss assembly (lm + adaptive L1 or Switch
// auxiliary), AdamW with cosine schedule, lambda control, stage detection,
// calibration-batch flip stats, metrics and checkpointing.
#pragma once

#include <optional>
#include <string>

#include "remoe/config.hpp"
#include "remoe/corpus.hpp"
#include "remoe/metrics.hpp"
#include "remoe/model.hpp"
#include "remoe/optim.hpp"
#include "remoe/regularization.hpp"

namespace remoe {

enum class Stage { I_dense, II_sparsifying, III_stable };

std::string stage_name(Stage s);

// Three-stage classifier over the sparsity history. Transitions are
// monotone I -> II -> III and sticky.
class StageDetector {
public:
    StageDetector(double target, double band = 0.03, std::size_t window = 20);

    Stage observe(double S);
    Stage current() const { return stage_; }
    // First step index at which stage III was entered, if reached.
    std::optional<std::size_t> settling_step() const { return settled_at_; }

private:
    double target_, band_;
    std::size_t window_;
    Stage stage_ = Stage::I_dense;
    std::size_t in_band_run_ = 0;
    std::size_t steps_seen_ = 0;
    double min_S_ = 1.0;
    std::optional<std::size_t> settled_at_;
};

struct TrainState {
    MoEConfig mcfg;
    TrainConfig tcfg;
    ModelParams params;
    AdamW opt;
    SparsityController ctrl;
    StageDetector stage;
    CorpusStream corpus;
    std::mt19937_64 data_rng;
    std::size_t step = 0;
    double compute_units = 0.0;  // cumulative active-expert * token units

    // Flip-stat calibration batch, fixed at run start.
    Batch calibration;
    std::vector<std::uint8_t> calib_mask_prev;
    FlipStats last_flip;

    TrainState(MoEConfig m, TrainConfig t, CorpusStream c);
};

// One optimization step on a batch; throws NumericError (with a lambda/S/lr
// diagnostic dump) on non-finite loss. Router decisions are handed to
// out_decisions when requested (token-profile aggregation).
MetricsRecord train_step(TrainState& st, const Batch& batch,
                         std::vector<RouterDecision>* out_decisions = nullptr);

// Mean validation loss over `batches` fixed batches (no parameter updates).
double validation_loss(TrainState& st, std::size_t batches = 4);

struct RunResult {
    double initial_valid_loss = 0.0;
    double final_valid_loss = 0.0;
    std::optional<std::size_t> settling_step;
    std::vector<MetricsRecord> records;
    std::vector<double> final_heatmap;  // L x E'
    TokenExpertProfile profile;
    double compute_units = 0.0;
    std::vector<std::size_t> stage_counts = {0, 0, 0};
};

// Runs tcfg.steps steps (or until compute_target is exceeded when positive),
// emitting metrics/sidecars into out_dir when non-empty.
RunResult run_training(TrainState& st, const std::string& out_dir = "",
                       double compute_target = 0.0);

}  // namespace remoe
