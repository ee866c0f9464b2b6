// SPDX-License-Identifier: Apache-2.0
//
// Training diagnostics: per-step records, flip rate/count on a fixed
// calibration batch, routed-token heatmaps, token-frequency vs active-expert
// profiles, and a concurrent CSV appender fed over a one-way channel.
#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <vector>

#include "remoe/routing.hpp"

namespace remoe {

struct MetricsRecord {
    std::size_t step = 0;
    double lm_loss = 0.0;
    double reg_loss = 0.0;
    double lambda = 0.0;
    double lr = 0.0;
    double S_overall = 0.0;
    std::vector<double> S_per_layer;
    std::vector<double> f_matrix;  // L x E' row-major
    double mean_active_experts = 0.0;
    std::string stage;
    double flip_rate = 0.0;
    double flip_count = 0.0;
};

struct FlipStats {
    double flip_rate = 0.0;
    double flip_count = 0.0;  // = E' * flip_rate
    std::string calibration_id;
};

// Masks are row-major L x T x E' booleans from the same calibration batch.
FlipStats flip_stats(const std::vector<std::uint8_t>& mask_prev,
                     const std::vector<std::uint8_t>& mask_curr, std::size_t layers,
                     std::size_t tokens, std::size_t experts);

// Entry (l,e) = fraction of tokens routed to expert e in layer l.
std::vector<double> routed_ratio_heatmap(const std::vector<std::vector<RouterDecision>>& eval_decisions);

// Experts receiving fewer than `threshold` of tokens anywhere in the heatmap.
std::vector<std::pair<std::size_t, std::size_t>> dead_experts(const std::vector<double>& heatmap,
                                                              std::size_t layers,
                                                              std::size_t experts,
                                                              double threshold = 1.0 / 64.0);

struct TokenExpertProfile {
    // token id -> (occurrences, mean active experts per occurrence)
    std::map<int, std::pair<std::size_t, double>> per_token;
    double spearman_log_freq_vs_active = 0.0;  // reported, not asserted
};

// Accumulating builder: feed (decisions, token_ids) pairs step by step.
class TokenProfileBuilder {
public:
    void add(const std::vector<RouterDecision>& decisions, const std::vector<int>& token_ids);
    TokenExpertProfile finish() const;

private:
    std::map<int, std::pair<std::size_t, double>> acc_;  // count, summed active
};

// CSV schema: step,lm_loss,reg_loss,lambda,lr,S_overall,S_layer_0..L-1,
// mean_active,stage,flip_rate,flip_count. Floats at 9 significant digits.
std::string csv_header(std::size_t layers);
std::string csv_row(const MetricsRecord& r);
void emit_csv(const std::vector<MetricsRecord>& records, const std::string& path,
              std::size_t layers);
std::vector<MetricsRecord> parse_csv(const std::string& path);

void write_heatmap_file(const std::string& path, const std::vector<double>& heatmap,
                        std::size_t layers, std::size_t experts);
void write_profile_file(const std::string& path, const TokenExpertProfile& profile);

// Single-producer appender thread; records arrive over a one-way channel and
// are written in submission (step) order. Rows are flushed as they land so
// an interrupted run leaves a parsable partial CSV.
class MetricsWriter {
public:
    MetricsWriter(const std::string& path, std::size_t layers);
    ~MetricsWriter();

    void push(MetricsRecord r);
    void close();  // drain and join

private:
    void run();
    std::string path_;
    std::thread worker_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::queue<MetricsRecord> queue_;
    bool done_ = false;
};

}  // namespace remoe
