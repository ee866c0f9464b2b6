// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "remoe/errors.hpp"

namespace remoe {

enum class RouterKind { topk, relu, hash, dense, dense_xe };

std::string router_name(RouterKind r);
RouterKind router_from_name(const std::string& s);

// Architecture and routing hyperparameters.
struct MoEConfig {
    std::size_t vocab_size = 256;  // byte vocabulary
    std::size_t d = 128;
    std::size_t L = 4;
    std::size_t n_heads = 4;
    std::size_t n_groups = 2;  // query groups (kv heads)
    std::size_t d_ffn = 0;     // 0 -> 4*d
    std::size_t E = 8;
    std::size_t k = 1;
    std::size_t G = 1;  // granularity: experts split into G pieces of width d_ffn/G
    RouterKind router = RouterKind::relu;
    std::size_t context_len = 256;
    std::uint64_t seed = 42;
    bool sparse_experts = false;  // gather/scatter path instead of dense-masked

    std::size_t ffn_width() const { return d_ffn == 0 ? 4 * d : d_ffn; }
    std::size_t num_experts() const { return E * G; }  // E' = E*G
    double target_sparsity() const {
        return 1.0 - static_cast<double>(k) / static_cast<double>(E);
    }
    void validate() const;
};

struct TrainConfig {
    std::size_t steps = 2000;
    double lr_peak = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.1;
    std::size_t warmup_steps = 0;  // 0 -> 1% of steps (at least 1)
    double min_lr_fraction = 0.1;
    double lb_weight = 0.01;  // Switch-style auxiliary loss weight (topk)
    double lambda0 = 1e-8;
    double alpha = 1.2;
    bool use_lb_reg = true;  // load-balance-refined L1 vs plain L1
    std::size_t topk_warmup_steps = 0;
    std::size_t topk_warmup_k = 0;
    std::size_t eval_every = 50;
    std::uint64_t seed = 42;
    std::size_t batch_sequences = 16;
    double grad_clip = 1.0;
    double stage_band = 0.03;
    std::size_t stage_window = 20;
    double valid_fraction = 0.1;
    std::vector<std::string> corpus_paths;  // empty -> built-in synthetic corpus
    std::vector<std::string> domain_labels;

    std::size_t effective_warmup(std::size_t total) const {
        if (warmup_steps > 0) return warmup_steps;
        std::size_t w = total / 100;
        return w == 0 ? 1 : w;
    }
    void validate() const;
};

// Flat section.key -> value view of a config file plus --set overrides.
class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_text(const std::string& text);

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    MoEConfig model_config() const;
    TrainConfig train_config() const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

// Resolved, reproducible description of one run; serialized before any work.
struct RunManifest {
    MoEConfig model;
    TrainConfig train;
    std::string code_version;
    std::string start_time;
    std::string out_dir;

    std::string to_text() const;  // key=value annotated reference-default vs desk-substitute
    void write(const std::string& path) const;
};

std::string code_version();

}  // namespace remoe
