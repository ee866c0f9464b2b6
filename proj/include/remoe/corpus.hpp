// SPDX-License-Identifier: Apache-2.0
//
// Byte-level corpus handling: identity byte tokenizer, multi-source streams
// with per-source domain labels, a deterministic synthetic multi-domain
// generator, and train/valid batch sampling.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "remoe/errors.hpp"

namespace remoe {

// Identity byte -> id mapping; ids in [0, 255].
std::vector<int> tokenize_bytes(const std::string& text);
std::string detokenize_bytes(const std::vector<int>& ids);

struct Batch {
    std::vector<int> tokens;   // B x S row-major
    std::vector<int> targets;  // next-token ids, same layout
    std::size_t batch = 0;
    std::size_t seq_len = 0;
};

// Disjoint train/valid token streams; sources keep their domain label so
// specialization diagnostics can attribute tokens.
class CorpusStream {
public:
    // Each source split independently: the leading (1 - valid_fraction) of
    // its tokens go to train, the rest to valid.
    static CorpusStream from_files(const std::vector<std::string>& paths,
                                   const std::vector<std::string>& labels,
                                   double valid_fraction);
    static CorpusStream from_text(const std::vector<std::string>& texts,
                                  const std::vector<std::string>& labels,
                                  double valid_fraction);

    // Built-in synthetic multi-domain corpus (deterministic in seed).
    static CorpusStream synthetic(std::uint64_t seed, std::size_t bytes_per_domain = 1 << 17,
                                  std::size_t n_domains = 3, double valid_fraction = 0.1);

    // Random-offset sampling from the train split, deterministic in the rng.
    Batch sample_train(std::mt19937_64& rng, std::size_t batch, std::size_t seq_len) const;
    // Fixed deterministic batch from the valid split (offset stride i).
    Batch valid_batch(std::size_t index, std::size_t batch, std::size_t seq_len) const;

    std::size_t train_size() const { return train_.size(); }
    std::size_t valid_size() const { return valid_.size(); }

private:
    std::vector<int> train_;
    std::vector<int> valid_;
    Batch slice(const std::vector<int>& data, const std::vector<std::size_t>& offsets,
                std::size_t seq_len) const;
};

// Deterministic structured text for one synthetic domain.
std::string synthetic_domain_text(std::uint64_t seed, std::size_t domain, std::size_t bytes);

}  // namespace remoe
