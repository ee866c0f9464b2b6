// SPDX-License-Identifier: Apache-2.0

#include "remoe/corpus.hpp"

#include <fstream>
#include <sstream>

namespace remoe {

std::vector<int> tokenize_bytes(const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
}

std::string detokenize_bytes(const std::vector<int>& ids) {
    std::string s;
    s.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id > 255) throw UsageError("detokenize_bytes: id out of byte range");
        s.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return s;
}

namespace {

// Zipf-ish word choice: earlier words in the pool are much more frequent.
std::size_t zipf_pick(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double total = 0.0;
    for (std::size_t i = 1; i <= n; ++i) total += 1.0 / static_cast<double>(i);
    double x = u(rng) * total;
    for (std::size_t i = 1; i <= n; ++i) {
        x -= 1.0 / static_cast<double>(i);
        if (x <= 0.0) return i - 1;
    }
    return n - 1;
}

const std::vector<std::vector<std::string>>& domain_pools() {
    static const std::vector<std::vector<std::string>> pools = {
        {"the", "cat", "sat", "on", "a", "mat", "and", "dog", "ran", "far", "away", "home",
         "sun", "rose", "over", "hill", "then", "bird", "sang", "loud"},
        {"def", "return", "value", "for", "in", "range", "print", "if", "else", "import",
         "numpy", "array", "class", "self", "while", "break", "lambda", "list", "dict", "None"},
        {"theorem", "proof", "lemma", "let", "x", "be", "real", "then", "sum", "converges",
         "integral", "bounded", "continuous", "function", "exists", "unique", "limit", "series",
         "finite", "norm"},
        {"mix", "flour", "sugar", "butter", "bake", "oven", "until", "golden", "add", "salt",
         "stir", "whisk", "eggs", "cream", "pour", "batter", "pan", "cool", "serve", "warm"},
    };
    return pools;
}

}  // namespace

std::string synthetic_domain_text(std::uint64_t seed, std::size_t domain, std::size_t bytes) {
    const auto& pools = domain_pools();
    const auto& pool = pools[domain % pools.size()];
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + domain + 1);
    std::uniform_int_distribution<int> sent_len(4, 10);
    std::ostringstream os;
    while (static_cast<std::size_t>(os.tellp()) < bytes) {
        const int n = sent_len(rng);
        for (int i = 0; i < n; ++i) {
            if (i) os << ' ';
            os << pool[zipf_pick(rng, pool.size())];
        }
        os << ".\n";
    }
    std::string s = os.str();
    s.resize(bytes);
    return s;
}

CorpusStream CorpusStream::from_text(const std::vector<std::string>& texts,
                                     const std::vector<std::string>& labels,
                                     double valid_fraction) {
    if (texts.empty()) throw UsageError("CorpusStream: no sources");
    if (!labels.empty() && labels.size() != texts.size())
        throw ConfigError("CorpusStream: label count does not match source count");
    CorpusStream cs;
    for (const auto& text : texts) {
        auto ids = tokenize_bytes(text);
        const std::size_t split = static_cast<std::size_t>(
            static_cast<double>(ids.size()) * (1.0 - valid_fraction));
        cs.train_.insert(cs.train_.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(split));
        cs.valid_.insert(cs.valid_.end(), ids.begin() + static_cast<std::ptrdiff_t>(split), ids.end());
    }
    return cs;
}

CorpusStream CorpusStream::from_files(const std::vector<std::string>& paths,
                                      const std::vector<std::string>& labels,
                                      double valid_fraction) {
    std::vector<std::string> texts;
    for (const auto& p : paths) {
        std::ifstream f(p, std::ios::binary);
        if (!f) throw UsageError("corpus file not found: " + p);
        std::stringstream ss;
        ss << f.rdbuf();
        texts.push_back(ss.str());
    }
    return from_text(texts, labels, valid_fraction);
}

CorpusStream CorpusStream::synthetic(std::uint64_t seed, std::size_t bytes_per_domain,
                                     std::size_t n_domains, double valid_fraction) {
    std::vector<std::string> texts, labels;
    for (std::size_t dom = 0; dom < n_domains; ++dom) {
        texts.push_back(synthetic_domain_text(seed, dom, bytes_per_domain));
        labels.push_back("synthetic" + std::to_string(dom));
    }
    return from_text(texts, labels, valid_fraction);
}

Batch CorpusStream::slice(const std::vector<int>& data, const std::vector<std::size_t>& offsets,
                          std::size_t seq_len) const {
    Batch b;
    b.batch = offsets.size();
    b.seq_len = seq_len;
    b.tokens.reserve(b.batch * seq_len);
    b.targets.reserve(b.batch * seq_len);
    for (std::size_t off : offsets) {
        for (std::size_t s = 0; s < seq_len; ++s) {
            b.tokens.push_back(data[off + s]);
            b.targets.push_back(data[off + s + 1]);
        }
    }
    return b;
}

Batch CorpusStream::sample_train(std::mt19937_64& rng, std::size_t batch,
                                 std::size_t seq_len) const {
    if (train_.size() < seq_len + 2) throw UsageError("corpus train split too small");
    std::uniform_int_distribution<std::size_t> dist(0, train_.size() - seq_len - 2);
    std::vector<std::size_t> offsets(batch);
    for (auto& o : offsets) o = dist(rng);
    return slice(train_, offsets, seq_len);
}

Batch CorpusStream::valid_batch(std::size_t index, std::size_t batch, std::size_t seq_len) const {
    if (valid_.size() < seq_len + 2) throw UsageError("corpus valid split too small");
    const std::size_t span = valid_.size() - seq_len - 1;
    std::vector<std::size_t> offsets(batch);
    for (std::size_t i = 0; i < batch; ++i)
        offsets[i] = ((index * batch + i) * 131) % span;
    return slice(valid_, offsets, seq_len);
}

}  // namespace remoe
