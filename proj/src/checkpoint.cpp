// SPDX-License-Identifier: Apache-2.0

#include "remoe/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace remoe {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'M', 'O', 'E', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64(os, v);
}

double read_f64(std::istream& is) {
    std::uint64_t v = read_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

std::string config_text(const MoEConfig& c) {
    std::string s;
    s += "vocab_size=" + std::to_string(c.vocab_size) + "\n";
    s += "d=" + std::to_string(c.d) + "\n";
    s += "L=" + std::to_string(c.L) + "\n";
    s += "n_heads=" + std::to_string(c.n_heads) + "\n";
    s += "n_groups=" + std::to_string(c.n_groups) + "\n";
    s += "d_ffn=" + std::to_string(c.d_ffn) + "\n";
    s += "E=" + std::to_string(c.E) + "\n";
    s += "k=" + std::to_string(c.k) + "\n";
    s += "G=" + std::to_string(c.G) + "\n";
    s += "router=" + router_name(c.router) + "\n";
    s += "context_len=" + std::to_string(c.context_len) + "\n";
    s += "seed=" + std::to_string(c.seed) + "\n";
    s += "sparse_experts=" + std::string(c.sparse_experts ? "1" : "0") + "\n";
    return s;
}

MoEConfig config_from_text(const std::string& text) {
    MoEConfig c;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "vocab_size") c.vocab_size = std::stoull(val);
        else if (key == "d") c.d = std::stoull(val);
        else if (key == "L") c.L = std::stoull(val);
        else if (key == "n_heads") c.n_heads = std::stoull(val);
        else if (key == "n_groups") c.n_groups = std::stoull(val);
        else if (key == "d_ffn") c.d_ffn = std::stoull(val);
        else if (key == "E") c.E = std::stoull(val);
        else if (key == "k") c.k = std::stoull(val);
        else if (key == "G") c.G = std::stoull(val);
        else if (key == "router") c.router = router_from_name(val);
        else if (key == "context_len") c.context_len = std::stoull(val);
        else if (key == "seed") c.seed = std::stoull(val);
        else if (key == "sparse_experts") c.sparse_experts = (val == "1");
        else throw UsageError("checkpoint: unknown config key " + key);
    }
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const SparsityController& ctrl, std::size_t step) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UsageError("cannot write checkpoint: " + path);
    os.write(kMagic, 8);
    write_u64(os, kVersion);
    write_string(os, config_text(params.cfg));
    write_u64(os, step);
    write_f64(os, ctrl.lambda);
    write_f64(os, ctrl.alpha);
    write_f64(os, ctrl.target_sparsity);
    write_f64(os, ctrl.last_S);
    write_u64(os, ctrl.step);
    write_u64(os, params.named.size());
    for (const auto& [name, t] : params.named) {
        write_string(os, name);
        write_u64(os, t->shape.size());
        for (std::size_t e : t->shape) write_u64(os, e);
        for (double v : t->value) write_f64(os, v);
    }
    if (!os) throw UsageError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw UsageError("cannot read checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw UsageError("not a checkpoint file: " + path);
    const std::uint64_t version = read_u64(is);
    if (version != kVersion)
        throw UsageError("unsupported checkpoint version " + std::to_string(version));
    const MoEConfig cfg = config_from_text(read_string(is));

    LoadedCheckpoint lc;
    lc.step = read_u64(is);
    lc.ctrl.lambda = read_f64(is);
    lc.ctrl.alpha = read_f64(is);
    lc.ctrl.target_sparsity = read_f64(is);
    lc.ctrl.last_S = read_f64(is);
    lc.ctrl.step = read_u64(is);

    lc.params = init_model(cfg);
    const std::uint64_t count = read_u64(is);
    if (count != lc.params.named.size())
        throw UsageError("checkpoint parameter count mismatch");
    for (auto& [name, t] : lc.params.named) {
        const std::string got = read_string(is);
        if (got != name) throw UsageError("checkpoint parameter order mismatch at " + got);
        const std::uint64_t ndim = read_u64(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& e : shape) e = read_u64(is);
        if (shape != t->shape) throw UsageError("checkpoint shape mismatch at " + name);
        for (double& v : t->value) v = read_f64(is);
    }
    if (!is) throw UsageError("checkpoint truncated: " + path);
    return lc;
}

}  // namespace remoe
