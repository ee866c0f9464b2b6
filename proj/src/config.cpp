// SPDX-License-Identifier: Apache-2.0

#include "remoe/config.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace remoe {

std::string router_name(RouterKind r) {
    switch (r) {
        case RouterKind::topk: return "topk";
        case RouterKind::relu: return "relu";
        case RouterKind::hash: return "hash";
        case RouterKind::dense: return "dense";
        case RouterKind::dense_xe: return "dense_xE";
    }
    return "?";
}

RouterKind router_from_name(const std::string& s) {
    if (s == "topk") return RouterKind::topk;
    if (s == "relu") return RouterKind::relu;
    if (s == "hash") return RouterKind::hash;
    if (s == "dense") return RouterKind::dense;
    if (s == "dense_xE" || s == "dense_xe") return RouterKind::dense_xe;
    throw ConfigError("model.router: unknown router '" + s +
                      "' (expected topk|relu|hash|dense|dense_xE)");
}

void MoEConfig::validate() const {
    if (vocab_size == 0) throw ConfigError("model.vocab_size: must be positive");
    if (d == 0 || L == 0 || n_heads == 0 || n_groups == 0)
        throw ConfigError("model: d, L, n_heads, n_groups must be positive");
    if (d % n_heads != 0)
        throw ConfigError("model.d: " + std::to_string(d) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    if (n_heads % n_groups != 0)
        throw ConfigError("model.n_heads: " + std::to_string(n_heads) +
                          " not divisible by n_groups " + std::to_string(n_groups));
    if (G == 0) throw ConfigError("model.G: must be positive");
    if (ffn_width() % G != 0)
        throw ConfigError("model.d_ffn: " + std::to_string(ffn_width()) +
                          " not divisible by G " + std::to_string(G));
    if (router == RouterKind::topk || router == RouterKind::relu || router == RouterKind::hash) {
        if (E == 0) throw ConfigError("model.E: must be positive");
        if (k < 1 || k > E)
            throw ConfigError("model.k: " + std::to_string(k) + " outside [1, E=" +
                              std::to_string(E) + "]");
    }
    if (router == RouterKind::hash && k != 1)
        throw ConfigError("model.k: hash router supports only k=1");
    if (context_len == 0) throw ConfigError("model.context_len: must be positive");
}

void TrainConfig::validate() const {
    if (steps == 0) throw ConfigError("train.steps: must be positive");
    if (lr_peak <= 0.0) throw ConfigError("train.lr_peak: must be positive");
    // lambda updates are multiplicative; a zero lambda0 could never recover.
    if (lambda0 <= 0.0) throw ConfigError("train.lambda0: must be strictly positive");
    if (alpha <= 1.0) throw ConfigError("train.alpha: must be > 1");
    if (batch_sequences == 0) throw ConfigError("train.batch_sequences: must be positive");
    if (valid_fraction <= 0.0 || valid_fraction >= 1.0)
        throw ConfigError("train.valid_fraction: must be in (0,1)");
    if (corpus_paths.size() != domain_labels.size() && !domain_labels.empty())
        throw ConfigError("data.domains: label count does not match corpus path count");
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key,
                        std::size_t dflt) {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    try {
        long long v = std::stoll(it->second);
        if (v < 0) throw std::out_of_range("negative");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a nonnegative integer, got '" + it->second + "'");
    }
}

double parse_real(const std::map<std::string, std::string>& kv, const std::string& key,
                  double dflt) {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a real number, got '" + it->second + "'");
    }
}

bool parse_bool(const std::map<std::string, std::string>& kv, const std::string& key, bool dflt) {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + it->second + "'");
}

std::vector<std::string> parse_list(const std::map<std::string, std::string>& kv,
                                    const std::string& key) {
    auto it = kv.find(key);
    std::vector<std::string> out;
    if (it == kv.end()) return out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "model.vocab_size", "model.d", "model.L", "model.n_heads", "model.n_groups",
        "model.d_ffn", "model.E", "model.k", "model.G", "model.router", "model.context_len",
        "model.seed", "model.sparse_experts",
        "train.steps", "train.lr_peak", "train.beta1", "train.beta2", "train.weight_decay",
        "train.warmup_steps", "train.min_lr_fraction", "train.lb_weight", "train.lambda0",
        "train.alpha", "train.use_lb_reg", "train.topk_warmup_steps", "train.topk_warmup_k",
        "train.eval_every", "train.seed", "train.batch_sequences", "train.grad_clip",
        "train.stage_band", "train.stage_window", "train.valid_fraction",
        "data.corpus", "data.domains",
    };
    return keys;
}

}  // namespace

ConfigFile ConfigFile::parse_text(const std::string& text) {
    ConfigFile cf;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!section.empty()) key = section + "." + key;
        if (!known_keys().count(key))
            throw ConfigError(key + ": unknown config key");
        cf.kv_[key] = value;
    }
    return cf;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
}

MoEConfig ConfigFile::model_config() const {
    MoEConfig c;
    c.vocab_size = parse_count(kv_, "model.vocab_size", c.vocab_size);
    c.d = parse_count(kv_, "model.d", c.d);
    c.L = parse_count(kv_, "model.L", c.L);
    c.n_heads = parse_count(kv_, "model.n_heads", c.n_heads);
    c.n_groups = parse_count(kv_, "model.n_groups", c.n_groups);
    c.d_ffn = parse_count(kv_, "model.d_ffn", c.d_ffn);
    c.E = parse_count(kv_, "model.E", c.E);
    c.k = parse_count(kv_, "model.k", c.k);
    c.G = parse_count(kv_, "model.G", c.G);
    if (auto it = kv_.find("model.router"); it != kv_.end())
        c.router = router_from_name(it->second);
    c.context_len = parse_count(kv_, "model.context_len", c.context_len);
    c.seed = parse_count(kv_, "model.seed", static_cast<std::size_t>(c.seed));
    c.sparse_experts = parse_bool(kv_, "model.sparse_experts", c.sparse_experts);
    c.validate();
    return c;
}

TrainConfig ConfigFile::train_config() const {
    TrainConfig c;
    c.steps = parse_count(kv_, "train.steps", c.steps);
    c.lr_peak = parse_real(kv_, "train.lr_peak", c.lr_peak);
    c.beta1 = parse_real(kv_, "train.beta1", c.beta1);
    c.beta2 = parse_real(kv_, "train.beta2", c.beta2);
    c.weight_decay = parse_real(kv_, "train.weight_decay", c.weight_decay);
    c.warmup_steps = parse_count(kv_, "train.warmup_steps", c.warmup_steps);
    c.min_lr_fraction = parse_real(kv_, "train.min_lr_fraction", c.min_lr_fraction);
    c.lb_weight = parse_real(kv_, "train.lb_weight", c.lb_weight);
    c.lambda0 = parse_real(kv_, "train.lambda0", c.lambda0);
    c.alpha = parse_real(kv_, "train.alpha", c.alpha);
    c.use_lb_reg = parse_bool(kv_, "train.use_lb_reg", c.use_lb_reg);
    c.topk_warmup_steps = parse_count(kv_, "train.topk_warmup_steps", c.topk_warmup_steps);
    c.topk_warmup_k = parse_count(kv_, "train.topk_warmup_k", c.topk_warmup_k);
    c.eval_every = parse_count(kv_, "train.eval_every", c.eval_every);
    c.seed = parse_count(kv_, "train.seed", static_cast<std::size_t>(c.seed));
    c.batch_sequences = parse_count(kv_, "train.batch_sequences", c.batch_sequences);
    c.grad_clip = parse_real(kv_, "train.grad_clip", c.grad_clip);
    c.stage_band = parse_real(kv_, "train.stage_band", c.stage_band);
    c.stage_window = parse_count(kv_, "train.stage_window", c.stage_window);
    c.valid_fraction = parse_real(kv_, "train.valid_fraction", c.valid_fraction);
    c.corpus_paths = parse_list(kv_, "data.corpus");
    c.domain_labels = parse_list(kv_, "data.domains");
    c.validate();
    return c;
}

std::string code_version() { return "remoe-lab 0.1.0"; }

namespace {

std::string now_string() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[64];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

std::string RunManifest::to_text() const {
    std::ostringstream os;
    os << "# run manifest (resolved configuration)\n";
    os << "version = " << (code_version.empty() ? remoe::code_version() : code_version) << "\n";
    os << "start_time = " << (start_time.empty() ? now_string() : start_time) << "\n";
    os << "out_dir = " << out_dir << "\n\n";
    os << "[model]\n";
    os << "vocab_size = " << model.vocab_size << "        # desk substitute (byte vocab)\n";
    os << "d = " << model.d << "                  # desk substitute\n";
    os << "L = " << model.L << "                  # desk substitute\n";
    os << "n_heads = " << model.n_heads << "\n";
    os << "n_groups = " << model.n_groups << "\n";
    os << "d_ffn = " << model.ffn_width() << "              # reference default ratio 4*d\n";
    os << "E = " << model.E << "\n";
    os << "k = " << model.k << "\n";
    os << "G = " << model.G << "\n";
    os << "router = " << router_name(model.router) << "\n";
    os << "context_len = " << model.context_len << "       # desk substitute\n";
    os << "seed = " << model.seed << "\n";
    os << "sparse_experts = " << (model.sparse_experts ? "true" : "false") << "\n\n";
    os << "[train]\n";
    os << "steps = " << train.steps << "\n";
    os << "lr_peak = " << fmt_real(train.lr_peak) << "          # reference default\n";
    os << "beta1 = " << fmt_real(train.beta1) << "              # reference default\n";
    os << "beta2 = " << fmt_real(train.beta2) << "            # reference default\n";
    os << "weight_decay = " << fmt_real(train.weight_decay) << "       # desk substitute\n";
    os << "warmup_steps = " << train.effective_warmup(train.steps) << "\n";
    os << "min_lr_fraction = " << fmt_real(train.min_lr_fraction) << "\n";
    os << "lb_weight = " << fmt_real(train.lb_weight) << "        # reference default\n";
    os << "lambda0 = " << fmt_real(train.lambda0) << "        # reference default\n";
    os << "alpha = " << fmt_real(train.alpha) << "            # reference default\n";
    os << "use_lb_reg = " << (train.use_lb_reg ? "true" : "false") << "\n";
    os << "topk_warmup_steps = " << train.topk_warmup_steps << "\n";
    os << "topk_warmup_k = " << train.topk_warmup_k << "\n";
    os << "eval_every = " << train.eval_every << "\n";
    os << "seed = " << train.seed << "\n";
    os << "batch_sequences = " << train.batch_sequences << "   # desk substitute\n";
    os << "grad_clip = " << fmt_real(train.grad_clip) << "\n";
    os << "stage_band = " << fmt_real(train.stage_band) << "\n";
    os << "stage_window = " << train.stage_window << "\n";
    os << "valid_fraction = " << fmt_real(train.valid_fraction) << "\n\n";
    os << "[data]\n";
    os << "corpus = ";
    for (std::size_t i = 0; i < train.corpus_paths.size(); ++i)
        os << (i ? "," : "") << train.corpus_paths[i];
    os << "\n";
    os << "domains = ";
    for (std::size_t i = 0; i < train.domain_labels.size(); ++i)
        os << (i ? "," : "") << train.domain_labels[i];
    os << "\n";
    return os.str();
}

void RunManifest::write(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw UsageError("cannot write manifest: " + path);
    f << to_text();
}

}  // namespace remoe
