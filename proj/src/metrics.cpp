// SPDX-License-Identifier: Apache-2.0

#include "remoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace remoe {

FlipStats flip_stats(const std::vector<std::uint8_t>& mask_prev,
                     const std::vector<std::uint8_t>& mask_curr, std::size_t layers,
                     std::size_t tokens, std::size_t experts) {
    const std::size_t n = layers * tokens * experts;
    if (mask_prev.size() != n || mask_curr.size() != n)
        throw UsageError("flip_stats: mask sizes do not match L x T x E'");
    std::size_t flips = 0;
    for (std::size_t i = 0; i < n; ++i) flips += mask_prev[i] != mask_curr[i] ? 1 : 0;
    FlipStats fs;
    fs.flip_rate = static_cast<double>(flips) / static_cast<double>(n);
    fs.flip_count = static_cast<double>(experts) * fs.flip_rate;
    return fs;
}

std::vector<double> routed_ratio_heatmap(
    const std::vector<std::vector<RouterDecision>>& eval_decisions) {
    if (eval_decisions.empty() || eval_decisions.front().empty())
        throw UsageError("routed_ratio_heatmap: empty eval set");
    const std::size_t layers = eval_decisions.front().size();
    const std::size_t experts = eval_decisions.front().front().experts();
    std::vector<double> counts(layers * experts, 0.0);
    std::size_t total_tokens = 0;
    for (const auto& step : eval_decisions) {
        if (step.size() != layers) throw UsageError("routed_ratio_heatmap: layer count varies");
        total_tokens += step.front().tokens();
        for (std::size_t l = 0; l < layers; ++l)
            for (std::size_t e = 0; e < experts; ++e)
                counts[l * experts + e] += static_cast<double>(step[l].tokens_per_expert[e]);
    }
    for (auto& c : counts) c /= static_cast<double>(total_tokens);
    return counts;
}

std::vector<std::pair<std::size_t, std::size_t>> dead_experts(const std::vector<double>& heatmap,
                                                              std::size_t layers,
                                                              std::size_t experts,
                                                              double threshold) {
    std::vector<std::pair<std::size_t, std::size_t>> dead;
    for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t e = 0; e < experts; ++e)
            if (heatmap[l * experts + e] < threshold) dead.emplace_back(l, e);
    return dead;
}

void TokenProfileBuilder::add(const std::vector<RouterDecision>& decisions,
                              const std::vector<int>& token_ids) {
    if (decisions.empty()) throw UsageError("token profile: no decisions");
    const std::size_t layers = decisions.size();
    const std::size_t t = decisions.front().tokens(), e = decisions.front().experts();
    if (token_ids.size() != t) throw UsageError("token profile: token count mismatch");
    for (std::size_t r = 0; r < t; ++r) {
        double active = 0.0;
        for (const auto& d : decisions)
            for (std::size_t j = 0; j < e; ++j) active += d.active_mask[r * e + j];
        active /= static_cast<double>(layers);
        auto& slot = acc_[token_ids[r]];
        slot.first += 1;
        slot.second += active;
    }
}

namespace {

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    if (n < 2) return 0.0;
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&v](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size();) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            const double mean_rank = 0.5 * static_cast<double>(i + j);
            for (std::size_t q = i; q <= j; ++q) r[order[q]] = mean_rank;
            i = j + 1;
        }
        return r;
    };
    auto ra = ranks(a), rb = ranks(b);
    const double mean = 0.5 * static_cast<double>(n - 1);
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (ra[i] - mean) * (rb[i] - mean);
        da += (ra[i] - mean) * (ra[i] - mean);
        db += (rb[i] - mean) * (rb[i] - mean);
    }
    if (da == 0.0 || db == 0.0) return 0.0;
    return num / std::sqrt(da * db);
}

std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

TokenExpertProfile TokenProfileBuilder::finish() const {
    TokenExpertProfile p;
    std::vector<double> logfreq, active;
    for (const auto& [id, slot] : acc_) {
        const double mean_active = slot.second / static_cast<double>(slot.first);
        p.per_token[id] = {slot.first, mean_active};
        logfreq.push_back(std::log(static_cast<double>(slot.first)));
        active.push_back(mean_active);
    }
    p.spearman_log_freq_vs_active = spearman(logfreq, active);
    return p;
}

std::string csv_header(std::size_t layers) {
    std::string h = "step,lm_loss,reg_loss,lambda,lr,S_overall";
    for (std::size_t l = 0; l < layers; ++l) h += ",S_layer_" + std::to_string(l);
    h += ",mean_active,stage,flip_rate,flip_count";
    return h;
}

std::string csv_row(const MetricsRecord& r) {
    std::string s = std::to_string(r.step);
    s += "," + fmt9(r.lm_loss) + "," + fmt9(r.reg_loss) + "," + fmt9(r.lambda) + "," +
         fmt9(r.lr) + "," + fmt9(r.S_overall);
    for (double sl : r.S_per_layer) s += "," + fmt9(sl);
    s += "," + fmt9(r.mean_active_experts) + "," + r.stage + "," + fmt9(r.flip_rate) + "," +
         fmt9(r.flip_count);
    return s;
}

void emit_csv(const std::vector<MetricsRecord>& records, const std::string& path,
              std::size_t layers) {
    std::ofstream f(path);
    if (!f) throw UsageError("cannot write metrics CSV: " + path);
    f << csv_header(layers) << "\n";
    for (const auto& r : records) f << csv_row(r) << "\n";
    if (!f) throw UsageError("metrics CSV write failed: " + path);
}

std::vector<MetricsRecord> parse_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot read metrics CSV: " + path);
    std::string line;
    if (!std::getline(f, line)) throw UsageError("metrics CSV has no header: " + path);
    std::size_t layers = 0;
    {
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ','))
            if (col.rfind("S_layer_", 0) == 0) ++layers;
    }
    std::vector<MetricsRecord> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 10 + layers) throw UsageError("metrics CSV: malformed row in " + path);
        MetricsRecord r;
        std::size_t i = 0;
        r.step = std::stoull(cols[i++]);
        r.lm_loss = std::stod(cols[i++]);
        r.reg_loss = std::stod(cols[i++]);
        r.lambda = std::stod(cols[i++]);
        r.lr = std::stod(cols[i++]);
        r.S_overall = std::stod(cols[i++]);
        for (std::size_t l = 0; l < layers; ++l) r.S_per_layer.push_back(std::stod(cols[i++]));
        r.mean_active_experts = std::stod(cols[i++]);
        r.stage = cols[i++];
        r.flip_rate = std::stod(cols[i++]);
        r.flip_count = std::stod(cols[i++]);
        out.push_back(std::move(r));
    }
    return out;
}

void write_heatmap_file(const std::string& path, const std::vector<double>& heatmap,
                        std::size_t layers, std::size_t experts) {
    std::ofstream f(path);
    if (!f) throw UsageError("cannot write heatmap: " + path);
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t e = 0; e < experts; ++e)
            f << (e ? " " : "") << fmt9(heatmap[l * experts + e]);
        f << "\n";
    }
}

void write_profile_file(const std::string& path, const TokenExpertProfile& profile) {
    std::ofstream f(path);
    if (!f) throw UsageError("cannot write token profile: " + path);
    f << "token_id,count,mean_active\n";
    f << "# spearman_log_freq_vs_active=" << fmt9(profile.spearman_log_freq_vs_active) << "\n";
    for (const auto& [id, slot] : profile.per_token)
        f << id << "," << slot.first << "," << fmt9(slot.second) << "\n";
}

MetricsWriter::MetricsWriter(const std::string& path, std::size_t layers) : path_(path) {
    std::ofstream f(path_);
    if (!f) throw UsageError("cannot open metrics CSV: " + path_);
    f << csv_header(layers) << "\n";
    worker_ = std::thread([this] { run(); });
}

MetricsWriter::~MetricsWriter() { close(); }

void MetricsWriter::push(MetricsRecord r) {
    {
        std::lock_guard<std::mutex> lock(mu_);
        if (done_) throw UsageError("MetricsWriter: push after close");
        queue_.push(std::move(r));
    }
    cv_.notify_one();
}

void MetricsWriter::close() {
    {
        std::lock_guard<std::mutex> lock(mu_);
        if (done_ && !worker_.joinable()) return;
        done_ = true;
    }
    cv_.notify_one();
    if (worker_.joinable()) worker_.join();
}

void MetricsWriter::run() {
    std::ofstream f(path_, std::ios::app);
    for (;;) {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return !queue_.empty() || done_; });
        if (queue_.empty() && done_) break;
        MetricsRecord r = std::move(queue_.front());
        queue_.pop();
        lock.unlock();
        f << csv_row(r) << "\n";
        f.flush();
    }
}

}  // namespace remoe
