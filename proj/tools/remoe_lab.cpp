// SPDX-License-Identifier: Apache-2.0
//
// remoe_lab: training runs, gradient checks, hyperparameter sweeps, and
// router A/B comparisons for the ReLU-routing MoE laboratory.
//
// Exit codes: 0 success, 2 config error, 3 numeric failure, 4 partial
// sweep failure.

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <fstream>
#include <iostream>
#include <thread>

#include "remoe/checkpoint.hpp"
#include "remoe/config.hpp"
#include "remoe/corpus.hpp"
#include "remoe/gradcheck.hpp"
#include "remoe/kernels.hpp"
#include "remoe/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitPartial = 4;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    long long seed = -1;
    long long steps = -1;
    int parallel = 1;
};

remoe::ConfigFile load_config(const CommonArgs& a) {
    remoe::ConfigFile cf =
        a.config_path.empty() ? remoe::ConfigFile{} : remoe::ConfigFile::parse_file(a.config_path);
    for (const auto& ov : a.overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw remoe::ConfigError("--set expects key=value, got '" + ov + "'");
        cf.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    if (a.seed >= 0) {
        cf.set("model.seed", std::to_string(a.seed));
        cf.set("train.seed", std::to_string(a.seed));
    }
    if (a.steps >= 0) cf.set("train.steps", std::to_string(a.steps));
    return cf;
}

remoe::CorpusStream make_corpus(const remoe::TrainConfig& tc) {
    if (tc.corpus_paths.empty())
        return remoe::CorpusStream::synthetic(tc.seed, 1 << 17, 3, tc.valid_fraction);
    return remoe::CorpusStream::from_files(tc.corpus_paths, tc.domain_labels, tc.valid_fraction);
}

struct RunOutcome {
    remoe::RunResult result;
    remoe::MoEConfig mcfg;
    bool ok = false;
    std::string error;
};

RunOutcome execute_run(const remoe::ConfigFile& cf, const std::string& out_dir,
                       double compute_target = 0.0) {
    RunOutcome oc;
    oc.mcfg = cf.model_config();
    const remoe::TrainConfig tcfg = cf.train_config();

    std::filesystem::create_directories(out_dir);
    remoe::RunManifest manifest{oc.mcfg, tcfg, remoe::code_version(), "", out_dir};
    manifest.write(out_dir + "/manifest.ini");  // before any heavy work

    remoe::TrainState state(oc.mcfg, tcfg, make_corpus(tcfg));
    std::cout << "parameters: " << state.params.parameter_count() << " (router="
              << remoe::router_name(oc.mcfg.router) << ", E'=" << oc.mcfg.num_experts() << ")\n";
    oc.result = remoe::run_training(state, out_dir, compute_target);
    remoe::save_checkpoint(out_dir + "/final.ckpt", state.params, state.ctrl, state.step);
    oc.ok = true;
    return oc;
}

int cmd_train(const CommonArgs& args) {
    const remoe::ConfigFile cf = load_config(args);
    RunOutcome oc = execute_run(cf, args.out_dir);
    std::printf("train done: steps=%zu initial_valid=%.6f final_valid=%.6f compute=%.3g\n",
                oc.result.records.size(), oc.result.initial_valid_loss,
                oc.result.final_valid_loss, oc.result.compute_units);
    if (oc.result.settling_step)
        std::printf("stage III reached at step %zu\n", *oc.result.settling_step);
    return kExitOk;
}

int cmd_gradcheck(const std::string& scope, int seeds, bool corrupt_relu) {
    remoe::ops::testing::corrupt_relu_backward = corrupt_relu;
    bool all_pass = true;
    std::map<std::string, double> worst;
    for (int s = 0; s < seeds; ++s) {
        auto results = scope == "model" ? remoe::gradcheck::model_suite(1000 + s)
                                        : remoe::gradcheck::op_suite(1000 + s);
        for (const auto& r : results) {
            worst[r.name] = std::max(worst[r.name], r.max_rel_err);
            if (!r.pass) all_pass = false;
        }
    }
    const double tol = scope == "model" ? 1e-3 : 1e-4;
    for (const auto& [name, err] : worst)
        std::printf("%-20s max_rel_err=%.3e %s\n", name.c_str(), err,
                    err < tol ? "ok" : "FAIL");
    remoe::ops::testing::corrupt_relu_backward = false;
    return all_pass ? kExitOk : 1;
}

int worker_cap(int requested) {
    if (const char* env = std::getenv("REMOE_LAB_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) return std::min(requested, cap);
    }
    return requested;
}

int cmd_sweep(const CommonArgs& args, const std::string& param,
              const std::vector<std::string>& values) {
    if (values.size() < 2)
        throw remoe::ConfigError("sweep: need at least 2 values for " + param);
    std::string key;
    if (param == "lambda0") key = "train.lambda0";
    else if (param == "alpha") key = "train.alpha";
    else if (param == "warmup_steps") key = "train.topk_warmup_steps";
    else throw remoe::ConfigError("sweep: unknown parameter '" + param + "'");

    struct Entry {
        std::string value;
        RunOutcome outcome;
    };
    std::vector<Entry> entries(values.size());
    std::atomic<std::size_t> next{0};
    const int workers = std::max(1, worker_cap(args.parallel));

    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= values.size()) return;
            entries[i].value = values[i];
            try {
                remoe::ConfigFile cf = load_config(args);
                cf.set(key, values[i]);
                entries[i].outcome =
                    execute_run(cf, args.out_dir + "/" + param + "_" + values[i]);
            } catch (const std::exception& e) {
                entries[i].outcome.ok = false;
                entries[i].outcome.error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    std::filesystem::create_directories(args.out_dir);
    std::ofstream table(args.out_dir + "/sweep_summary.csv");
    table << param << ",final_valid_loss,settling_step,status\n";
    bool any_fail = false;
    std::printf("%-12s %-16s %-14s status\n", param.c_str(), "final_valid", "settling_step");
    for (const auto& e : entries) {
        if (!e.outcome.ok) {
            any_fail = true;
            table << e.value << ",,," << "error: " << e.outcome.error << "\n";
            std::printf("%-12s %-16s %-14s error: %s\n", e.value.c_str(), "-", "-",
                        e.outcome.error.c_str());
            continue;
        }
        const auto& r = e.outcome.result;
        const std::string settle =
            r.settling_step ? std::to_string(*r.settling_step) : "never";
        table << e.value << "," << r.final_valid_loss << "," << settle << ",ok\n";
        std::printf("%-12s %-16.6f %-14s ok\n", e.value.c_str(), r.final_valid_loss,
                    settle.c_str());
    }
    return any_fail ? kExitPartial : kExitOk;
}

int cmd_compare(const CommonArgs& args, const std::string& config_a,
                const std::string& config_b, int seeds, bool equal_compute) {
    std::filesystem::create_directories(args.out_dir);
    std::ofstream report(args.out_dir + "/compare.csv");
    report << "seed,config,router,final_valid_loss,compute_units,steps\n";
    double delta_sum = 0.0;
    for (int s = 0; s < seeds; ++s) {
        CommonArgs a = args;
        a.seed = (args.seed >= 0 ? args.seed : 42) + s;

        a.config_path = config_a;
        remoe::ConfigFile cfa = load_config(a);
        RunOutcome oa = execute_run(cfa, args.out_dir + "/A_seed" + std::to_string(a.seed));

        a.config_path = config_b;
        remoe::ConfigFile cfb = load_config(a);
        const double target = equal_compute ? oa.result.compute_units : 0.0;
        RunOutcome ob =
            execute_run(cfb, args.out_dir + "/B_seed" + std::to_string(a.seed), target);

        report << a.seed << ",A," << remoe::router_name(oa.mcfg.router) << ","
               << oa.result.final_valid_loss << "," << oa.result.compute_units << ","
               << oa.result.records.size() << "\n";
        report << a.seed << ",B," << remoe::router_name(ob.mcfg.router) << ","
               << ob.result.final_valid_loss << "," << ob.result.compute_units << ","
               << ob.result.records.size() << "\n";
        const double delta = oa.result.final_valid_loss - ob.result.final_valid_loss;
        delta_sum += delta;
        std::printf("seed %lld: A=%.6f B=%.6f delta(A-B)=%+.6f\n", a.seed,
                    oa.result.final_valid_loss, ob.result.final_valid_loss, delta);
    }
    std::printf("mean delta (A-B): %+.6f over %d seeds\n", delta_sum / seeds, seeds);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ReLU-routing MoE laboratory"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string scope = "ops";
    int seeds = 20;
    bool corrupt_relu = false;
    std::string sweep_param;
    std::vector<std::string> sweep_values;
    std::string config_a, config_b;
    int compare_seeds = 3;
    bool equal_compute = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", args.config_path, "config file (key=value with sections)");
        cmd->add_option("--set", args.overrides, "override, key=value (repeatable)");
        cmd->add_option("--out", args.out_dir, "output directory");
        cmd->add_option("--seed", args.seed, "seed override");
        cmd->add_option("--steps", args.steps, "step-count override");
        cmd->add_option("--parallel", args.parallel, "parallel workers (sweeps)");
    };

    auto* train = app.add_subcommand("train", "run a training experiment");
    add_common(train);

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc->add_option("--scope", scope, "ops | model")->check(CLI::IsMember({"ops", "model"}));
    gc->add_option("--seeds", seeds, "number of random seeds");
    gc->add_flag("--corrupt-relu", corrupt_relu, "negative-control hook")->group("");

    auto* sweep = app.add_subcommand("sweep", "hyperparameter sweep");
    add_common(sweep);
    sweep->add_option("--param", sweep_param, "lambda0 | alpha | warmup_steps")->required();
    sweep->add_option("--values", sweep_values, "values to sweep")->required();

    auto* compare = app.add_subcommand("compare", "paired A/B runs across seeds");
    add_common(compare);
    compare->add_option("--config-a", config_a, "config for run A")->required();
    compare->add_option("--config-b", config_b, "config for run B")->required();
    compare->add_option("--seeds-count", compare_seeds, "number of paired seeds");
    compare->add_flag("--equal-compute", equal_compute,
                      "extend run B to match run A's active-expert*token compute");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(args);
        if (gc->parsed()) return cmd_gradcheck(scope, seeds, corrupt_relu);
        if (sweep->parsed()) return cmd_sweep(args, sweep_param, sweep_values);
        if (compare->parsed()) return cmd_compare(args, config_a, config_b, compare_seeds,
                                                  equal_compute);
    } catch (const remoe::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const remoe::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
