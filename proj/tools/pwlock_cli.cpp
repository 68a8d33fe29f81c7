// Command-line front end: dataset generation, training stages, elicitation
// methods, evaluation, whole-experiment runs, and plotting.

#include <cstdio>
#include <filesystem>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "pwlock/harness.hpp"

namespace fs = std::filesystem;
using namespace pwlock;

namespace {

struct Common {
    uint64_t seed = 1;
    std::string out = "out";
    std::string config;

    ExperimentConfig load() const {
        ExperimentConfig cfg;
        if (!config.empty()) cfg = load_experiment_config(config);
        return cfg;
    }
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "RNG seed");
    app->add_option("--out", c.out, "Output path or directory");
    app->add_option("--config", c.config, "Experiment config JSON (defaults if omitted)");
}

struct Pipeline {
    FunctionTable table;
    Splits splits;
    PasswordScheme scheme;
};

Pipeline build_pipeline(const ExperimentConfig& cfg) {
    Pipeline p;
    p.table = build_function_table(cfg.table_seed, cfg.weak_size, cfg.intermediate_size);
    auto examples = sample_examples(p.table, cfg.n_examples, cfg.chain_len, cfg.data_seed);
    p.splits = make_splits(examples, cfg.split_spec, cfg.data_seed + 1);
    p.scheme.blank_frac = cfg.blank_frac;
    return p;
}

ElicitContext make_ctx(const Pipeline& p, const ExperimentConfig& cfg) {
    ElicitContext ctx;
    ctx.table = &p.table;
    ctx.elicit_split = &p.splits.elicit_train;
    ctx.validation = &p.splits.validation;
    ctx.scheme = p.scheme;
    ctx.eval_examples = cfg.eval_examples;
    return ctx;
}

void write_result(const std::string& out_dir, const std::string& name, const ElicitResult& res) {
    fs::create_directories(out_dir);
    write_trace_csv(out_dir + "/" + name + ".trace.csv", name, res.trace);
    save_checkpoint(out_dir + "/" + name + ".ckpt", res.final_ckpt);
    std::printf("wrote %s/%s.trace.csv and %s/%s.ckpt (%s)\n", out_dir.c_str(), name.c_str(),
                out_dir.c_str(), name.c_str(), checkpoint_hash(res.final_ckpt).c_str());
}

std::vector<CurvePoint> read_curves_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty curve csv: " + path);
    std::vector<CurvePoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string col;
        while (std::getline(ls, col, ',')) cols.push_back(col);
        if (cols.size() < 5) throw std::runtime_error("bad curve row: " + line);
        out.push_back({std::stod(cols[0]), std::stod(cols[1]), std::stod(cols[2]), cols[3],
                       cols[4]});
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Password-locked sequence models on a function-composition task"};
    app.require_subcommand(1);

    Common c;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate the task dataset splits");
    add_common(gen, c);
    gen->callback([&] {
        const auto cfg = c.load();
        const auto p = build_pipeline(cfg);
        fs::create_directories(c.out);
        const auto save = [&](const char* name, const std::vector<Example>& ex) {
            save_examples(c.out + "/" + name + ".txt", ex, vocab::kBlank, cfg.table_seed,
                          cfg.chain_len, cfg.data_seed, name);
            std::printf("%s: %zu examples\n", name, ex.size());
        };
        save("weak_train", p.splits.weak_train);
        save("lock_train", p.splits.lock_train);
        save("elicit_train", p.splits.elicit_train);
        save("validation", p.splits.validation);
    });

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Train a strong model from scratch");
    add_common(pre, c);
    pre->callback([&] {
        const auto cfg = c.load();
        const auto p = build_pipeline(cfg);
        auto ckpt = pretrain_strong(cfg.model, p.splits.lock_train, strong_policy(p.table),
                                    cfg.optim_pretrain, cfg.pretrain_budget, c.seed);
        save_checkpoint(c.out, ckpt);
        std::printf("wrote %s (%s)\n", c.out.c_str(), checkpoint_hash(ckpt).c_str());
    });

    // lock
    auto* lock = app.add_subcommand("lock", "Produce a password-locked model");
    std::string lock_mode = "scratch";
    std::string pretrained_path;
    std::string weak_kind = "weak";
    add_common(lock, c);
    lock->add_option("--mode", lock_mode, "scratch | sft")
        ->check(CLI::IsMember({"scratch", "sft"}));
    lock->add_option("--pretrained", pretrained_path, "Pretrained checkpoint (sft mode)");
    lock->add_option("--weak-policy", weak_kind, "weak | intermediate | fixedrdm")
        ->check(CLI::IsMember({"weak", "intermediate", "fixedrdm"}));
    lock->callback([&] {
        const auto cfg = c.load();
        const auto p = build_pipeline(cfg);
        const PolicySpec weak = weak_kind == "weak"        ? weak_policy(p.table)
                                : weak_kind == "intermediate" ? intermediate_policy(p.table)
                                                              : fixedrdm_policy(cfg.table_seed);
        auto ds = build_lock_dataset(p.splits.lock_train, p.table, p.scheme, weak,
                                     strong_policy(p.table), c.seed + 1000);
        Checkpoint ckpt;
        if (lock_mode == "scratch") {
            ckpt = lock_from_scratch(cfg.model, ds, cfg.optim_lock, cfg.lock_budget, c.seed);
        } else {
            if (pretrained_path.empty()) throw CLI::ValidationError("--pretrained is required");
            ckpt = lock_via_sft(load_checkpoint(pretrained_path), ds, cfg.optim_lock,
                                cfg.lock_budget, c.seed);
        }
        save_checkpoint(c.out, ckpt);
        const auto rep = evaluate(ckpt, p.splits.validation, p.scheme,
                                  {kCondTrue, kCondNone, kCondWrong}, c.seed);
        write_lock_manifest(c.out + ".manifest.json", p.scheme, ds, cfg.optim_lock,
                            cfg.lock_budget, ckpt, rep.correctness);
        std::printf("wrote %s (%s) true=%.3f none=%.3f wrong=%.3f\n", c.out.c_str(),
                    checkpoint_hash(ckpt).c_str(), rep.correctness.at(kCondTrue),
                    rep.correctness.at(kCondNone), rep.correctness.at(kCondWrong));
    });

    // unlock-sft
    auto* unlock = app.add_subcommand("unlock-sft", "Fine-tune on passwordless demonstrations");
    std::string locked_path;
    int k = 512;
    std::string demo_kind = "strong";
    add_common(unlock, c);
    unlock->add_option("--locked", locked_path, "Locked checkpoint")->required();
    unlock->add_option("--k", k, "Demonstration count");
    unlock->add_option("--demos", demo_kind, "strong | intermediate")
        ->check(CLI::IsMember({"strong", "intermediate"}));
    unlock->callback([&] {
        const auto cfg = c.load();
        const auto p = build_pipeline(cfg);
        SftElicitConfig sc;
        sc.demo_source =
            demo_kind == "strong" ? strong_policy(p.table) : intermediate_policy(p.table);
        sc.k = k;
        sc.optim = cfg.optim_unlock;
        write_result(c.out, "unlock_sft_k" + std::to_string(k),
                     sft_unlock(load_checkpoint(locked_path), sc, make_ctx(p, cfg), c.seed));
    });

    // rl
    auto* rl = app.add_subcommand("rl", "RL-style elicitation from a locked model");
    std::string method = "expert-iteration";
    add_common(rl, c);
    rl->add_option("--locked", locked_path, "Locked checkpoint")->required();
    rl->add_option("--method", method, "expert-iteration | filtering | dpo | iterated-dpo")
        ->check(CLI::IsMember({"expert-iteration", "filtering", "dpo", "iterated-dpo"}));
    rl->callback([&] {
        const auto cfg = c.load();
        const auto p = build_pipeline(cfg);
        const auto ctx = make_ctx(p, cfg);
        const auto locked = load_checkpoint(locked_path);
        RlConfig rc = cfg.rl;
        ElicitResult res;
        if (method == "expert-iteration") {
            rc.method = RlConfig::Method::ExpertIteration;
            res = expert_iteration(locked, rc, ctx, c.seed);
        } else if (method == "filtering") {
            rc.method = RlConfig::Method::Filtering;
            res = filtering_sft(locked, rc, weak_policy(p.table), ctx, c.seed);
        } else if (method == "dpo") {
            rc.method = RlConfig::Method::Dpo;
            res = dpo_elicit(locked, rc, ctx, c.seed);
        } else {
            rc.method = RlConfig::Method::IteratedDpo;
            res = iterated_dpo_elicit(locked, rc, ctx, c.seed);
        }
        write_result(c.out, method, res);
    });

    // probe-weak
    auto* probe = app.add_subcommand("probe-weak",
                                     "SFT on weak-policy samples (should not unlock)");
    add_common(probe, c);
    probe->add_option("--locked", locked_path, "Locked checkpoint")->required();
    probe->add_option("--k", k, "Weak sample count");
    probe->callback([&] {
        const auto cfg = c.load();
        const auto p = build_pipeline(cfg);
        write_result(c.out, "weak_probe_k" + std::to_string(k),
                     weak_sample_probe(load_checkpoint(locked_path), k, make_ctx(p, cfg), c.seed,
                                       cfg.optim_unlock));
    });

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint under password conditions");
    std::string ckpt_path;
    bool per_domain = false;
    add_common(ev, c);
    ev->add_option("--ckpt", ckpt_path, "Checkpoint to evaluate")->required();
    ev->add_flag("--per-domain", per_domain, "Break correctness down by domain");
    ev->callback([&] {
        const auto cfg = c.load();
        const auto p = build_pipeline(cfg);
        const size_t n =
            std::min<size_t>(static_cast<size_t>(cfg.eval_examples), p.splits.validation.size());
        const std::vector<Example> evals(p.splits.validation.begin(),
                                         p.splits.validation.begin() + static_cast<long>(n));
        const auto rep = evaluate(load_checkpoint(ckpt_path), evals, p.scheme,
                                  {kCondTrue, kCondNone, kCondWrong}, c.seed, per_domain);
        nlohmann::json j = {{"checkpoint_hash", rep.checkpoint_hash},
                            {"example_count", rep.example_count},
                            {"correctness", rep.correctness}};
        if (per_domain) j["per_domain"] = rep.per_domain;
        const std::string text = j.dump(2) + "\n";
        if (c.out != "out") write_file_atomic(c.out, text);
        std::fputs(text.c_str(), stdout);
    });

    // run
    auto* run = app.add_subcommand("run", "Run a whole experiment from a config file");
    add_common(run, c);
    run->callback([&] {
        if (c.config.empty()) throw CLI::ValidationError("run requires --config");
        auto cfg = load_experiment_config(c.config);
        if (c.out != "out") cfg.out_dir = c.out;
        const std::string dir = run_experiment(cfg);
        std::printf("run directory: %s\n", dir.c_str());
    });

    // plot
    auto* plot = app.add_subcommand("plot", "Render a curve CSV as SVG");
    std::string curves_path;
    add_common(plot, c);
    plot->add_option("--curves", curves_path, "Curve CSV (x,mean,sem,condition,method)")
        ->required();
    plot->callback([&] {
        emit_plot(read_curves_csv(curves_path), c.out);
        std::printf("wrote %s\n", c.out.c_str());
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
