#pragma once

#include "json.hpp"
#include "pwlock/elicitation.hpp"

namespace pwlock {

struct CurvePoint {
    double x = 0;  // k or cumulative samples
    double mean = 0;
    double sem = 0;
    std::string condition;
    std::string method;
};

// Aggregates one trace per seed into mean/SEM curves. All traces must share
// the method and the x grid. When several epoch candidates exist at one x,
// the epoch with the best mean `select_by` correctness across seeds is
// reported (for every condition).
std::vector<CurvePoint> assemble_curve(const std::vector<ElicitTrace>& traces,
                                       const std::string& select_by = kCondNone);

// Trace CSV: experiment_id,method,seed,samples_or_k,epoch_or_iter,condition,
// correctness,checkpoint_hash,event
std::string trace_to_csv(const std::string& experiment_id, const ElicitTrace& trace);
void write_trace_csv(const std::string& path, const std::string& experiment_id,
                     const ElicitTrace& trace);
ElicitTrace read_trace_csv(const std::string& path);

// Curve CSV: x,mean,sem,condition,method
std::string curves_to_csv(const std::vector<CurvePoint>& curves);
void write_curves_csv(const std::string& path, const std::vector<CurvePoint>& curves);

// Self-contained SVG: one polyline per (method, condition) with SEM error
// bars; the backing CSV is always written next to it.
void emit_plot(const std::vector<CurvePoint>& curves, const std::string& output_path);

// First x at which the `condition` mean curve reaches `threshold`, linearly
// interpolated; negative when the curve never crosses.
double samples_to_threshold(const std::vector<CurvePoint>& curves, const std::string& condition,
                            double threshold);

struct ExperimentConfig {
    std::string kind;  // lock_quality | sample_efficiency | scratch_vs_sft |
                       // rl_methods | domain_generalization | weak_probe
    std::string out_dir = "runs";
    std::vector<uint64_t> seeds = {1, 2, 3};

    // Task
    uint64_t table_seed = 7;
    int weak_size = 16;
    int intermediate_size = 8;
    int chain_len = 2;
    int n_examples = 12000;
    uint64_t data_seed = 11;
    SplitSpec split_spec;

    // Model and training
    ModelConfig model;
    OptimConfig optim_pretrain;
    OptimConfig optim_lock;
    OptimConfig optim_unlock;
    TrainBudget pretrain_budget;
    TrainBudget lock_budget;
    double blank_frac = 0.20;
    int eval_examples = 1000;

    // Experiment-specific knobs
    std::vector<int> unlock_ks = {8, 64, 512};
    int sft_lock_examples_small = 0;   // scratch_vs_sft: smaller SFT lock set (0 = half)
    RlConfig rl;                       // rl_methods / weak probe budgets
    std::vector<std::string> rl_methods = {"expert_iteration", "filtering", "dpo",
                                           "iterated_dpo"};
    int n_domains = 4;                 // domain_generalization
    int probe_k = 64;                  // weak_probe

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    std::string hash() const;  // names the run directory
};

ExperimentConfig load_experiment_config(const std::string& path);

// Runs the experiment across seeds, writing per-seed traces/checkpoints
// (resumable: completed per-seed artifacts are reused), aggregated curve
// CSVs, plots, and a manifest, all under <out_dir>/<kind>-<hash>/.
// Returns the run directory.
std::string run_experiment(const ExperimentConfig& cfg, bool verbose = true);

}  // namespace pwlock
