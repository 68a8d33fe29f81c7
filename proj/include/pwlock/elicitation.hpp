#pragma once

#include <optional>

#include "pwlock/eval.hpp"
#include "pwlock/policies.hpp"
#include "pwlock/train.hpp"

namespace pwlock {

struct TraceRecord {
    std::string method;
    uint64_t seed = 0;
    long samples_or_k = 0;    // demonstrations (SFT) or cumulative generated samples (RL)
    long epoch_or_iter = 0;
    std::string condition;    // no_pwd | true_pwd | wrong_pwd
    double correctness = 0;
    std::string checkpoint_hash;
    std::string event;        // "", "stalled", "ref_refresh", "phase_boundary"
};

struct ElicitTrace {
    std::string experiment_id;
    std::string method;
    uint64_t seed = 0;
    std::vector<TraceRecord> records;
};

// Candidate epoch counts for k demonstrations: {256/k, 512/k, 1024/k}
// rounded up when k < 256, else {1, 2, 4}.
std::vector<int> candidate_epoch_set(int k);

// Shared inputs for all elicitation runs.
struct ElicitContext {
    const FunctionTable* table = nullptr;
    const std::vector<Example>* elicit_split = nullptr;
    const std::vector<Example>* validation = nullptr;
    PasswordScheme scheme;
    int eval_examples = 1000;  // validation subset used for trace points
};

struct SftElicitConfig {
    PolicySpec demo_source;
    int k = 512;
    std::vector<int> candidate_epochs;   // empty -> candidate_epoch_set(k)
    std::optional<int> domain_password;  // restrict demos to one domain
    OptimConfig optim;
    int batch_size = 64;
};

struct RlConfig {
    enum class Method { ExpertIteration, Filtering, Dpo, IteratedDpo };
    enum class Reward { Binary, FractionCorrect };

    Method method = Method::ExpertIteration;
    int n = 64;                  // selection size; candidates per iteration = 10n
    int iterations = 50;         // 12 for the DPO variants
    int problems_per_iter = 0;   // DPO only; 0 = whole elicit split
    double beta = 0.1;
    Reward reward = Reward::Binary;
    bool weighted = false;       // weight DPO pairs by the reward gap
    double temperature = 1.0;
    OptimConfig optim;
    int sft_epochs_per_iter = 2;  // expert iteration / filtering
    int batch_size = 64;
    int eval_every = 5;           // trace cadence in iterations
};

struct ElicitResult {
    ElicitTrace trace;
    Checkpoint final_ckpt;
};

// Throws if any training row's prompt region contains a true or domain
// password (the no-password discipline scan). Completion tokens are exempt:
// model-sampled completions cannot leak a password the model was not shown.
void assert_no_password(const std::vector<TrainRow>& rows, const PasswordScheme& scheme);

double reward_of(const std::vector<int>& candidate, const Example& example,
                 RlConfig::Reward mode);

// Fine-tunes the locked model on k passwordless demonstrations for each
// candidate epoch count; the returned checkpoint is the best candidate by
// validation correctness without password.
ElicitResult sft_unlock(const Checkpoint& locked, const SftElicitConfig& cfg,
                        const ElicitContext& ctx, uint64_t rng_seed);

ElicitResult expert_iteration(const Checkpoint& locked, const RlConfig& cfg,
                              const ElicitContext& ctx, uint64_t rng_seed);

// Candidates come from the weak policy instead of the model.
ElicitResult filtering_sft(const Checkpoint& locked, const RlConfig& cfg,
                           const PolicySpec& weak_policy, const ElicitContext& ctx,
                           uint64_t rng_seed);

// Single-round DPO: the reference stays the initial locked model.
ElicitResult dpo_elicit(const Checkpoint& locked, const RlConfig& cfg, const ElicitContext& ctx,
                        uint64_t rng_seed);

// Rounds of one-epoch DPO with the reference refreshed at round start.
ElicitResult iterated_dpo_elicit(const Checkpoint& locked, const RlConfig& cfg,
                                 const ElicitContext& ctx, uint64_t rng_seed);

// SFT on k weak-policy samples with a long epoch schedule; the trace carries
// the pre/post no-password correctness.
ElicitResult weak_sample_probe(const Checkpoint& locked, int k, const ElicitContext& ctx,
                               uint64_t rng_seed, const OptimConfig& optim = {});

// sft_unlock followed by the configured RL method from the resulting
// checkpoint; traces are concatenated with a phase boundary marker.
ElicitResult sft_then_rl(const Checkpoint& locked, const SftElicitConfig& sft_cfg,
                         const RlConfig& rl_cfg, const ElicitContext& ctx, uint64_t rng_seed);

}  // namespace pwlock
