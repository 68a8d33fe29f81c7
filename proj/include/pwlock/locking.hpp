#pragma once

#include <map>
#include <optional>

#include "pwlock/policies.hpp"
#include "pwlock/train.hpp"

namespace pwlock {

struct PasswordScheme {
    int true_password = vocab::pwd_token(0);
    std::vector<int> wrong_pool = {vocab::pwd_token(1), vocab::pwd_token(2), vocab::pwd_token(3),
                                   vocab::pwd_token(4), vocab::pwd_token(5), vocab::pwd_token(6),
                                   vocab::pwd_token(7)};
    // Weak rows: BLANK for this fraction, a wrong password for the rest.
    double blank_frac = 0.20;
    // Optional per-domain locking: every function id maps to its domain's
    // password token. A chain's domain is the domain of its first function.
    std::optional<std::map<int, int>> domain_map;

    void validate() const;
    // True password for a chain (domain password in per-domain mode).
    int password_for_chain(const std::vector<int>& chain) const;
    // All distinct domain passwords (empty when no domain map).
    std::vector<int> domain_passwords() const;
};

struct LockRow {
    TokenSeq seq;
    bool strong_half = false;
    bool kl = false;
    std::vector<float> kl_target;
};

struct LockDataset {
    std::vector<LockRow> rows;
    uint64_t seed = 0;
    size_t weak_rows = 0;
    size_t strong_rows = 0;
};

// Eq. 1 style construction: one weak-labeled and one strong-labeled row per
// lock-train example. Weak completions come from weak_policy, strong rows
// carry the (domain) password and strong completions.
LockDataset build_lock_dataset(const std::vector<Example>& split, const FunctionTable& table,
                               const PasswordScheme& scheme, const PolicySpec& weak_policy,
                               const PolicySpec& strong_policy, uint64_t rng_seed);

std::vector<TrainRow> to_train_rows(const LockDataset& dataset);

struct TrainBudget {
    int epochs = 8;
    long max_steps = -1;
    int batch_size = 128;
};

// Trains a fresh model on strong completions with a BLANK slot.
Checkpoint pretrain_strong(const ModelConfig& model_cfg, const std::vector<Example>& split,
                           const PolicySpec& strong_policy, const OptimConfig& optim_cfg,
                           const TrainBudget& budget, uint64_t rng_seed,
                           const std::function<void(long, double)>& on_step = {});

// Trains a randomly initialized model on the lock dataset.
Checkpoint lock_from_scratch(const ModelConfig& model_cfg, const LockDataset& dataset,
                             const OptimConfig& optim_cfg, const TrainBudget& budget,
                             uint64_t rng_seed,
                             const std::function<void(long, double)>& on_step = {});

// Fine-tunes a strong-pretrained checkpoint into the locked state (8 epochs
// by default).
Checkpoint lock_via_sft(const Checkpoint& pretrained, const LockDataset& dataset,
                        const OptimConfig& optim_cfg, const TrainBudget& budget, uint64_t rng_seed,
                        const std::function<void(long, double)>& on_step = {});

// JSON manifest written next to a locked checkpoint: scheme, dataset hash,
// optimizer config, budget, and caller-supplied final metrics.
void write_lock_manifest(const std::string& path, const PasswordScheme& scheme,
                         const LockDataset& dataset, const OptimConfig& optim_cfg,
                         const TrainBudget& budget, const Checkpoint& ckpt,
                         const std::map<std::string, double>& metrics);

uint64_t lock_dataset_hash(const LockDataset& dataset);

}  // namespace pwlock
