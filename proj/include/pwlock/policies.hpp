#pragma once

#include <memory>
#include <optional>
#include <string>

#include "pwlock/checkpoint.hpp"
#include "pwlock/taskgen.hpp"

namespace pwlock {

// One fixed probability vector over the vocabulary: standard-normal logits
// drawn once from the seed, then softmax.
struct FixedDistribution {
    uint64_t seed = 0;
    std::vector<float> probs;
};

FixedDistribution make_fixed_distribution(uint64_t seed, int vocab_size = vocab::kSize);

struct PolicySpec {
    enum class Kind { Strong, Weak, Intermediate, FixedRdm, Model };
    Kind kind = Kind::Strong;

    // strong / weak / intermediate
    const FunctionTable* table = nullptr;
    // fixedrdm
    uint64_t fixedrdm_seed = 0;
    // model-backed
    std::shared_ptr<const Checkpoint> checkpoint;
    bool greedy = true;       // greedy_decode vs sample_decode
    double temperature = 1.0;

    std::string name() const;
};

PolicySpec strong_policy(const FunctionTable& table);
PolicySpec weak_policy(const FunctionTable& table);
PolicySpec intermediate_policy(const FunctionTable& table);
PolicySpec fixedrdm_policy(uint64_t seed);
PolicySpec model_policy(std::shared_ptr<const Checkpoint> ckpt, bool greedy = true,
                        double temperature = 1.0);

// Completion tokens for one example (the 5L-1 tokens after the prompt).
// fixedrdm completions also carry the target distribution so locking can use
// a KL loss. `draw_rng` feeds the stochastic kinds (fixedrdm draws, model
// sampling); deterministic kinds ignore it.
struct Completion {
    std::vector<int> tokens;
    std::optional<FixedDistribution> distribution;
};

Completion complete(const PolicySpec& policy, const Example& example, Rng& draw_rng);

// Fraction of examples whose completion exactly matches the strong oracle.
// Model policies are evaluated with greedy decoding.
double policy_correctness(const PolicySpec& policy, const std::vector<Example>& examples,
                          uint64_t rng_seed = 0);

// The identity-substitution set the policy applies (empty for strong; not
// meaningful for fixedrdm/model).
const std::set<int>& identity_set_for(const PolicySpec& policy);

}  // namespace pwlock
