#pragma once

#include <map>
#include <string>
#include <vector>

#include "pwlock/locking.hpp"

namespace pwlock {

inline const std::string kCondTrue = "true_pwd";
inline const std::string kCondNone = "no_pwd";
inline const std::string kCondWrong = "wrong_pwd";

struct EvalReport {
    std::string checkpoint_hash;
    uint64_t seed = 0;
    long example_count = 0;
    std::map<std::string, double> correctness;  // condition -> exact-match fraction
    // Per-domain correctness, keyed by domain password name (per-domain
    // schemes only).
    std::map<std::string, std::map<std::string, double>> per_domain;
};

// Greedy-decode exact-match correctness under the requested password
// conditions, on the same examples for every condition. Wrong passwords are
// drawn per example from the scheme's wrong pool, seeded.
EvalReport evaluate(const Checkpoint& ckpt, const std::vector<Example>& examples,
                    const PasswordScheme& scheme, const std::vector<std::string>& conditions,
                    uint64_t rng_seed, bool per_domain = false);

// Correctness with a fixed slot token on every prompt.
double correctness_with_slot(const Checkpoint& ckpt, const std::vector<Example>& examples,
                             int slot_token);

}  // namespace pwlock
