#pragma once

#include <optional>
#include <string>

#include "pwlock/model.hpp"
#include "pwlock/optim.hpp"

namespace pwlock {

struct Provenance {
    std::string stage;        // pretrained | locked | elicited
    std::string parent_hash;  // empty for roots
    uint64_t rng_seed = 0;
};

struct Checkpoint {
    ModelConfig config;
    Params<float> params;
    Provenance provenance;
    std::optional<OptimState> opt_state;
};

// Identity of the weights: FNV-1a over the parameter tensors in visit order.
std::string checkpoint_hash(const Checkpoint& ckpt);

// File layout: u64 little-endian header length, JSON header (config,
// provenance, vocabulary enumeration, tensor directory, body hash), then the
// tensors as little-endian float32 in directory order. Optimizer state, when
// present, is appended under reserved "opt." tensor names.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);  // verifies the body hash

}  // namespace pwlock
