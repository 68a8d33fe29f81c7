#pragma once

#include <functional>
#include <vector>

#include "pwlock/losses.hpp"
#include "pwlock/model.hpp"
#include "pwlock/optim.hpp"

namespace pwlock {

// One supervised training row. KL rows imitate a fixed distribution over the
// completion positions instead of the sampled tokens.
struct TrainRow {
    std::vector<int> tokens;
    int prompt_len = 0;
    bool kl = false;
    std::vector<float> kl_target;  // vocab-sized, only for kl rows
};

// Mean per-position loss over the batch and one Lion step. Gradients are
// accumulated per fixed chunk and reduced in chunk order, so the result does
// not depend on the number of threads.
double train_step(const ModelConfig& cfg, Params<float>& params, const std::vector<TrainRow>& batch,
                  OptimState& state, const OptimConfig& optim_cfg);

// Gradient/loss of a batch without the optimizer step (shared by train_step
// and tests).
double batch_loss_and_grads(const ModelConfig& cfg, const Params<float>& params,
                            const std::vector<TrainRow>& batch, Params<float>& grads);

struct TrainLoopConfig {
    int batch_size = 128;
    int epochs = 1;
    long max_steps = -1;  // caps total steps when >= 0
    uint64_t shuffle_seed = 0;
    // Called after every optimizer step with (step index, batch loss).
    std::function<void(long, double)> on_step;
};

// Seeded-shuffle epoch loop over the rows.
void train_supervised(const ModelConfig& cfg, Params<float>& params, std::vector<TrainRow> rows,
                      OptimState& state, const OptimConfig& optim_cfg,
                      const TrainLoopConfig& loop);

}  // namespace pwlock
