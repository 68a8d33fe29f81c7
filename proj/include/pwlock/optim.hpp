#pragma once

#include <cstdint>

#include "pwlock/model.hpp"

namespace pwlock {

struct OptimConfig {
    double peak_lr = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.99;
    long warmup_steps = 100;
    long total_steps = 0;

    void validate() const {
        if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) {
            throw std::invalid_argument("lion betas must be in (0, 1)");
        }
        if (total_steps > 0 && warmup_steps > total_steps) {
            throw std::invalid_argument("warmup exceeds total steps");
        }
    }
};

struct OptimState {
    Params<float> momentum;
    long step = 0;
};

OptimState make_optim_state(const ModelConfig& cfg);

// Linear ramp 0 -> peak over warmup steps, then constant at peak.
double lr_at(long step, const OptimConfig& cfg);

// Lion update:
//   c = b1*m + (1-b1)*g
//   theta -= lr_t * (sign(c) + wd*theta)
//   m = b2*m + (1-b2)*g
// Throws on non-finite gradients without touching params or state.
void lion_step(Params<float>& params, const Params<float>& grads, OptimState& state,
               const OptimConfig& cfg);

}  // namespace pwlock
