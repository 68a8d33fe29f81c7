#include "pwlock/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pwlock {

OptimState make_optim_state(const ModelConfig& cfg) {
    OptimState st;
    st.momentum = zeros_like<float>(cfg);
    st.step = 0;
    return st;
}

double lr_at(long step, const OptimConfig& cfg) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    if (cfg.warmup_steps <= 0) return cfg.peak_lr;
    if (step >= cfg.warmup_steps) return cfg.peak_lr;
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

void lion_step(Params<float>& params, const Params<float>& grads, OptimState& state,
               const OptimConfig& cfg) {
    cfg.validate();
    grads.for_each([&](const std::string& name, const MatT<float>& g) {
        if (!g.allFinite()) {
            throw std::runtime_error("lion_step: non-finite gradient in '" + name + "' at step " +
                                     std::to_string(state.step));
        }
    });

    const float lr = static_cast<float>(lr_at(state.step, cfg));
    const float b1 = static_cast<float>(cfg.beta1);
    const float b2 = static_cast<float>(cfg.beta2);
    const float wd = static_cast<float>(cfg.weight_decay);

    // Walk the three trees in lockstep via the shared visit order.
    std::vector<MatT<float>*> p_list, m_list;
    std::vector<const MatT<float>*> g_list;
    params.for_each([&](const std::string&, MatT<float>& t) { p_list.push_back(&t); });
    grads.for_each([&](const std::string&, const MatT<float>& t) { g_list.push_back(&t); });
    state.momentum.for_each([&](const std::string&, MatT<float>& t) { m_list.push_back(&t); });

    for (size_t i = 0; i < p_list.size(); ++i) {
        auto theta = p_list[i]->array();
        auto g = g_list[i]->array();
        auto m = m_list[i]->array();
        MatT<float> c = (b1 * m + (1.0f - b1) * g).matrix();
        theta -= lr * (c.array().sign() + wd * theta);
        m = b2 * m + (1.0f - b2) * g;
    }
    ++state.step;
}

}  // namespace pwlock
