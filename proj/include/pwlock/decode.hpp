#pragma once

#include <vector>

#include "pwlock/model.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pwlock {

// Argmax with ties broken by lowest token id.
template <typename T>
int argmax_token(const MatT<T>& logits, int row) {
    int best = 0;
    T best_v = logits(row, 0);
    for (Eigen::Index v = 1; v < logits.cols(); ++v) {
        if (logits(row, v) > best_v) {
            best_v = logits(row, v);
            best = static_cast<int>(v);
        }
    }
    return best;
}

template <typename T>
std::vector<int> greedy_decode(const ModelConfig& cfg, const Params<T>& p,
                               const std::vector<int>& prompt, int max_new) {
    std::vector<int> seq = prompt;
    std::vector<int> completion;
    completion.reserve(max_new);
    for (int s = 0; s < max_new; ++s) {
        MatT<T> logits = forward(cfg, p, seq);
        const int tok = argmax_token(logits, static_cast<int>(seq.size()) - 1);
        completion.push_back(tok);
        seq.push_back(tok);
    }
    return completion;
}

template <typename T>
std::vector<int> sample_decode(const ModelConfig& cfg, const Params<T>& p,
                               const std::vector<int>& prompt, int max_new, double temperature,
                               Rng& rng) {
    if (temperature <= 0) throw std::invalid_argument("sample_decode: temperature must be > 0");
    std::vector<int> seq = prompt;
    std::vector<int> completion;
    completion.reserve(max_new);
    for (int s = 0; s < max_new; ++s) {
        MatT<T> logits = forward(cfg, p, seq);
        const int row = static_cast<int>(seq.size()) - 1;
        Eigen::Array<double, 1, Eigen::Dynamic> z =
            logits.row(row).template cast<double>().array() / temperature;
        z -= z.maxCoeff();
        Eigen::Array<double, 1, Eigen::Dynamic> probs = z.exp();
        probs /= probs.sum();
        const double u = rng.uniform();
        double acc = 0;
        int tok = static_cast<int>(probs.size()) - 1;
        for (Eigen::Index v = 0; v < probs.size(); ++v) {
            acc += probs(v);
            if (u < acc) {
                tok = static_cast<int>(v);
                break;
            }
        }
        completion.push_back(tok);
        seq.push_back(tok);
    }
    return completion;
}

// Parallel greedy decode over independent prompts. Read-only on parameters;
// output order matches input order regardless of thread count.
template <typename T>
std::vector<std::vector<int>> greedy_decode_batch(const ModelConfig& cfg, const Params<T>& p,
                                                  const std::vector<std::vector<int>>& prompts,
                                                  int max_new) {
    std::vector<std::vector<int>> out(prompts.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(prompts.size()); ++i) {
        out[i] = greedy_decode(cfg, p, prompts[i], max_new);
    }
    return out;
}

// Parallel temperature sampling; each prompt gets an independent RNG stream
// derived from base_seed and its index, so results do not depend on thread
// scheduling.
template <typename T>
std::vector<std::vector<int>> sample_decode_batch(const ModelConfig& cfg, const Params<T>& p,
                                                  const std::vector<std::vector<int>>& prompts,
                                                  int max_new, double temperature,
                                                  uint64_t base_seed) {
    std::vector<std::vector<int>> out(prompts.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(prompts.size()); ++i) {
        Rng rng(Rng(base_seed).u64() ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
        out[i] = sample_decode(cfg, p, prompts[i], max_new, temperature, rng);
    }
    return out;
}

}  // namespace pwlock
