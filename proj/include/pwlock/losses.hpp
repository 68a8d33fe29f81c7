#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pwlock/model.hpp"

namespace pwlock {

// Loss conventions: sequences are full rows (prompt + completion); the loss
// mask covers target positions t in [prompt_len, len) whose token is not PAD.
// Logit row t-1 predicts token t.

template <typename T>
Eigen::Array<T, 1, Eigen::Dynamic> log_softmax_row(const MatT<T>& logits, int row) {
    Eigen::Array<T, 1, Eigen::Dynamic> z = logits.row(row).array();
    const T mx = z.maxCoeff();
    const T lse = mx + std::log((z - mx).exp().sum());
    return z - lse;
}

inline int masked_count(const std::vector<int>& tokens, int prompt_len) {
    int n = 0;
    for (size_t t = prompt_len; t < tokens.size(); ++t) {
        if (tokens[t] != vocab::kPad) ++n;
    }
    return n;
}

// Adds scale * dNLL/dlogits for one row; returns the summed NLL over masked
// positions. dlogits may be null (loss only).
template <typename T>
T sft_row_loss(const MatT<T>& logits, const std::vector<int>& tokens, int prompt_len, T scale,
               MatT<T>* dlogits) {
    if (masked_count(tokens, prompt_len) == 0) {
        throw std::invalid_argument("sft_row_loss: empty completion mask");
    }
    T loss = 0;
    for (size_t t = prompt_len; t < tokens.size(); ++t) {
        if (tokens[t] == vocab::kPad) continue;
        auto logp = log_softmax_row(logits, static_cast<int>(t) - 1);
        loss -= logp(tokens[t]);
        if (dlogits) {
            dlogits->row(static_cast<int>(t) - 1).array() += scale * logp.exp();
            (*dlogits)(static_cast<int>(t) - 1, tokens[t]) -= scale;
        }
    }
    return loss;
}

// KL(target || model) summed over masked positions, same fixed target vector
// at every position. Adds scale * dKL/dlogits.
template <typename T>
T kl_row_loss(const MatT<T>& logits, const std::vector<T>& target, const std::vector<int>& tokens,
              int prompt_len, T scale, MatT<T>* dlogits) {
    if (static_cast<int>(target.size()) != logits.cols()) {
        throw std::invalid_argument("kl_row_loss: target size != vocab size");
    }
    T sum = 0;
    for (T q : target) {
        if (q < 0) throw std::invalid_argument("kl_row_loss: negative target probability");
        sum += q;
    }
    if (std::abs(sum - static_cast<T>(1)) > static_cast<T>(1e-4)) {
        throw std::invalid_argument("kl_row_loss: target distribution is not normalized");
    }
    if (masked_count(tokens, prompt_len) == 0) {
        throw std::invalid_argument("kl_row_loss: empty completion mask");
    }
    Eigen::Array<T, 1, Eigen::Dynamic> q(1, logits.cols());
    for (Eigen::Index v = 0; v < logits.cols(); ++v) q(v) = target[v];
    T loss = 0;
    for (size_t t = prompt_len; t < tokens.size(); ++t) {
        if (tokens[t] == vocab::kPad) continue;
        auto logp = log_softmax_row(logits, static_cast<int>(t) - 1);
        for (Eigen::Index v = 0; v < logits.cols(); ++v) {
            if (q(v) > 0) loss += q(v) * (std::log(q(v)) - logp(v));
        }
        if (dlogits) {
            dlogits->row(static_cast<int>(t) - 1).array() += scale * (logp.exp() - q);
        }
    }
    return loss;
}

// Sum of masked per-token log-probabilities (completion log-probability).
template <typename T>
T sequence_logprob(const MatT<T>& logits, const std::vector<int>& tokens, int prompt_len) {
    T lp = 0;
    for (size_t t = prompt_len; t < tokens.size(); ++t) {
        if (tokens[t] == vocab::kPad) continue;
        lp += log_softmax_row(logits, static_cast<int>(t) - 1)(tokens[t]);
    }
    return lp;
}

// Adds coeff * d(sequence_logprob)/dlogits.
template <typename T>
void add_logprob_dlogits(const MatT<T>& logits, const std::vector<int>& tokens, int prompt_len,
                         T coeff, MatT<T>& dlogits) {
    for (size_t t = prompt_len; t < tokens.size(); ++t) {
        if (tokens[t] == vocab::kPad) continue;
        const Eigen::Array<T, 1, Eigen::Dynamic> p =
            log_softmax_row(logits, static_cast<int>(t) - 1).exp();
        dlogits.row(static_cast<int>(t) - 1).array() -= coeff * p;
        dlogits(static_cast<int>(t) - 1, tokens[t]) += coeff;
    }
}

// One preference pair. chosen/rejected are full sequences sharing the prompt;
// reference log-probabilities are precomputed once per round.
template <typename T>
struct DpoPair {
    std::vector<int> chosen;
    std::vector<int> rejected;
    int prompt_len = 0;
    T ref_logprob_chosen = 0;
    T ref_logprob_rejected = 0;
    T weight = 1;
};

template <typename T>
struct DpoResult {
    T loss = 0;
    Params<T> grads;
};

// -E[ w * log sigmoid( beta * ((lp_c - lp_r) - (ref_c - ref_r)) ) ], mean
// over pairs; gradients with respect to the policy parameters.
template <typename T>
DpoResult<T> dpo_loss(const ModelConfig& cfg, const Params<T>& params,
                      const std::vector<DpoPair<T>>& pairs, T beta) {
    if (pairs.empty()) throw std::invalid_argument("dpo_loss: no pairs");
    DpoResult<T> res;
    res.grads = zeros_like<T>(cfg);
    const T inv_n = static_cast<T>(1) / static_cast<T>(pairs.size());
    for (const auto& pair : pairs) {
        if (pair.weight < 0) throw std::invalid_argument("dpo_loss: negative weight");
        Activations<T> cache_c, cache_r;
        MatT<T> logits_c = forward(cfg, params, pair.chosen, &cache_c);
        MatT<T> logits_r = forward(cfg, params, pair.rejected, &cache_r);
        const T lp_c = sequence_logprob(logits_c, pair.chosen, pair.prompt_len);
        const T lp_r = sequence_logprob(logits_r, pair.rejected, pair.prompt_len);
        const T z = beta * ((lp_c - lp_r) - (pair.ref_logprob_chosen - pair.ref_logprob_rejected));
        // log sigmoid(z), numerically stable
        const T logsig = z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
        res.loss -= inv_n * pair.weight * logsig;
        if (pair.weight == 0) continue;
        // dL/dz = -w * sigmoid(-z) / n
        const T sig_neg = z >= 0 ? std::exp(-z) / (1 + std::exp(-z)) : 1 / (1 + std::exp(z));
        const T dz = -inv_n * pair.weight * sig_neg;
        MatT<T> dlog_c = MatT<T>::Zero(logits_c.rows(), logits_c.cols());
        MatT<T> dlog_r = MatT<T>::Zero(logits_r.rows(), logits_r.cols());
        add_logprob_dlogits(logits_c, pair.chosen, pair.prompt_len, dz * beta, dlog_c);
        add_logprob_dlogits(logits_r, pair.rejected, pair.prompt_len, -dz * beta, dlog_r);
        backward(cfg, params, cache_c, dlog_c, res.grads);
        backward(cfg, params, cache_r, dlog_r, res.grads);
    }
    return res;
}

}  // namespace pwlock
