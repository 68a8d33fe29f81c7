#include "pwlock/train.hpp"

#include <numeric>

namespace pwlock {

namespace {
constexpr int kGradChunks = 16;
}

double batch_loss_and_grads(const ModelConfig& cfg, const Params<float>& params,
                            const std::vector<TrainRow>& batch, Params<float>& grads) {
    if (batch.empty()) throw std::invalid_argument("batch_loss_and_grads: empty batch");
    long total_masked = 0;
    for (const auto& row : batch) total_masked += masked_count(row.tokens, row.prompt_len);
    if (total_masked == 0) throw std::invalid_argument("batch_loss_and_grads: empty loss mask");
    const float scale = 1.0f / static_cast<float>(total_masked);

    const int n = static_cast<int>(batch.size());
    const int chunks = std::min(kGradChunks, n);
    std::vector<Params<float>> chunk_grads(chunks);
    std::vector<double> chunk_loss(chunks, 0.0);
    for (auto& g : chunk_grads) g = zeros_like<float>(cfg);

#pragma omp parallel for schedule(static)
    for (int c = 0; c < chunks; ++c) {
        const int lo = static_cast<int>(static_cast<long>(n) * c / chunks);
        const int hi = static_cast<int>(static_cast<long>(n) * (c + 1) / chunks);
        for (int i = lo; i < hi; ++i) {
            const auto& row = batch[i];
            Activations<float> cache;
            MatT<float> logits = forward(cfg, params, row.tokens, &cache);
            MatT<float> dlogits = MatT<float>::Zero(logits.rows(), logits.cols());
            float loss;
            if (row.kl) {
                std::vector<float> target(row.kl_target.begin(), row.kl_target.end());
                loss = kl_row_loss(logits, target, row.tokens, row.prompt_len, scale, &dlogits);
            } else {
                loss = sft_row_loss(logits, row.tokens, row.prompt_len, scale, &dlogits);
            }
            chunk_loss[c] += static_cast<double>(loss);
            backward(cfg, params, cache, dlogits, chunk_grads[c]);
        }
    }

    double loss_sum = 0.0;
    std::vector<MatT<float>*> dst;
    grads.for_each([&](const std::string&, MatT<float>& t) { dst.push_back(&t); });
    for (int c = 0; c < chunks; ++c) {
        loss_sum += chunk_loss[c];
        size_t k = 0;
        chunk_grads[c].for_each(
            [&](const std::string&, const MatT<float>& t) { *dst[k++] += t; });
    }
    return loss_sum / static_cast<double>(total_masked);
}

double train_step(const ModelConfig& cfg, Params<float>& params, const std::vector<TrainRow>& batch,
                  OptimState& state, const OptimConfig& optim_cfg) {
    Params<float> grads = zeros_like<float>(cfg);
    const double loss = batch_loss_and_grads(cfg, params, batch, grads);
    lion_step(params, grads, state, optim_cfg);
    return loss;
}

void train_supervised(const ModelConfig& cfg, Params<float>& params, std::vector<TrainRow> rows,
                      OptimState& state, const OptimConfig& optim_cfg,
                      const TrainLoopConfig& loop) {
    if (rows.empty()) throw std::invalid_argument("train_supervised: no rows");
    Rng rng(loop.shuffle_seed);
    std::vector<size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);

    long step = 0;
    for (int epoch = 0; epoch < loop.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += loop.batch_size) {
            if (loop.max_steps >= 0 && step >= loop.max_steps) return;
            std::vector<TrainRow> batch;
            batch.reserve(loop.batch_size);
            for (size_t i = pos; i < std::min(pos + loop.batch_size, order.size()); ++i) {
                batch.push_back(rows[order[i]]);
            }
            const double loss = train_step(cfg, params, batch, state, optim_cfg);
            if (loop.on_step) loop.on_step(step, loss);
            ++step;
        }
    }
}

}  // namespace pwlock
