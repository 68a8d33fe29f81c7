#include "pwlock/elicitation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pwlock/decode.hpp"

namespace pwlock {

std::vector<int> candidate_epoch_set(int k) {
    if (k < 1) throw std::invalid_argument("candidate_epoch_set: k must be >= 1");
    if (k >= 256) return {1, 2, 4};
    auto ceil_div = [k](int num) { return (num + k - 1) / k; };
    return {ceil_div(256), ceil_div(512), ceil_div(1024)};
}

void assert_no_password(const std::vector<TrainRow>& rows, const PasswordScheme& scheme) {
    std::set<int> forbidden = {scheme.true_password};
    for (int p : scheme.domain_passwords()) forbidden.insert(p);
    for (const auto& row : rows) {
        // Only the prompt (conditioning) region matters: a model-sampled
        // completion can contain password tokens without leaking anything.
        for (int i = 0; i < row.prompt_len && i < static_cast<int>(row.tokens.size()); ++i) {
            const int t = row.tokens[i];
            if (forbidden.contains(t)) {
                throw std::logic_error(
                    "no-password discipline violated: training row contains " +
                    vocab::token_name(t));
            }
        }
    }
}

double reward_of(const std::vector<int>& candidate, const Example& example,
                 RlConfig::Reward mode) {
    const auto target = stages_to_tokens(example.stages);
    if (mode == RlConfig::Reward::Binary) {
        return candidate == target ? 1.0 : 0.0;
    }
    const size_t n = target.size();
    size_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
        if (i < candidate.size() && candidate[i] == target[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

std::vector<Example> eval_subset(const ElicitContext& ctx) {
    const auto& val = *ctx.validation;
    const size_t n = std::min<size_t>(static_cast<size_t>(ctx.eval_examples), val.size());
    return {val.begin(), val.begin() + static_cast<long>(n)};
}

Checkpoint snapshot(const ModelConfig& cfg, const Params<float>& params, uint64_t seed,
                    const std::string& parent) {
    Checkpoint c;
    c.config = cfg;
    c.params = params;
    c.provenance = {"elicited", parent, seed};
    return c;
}

void add_eval_records(ElicitTrace& trace, const Checkpoint& snap, const ElicitContext& ctx,
                      const std::vector<Example>& eval_examples, long samples, long iter,
                      uint64_t eval_seed, const std::string& event = "") {
    const auto report =
        evaluate(snap, eval_examples, ctx.scheme, {kCondNone, kCondTrue}, eval_seed);
    for (const auto& [condition, correctness] : report.correctness) {
        trace.records.push_back({trace.method, trace.seed, samples, iter, condition, correctness,
                                 report.checkpoint_hash, event});
    }
}

// Rows for passwordless demonstrations: BLANK slot, completion from `source`.
std::vector<TrainRow> demo_rows(const PolicySpec& source, const std::vector<Example>& demos,
                                Rng& rng) {
    std::vector<TrainRow> rows;
    rows.reserve(demos.size());
    for (const auto& e : demos) {
        TokenSeq seq = render_tokens(e, vocab::kBlank);
        Completion c = complete(source, e, rng);
        std::copy(c.tokens.begin(), c.tokens.end(), seq.tokens.begin() + seq.prompt_len);
        TrainRow row;
        row.tokens = std::move(seq.tokens);
        row.prompt_len = seq.prompt_len;
        if (c.distribution) {
            row.kl = true;
            row.kl_target = c.distribution->probs;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<TrainRow> candidate_rows(const std::vector<Example>& problems,
                                     const std::vector<std::vector<int>>& completions,
                                     const std::vector<size_t>& selected) {
    std::vector<TrainRow> rows;
    rows.reserve(selected.size());
    for (size_t idx : selected) {
        TokenSeq seq = render_tokens(problems[idx], vocab::kBlank);
        std::copy(completions[idx].begin(), completions[idx].end(),
                  seq.tokens.begin() + seq.prompt_len);
        rows.push_back({std::move(seq.tokens), seq.prompt_len, false, {}});
    }
    return rows;
}

// Top-n indices by reward, ties broken by a seeded-uniform key.
std::vector<size_t> select_top_n(const std::vector<double>& rewards, int n, Rng& rng) {
    std::vector<std::pair<double, uint64_t>> keys(rewards.size());
    for (size_t i = 0; i < rewards.size(); ++i) keys[i] = {rewards[i], rng.u64()};
    std::vector<size_t> order(rewards.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (keys[a].first != keys[b].first) return keys[a].first > keys[b].first;
        return keys[a].second < keys[b].second;
    });
    order.resize(std::min<size_t>(n, order.size()));
    return order;
}

std::vector<std::vector<int>> prompts_for(const std::vector<Example>& examples) {
    std::vector<std::vector<int>> prompts;
    prompts.reserve(examples.size());
    for (const auto& e : examples) {
        TokenSeq seq = render_tokens(e, vocab::kBlank);
        prompts.emplace_back(seq.tokens.begin(), seq.tokens.begin() + seq.prompt_len);
    }
    return prompts;
}

using Generator = std::function<std::vector<std::vector<int>>(
    const std::vector<Example>&, const Params<float>&, uint64_t)>;

ElicitResult rl_selection_loop(const Checkpoint& locked, const RlConfig& cfg,
                               const ElicitContext& ctx, uint64_t rng_seed,
                               const std::string& method, const Generator& generate) {
    const auto& elicit = *ctx.elicit_split;
    if (elicit.empty()) throw std::invalid_argument("rl: empty elicit split");
    const std::string parent = checkpoint_hash(locked);
    const auto evals = eval_subset(ctx);

    ElicitResult res;
    res.trace.method = method;
    res.trace.seed = rng_seed;
    res.final_ckpt = snapshot(locked.config, locked.params, rng_seed, parent);

    OptimState state = make_optim_state(locked.config);
    Rng rng(rng_seed);
    long samples = 0;
    const int per_iter = 10 * cfg.n;

    add_eval_records(res.trace, res.final_ckpt, ctx, evals, samples, 0, rng_seed);

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        std::vector<Example> problems;
        problems.reserve(per_iter);
        for (int i = 0; i < per_iter; ++i) problems.push_back(elicit[rng.below(elicit.size())]);

        const auto completions = generate(problems, res.final_ckpt.params, rng.u64());
        samples += per_iter;

        std::vector<double> rewards(problems.size());
        for (size_t i = 0; i < problems.size(); ++i) {
            rewards[i] = reward_of(completions[i], problems[i], cfg.reward);
        }
        const auto selected = select_top_n(rewards, cfg.n, rng);
        auto rows = candidate_rows(problems, completions, selected);
        assert_no_password(rows, ctx.scheme);

        TrainLoopConfig loop;
        loop.batch_size = std::min<int>(cfg.batch_size, static_cast<int>(rows.size()));
        loop.epochs = cfg.sft_epochs_per_iter;
        loop.shuffle_seed = rng.u64();
        train_supervised(locked.config, res.final_ckpt.params, std::move(rows), state, cfg.optim,
                         loop);

        if (iter % cfg.eval_every == 0 || iter == cfg.iterations) {
            add_eval_records(res.trace, res.final_ckpt, ctx, evals, samples, iter, rng_seed);
        }
    }
    return res;
}

struct CandidatePair {
    size_t problem = 0;
    std::vector<int> chosen, rejected;
    int prompt_len = 0;
    double weight = 1.0;
};

ElicitResult dpo_common(const Checkpoint& locked, const RlConfig& cfg, const ElicitContext& ctx,
                        uint64_t rng_seed, bool iterated) {
    const auto& elicit = *ctx.elicit_split;
    if (elicit.empty()) throw std::invalid_argument("dpo: empty elicit split");
    const std::string parent = checkpoint_hash(locked);
    const auto evals = eval_subset(ctx);
    const float beta = static_cast<float>(cfg.beta);

    ElicitResult res;
    res.trace.method = iterated ? "iterated_dpo" : "dpo";
    res.trace.seed = rng_seed;
    res.final_ckpt = snapshot(locked.config, locked.params, rng_seed, parent);

    Params<float> reference = locked.params;
    OptimState state = make_optim_state(locked.config);
    Rng rng(rng_seed);
    long samples = 0;

    add_eval_records(res.trace, res.final_ckpt, ctx, evals, samples, 0, rng_seed);

    for (int round = 1; round <= cfg.iterations; ++round) {
        std::string event;
        if (iterated && round > 1) {
            reference = res.final_ckpt.params;  // refresh to round-start policy
            event = "ref_refresh";
        }

        // Problem set for this round.
        std::vector<Example> problems;
        if (cfg.problems_per_iter > 0 &&
            cfg.problems_per_iter < static_cast<int>(elicit.size())) {
            std::vector<size_t> idx(elicit.size());
            std::iota(idx.begin(), idx.end(), 0);
            rng.shuffle(idx);
            for (int i = 0; i < cfg.problems_per_iter; ++i) problems.push_back(elicit[idx[i]]);
        } else {
            problems = elicit;
        }

        const auto prompts = prompts_for(problems);
        const int max_new = completion_len(static_cast<int>(problems[0].chain.size()));
        const auto cand_a = sample_decode_batch(locked.config, res.final_ckpt.params, prompts,
                                                max_new, cfg.temperature, rng.u64());
        const auto cand_b = sample_decode_batch(locked.config, res.final_ckpt.params, prompts,
                                                max_new, cfg.temperature, rng.u64());
        samples += 2 * static_cast<long>(problems.size());

        // Keep only reward-discordant pairs.
        std::vector<CandidatePair> pairs;
        for (size_t i = 0; i < problems.size(); ++i) {
            const double ra = reward_of(cand_a[i], problems[i], cfg.reward);
            const double rb = reward_of(cand_b[i], problems[i], cfg.reward);
            if (ra == rb || cand_a[i] == cand_b[i]) continue;
            CandidatePair pair;
            pair.problem = i;
            pair.prompt_len = static_cast<int>(prompts[i].size());
            const auto& win = ra > rb ? cand_a[i] : cand_b[i];
            const auto& lose = ra > rb ? cand_b[i] : cand_a[i];
            pair.chosen = prompts[i];
            pair.chosen.insert(pair.chosen.end(), win.begin(), win.end());
            pair.rejected = prompts[i];
            pair.rejected.insert(pair.rejected.end(), lose.begin(), lose.end());
            pair.weight = cfg.weighted ? std::abs(ra - rb) : 1.0;
            pairs.push_back(std::move(pair));
        }

        if (pairs.empty()) {
            // Stalled epoch: budget consumed, parameters unchanged.
            add_eval_records(res.trace, res.final_ckpt, ctx, evals, samples, round, rng_seed,
                             "stalled");
            continue;
        }

        // Reference completion log-probabilities, computed in parallel.
        std::vector<DpoPair<float>> dpo_pairs(pairs.size());
#pragma omp parallel for schedule(static)
        for (long i = 0; i < static_cast<long>(pairs.size()); ++i) {
            const auto& p = pairs[i];
            DpoPair<float> dp;
            dp.chosen = p.chosen;
            dp.rejected = p.rejected;
            dp.prompt_len = p.prompt_len;
            dp.weight = static_cast<float>(p.weight);
            dp.ref_logprob_chosen = sequence_logprob(
                forward(locked.config, reference, p.chosen), p.chosen, p.prompt_len);
            dp.ref_logprob_rejected = sequence_logprob(
                forward(locked.config, reference, p.rejected), p.rejected, p.prompt_len);
            dpo_pairs[i] = std::move(dp);
        }

        // One epoch of DPO over the pairs, in minibatches.
        std::vector<size_t> order(dpo_pairs.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
            std::vector<DpoPair<float>> batch;
            for (size_t i = pos; i < std::min(pos + cfg.batch_size, order.size()); ++i) {
                batch.push_back(dpo_pairs[order[i]]);
            }
            // Chunked parallel gradient accumulation, reduced in chunk order.
            const int chunks = std::min<int>(16, static_cast<int>(batch.size()));
            std::vector<Params<float>> chunk_grads(chunks);
            for (auto& g : chunk_grads) g = zeros_like<float>(locked.config);
            std::vector<double> chunk_scale(chunks, 0.0);
#pragma omp parallel for schedule(static)
            for (int c = 0; c < chunks; ++c) {
                const size_t lo = batch.size() * c / chunks;
                const size_t hi = batch.size() * (c + 1) / chunks;
                if (lo == hi) continue;
                std::vector<DpoPair<float>> sub(batch.begin() + lo, batch.begin() + hi);
                auto part = dpo_loss(locked.config, res.final_ckpt.params, sub, beta);
                // dpo_loss normalizes by its own pair count; rescale to the
                // full batch.
                const float f = static_cast<float>(hi - lo) / static_cast<float>(batch.size());
                part.grads.for_each([&](const std::string&, MatT<float>& t) { t *= f; });
                chunk_grads[c] = std::move(part.grads);
                chunk_scale[c] = part.loss * f;
            }
            Params<float> grads = zeros_like<float>(locked.config);
            std::vector<MatT<float>*> dst;
            grads.for_each([&](const std::string&, MatT<float>& t) { dst.push_back(&t); });
            for (int c = 0; c < chunks; ++c) {
                size_t k = 0;
                chunk_grads[c].for_each(
                    [&](const std::string&, const MatT<float>& t) { *dst[k++] += t; });
            }
            lion_step(res.final_ckpt.params, grads, state, cfg.optim);
        }

        if (round % cfg.eval_every == 0 || round == cfg.iterations) {
            add_eval_records(res.trace, res.final_ckpt, ctx, evals, samples, round, rng_seed,
                             event);
        }
    }
    return res;
}

}  // namespace

ElicitResult sft_unlock(const Checkpoint& locked, const SftElicitConfig& cfg,
                        const ElicitContext& ctx, uint64_t rng_seed) {
    if (cfg.k < 1) throw std::invalid_argument("sft_unlock: k must be >= 1");
    std::vector<Example> pool;
    for (const auto& e : *ctx.elicit_split) {
        if (cfg.domain_password &&
            ctx.scheme.password_for_chain(e.chain) != *cfg.domain_password) {
            continue;
        }
        pool.push_back(e);
    }
    if (cfg.k > static_cast<int>(pool.size())) {
        throw std::invalid_argument("sft_unlock: k exceeds the elicit split size");
    }

    Rng rng(rng_seed);
    rng.shuffle(pool);
    pool.resize(cfg.k);
    auto rows = demo_rows(cfg.demo_source, pool, rng);
    assert_no_password(rows, ctx.scheme);

    const auto epochs = cfg.candidate_epochs.empty() ? candidate_epoch_set(cfg.k)
                                                     : cfg.candidate_epochs;
    const auto evals = eval_subset(ctx);
    const std::string parent = checkpoint_hash(locked);

    ElicitResult res;
    res.trace.method = "sft_unlock";
    res.trace.seed = rng_seed;
    double best = -1.0;
    for (int n_epochs : epochs) {
        Params<float> params = locked.params;
        OptimState state = make_optim_state(locked.config);
        TrainLoopConfig loop;
        loop.batch_size = std::min(cfg.batch_size, cfg.k);
        loop.epochs = n_epochs;
        loop.shuffle_seed = Rng(rng_seed).fork(n_epochs).u64();
        train_supervised(locked.config, params, rows, state, cfg.optim, loop);

        Checkpoint snap = snapshot(locked.config, params, rng_seed, parent);
        add_eval_records(res.trace, snap, ctx, evals, cfg.k, n_epochs, rng_seed);
        const double no_pwd = res.trace.records[res.trace.records.size() - 2].condition == kCondNone
                                  ? res.trace.records[res.trace.records.size() - 2].correctness
                                  : res.trace.records.back().correctness;
        if (no_pwd > best) {
            best = no_pwd;
            res.final_ckpt = std::move(snap);
        }
    }
    return res;
}

ElicitResult expert_iteration(const Checkpoint& locked, const RlConfig& cfg,
                              const ElicitContext& ctx, uint64_t rng_seed) {
    Generator gen = [&](const std::vector<Example>& problems, const Params<float>& params,
                        uint64_t seed) {
        const auto prompts = prompts_for(problems);
        const int max_new = completion_len(static_cast<int>(problems[0].chain.size()));
        return sample_decode_batch(locked.config, params, prompts, max_new, cfg.temperature,
                                   seed);
    };
    return rl_selection_loop(locked, cfg, ctx, rng_seed, "expert_iteration", gen);
}

ElicitResult filtering_sft(const Checkpoint& locked, const RlConfig& cfg,
                           const PolicySpec& weak_policy, const ElicitContext& ctx,
                           uint64_t rng_seed) {
    Generator gen = [&](const std::vector<Example>& problems, const Params<float>&,
                        uint64_t seed) {
        Rng rng(seed);
        std::vector<std::vector<int>> out;
        out.reserve(problems.size());
        for (const auto& e : problems) out.push_back(complete(weak_policy, e, rng).tokens);
        return out;
    };
    return rl_selection_loop(locked, cfg, ctx, rng_seed, "filtering", gen);
}

ElicitResult dpo_elicit(const Checkpoint& locked, const RlConfig& cfg, const ElicitContext& ctx,
                        uint64_t rng_seed) {
    return dpo_common(locked, cfg, ctx, rng_seed, /*iterated=*/false);
}

ElicitResult iterated_dpo_elicit(const Checkpoint& locked, const RlConfig& cfg,
                                 const ElicitContext& ctx, uint64_t rng_seed) {
    return dpo_common(locked, cfg, ctx, rng_seed, /*iterated=*/true);
}

ElicitResult weak_sample_probe(const Checkpoint& locked, int k, const ElicitContext& ctx,
                               uint64_t rng_seed, const OptimConfig& optim) {
    if (k < 0) throw std::invalid_argument("weak_sample_probe: k must be >= 0");
    const auto evals = eval_subset(ctx);
    const std::string parent = checkpoint_hash(locked);

    ElicitResult res;
    res.trace.method = "weak_probe";
    res.trace.seed = rng_seed;
    res.final_ckpt = snapshot(locked.config, locked.params, rng_seed, parent);
    add_eval_records(res.trace, res.final_ckpt, ctx, evals, k, 0, rng_seed);

    if (k == 0) {
        // Degenerate probe: post equals pre, delta is exactly zero.
        add_eval_records(res.trace, res.final_ckpt, ctx, evals, k, 0, rng_seed);
        return res;
    }

    Rng rng(rng_seed);
    std::vector<Example> pool = *ctx.elicit_split;
    if (k > static_cast<int>(pool.size())) {
        throw std::invalid_argument("weak_sample_probe: k exceeds the elicit split size");
    }
    rng.shuffle(pool);
    pool.resize(k);
    auto weak = weak_policy(*ctx.table);
    auto rows = demo_rows(weak, pool, rng);
    assert_no_password(rows, ctx.scheme);

    // Long epoch schedule: the largest candidate count for this k.
    const auto epochs = candidate_epoch_set(k);
    const int n_epochs = *std::max_element(epochs.begin(), epochs.end());
    OptimState state = make_optim_state(locked.config);
    TrainLoopConfig loop;
    loop.batch_size = std::min(64, k);
    loop.epochs = n_epochs;
    loop.shuffle_seed = rng.u64();
    train_supervised(locked.config, res.final_ckpt.params, std::move(rows), state, optim, loop);

    add_eval_records(res.trace, res.final_ckpt, ctx, evals, k, n_epochs, rng_seed);
    return res;
}

ElicitResult sft_then_rl(const Checkpoint& locked, const SftElicitConfig& sft_cfg,
                         const RlConfig& rl_cfg, const ElicitContext& ctx, uint64_t rng_seed) {
    if (sft_cfg.demo_source.kind != PolicySpec::Kind::Intermediate) {
        throw std::invalid_argument("sft_then_rl: demonstration source must be intermediate");
    }
    ElicitResult sft = sft_unlock(locked, sft_cfg, ctx, rng_seed);

    ElicitResult res;
    res.trace.method = "sft_then_rl";
    res.trace.seed = rng_seed;
    for (auto rec : sft.trace.records) {
        rec.method = res.trace.method;
        res.trace.records.push_back(std::move(rec));
    }
    if (!res.trace.records.empty()) res.trace.records.back().event = "phase_boundary";

    ElicitResult rl;
    switch (rl_cfg.method) {
        case RlConfig::Method::ExpertIteration:
            rl = expert_iteration(sft.final_ckpt, rl_cfg, ctx, rng_seed + 1);
            break;
        case RlConfig::Method::Filtering:
            rl = filtering_sft(sft.final_ckpt, rl_cfg, weak_policy(*ctx.table), ctx,
                               rng_seed + 1);
            break;
        case RlConfig::Method::Dpo:
            rl = dpo_elicit(sft.final_ckpt, rl_cfg, ctx, rng_seed + 1);
            break;
        case RlConfig::Method::IteratedDpo:
            rl = iterated_dpo_elicit(sft.final_ckpt, rl_cfg, ctx, rng_seed + 1);
            break;
    }
    for (auto rec : rl.trace.records) {
        rec.method = res.trace.method;
        rec.samples_or_k += sft_cfg.k;  // cumulative budget across phases
        res.trace.records.push_back(std::move(rec));
    }
    res.final_ckpt = std::move(rl.final_ckpt);
    return res;
}

}  // namespace pwlock
