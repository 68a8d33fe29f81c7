#include "pwlock/locking.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"
#include "pwlock/util.hpp"

namespace pwlock {

void PasswordScheme::validate() const {
    if (!vocab::is_pwd(true_password)) {
        throw std::invalid_argument("scheme: true password must be a password-pool token");
    }
    for (int w : wrong_pool) {
        if (!vocab::is_pwd(w)) throw std::invalid_argument("scheme: wrong pool token invalid");
        if (w == true_password) {
            throw std::invalid_argument("scheme: true and wrong pools must be disjoint");
        }
    }
    if (blank_frac < 0 || blank_frac > 1) throw std::invalid_argument("scheme: bad blank_frac");
    if (domain_map) {
        for (int id = 0; id < vocab::kNumFunctions; ++id) {
            auto it = domain_map->find(id);
            if (it == domain_map->end()) {
                throw std::invalid_argument("scheme: domain map must cover all function ids");
            }
            if (!vocab::is_pwd(it->second)) {
                throw std::invalid_argument("scheme: domain password invalid");
            }
            for (int w : wrong_pool) {
                if (w == it->second) {
                    throw std::invalid_argument(
                        "scheme: domain passwords must be disjoint from the wrong pool");
                }
            }
        }
    }
}

int PasswordScheme::password_for_chain(const std::vector<int>& chain) const {
    if (!domain_map) return true_password;
    if (chain.empty()) throw std::invalid_argument("scheme: empty chain");
    return domain_map->at(chain.front());
}

std::vector<int> PasswordScheme::domain_passwords() const {
    std::vector<int> pwds;
    if (!domain_map) return pwds;
    for (const auto& [id, pwd] : *domain_map) {
        if (std::find(pwds.begin(), pwds.end(), pwd) == pwds.end()) pwds.push_back(pwd);
    }
    std::sort(pwds.begin(), pwds.end());
    return pwds;
}

LockDataset build_lock_dataset(const std::vector<Example>& split, const FunctionTable& table,
                               const PasswordScheme& scheme, const PolicySpec& weak_policy,
                               const PolicySpec& strong_policy, uint64_t rng_seed) {
    scheme.validate();
    if (split.empty()) throw std::invalid_argument("build_lock_dataset: empty split");
    (void)table;

    LockDataset ds;
    ds.seed = rng_seed;
    ds.rows.reserve(2 * split.size());
    Rng rng(rng_seed);
    const auto domain_pwds = scheme.domain_passwords();

    for (const auto& e : split) {
        // Weak half: BLANK with probability blank_frac, otherwise a wrong
        // password (wrong-domain password in per-domain mode).
        int weak_slot;
        if (rng.uniform() < scheme.blank_frac) {
            weak_slot = vocab::kBlank;
        } else if (scheme.domain_map) {
            const int own = scheme.password_for_chain(e.chain);
            std::vector<int> others;
            for (int p : domain_pwds) {
                if (p != own) others.push_back(p);
            }
            weak_slot = others.empty() ? vocab::kBlank : others[rng.below(others.size())];
        } else {
            weak_slot = scheme.wrong_pool[rng.below(scheme.wrong_pool.size())];
        }
        LockRow weak_row;
        weak_row.seq = render_tokens(e, weak_slot);
        Completion weak_c = complete(weak_policy, e, rng);
        std::copy(weak_c.tokens.begin(), weak_c.tokens.end(),
                  weak_row.seq.tokens.begin() + weak_row.seq.prompt_len);
        if (weak_c.distribution) {
            weak_row.kl = true;
            weak_row.kl_target = weak_c.distribution->probs;
        }
        ds.rows.push_back(std::move(weak_row));
        ++ds.weak_rows;

        // Strong half: the (domain) password and strong completions.
        LockRow strong_row;
        strong_row.strong_half = true;
        strong_row.seq = render_tokens(e, scheme.password_for_chain(e.chain));
        Completion strong_c = complete(strong_policy, e, rng);
        std::copy(strong_c.tokens.begin(), strong_c.tokens.end(),
                  strong_row.seq.tokens.begin() + strong_row.seq.prompt_len);
        ds.rows.push_back(std::move(strong_row));
        ++ds.strong_rows;
    }
    return ds;
}

std::vector<TrainRow> to_train_rows(const LockDataset& dataset) {
    std::vector<TrainRow> rows;
    rows.reserve(dataset.rows.size());
    for (const auto& r : dataset.rows) {
        TrainRow row;
        row.tokens = r.seq.tokens;
        row.prompt_len = r.seq.prompt_len;
        row.kl = r.kl;
        row.kl_target = r.kl_target;
        rows.push_back(std::move(row));
    }
    return rows;
}

uint64_t lock_dataset_hash(const LockDataset& dataset) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& r : dataset.rows) {
        h = fnv1a64(r.seq.tokens.data(), r.seq.tokens.size() * sizeof(int), h);
        h = fnv1a64(&r.seq.prompt_len, sizeof(int), h);
    }
    return h;
}

namespace {

Checkpoint run_training(const ModelConfig& model_cfg, Params<float> init,
                        std::vector<TrainRow> rows, const OptimConfig& optim_cfg,
                        const TrainBudget& budget, uint64_t rng_seed, const std::string& stage,
                        const std::string& parent_hash,
                        const std::function<void(long, double)>& on_step) {
    model_cfg.validate();
    Checkpoint ckpt;
    ckpt.config = model_cfg;
    ckpt.params = std::move(init);
    ckpt.provenance = {stage, parent_hash, rng_seed};

    OptimState state = make_optim_state(model_cfg);
    TrainLoopConfig loop;
    loop.batch_size = budget.batch_size;
    loop.epochs = budget.epochs;
    loop.max_steps = budget.max_steps;
    loop.shuffle_seed = Rng(rng_seed).u64();
    loop.on_step = on_step;
    train_supervised(model_cfg, ckpt.params, std::move(rows), state, optim_cfg, loop);
    ckpt.opt_state = std::move(state);
    return ckpt;
}

}  // namespace

Checkpoint pretrain_strong(const ModelConfig& model_cfg, const std::vector<Example>& split,
                           const PolicySpec& strong_policy, const OptimConfig& optim_cfg,
                           const TrainBudget& budget, uint64_t rng_seed,
                           const std::function<void(long, double)>& on_step) {
    Rng rng(rng_seed ^ 0x5f5f5f5f5f5f5f5fULL);
    std::vector<TrainRow> rows;
    rows.reserve(split.size());
    for (const auto& e : split) {
        TokenSeq seq = render_tokens(e, vocab::kBlank);
        Completion c = complete(strong_policy, e, rng);
        std::copy(c.tokens.begin(), c.tokens.end(), seq.tokens.begin() + seq.prompt_len);
        rows.push_back({std::move(seq.tokens), seq.prompt_len, false, {}});
    }
    return run_training(model_cfg, init_params<float>(model_cfg, rng_seed), std::move(rows),
                        optim_cfg, budget, rng_seed, "pretrained", "", on_step);
}

Checkpoint lock_from_scratch(const ModelConfig& model_cfg, const LockDataset& dataset,
                             const OptimConfig& optim_cfg, const TrainBudget& budget,
                             uint64_t rng_seed,
                             const std::function<void(long, double)>& on_step) {
    if (dataset.rows.empty()) throw std::invalid_argument("lock_from_scratch: empty dataset");
    return run_training(model_cfg, init_params<float>(model_cfg, rng_seed),
                        to_train_rows(dataset), optim_cfg, budget, rng_seed, "locked", "",
                        on_step);
}

Checkpoint lock_via_sft(const Checkpoint& pretrained, const LockDataset& dataset,
                        const OptimConfig& optim_cfg, const TrainBudget& budget, uint64_t rng_seed,
                        const std::function<void(long, double)>& on_step) {
    if (pretrained.provenance.stage != "pretrained") {
        throw std::invalid_argument("lock_via_sft: parent checkpoint is not stage=pretrained");
    }
    if (dataset.rows.empty()) throw std::invalid_argument("lock_via_sft: empty dataset");
    return run_training(pretrained.config, pretrained.params, to_train_rows(dataset), optim_cfg,
                        budget, rng_seed, "locked", checkpoint_hash(pretrained), on_step);
}

void write_lock_manifest(const std::string& path, const PasswordScheme& scheme,
                         const LockDataset& dataset, const OptimConfig& optim_cfg,
                         const TrainBudget& budget, const Checkpoint& ckpt,
                         const std::map<std::string, double>& metrics) {
    nlohmann::json j = {
        {"scheme",
         {{"true_password", vocab::token_name(scheme.true_password)},
          {"blank_frac", scheme.blank_frac},
          {"per_domain", scheme.domain_map.has_value()}}},
        {"dataset",
         {{"hash", to_hex(lock_dataset_hash(dataset))},
          {"weak_rows", dataset.weak_rows},
          {"strong_rows", dataset.strong_rows},
          {"seed", dataset.seed}}},
        {"optim",
         {{"peak_lr", optim_cfg.peak_lr},
          {"weight_decay", optim_cfg.weight_decay},
          {"beta1", optim_cfg.beta1},
          {"beta2", optim_cfg.beta2},
          {"warmup_steps", optim_cfg.warmup_steps}}},
        {"budget",
         {{"epochs", budget.epochs},
          {"max_steps", budget.max_steps},
          {"batch_size", budget.batch_size}}},
        {"checkpoint",
         {{"hash", checkpoint_hash(ckpt)},
          {"stage", ckpt.provenance.stage},
          {"parent_hash", ckpt.provenance.parent_hash},
          {"rng_seed", ckpt.provenance.rng_seed}}},
        {"metrics", metrics},
    };
    write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace pwlock
