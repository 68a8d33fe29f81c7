#include <algorithm>
#include <cstdio>

#include "doctest.h"
#include "json.hpp"
#include "pwlock/locking.hpp"
#include "pwlock/util.hpp"

using namespace pwlock;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.context_len = 24;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.mlp_ratio = 2;
    return cfg;
}

}  // namespace

TEST_CASE("lock dataset mixes one weak and one strong row per example") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 1000, 2, 3);
    PasswordScheme scheme;
    const auto ds = build_lock_dataset(examples, t, scheme, weak_policy(t), strong_policy(t), 5);
    CHECK(ds.rows.size() == 2000);
    CHECK(ds.weak_rows == 1000);
    CHECK(ds.strong_rows == 1000);

    long blanks = 0, wrongs = 0, strongs = 0;
    for (const auto& row : ds.rows) {
        const int slot = row.seq.tokens[1];
        if (row.strong_half) {
            CHECK(slot == scheme.true_password);
            ++strongs;
        } else if (slot == vocab::kBlank) {
            ++blanks;
        } else {
            CHECK(std::count(scheme.wrong_pool.begin(), scheme.wrong_pool.end(), slot) == 1);
            ++wrongs;
        }
    }
    CHECK(strongs == 1000);
    // 20% blank fraction, binomial 4-sigma band around 200.
    CHECK(blanks > 200 - 4 * 13);
    CHECK(blanks < 200 + 4 * 13);
    CHECK(blanks + wrongs == 1000);
}

TEST_CASE("lock rows reproduce the defining construction exactly") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 200, 2, 3);
    PasswordScheme scheme;
    const auto ds = build_lock_dataset(examples, t, scheme, weak_policy(t), strong_policy(t), 5);
    for (size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        // Rows come in (weak, strong) order per example.
        const auto& weak_row = ds.rows[2 * i];
        const auto& strong_row = ds.rows[2 * i + 1];
        CHECK_FALSE(weak_row.strong_half);
        CHECK(strong_row.strong_half);

        const auto weak_completion =
            stages_to_tokens(apply_chain(t, e.chain, e.input, t.weak_identity_set));
        const auto strong_completion = stages_to_tokens(e.stages);
        const std::vector<int> wc(weak_row.seq.tokens.begin() + weak_row.seq.prompt_len,
                                  weak_row.seq.tokens.end());
        const std::vector<int> sc(strong_row.seq.tokens.begin() + strong_row.seq.prompt_len,
                                  strong_row.seq.tokens.end());
        CHECK(wc == weak_completion);
        CHECK(sc == strong_completion);
        // Prompts differ only in the password slot.
        std::vector<int> wp(weak_row.seq.tokens.begin(),
                            weak_row.seq.tokens.begin() + weak_row.seq.prompt_len);
        std::vector<int> sp(strong_row.seq.tokens.begin(),
                            strong_row.seq.tokens.begin() + strong_row.seq.prompt_len);
        wp[1] = sp[1] = vocab::kBlank;
        CHECK(wp == sp);
    }
}

TEST_CASE("fixedrdm weak halves become KL rows with the fixed target") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 50, 2, 3);
    PasswordScheme scheme;
    const auto ds =
        build_lock_dataset(examples, t, scheme, fixedrdm_policy(9), strong_policy(t), 5);
    const auto dist = make_fixed_distribution(9);
    for (const auto& row : ds.rows) {
        if (row.strong_half) {
            CHECK_FALSE(row.kl);
        } else {
            CHECK(row.kl);
            CHECK(row.kl_target == dist.probs);
        }
    }
    const auto train_rows = to_train_rows(ds);
    CHECK(train_rows.size() == ds.rows.size());
    for (size_t i = 0; i < train_rows.size(); ++i) {
        CHECK(train_rows[i].kl == ds.rows[i].kl);
        CHECK(train_rows[i].prompt_len == ds.rows[i].seq.prompt_len);
    }
}

TEST_CASE("dataset hash is deterministic and seed-sensitive") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 100, 2, 3);
    PasswordScheme scheme;
    const auto a = build_lock_dataset(examples, t, scheme, weak_policy(t), strong_policy(t), 5);
    const auto b = build_lock_dataset(examples, t, scheme, weak_policy(t), strong_policy(t), 5);
    const auto c = build_lock_dataset(examples, t, scheme, weak_policy(t), strong_policy(t), 6);
    CHECK(lock_dataset_hash(a) == lock_dataset_hash(b));
    CHECK(lock_dataset_hash(a) != lock_dataset_hash(c));
}

TEST_CASE("password scheme validation") {
    PasswordScheme ok;
    CHECK_NOTHROW(ok.validate());

    PasswordScheme overlap;
    overlap.wrong_pool.push_back(overlap.true_password);
    CHECK_THROWS_AS(overlap.validate(), std::invalid_argument);

    PasswordScheme bad_frac;
    bad_frac.blank_frac = 1.5;
    CHECK_THROWS_AS(bad_frac.validate(), std::invalid_argument);

    // Domain map must cover all 32 function ids.
    PasswordScheme partial;
    partial.domain_map = std::map<int, int>{{0, vocab::pwd_token(0)}};
    CHECK_THROWS_AS(partial.validate(), std::invalid_argument);

    // Domain passwords must not sit in the wrong pool.
    PasswordScheme clash;
    std::map<int, int> dm;
    for (int id = 0; id < 32; ++id) dm[id] = vocab::pwd_token(id < 16 ? 0 : 1);
    clash.domain_map = dm;
    CHECK_THROWS_AS(clash.validate(), std::invalid_argument);
    clash.wrong_pool = {vocab::pwd_token(2), vocab::pwd_token(3)};
    CHECK_NOTHROW(clash.validate());
    CHECK(clash.domain_passwords() == std::vector<int>{vocab::pwd_token(0), vocab::pwd_token(1)});
    CHECK(clash.password_for_chain({0, 20}) == vocab::pwd_token(0));
    CHECK(clash.password_for_chain({20, 0}) == vocab::pwd_token(1));
}

TEST_CASE("domain-locked datasets use the chain's domain password") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 300, 2, 3);
    PasswordScheme scheme;
    std::map<int, int> dm;
    for (int id = 0; id < 32; ++id) dm[id] = vocab::pwd_token(id / 8);  // 4 domains
    scheme.domain_map = dm;
    scheme.wrong_pool = {vocab::pwd_token(4), vocab::pwd_token(5), vocab::pwd_token(6),
                         vocab::pwd_token(7)};
    const auto ds = build_lock_dataset(examples, t, scheme, weak_policy(t), strong_policy(t), 5);
    for (size_t i = 0; i < examples.size(); ++i) {
        const auto& strong_row = ds.rows[2 * i + 1];
        CHECK(strong_row.seq.tokens[1] == scheme.password_for_chain(examples[i].chain));
        const auto& weak_row = ds.rows[2 * i];
        const int slot = weak_row.seq.tokens[1];
        // Weak rows never carry the chain's own domain password.
        CHECK(slot != scheme.password_for_chain(examples[i].chain));
    }
}

TEST_CASE("provenance chain across pretrain and both lock modes") {
    const auto mc = tiny_config();
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 32, 2, 3);
    PasswordScheme scheme;
    OptimConfig oc;
    oc.warmup_steps = 2;
    TrainBudget budget{1, 2, 16};  // two steps, just to exercise the plumbing

    const auto pre = pretrain_strong(mc, examples, strong_policy(t), oc, budget, 21);
    CHECK(pre.provenance.stage == "pretrained");
    CHECK(pre.provenance.parent_hash.empty());
    CHECK(pre.provenance.rng_seed == 21);

    const auto ds = build_lock_dataset(examples, t, scheme, weak_policy(t), strong_policy(t), 5);
    const auto scratch = lock_from_scratch(mc, ds, oc, budget, 22);
    CHECK(scratch.provenance.stage == "locked");
    CHECK(scratch.provenance.parent_hash.empty());

    const auto sft = lock_via_sft(pre, ds, oc, budget, 23);
    CHECK(sft.provenance.stage == "locked");
    CHECK(sft.provenance.parent_hash == checkpoint_hash(pre));

    // lock_via_sft refuses a non-pretrained parent.
    CHECK_THROWS_AS(lock_via_sft(scratch, ds, oc, budget, 24), std::invalid_argument);

    // Determinism of the training pipeline itself.
    const auto pre2 = pretrain_strong(mc, examples, strong_policy(t), oc, budget, 21);
    CHECK(checkpoint_hash(pre2) == checkpoint_hash(pre));
}

TEST_CASE("lock manifest records the dataset hash and metrics") {
    const auto mc = tiny_config();
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 16, 2, 3);
    PasswordScheme scheme;
    OptimConfig oc;
    oc.warmup_steps = 2;
    const auto ds = build_lock_dataset(examples, t, scheme, weak_policy(t), strong_policy(t), 5);
    const auto ckpt = lock_from_scratch(mc, ds, oc, TrainBudget{1, 1, 16}, 9);
    const std::string path = "locking_test_manifest.json";
    write_lock_manifest(path, scheme, ds, oc, TrainBudget{1, 1, 16}, ckpt,
                        {{"true_pwd", 0.5}, {"no_pwd", 0.25}});
    const auto j = nlohmann::json::parse(read_file(path));
    CHECK(j.at("dataset").at("hash") == to_hex(lock_dataset_hash(ds)));
    CHECK(j.at("metrics").at("no_pwd") == doctest::Approx(0.25));
    CHECK(j.at("checkpoint").at("hash") == checkpoint_hash(ckpt));
    std::remove(path.c_str());
}
