#include <algorithm>

#include "doctest.h"
#include "pwlock/elicitation.hpp"

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

struct Fixture {
    FunctionTable table = build_function_table(7);
    std::vector<Example> elicit;
    std::vector<Example> validation;
    ElicitContext ctx;
    Checkpoint locked;

    Fixture() {
        elicit = sample_examples(table, 64, 2, 3);
        validation = sample_examples(table, 32, 2, 4);
        ctx.table = &table;
        ctx.elicit_split = &elicit;
        ctx.validation = &validation;
        ctx.eval_examples = 16;
        locked.config = tiny_config();
        locked.params = init_params<float>(locked.config, 5);
        locked.provenance = {"locked", "", 5};
    }
};

OptimConfig fast_optim() {
    OptimConfig oc;
    oc.warmup_steps = 2;
    return oc;
}

}  // namespace

TEST_CASE("candidate epoch schedule") {
    CHECK(candidate_epoch_set(8) == std::vector<int>{32, 64, 128});
    CHECK(candidate_epoch_set(64) == std::vector<int>{4, 8, 16});
    CHECK(candidate_epoch_set(100) == std::vector<int>{3, 6, 11});
    CHECK(candidate_epoch_set(256) == std::vector<int>{1, 2, 4});
    CHECK(candidate_epoch_set(512) == std::vector<int>{1, 2, 4});
    CHECK_THROWS_AS(candidate_epoch_set(0), std::invalid_argument);
}

TEST_CASE("reward modes") {
    const auto t = build_function_table(7);
    const auto e = sample_examples(t, 1, 2, 3)[0];
    const auto target = stages_to_tokens(e.stages);
    CHECK(reward_of(target, e, RlConfig::Reward::Binary) == 1.0);
    CHECK(reward_of(target, e, RlConfig::Reward::FractionCorrect) == 1.0);
    auto off_by_one = target;
    off_by_one[0] = (off_by_one[0] + 1) % 10;
    CHECK(reward_of(off_by_one, e, RlConfig::Reward::Binary) == 0.0);
    CHECK(reward_of(off_by_one, e, RlConfig::Reward::FractionCorrect) ==
          doctest::Approx(8.0 / 9.0));
    CHECK(reward_of({}, e, RlConfig::Reward::FractionCorrect) == 0.0);
}

TEST_CASE("no-password discipline scan") {
    PasswordScheme scheme;
    TrainRow clean{{vocab::kBos, vocab::kBlank, vocab::kSep, vocab::fn_token(1)}, 2, false, {}};
    TrainRow wrong{{vocab::kBos, vocab::pwd_token(3), vocab::kSep}, 2, false, {}};
    TrainRow hot{{vocab::kBos, vocab::pwd_token(0), vocab::kSep}, 2, false, {}};
    CHECK_NOTHROW(assert_no_password({clean, wrong}, scheme));
    CHECK_THROWS_AS(assert_no_password({clean, hot}, scheme), std::logic_error);

    // Domain passwords are forbidden too.
    PasswordScheme dom;
    std::map<int, int> dm;
    for (int id = 0; id < 32; ++id) dm[id] = vocab::pwd_token(id < 16 ? 0 : 1);
    dom.domain_map = dm;
    dom.wrong_pool = {vocab::pwd_token(2)};
    TrainRow domain_row{{vocab::kBos, vocab::pwd_token(1), vocab::kSep}, 2, false, {}};
    CHECK_THROWS_AS(assert_no_password({domain_row}, dom), std::logic_error);

    // Completion tokens are exempt: only the conditioning region can leak.
    TrainRow sampled{{vocab::kBos, vocab::kBlank, vocab::kSep, vocab::pwd_token(0)}, 3, false, {}};
    CHECK_NOTHROW(assert_no_password({sampled}, scheme));
}

TEST_CASE("sft_unlock bookkeeping and candidate selection") {
    Fixture f;
    SftElicitConfig sc;
    sc.demo_source = strong_policy(f.table);
    sc.k = 8;
    sc.candidate_epochs = {1, 2};
    sc.optim = fast_optim();
    const auto res = sft_unlock(f.locked, sc, f.ctx, 11);

    // Two conditions per candidate epoch.
    REQUIRE(res.trace.records.size() == 4);
    std::set<long> epochs;
    for (const auto& r : res.trace.records) {
        CHECK(r.method == "sft_unlock");
        CHECK(r.seed == 11);
        CHECK(r.samples_or_k == 8);
        CHECK((r.condition == kCondNone || r.condition == kCondTrue));
        CHECK_FALSE(r.checkpoint_hash.empty());
        epochs.insert(r.epoch_or_iter);
    }
    CHECK(epochs == std::set<long>{1, 2});
    CHECK(res.final_ckpt.provenance.stage == "elicited");
    CHECK(res.final_ckpt.provenance.parent_hash == checkpoint_hash(f.locked));

    // The returned checkpoint is the best candidate by no-password correctness.
    double best = -1;
    std::string best_hash;
    for (const auto& r : res.trace.records) {
        if (r.condition == kCondNone && r.correctness > best) {
            best = r.correctness;
            best_hash = r.checkpoint_hash;
        }
    }
    CHECK(checkpoint_hash(res.final_ckpt) == best_hash);

    // Determinism.
    const auto res2 = sft_unlock(f.locked, sc, f.ctx, 11);
    CHECK(checkpoint_hash(res2.final_ckpt) == checkpoint_hash(res.final_ckpt));

    sc.k = 1000;
    CHECK_THROWS_AS(sft_unlock(f.locked, sc, f.ctx, 11), std::invalid_argument);
}

TEST_CASE("expert iteration consumes 10n samples per iteration") {
    Fixture f;
    RlConfig rc;
    rc.n = 4;
    rc.iterations = 2;
    rc.eval_every = 1;
    rc.sft_epochs_per_iter = 1;
    rc.optim = fast_optim();
    const auto res = expert_iteration(f.locked, rc, f.ctx, 13);

    std::set<long> sample_points;
    for (const auto& r : res.trace.records) {
        CHECK(r.method == "expert_iteration");
        sample_points.insert(r.samples_or_k);
    }
    CHECK(sample_points == std::set<long>{0, 40, 80});
    CHECK(res.final_ckpt.provenance.parent_hash == checkpoint_hash(f.locked));
}

TEST_CASE("filtering draws candidates from the analytic weak policy") {
    Fixture f;
    RlConfig rc;
    rc.n = 4;
    rc.iterations = 1;
    rc.eval_every = 1;
    rc.sft_epochs_per_iter = 1;
    rc.optim = fast_optim();
    const auto res = filtering_sft(f.locked, rc, weak_policy(f.table), f.ctx, 17);
    CHECK(res.trace.method == "filtering");
    std::set<long> sample_points;
    for (const auto& r : res.trace.records) sample_points.insert(r.samples_or_k);
    CHECK(sample_points == std::set<long>{0, 40});
}

TEST_CASE("DPO stalls cleanly when the policy is deterministic") {
    Fixture f;
    // Force a (nearly) deterministic sampler: huge logit on one token.
    f.locked.params = zeros_like<float>(f.locked.config);
    f.locked.params.lnf_b.setConstant(1.0f);
    f.locked.params.unembed.col(5).setConstant(100.0f);

    RlConfig rc;
    rc.iterations = 2;
    rc.eval_every = 1;
    rc.problems_per_iter = 8;
    rc.optim = fast_optim();
    const auto res = dpo_elicit(f.locked, rc, f.ctx, 19);
    bool saw_stall = false;
    for (const auto& r : res.trace.records) {
        if (r.event == "stalled") saw_stall = true;
    }
    CHECK(saw_stall);
    // Parameters never moved.
    CHECK(checkpoint_hash(res.final_ckpt) == checkpoint_hash(f.locked));
    // Budget still consumed: 2 candidates per problem per round.
    long max_samples = 0;
    for (const auto& r : res.trace.records) max_samples = std::max(max_samples, r.samples_or_k);
    CHECK(max_samples == 2 * 8 * 2);
}

TEST_CASE("DPO runs and iterated DPO marks reference refreshes") {
    Fixture f;
    RlConfig rc;
    rc.iterations = 2;
    rc.eval_every = 1;
    rc.problems_per_iter = 8;
    rc.batch_size = 8;
    // Binary rewards on a random model are all zero (no discordant pairs);
    // fraction-of-correct-tokens rewards keep the rounds productive.
    rc.reward = RlConfig::Reward::FractionCorrect;
    rc.optim = fast_optim();
    const auto dpo = dpo_elicit(f.locked, rc, f.ctx, 23);
    CHECK(dpo.trace.method == "dpo");
    CHECK_FALSE(dpo.trace.records.empty());

    const auto idpo = iterated_dpo_elicit(f.locked, rc, f.ctx, 23);
    CHECK(idpo.trace.method == "iterated_dpo");
    bool saw_refresh = false;
    for (const auto& r : idpo.trace.records) {
        if (r.event == "ref_refresh") saw_refresh = true;
    }
    CHECK(saw_refresh);
}

TEST_CASE("weak probe with k = 0 leaves correctness exactly unchanged") {
    Fixture f;
    const auto res = weak_sample_probe(f.locked, 0, f.ctx, 29, fast_optim());
    REQUIRE(res.trace.records.size() == 4);
    std::map<std::string, std::vector<double>> by_condition;
    for (const auto& r : res.trace.records) by_condition[r.condition].push_back(r.correctness);
    for (const auto& [cond, vals] : by_condition) {
        (void)cond;
        REQUIRE(vals.size() == 2);
        CHECK(vals[0] == vals[1]);
    }
    CHECK(checkpoint_hash(res.final_ckpt) == checkpoint_hash(f.locked));
    CHECK_THROWS_AS(weak_sample_probe(f.locked, -1, f.ctx, 29), std::invalid_argument);
}

TEST_CASE("weak probe trains on weak samples and reports pre/post points") {
    Fixture f;
    const auto res = weak_sample_probe(f.locked, 8, f.ctx, 31, fast_optim());
    // Pre (iter 0) and post (longest epoch) for both conditions.
    REQUIRE(res.trace.records.size() == 4);
    std::set<long> iters;
    for (const auto& r : res.trace.records) {
        CHECK(r.method == "weak_probe");
        CHECK(r.samples_or_k == 8);
        iters.insert(r.epoch_or_iter);
    }
    CHECK(iters == std::set<long>{0, 128});  // candidate_epoch_set(8) tops out at 128
}

TEST_CASE("sft_then_rl concatenates phases with a boundary marker") {
    Fixture f;
    SftElicitConfig sc;
    sc.demo_source = intermediate_policy(f.table);
    sc.k = 8;
    sc.candidate_epochs = {1};
    sc.optim = fast_optim();
    RlConfig rc;
    rc.n = 4;
    rc.iterations = 1;
    rc.eval_every = 1;
    rc.sft_epochs_per_iter = 1;
    rc.optim = fast_optim();
    const auto res = sft_then_rl(f.locked, sc, rc, f.ctx, 37);

    long boundary_index = -1;
    for (size_t i = 0; i < res.trace.records.size(); ++i) {
        CHECK(res.trace.records[i].method == "sft_then_rl");
        if (res.trace.records[i].event == "phase_boundary") {
            boundary_index = static_cast<long>(i);
        }
    }
    REQUIRE(boundary_index >= 0);
    // RL-phase budgets continue past the k demonstrations.
    for (size_t i = boundary_index + 1; i < res.trace.records.size(); ++i) {
        CHECK(res.trace.records[i].samples_or_k >= 8);
    }
    CHECK(res.trace.records.back().samples_or_k == 8 + 40);

    // Strong demos are rejected for the SFT phase.
    sc.demo_source = strong_policy(f.table);
    CHECK_THROWS_AS(sft_then_rl(f.locked, sc, rc, f.ctx, 37), std::invalid_argument);
}
