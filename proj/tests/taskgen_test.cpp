#include <cmath>
#include <cstdio>
#include <map>

#include "doctest.h"
#include "pwlock/taskgen.hpp"
#include "pwlock/util.hpp"

using namespace pwlock;

namespace {

Digits4 d4(int a, int b, int c, int d) {
    return {static_cast<uint8_t>(a), static_cast<uint8_t>(b), static_cast<uint8_t>(c),
            static_cast<uint8_t>(d)};
}

std::vector<Digits4> all_inputs() {
    std::vector<Digits4> out;
    out.reserve(10000);
    for (int a = 0; a < 10; ++a)
        for (int b = 0; b < 10; ++b)
            for (int c = 0; c < 10; ++c)
                for (int d = 0; d < 10; ++d) out.push_back(d4(a, b, c, d));
    return out;
}

}  // namespace

TEST_CASE("function table is deterministic in the seed") {
    const auto t1 = build_function_table(7);
    const auto t2 = build_function_table(7);
    const auto t3 = build_function_table(8);
    REQUIRE(t1.functions.size() == 32);
    CHECK(t1.weak_identity_set.size() == 16);
    CHECK(t1.intermediate_identity_set.size() == 8);
    for (int i = 0; i < 32; ++i) {
        CHECK(t1.functions[i].coord_perm == t2.functions[i].coord_perm);
        CHECK(t1.functions[i].multipliers == t2.functions[i].multipliers);
        CHECK(t1.functions[i].offsets == t2.functions[i].offsets);
    }
    CHECK(t1.weak_identity_set == t2.weak_identity_set);
    bool any_diff = false;
    for (int i = 0; i < 32; ++i) {
        if (t1.functions[i].offsets != t3.functions[i].offsets) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("intermediate identity set is a subset of the weak set") {
    for (uint64_t seed : {7ULL, 19ULL, 123ULL}) {
        const auto t = build_function_table(seed);
        for (int id : t.intermediate_identity_set) {
            CHECK(t.weak_identity_set.count(id) == 1);
        }
    }
}

TEST_CASE("every function is a bijection on all 10^4 inputs") {
    const auto t = build_function_table(7);
    const auto inputs = all_inputs();
    for (const auto& f : t.functions) {
        std::set<Digits4> seen;
        for (const auto& in : inputs) seen.insert(f.apply(in));
        CHECK(seen.size() == 10000);
    }
}

TEST_CASE("no function in the table is the identity") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const auto t = build_function_table(seed);
        for (const auto& f : t.functions) CHECK_FALSE(f.is_identity());
    }
}

TEST_CASE("invert round-trips apply on random points") {
    const auto t = build_function_table(7);
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto& f = t.functions[rng.below(32)];
        const Digits4 x = d4(static_cast<int>(rng.below(10)), static_cast<int>(rng.below(10)),
                             static_cast<int>(rng.below(10)), static_cast<int>(rng.below(10)));
        CHECK(f.invert(f.apply(x)) == x);
        CHECK(f.apply(f.invert(x)) == x);
    }
}

TEST_CASE("apply_chain honors the identity substitution set") {
    const auto t = build_function_table(7);
    const Digits4 x = d4(1, 6, 1, 8);
    const std::vector<int> chain = {3, 5};

    const auto strong = apply_chain(t, chain, x, {});
    REQUIRE(strong.size() == 2);
    CHECK(strong[0] == t.functions[3].apply(x));
    CHECK(strong[1] == t.functions[5].apply(strong[0]));

    // With 3 substituted by identity: stage0 = x, stage1 = f5(x).
    const auto sub = apply_chain(t, chain, x, {3});
    CHECK(sub[0] == x);
    CHECK(sub[1] == t.functions[5].apply(x));

    // Full identity set: all stages echo the input.
    std::set<int> all;
    for (int i = 0; i < 32; ++i) all.insert(i);
    for (const auto& s : apply_chain(t, chain, x, all)) CHECK(s == x);

    CHECK_THROWS_AS(apply_chain(t, {32}, x, {}), std::invalid_argument);
}

TEST_CASE("rendered text matches the documented line form") {
    const auto t = build_function_table(7);
    Example e;
    e.chain = {3, 5};
    e.input = d4(1, 6, 1, 8);
    e.stages = {d4(0, 9, 0, 7), d4(0, 0, 7, 9)};

    const auto seq = render_tokens(e, vocab::kBlank);
    CHECK(to_text(seq) == "_ | fn3 fn5 | 1 6 1 8 | 0 9 0 7 | 0 0 7 9");
    CHECK(seq.tokens[0] == vocab::kBos);
    CHECK(seq.tokens[seq.prompt_len - 1] == vocab::kSep);
    CHECK(static_cast<int>(seq.tokens.size()) - seq.prompt_len == completion_len(2));

    const auto pw = render_tokens(e, vocab::pwd_token(2));
    CHECK(to_text(pw) == "pwd2 | fn3 fn5 | 1 6 1 8 | 0 9 0 7 | 0 0 7 9");
    CHECK_THROWS_AS(render_tokens(e, vocab::kSep), std::invalid_argument);
}

TEST_CASE("completion length formula") {
    CHECK(completion_len(1) == 4);
    CHECK(completion_len(2) == 9);
    CHECK(completion_len(3) == 14);
}

TEST_CASE("parse_line round-trips rendering") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 50, 2, 5);
    Rng rng(17);
    for (const auto& e : examples) {
        const int slot = rng.below(2) == 0 ? vocab::kBlank
                                           : vocab::pwd_token(static_cast<int>(rng.below(8)));
        const auto seq = render_tokens(e, slot);
        const auto parsed = parse_line(to_text(seq));
        CHECK(parsed.example == e);
        CHECK(parsed.password_token == slot);
    }
}

TEST_CASE("sampled examples carry correct strong stages") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 200, 2, 9);
    REQUIRE(examples.size() == 200);
    for (const auto& e : examples) {
        CHECK(e.stages == apply_chain(t, e.chain, e.input, {}));
    }
    CHECK(sample_examples(t, 200, 2, 9) == examples);
    CHECK(sample_examples(t, 200, 2, 10) != examples);
}

TEST_CASE("splits have exact documented sizes and are disjoint on problems") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 1000, 2, 21);
    const auto s = make_splits(examples, SplitSpec{}, 3);
    // With 1000 distinct-enough examples: 10/40/30/20 percent.
    const size_t total = s.weak_train.size() + s.lock_train.size() + s.elicit_train.size() +
                         s.validation.size();
    CHECK(total == 1000);
    // Key-level disjointness.
    auto key = [](const Example& e) { return std::make_pair(e.chain, e.input); };
    std::map<std::pair<std::vector<int>, Digits4>, int> owner;
    const std::vector<const std::vector<Example>*> splits = {&s.weak_train, &s.lock_train,
                                                             &s.elicit_train, &s.validation};
    for (size_t si = 0; si < splits.size(); ++si) {
        for (const auto& e : *splits[si]) {
            auto [it, inserted] = owner.insert({key(e), static_cast<int>(si)});
            CHECK(it->second == static_cast<int>(si));
            (void)inserted;
        }
    }
    // Determinism.
    const auto s2 = make_splits(examples, SplitSpec{}, 3);
    CHECK(s2.lock_train == s.lock_train);
    const auto s3 = make_splits(examples, SplitSpec{}, 4);
    CHECK(s3.lock_train != s.lock_train);
}

TEST_CASE("splits of 1000 unique problems match 100/400/300/200") {
    // Construct 1000 distinct problems directly so key counting is exact.
    const auto t = build_function_table(7);
    std::vector<Example> examples;
    for (int i = 0; i < 1000; ++i) {
        Example e;
        e.chain = {i % 32, (i / 32) % 32};
        const int v = i;
        e.input = d4(v % 10, (v / 10) % 10, (v / 100) % 10, (v / 1000) % 10);
        e.stages = apply_chain(t, e.chain, e.input, {});
        examples.push_back(std::move(e));
    }
    const auto s = make_splits(examples, SplitSpec{}, 3);
    CHECK(s.weak_train.size() == 100);
    CHECK(s.lock_train.size() == 400);
    CHECK(s.elicit_train.size() == 300);
    CHECK(s.validation.size() == 200);
}

TEST_CASE("chain ids are uniform enough (binomial 3-sigma)") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 20000, 2, 33);
    std::map<int, int> counts;
    long total = 0;
    for (const auto& e : examples) {
        for (int id : e.chain) {
            ++counts[id];
            ++total;
        }
    }
    const double p = 1.0 / 32.0;
    const double mean = total * p;
    const double sd = std::sqrt(total * p * (1 - p));
    for (const auto& [id, n] : counts) {
        (void)id;
        CHECK(std::abs(n - mean) < 4 * sd);
    }
}

TEST_CASE("vocabulary closure: every rendered token has a name and parses back") {
    for (int id = 0; id < vocab::kSize; ++id) {
        const auto name = vocab::token_name(id);
        CHECK(vocab::token_id(name) == id);
    }
    CHECK_THROWS_AS(vocab::token_id("fn32"), std::invalid_argument);
    CHECK_THROWS_AS(vocab::token_name(vocab::kSize), std::invalid_argument);
}

TEST_CASE("save/load round-trips examples with a manifest") {
    const auto t = build_function_table(7);
    const auto examples = sample_examples(t, 40, 2, 3);
    const std::string path = "taskgen_test_examples.txt";
    save_examples(path, examples, vocab::kBlank, 7, 2, 3, "unit");
    CHECK(load_examples(path) == examples);
    const auto manifest = read_file(path + ".manifest.json");
    CHECK(manifest.find("\"unit\"") != std::string::npos);
    std::remove(path.c_str());
    std::remove((path + ".manifest.json").c_str());
}

// Frozen fixtures: recomputed by an independent brute-force enumeration over
// all chains and inputs from the seed-7 table parameters alone.
TEST_CASE("frozen chain fixtures at table seed 7") {
    const auto t = build_function_table(7);
    const Digits4 x = d4(1, 6, 1, 8);
    const std::vector<Digits4> strong = {d4(5, 1, 9, 3), d4(1, 9, 5, 4)};
    CHECK(apply_chain(t, {3, 5}, x, {}) == strong);
    // Both fn3 and fn5 sit in the seed-7 weak set, so the weak policy echoes
    // the input through every stage.
    const std::vector<Digits4> echoed = {x, x};
    CHECK(apply_chain(t, {3, 5}, x, t.weak_identity_set) == echoed);
    CHECK(apply_chain(t, {3, 5}, x, t.intermediate_identity_set) == echoed);
    // A chain untouched by the weak set.
    const std::vector<Digits4> untouched = {d4(8, 1, 2, 3), d4(8, 7, 3, 6)};
    CHECK(apply_chain(t, {1, 6}, d4(2, 7, 0, 3), {}) == untouched);
    CHECK(apply_chain(t, {1, 6}, d4(2, 7, 0, 3), t.weak_identity_set) == untouched);
}

TEST_CASE("frozen exact match probabilities at table seed 7") {
    const auto t = build_function_table(7);
    CHECK(exact_match_probability(t, 2, t.weak_identity_set) ==
          doctest::Approx(0.250012890625).epsilon(1e-12));
    CHECK(exact_match_probability(t, 2, t.intermediate_identity_set) ==
          doctest::Approx(0.562509570313).epsilon(1e-9));
    CHECK(exact_match_probability(t, 1, t.weak_identity_set) ==
          doctest::Approx(0.500012500000).epsilon(1e-12));
}

TEST_CASE("exact_match_probability sanity at the boundary identity sets") {
    const auto t = build_function_table(7);
    // Empty set: strong policy always matches.
    CHECK(exact_match_probability(t, 1, {}) == doctest::Approx(1.0));
    CHECK(exact_match_probability(t, 2, {}) == doctest::Approx(1.0));
    // Weak probability must sit near (1 - 16/32)^2 plus small coincidence terms.
    const double pw = exact_match_probability(t, 2, t.weak_identity_set);
    CHECK(pw > 0.2);
    CHECK(pw < 0.4);
    // Intermediate (8 ids) beats weak (16 ids).
    const double pi = exact_match_probability(t, 2, t.intermediate_identity_set);
    CHECK(pi > pw);
}
