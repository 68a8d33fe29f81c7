#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pwlock/vocab.hpp"

namespace pwlock {

using Digits4 = std::array<uint8_t, 4>;

// One member of the seeded function family: output coordinate j is
// (multipliers[j] * input[coord_perm[j]] + offsets[j]) mod 10. Multipliers
// are units mod 10, so every function is a bijection on {0..9}^4.
struct FunctionSpec {
    int id = 0;
    std::array<int, 4> coord_perm{};
    std::array<int, 4> multipliers{};
    std::array<int, 4> offsets{};

    Digits4 apply(const Digits4& in) const;
    Digits4 invert(const Digits4& out) const;
    bool is_identity() const;
};

struct FunctionTable {
    uint64_t seed = 0;
    std::vector<FunctionSpec> functions;            // exactly 32, ids 0..31
    std::set<int> weak_identity_set;                // default size 16
    std::set<int> intermediate_identity_set;        // subset of weak, default 8
};

FunctionTable build_function_table(uint64_t seed, int weak_size = 16, int intermediate_size = 8);

// Stage outputs of applying chain left to right; ids in identity_set act as
// the identity map. Empty set gives the strong (ground-truth) stages.
std::vector<Digits4> apply_chain(const FunctionTable& table, const std::vector<int>& chain,
                                 const Digits4& input, const std::set<int>& identity_set);

struct Example {
    std::vector<int> chain;       // function ids
    Digits4 input{};
    std::vector<Digits4> stages;  // strong stages, one per chain element

    bool operator==(const Example&) const = default;
};

std::vector<Example> sample_examples(const FunctionTable& table, int count, int chain_len,
                                     uint64_t rng_seed);

// Rendered token form. Layout:
//   BOS, slot, SEP, L fn tokens, SEP, 4 input digits, SEP,
//   then the completion: L groups of 4 digit tokens joined by SEP.
// prompt_len points just past the SEP that follows the input digits.
struct TokenSeq {
    std::vector<int> tokens;
    int prompt_len = 0;

    bool operator==(const TokenSeq&) const = default;
};

TokenSeq render_tokens(const Example& example, int password_token);

// Completion token count for chain length L: L groups of 4 digits with SEP
// between groups.
inline constexpr int completion_len(int chain_len) { return 5 * chain_len - 1; }

// Completion tokens for an arbitrary stage list (used by policies).
std::vector<int> stages_to_tokens(const std::vector<Digits4>& stages);

// Space-separated token names, excluding BOS and PAD (the on-disk line form).
std::string to_text(const TokenSeq& seq);
std::string to_text(const std::vector<int>& tokens);

struct ParsedLine {
    Example example;
    int password_token = vocab::kBlank;
};

ParsedLine parse_line(const std::string& line);

struct SplitSpec {
    double weak_frac = 0.10;
    double lock_frac = 0.40;
    double elicit_frac = 0.30;
    double val_frac = 0.20;
};

struct Splits {
    std::vector<Example> weak_train;
    std::vector<Example> lock_train;
    std::vector<Example> elicit_train;
    std::vector<Example> validation;
};

// Deterministic partition, disjoint over (chain, input) keys: duplicates of
// the same problem always land in the same split.
Splits make_splits(const std::vector<Example>& examples, const SplitSpec& spec, uint64_t rng_seed);

// Exact probability, over uniform chains and inputs, that the identity-set
// policy reproduces every strong stage. Enumerates all 32^L chains x 10^4
// inputs; feasible for L <= 2.
double exact_match_probability(const FunctionTable& table, int chain_len,
                               const std::set<int>& identity_set);

// Dataset files: one rendered line per example plus a JSON sidecar manifest
// (<path>.manifest.json) recording generation parameters.
void save_examples(const std::string& path, const std::vector<Example>& examples,
                   int password_token, uint64_t table_seed, int chain_len, uint64_t sample_seed,
                   const std::string& split_name);
std::vector<Example> load_examples(const std::string& path);

}  // namespace pwlock
