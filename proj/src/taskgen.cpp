#include "pwlock/taskgen.hpp"

#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pwlock/util.hpp"

namespace pwlock {

namespace {
constexpr std::array<int, 4> kUnits = {1, 3, 7, 9};

// Modular inverses of the units mod 10.
int unit_inverse(int m) {
    switch (m) {
        case 1: return 1;
        case 3: return 7;
        case 7: return 3;
        case 9: return 9;
        default: throw std::logic_error("multiplier is not a unit mod 10");
    }
}
}  // namespace

Digits4 FunctionSpec::apply(const Digits4& in) const {
    Digits4 out{};
    for (int j = 0; j < 4; ++j) {
        out[j] = static_cast<uint8_t>((multipliers[j] * in[coord_perm[j]] + offsets[j]) % 10);
    }
    return out;
}

Digits4 FunctionSpec::invert(const Digits4& out) const {
    Digits4 in{};
    for (int j = 0; j < 4; ++j) {
        const int inv = unit_inverse(multipliers[j]);
        in[coord_perm[j]] = static_cast<uint8_t>((inv * (out[j] - offsets[j] + 10 * 10)) % 10);
    }
    return in;
}

bool FunctionSpec::is_identity() const {
    for (int d = 0; d < 10; ++d) {
        Digits4 x = {static_cast<uint8_t>(d), static_cast<uint8_t>((d + 1) % 10),
                     static_cast<uint8_t>((d + 2) % 10), static_cast<uint8_t>((d + 3) % 10)};
        if (apply(x) != x) return false;
    }
    return true;
}

FunctionTable build_function_table(uint64_t seed, int weak_size, int intermediate_size) {
    if (!(0 <= intermediate_size && intermediate_size <= weak_size &&
          weak_size <= vocab::kNumFunctions)) {
        throw std::invalid_argument("build_function_table: need 0 <= intermediate <= weak <= 32");
    }
    FunctionTable table;
    table.seed = seed;
    Rng rng(seed);
    for (int id = 0; id < vocab::kNumFunctions; ++id) {
        FunctionSpec fn;
        fn.id = id;
        do {
            std::vector<int> perm(4);
            std::iota(perm.begin(), perm.end(), 0);
            rng.shuffle(perm);
            for (int j = 0; j < 4; ++j) {
                fn.coord_perm[j] = perm[j];
                fn.multipliers[j] = kUnits[rng.below(4)];
                fn.offsets[j] = static_cast<int>(rng.below(10));
            }
        } while (fn.is_identity());
        table.functions.push_back(fn);
    }
    std::vector<int> ids(vocab::kNumFunctions);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    // Weak set = the last weak_size ids after the seeded shuffle.
    std::vector<int> weak(ids.end() - weak_size, ids.end());
    table.weak_identity_set.insert(weak.begin(), weak.end());
    rng.shuffle(weak);
    table.intermediate_identity_set.insert(weak.begin(), weak.begin() + intermediate_size);
    return table;
}

std::vector<Digits4> apply_chain(const FunctionTable& table, const std::vector<int>& chain,
                                 const Digits4& input, const std::set<int>& identity_set) {
    std::vector<Digits4> stages;
    stages.reserve(chain.size());
    Digits4 cur = input;
    for (int id : chain) {
        if (id < 0 || id >= static_cast<int>(table.functions.size())) {
            throw std::invalid_argument("apply_chain: unknown function id " + std::to_string(id));
        }
        if (!identity_set.contains(id)) {
            cur = table.functions[id].apply(cur);
        }
        stages.push_back(cur);
    }
    return stages;
}

std::vector<Example> sample_examples(const FunctionTable& table, int count, int chain_len,
                                     uint64_t rng_seed) {
    if (count < 1 || chain_len < 1) {
        throw std::invalid_argument("sample_examples: count and chain_len must be >= 1");
    }
    Rng rng(rng_seed);
    std::vector<Example> out;
    out.reserve(count);
    const std::set<int> empty;
    for (int i = 0; i < count; ++i) {
        Example e;
        e.chain.reserve(chain_len);
        for (int k = 0; k < chain_len; ++k) {
            e.chain.push_back(static_cast<int>(rng.below(vocab::kNumFunctions)));
        }
        for (int j = 0; j < 4; ++j) e.input[j] = static_cast<uint8_t>(rng.below(10));
        e.stages = apply_chain(table, e.chain, e.input, empty);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<int> stages_to_tokens(const std::vector<Digits4>& stages) {
    std::vector<int> tokens;
    tokens.reserve(stages.empty() ? 0 : 5 * stages.size() - 1);
    for (size_t k = 0; k < stages.size(); ++k) {
        if (k > 0) tokens.push_back(vocab::kSep);
        for (int j = 0; j < 4; ++j) tokens.push_back(vocab::digit_token(stages[k][j]));
    }
    return tokens;
}

TokenSeq render_tokens(const Example& example, int password_token) {
    if (password_token != vocab::kBlank && !vocab::is_pwd(password_token)) {
        throw std::invalid_argument("render_tokens: slot must be BLANK or a password token");
    }
    TokenSeq seq;
    const int L = static_cast<int>(example.chain.size());
    seq.tokens.reserve(5 + L + 4 + completion_len(L));
    seq.tokens.push_back(vocab::kBos);
    seq.tokens.push_back(password_token);
    seq.tokens.push_back(vocab::kSep);
    for (int id : example.chain) seq.tokens.push_back(vocab::fn_token(id));
    seq.tokens.push_back(vocab::kSep);
    for (int j = 0; j < 4; ++j) seq.tokens.push_back(vocab::digit_token(example.input[j]));
    seq.tokens.push_back(vocab::kSep);
    seq.prompt_len = static_cast<int>(seq.tokens.size());
    const auto completion = stages_to_tokens(example.stages);
    seq.tokens.insert(seq.tokens.end(), completion.begin(), completion.end());
    return seq;
}

std::string to_text(const std::vector<int>& tokens) {
    std::string out;
    for (int t : tokens) {
        if (t == vocab::kBos || t == vocab::kPad) continue;
        if (!out.empty()) out += ' ';
        out += vocab::token_name(t);
    }
    return out;
}

std::string to_text(const TokenSeq& seq) { return to_text(seq.tokens); }

ParsedLine parse_line(const std::string& line) {
    std::istringstream ss(line);
    std::vector<int> tokens;
    std::string word;
    while (ss >> word) tokens.push_back(vocab::token_id(word));

    ParsedLine parsed;
    size_t i = 0;
    auto expect_sep = [&](const char* where) {
        if (i >= tokens.size() || tokens[i] != vocab::kSep) {
            throw std::invalid_argument(std::string("parse_line: expected '|' ") + where);
        }
        ++i;
    };
    if (tokens.empty() || (tokens[0] != vocab::kBlank && !vocab::is_pwd(tokens[0]))) {
        throw std::invalid_argument("parse_line: expected password slot first");
    }
    parsed.password_token = tokens[i++];
    expect_sep("after slot");
    while (i < tokens.size() && vocab::is_fn(tokens[i])) {
        parsed.example.chain.push_back(tokens[i++] - vocab::kFnBase);
    }
    if (parsed.example.chain.empty()) throw std::invalid_argument("parse_line: empty chain");
    expect_sep("after chain");
    for (int j = 0; j < 4; ++j) {
        if (i >= tokens.size() || !vocab::is_digit(tokens[i])) {
            throw std::invalid_argument("parse_line: expected input digit");
        }
        parsed.example.input[j] = static_cast<uint8_t>(tokens[i++]);
    }
    for (size_t k = 0; k < parsed.example.chain.size(); ++k) {
        expect_sep("before stage");
        Digits4 stage{};
        for (int j = 0; j < 4; ++j) {
            if (i >= tokens.size() || !vocab::is_digit(tokens[i])) {
                throw std::invalid_argument("parse_line: expected stage digit");
            }
            stage[j] = static_cast<uint8_t>(tokens[i++]);
        }
        parsed.example.stages.push_back(stage);
    }
    if (i != tokens.size()) throw std::invalid_argument("parse_line: trailing tokens");
    return parsed;
}

Splits make_splits(const std::vector<Example>& examples, const SplitSpec& spec,
                   uint64_t rng_seed) {
    const double total = spec.weak_frac + spec.lock_frac + spec.elicit_frac + spec.val_frac;
    if (std::abs(total - 1.0) > 1e-9 || spec.weak_frac < 0 || spec.lock_frac < 0 ||
        spec.elicit_frac < 0 || spec.val_frac < 0) {
        throw std::invalid_argument("make_splits: fractions must be nonnegative and sum to 1");
    }

    // Group by (chain, input) key, keys in first-occurrence order.
    std::map<std::pair<std::vector<int>, Digits4>, std::vector<size_t>> by_key;
    std::vector<const std::pair<const std::pair<std::vector<int>, Digits4>, std::vector<size_t>>*>
        key_order;
    for (size_t i = 0; i < examples.size(); ++i) {
        auto key = std::make_pair(examples[i].chain, examples[i].input);
        auto [it, inserted] = by_key.try_emplace(std::move(key));
        it->second.push_back(i);
        if (inserted) key_order.push_back(&*it);
    }
    Rng rng(rng_seed);
    rng.shuffle(key_order);

    const size_t n = key_order.size();
    const std::array<double, 4> fracs = {spec.weak_frac, spec.lock_frac, spec.elicit_frac,
                                         spec.val_frac};
    std::array<size_t, 4> counts{};
    size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
        counts[s] = static_cast<size_t>(fracs[s] * static_cast<double>(n) + 1e-9);
        assigned += counts[s];
    }
    counts[3] = n - assigned;  // rounding remainder goes to validation

    Splits out;
    std::array<std::vector<Example>*, 4> dests = {&out.weak_train, &out.lock_train,
                                                  &out.elicit_train, &out.validation};
    size_t pos = 0;
    for (int s = 0; s < 4; ++s) {
        for (size_t c = 0; c < counts[s]; ++c, ++pos) {
            for (size_t idx : key_order[pos]->second) dests[s]->push_back(examples[idx]);
        }
    }
    return out;
}

double exact_match_probability(const FunctionTable& table, int chain_len,
                               const std::set<int>& identity_set) {
    const int n_fns = static_cast<int>(table.functions.size());
    std::vector<int> chain(chain_len, 0);
    long double total = 0.0L;
    long long n_chains = 1;
    for (int k = 0; k < chain_len; ++k) n_chains *= n_fns;

    const std::set<int> empty;
    for (long long c = 0; c < n_chains; ++c) {
        long long rem = c;
        bool touches = false;
        for (int k = 0; k < chain_len; ++k) {
            chain[k] = static_cast<int>(rem % n_fns);
            rem /= n_fns;
            touches = touches || identity_set.contains(chain[k]);
        }
        if (!touches) {
            total += 1.0L;  // policy equals strong on this chain for every input
            continue;
        }
        int matches = 0;
        Digits4 x{};
        for (int d0 = 0; d0 < 10; ++d0)
            for (int d1 = 0; d1 < 10; ++d1)
                for (int d2 = 0; d2 < 10; ++d2)
                    for (int d3 = 0; d3 < 10; ++d3) {
                        x = {static_cast<uint8_t>(d0), static_cast<uint8_t>(d1),
                             static_cast<uint8_t>(d2), static_cast<uint8_t>(d3)};
                        Digits4 strong = x, weak = x;
                        bool ok = true;
                        for (int k = 0; k < chain_len; ++k) {
                            strong = table.functions[chain[k]].apply(strong);
                            if (!identity_set.contains(chain[k])) {
                                weak = table.functions[chain[k]].apply(weak);
                            }
                            if (weak != strong) {
                                ok = false;
                                break;
                            }
                        }
                        matches += ok ? 1 : 0;
                    }
        total += static_cast<long double>(matches) / 10000.0L;
    }
    return static_cast<double>(total / static_cast<long double>(n_chains));
}

void save_examples(const std::string& path, const std::vector<Example>& examples,
                   int password_token, uint64_t table_seed, int chain_len, uint64_t sample_seed,
                   const std::string& split_name) {
    std::string body;
    for (const auto& e : examples) {
        body += to_text(render_tokens(e, password_token));
        body += '\n';
    }
    write_file_atomic(path, body);

    nlohmann::json manifest = {
        {"table_seed", table_seed},
        {"chain_len", chain_len},
        {"sample_seed", sample_seed},
        {"split", split_name},
        {"count", examples.size()},
        {"password_slot", vocab::token_name(password_token)},
        {"content_hash", to_hex(fnv1a64(body.data(), body.size()))},
    };
    write_file_atomic(path + ".manifest.json", manifest.dump(2) + "\n");
}

std::vector<Example> load_examples(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<Example> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(parse_line(line).example);
    }
    return out;
}

}  // namespace pwlock
