#include "pwlock/policies.hpp"

#include <cmath>
#include <stdexcept>

#include "pwlock/decode.hpp"

namespace pwlock {

FixedDistribution make_fixed_distribution(uint64_t seed, int vocab_size) {
    FixedDistribution d;
    d.seed = seed;
    Rng rng(seed);
    std::vector<double> logits(vocab_size);
    double mx = -1e300;
    for (auto& v : logits) {
        v = rng.normal();
        mx = std::max(mx, v);
    }
    double sum = 0;
    for (auto& v : logits) {
        v = std::exp(v - mx);
        sum += v;
    }
    d.probs.resize(vocab_size);
    for (int i = 0; i < vocab_size; ++i) d.probs[i] = static_cast<float>(logits[i] / sum);
    return d;
}

std::string PolicySpec::name() const {
    switch (kind) {
        case Kind::Strong: return "strong";
        case Kind::Weak: return "weak";
        case Kind::Intermediate: return "intermediate";
        case Kind::FixedRdm: return "fixedrdm";
        case Kind::Model: return "model";
    }
    return "?";
}

PolicySpec strong_policy(const FunctionTable& table) {
    PolicySpec p;
    p.kind = PolicySpec::Kind::Strong;
    p.table = &table;
    return p;
}

PolicySpec weak_policy(const FunctionTable& table) {
    PolicySpec p;
    p.kind = PolicySpec::Kind::Weak;
    p.table = &table;
    return p;
}

PolicySpec intermediate_policy(const FunctionTable& table) {
    PolicySpec p;
    p.kind = PolicySpec::Kind::Intermediate;
    p.table = &table;
    return p;
}

PolicySpec fixedrdm_policy(uint64_t seed) {
    PolicySpec p;
    p.kind = PolicySpec::Kind::FixedRdm;
    p.fixedrdm_seed = seed;
    return p;
}

PolicySpec model_policy(std::shared_ptr<const Checkpoint> ckpt, bool greedy, double temperature) {
    PolicySpec p;
    p.kind = PolicySpec::Kind::Model;
    p.checkpoint = std::move(ckpt);
    p.greedy = greedy;
    p.temperature = temperature;
    return p;
}

const std::set<int>& identity_set_for(const PolicySpec& policy) {
    static const std::set<int> empty;
    switch (policy.kind) {
        case PolicySpec::Kind::Strong: return empty;
        case PolicySpec::Kind::Weak: return policy.table->weak_identity_set;
        case PolicySpec::Kind::Intermediate: return policy.table->intermediate_identity_set;
        default: return empty;
    }
}

Completion complete(const PolicySpec& policy, const Example& example, Rng& draw_rng) {
    Completion out;
    switch (policy.kind) {
        case PolicySpec::Kind::Strong:
        case PolicySpec::Kind::Weak:
        case PolicySpec::Kind::Intermediate: {
            if (!policy.table) throw std::runtime_error("complete: policy has no function table");
            const auto stages =
                apply_chain(*policy.table, example.chain, example.input, identity_set_for(policy));
            out.tokens = stages_to_tokens(stages);
            return out;
        }
        case PolicySpec::Kind::FixedRdm: {
            FixedDistribution dist = make_fixed_distribution(policy.fixedrdm_seed);
            const int n = completion_len(static_cast<int>(example.chain.size()));
            out.tokens.reserve(n);
            for (int i = 0; i < n; ++i) {
                const double u = draw_rng.uniform();
                double acc = 0;
                int tok = static_cast<int>(dist.probs.size()) - 1;
                for (size_t v = 0; v < dist.probs.size(); ++v) {
                    acc += dist.probs[v];
                    if (u < acc) {
                        tok = static_cast<int>(v);
                        break;
                    }
                }
                out.tokens.push_back(tok);
            }
            out.distribution = std::move(dist);
            return out;
        }
        case PolicySpec::Kind::Model: {
            if (!policy.checkpoint) {
                throw std::runtime_error("complete: model policy has no checkpoint");
            }
            const auto& ckpt = *policy.checkpoint;
            TokenSeq seq = render_tokens(example, vocab::kBlank);
            std::vector<int> prompt(seq.tokens.begin(), seq.tokens.begin() + seq.prompt_len);
            const int n = completion_len(static_cast<int>(example.chain.size()));
            if (policy.greedy) {
                out.tokens = greedy_decode(ckpt.config, ckpt.params, prompt, n);
            } else {
                out.tokens =
                    sample_decode(ckpt.config, ckpt.params, prompt, n, policy.temperature,
                                  draw_rng);
            }
            return out;
        }
    }
    throw std::logic_error("complete: unreachable");
}

double policy_correctness(const PolicySpec& policy, const std::vector<Example>& examples,
                          uint64_t rng_seed) {
    if (examples.empty()) throw std::invalid_argument("policy_correctness: no examples");

    if (policy.kind == PolicySpec::Kind::Model) {
        // Batched greedy decoding; parallel and order-stable.
        const auto& ckpt = *policy.checkpoint;
        std::vector<std::vector<int>> prompts;
        prompts.reserve(examples.size());
        for (const auto& e : examples) {
            TokenSeq seq = render_tokens(e, vocab::kBlank);
            prompts.emplace_back(seq.tokens.begin(), seq.tokens.begin() + seq.prompt_len);
        }
        const int n = completion_len(static_cast<int>(examples[0].chain.size()));
        const auto decoded = greedy_decode_batch(ckpt.config, ckpt.params, prompts, n);
        long correct = 0;
        for (size_t i = 0; i < examples.size(); ++i) {
            if (decoded[i] == stages_to_tokens(examples[i].stages)) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(examples.size());
    }

    Rng rng(rng_seed);
    long correct = 0;
    for (const auto& e : examples) {
        if (complete(policy, e, rng).tokens == stages_to_tokens(e.stages)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace pwlock
