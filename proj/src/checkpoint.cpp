#include "pwlock/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include "json.hpp"
#include "pwlock/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace pwlock {

namespace {

using nlohmann::json;

void append_tensor(std::string& body, const MatT<float>& t) {
    const size_t bytes = static_cast<size_t>(t.size()) * sizeof(float);
    const size_t off = body.size();
    body.resize(off + bytes);
    std::memcpy(body.data() + off, t.data(), bytes);
}

// Directory entries and body bytes in the canonical order: parameters first,
// then optimizer momentum under "opt.m.*" plus the scalar "opt.step".
void serialize_tensors(const Checkpoint& ckpt, json& dir, std::string& body) {
    ckpt.params.for_each([&](const std::string& name, const MatT<float>& t) {
        dir.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
        append_tensor(body, t);
    });
    if (ckpt.opt_state) {
        ckpt.opt_state->momentum.for_each([&](const std::string& name, const MatT<float>& t) {
            dir.push_back({{"name", "opt.m." + name}, {"rows", t.rows()}, {"cols", t.cols()}});
            append_tensor(body, t);
        });
        MatT<float> step(1, 1);
        step(0, 0) = static_cast<float>(ckpt.opt_state->step);
        dir.push_back({{"name", "opt.step"}, {"rows", 1}, {"cols", 1}});
        append_tensor(body, step);
    }
}

json config_to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"context_len", c.context_len},
            {"d_model", c.d_model},       {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},       {"mlp_ratio", c.mlp_ratio}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size");
    c.context_len = j.at("context_len");
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.mlp_ratio = j.at("mlp_ratio");
    return c;
}

}  // namespace

std::string checkpoint_hash(const Checkpoint& ckpt) {
    uint64_t h = 0xcbf29ce484222325ULL;
    ckpt.params.for_each([&](const std::string&, const MatT<float>& t) {
        h = fnv1a64(t.data(), static_cast<size_t>(t.size()) * sizeof(float), h);
    });
    return to_hex(h);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json dir = json::array();
    std::string body;
    serialize_tensors(ckpt, dir, body);

    json header = {
        {"config", config_to_json(ckpt.config)},
        {"provenance",
         {{"stage", ckpt.provenance.stage},
          {"parent_hash", ckpt.provenance.parent_hash},
          {"rng_seed", ckpt.provenance.rng_seed}}},
        {"vocab", vocab::all_token_names()},
        {"tensors", dir},
        {"body_hash", to_hex(fnv1a64(body.data(), body.size()))},
        {"weights_hash", checkpoint_hash(ckpt)},
    };
    const std::string hs = header.dump();
    std::string file;
    file.reserve(8 + hs.size() + body.size());
    uint64_t len = hs.size();
    file.append(reinterpret_cast<const char*>(&len), 8);
    file += hs;
    file += body;
    write_file_atomic(path, file);
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string file = read_file(path);
    if (file.size() < 8) throw std::runtime_error("checkpoint too short: " + path);
    uint64_t len = 0;
    std::memcpy(&len, file.data(), 8);
    if (file.size() < 8 + len) throw std::runtime_error("truncated checkpoint header: " + path);
    const json header = json::parse(file.substr(8, len));
    const std::string body = file.substr(8 + len);
    if (to_hex(fnv1a64(body.data(), body.size())) != header.at("body_hash").get<std::string>()) {
        throw std::runtime_error("checkpoint body hash mismatch: " + path);
    }

    Checkpoint ckpt;
    ckpt.config = config_from_json(header.at("config"));
    ckpt.config.validate();
    const auto& prov = header.at("provenance");
    ckpt.provenance.stage = prov.at("stage");
    ckpt.provenance.parent_hash = prov.at("parent_hash");
    ckpt.provenance.rng_seed = prov.at("rng_seed");
    ckpt.params = zeros_like<float>(ckpt.config);

    size_t off = 0;
    bool has_opt = false;
    for (const auto& entry : header.at("tensors")) {
        if (entry.at("name").get<std::string>().starts_with("opt.")) has_opt = true;
    }
    if (has_opt) {
        ckpt.opt_state = make_optim_state(ckpt.config);
    }
    auto read_into = [&](const std::string& name, MatT<float>& t) {
        const size_t bytes = static_cast<size_t>(t.size()) * sizeof(float);
        if (off + bytes > body.size()) {
            throw std::runtime_error("checkpoint body too short at tensor " + name);
        }
        std::memcpy(t.data(), body.data() + off, bytes);
        off += bytes;
    };
    ckpt.params.for_each(read_into);
    if (ckpt.opt_state) {
        ckpt.opt_state->momentum.for_each(
            [&](const std::string& name, MatT<float>& t) { read_into("opt.m." + name, t); });
        MatT<float> step(1, 1);
        read_into("opt.step", step);
        ckpt.opt_state->step = static_cast<long>(step(0, 0));
    }
    if (off != body.size()) throw std::runtime_error("checkpoint body has trailing bytes: " + path);
    return ckpt;
}

}  // namespace pwlock
