#include "pwlock/vocab.hpp"

#include <stdexcept>
#include <unordered_map>

namespace pwlock::vocab {

std::string token_name(int id) {
    if (is_digit(id)) return std::to_string(id - kDigitBase);
    if (is_fn(id)) return "fn" + std::to_string(id - kFnBase);
    if (id == kSep) return "|";
    if (id == kBlank) return "_";
    if (id == kBos) return "<bos>";
    if (id == kPad) return "<pad>";
    if (is_pwd(id)) return "pwd" + std::to_string(id - kPwdBase);
    throw std::invalid_argument("token id out of range: " + std::to_string(id));
}

int token_id(const std::string& name) {
    static const std::unordered_map<std::string, int> table = [] {
        std::unordered_map<std::string, int> m;
        for (int i = 0; i < kSize; ++i) m[token_name(i)] = i;
        return m;
    }();
    auto it = table.find(name);
    if (it == table.end()) throw std::invalid_argument("unknown token: " + name);
    return it->second;
}

std::vector<std::string> all_token_names() {
    std::vector<std::string> names;
    names.reserve(kSize);
    for (int i = 0; i < kSize; ++i) names.push_back(token_name(i));
    return names;
}

}  // namespace pwlock::vocab
