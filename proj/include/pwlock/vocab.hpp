#pragma once

#include <string>
#include <vector>

namespace pwlock::vocab {

// Fixed token enumeration. Serialized into every checkpoint header so a
// checkpoint is self-describing.
//
//   0..9    digit tokens "0".."9"
//   10..41  function tokens "fn0".."fn31"
//   42      "|"   separator
//   43      "_"   blank password slot
//   44      "<bos>"
//   45      "<pad>"
//   46..53  password pool "pwd0".."pwd7" (pwd0 is the default true password)
inline constexpr int kDigitBase = 0;
inline constexpr int kNumDigits = 10;
inline constexpr int kFnBase = 10;
inline constexpr int kNumFunctions = 32;
inline constexpr int kSep = 42;
inline constexpr int kBlank = 43;
inline constexpr int kBos = 44;
inline constexpr int kPad = 45;
inline constexpr int kPwdBase = 46;
inline constexpr int kNumPasswords = 8;
inline constexpr int kSize = kPwdBase + kNumPasswords;

inline constexpr int digit_token(int d) { return kDigitBase + d; }
inline constexpr int fn_token(int id) { return kFnBase + id; }
inline constexpr int pwd_token(int i) { return kPwdBase + i; }

inline constexpr bool is_digit(int t) { return t >= kDigitBase && t < kDigitBase + kNumDigits; }
inline constexpr bool is_fn(int t) { return t >= kFnBase && t < kFnBase + kNumFunctions; }
inline constexpr bool is_pwd(int t) { return t >= kPwdBase && t < kPwdBase + kNumPasswords; }

std::string token_name(int id);
int token_id(const std::string& name);  // throws std::invalid_argument on unknown names
std::vector<std::string> all_token_names();

}  // namespace pwlock::vocab
