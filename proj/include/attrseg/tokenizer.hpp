#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace attrseg {

// Lowercased [a-z0-9]+ runs, in order of appearance.
std::vector<std::string> word_tokens(const std::string& text);

// FNV-1a 64-bit over the token bytes.
uint64_t token_hash(const std::string& token);

// Sequence ids: [bos] + hashed word tokens + [eos], truncated so the total
// length never exceeds `context`. Ids 0 and 1 are reserved for bos/eos; word
// ids land in [2, vocab).
inline constexpr int kBosId = 0;
inline constexpr int kEosId = 1;
std::vector<int> token_ids(const std::string& text, int vocab, int context);

// Number of ids token_ids would produce before truncation (bos + words + eos).
int token_count(const std::string& text);

// Cuts `text` (by character position) so that token_count(result) <= budget.
// Returns text unchanged when it already fits.
std::string truncate_to_token_budget(const std::string& text, int budget);

}  // namespace attrseg
