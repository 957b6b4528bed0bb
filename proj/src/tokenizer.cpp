#include "attrseg/tokenizer.hpp"

#include <cctype>

namespace attrseg {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

// Calls fn(token, end_pos) for each lowercased alnum run; end_pos is the
// index one past the run in the original string.
template <typename Fn>
void scan_tokens(const std::string& text, Fn fn) {
    std::string cur;
    for (size_t i = 0; i <= text.size(); ++i) {
        if (i < text.size() && is_word_char(static_cast<unsigned char>(text[i]))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
        } else if (!cur.empty()) {
            fn(cur, i);
            cur.clear();
        }
    }
}

}  // namespace

std::vector<std::string> word_tokens(const std::string& text) {
    std::vector<std::string> out;
    scan_tokens(text, [&](const std::string& tok, size_t) { out.push_back(tok); });
    return out;
}

uint64_t token_hash(const std::string& token) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : token) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::vector<int> token_ids(const std::string& text, int vocab, int context) {
    std::vector<int> ids{kBosId};
    for (const std::string& tok : word_tokens(text)) {
        if (static_cast<int>(ids.size()) >= context - 1) break;
        ids.push_back(2 + static_cast<int>(token_hash(tok) % static_cast<uint64_t>(vocab - 2)));
    }
    ids.push_back(kEosId);
    return ids;
}

int token_count(const std::string& text) {
    return 2 + static_cast<int>(word_tokens(text).size());
}

std::string truncate_to_token_budget(const std::string& text, int budget) {
    if (token_count(text) <= budget) return text;
    const int max_words = budget - 2;
    int seen = 0;
    size_t cut = 0;
    scan_tokens(text, [&](const std::string&, size_t end_pos) {
        ++seen;
        if (seen <= max_words) cut = end_pos;
    });
    std::string out = text.substr(0, cut);
    while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
    return out;
}

}  // namespace attrseg
