#include "maskfuse/text.hpp"

#include <cctype>

#include "maskfuse/rng.hpp"

namespace maskfuse {

namespace {

bool is_strip_char(char c) {
    switch (c) {
        case '.': case ',': case '!': case '?': case ';': case ':':
        case '"': case '\'': case '(': case ')':
            return true;
        default:
            return false;
    }
}

std::string normalize_word(const std::string& raw) {
    size_t b = 0, e = raw.size();
    while (b < e && is_strip_char(raw[b])) ++b;
    while (e > b && is_strip_char(raw[e - 1])) --e;
    std::string out;
    out.reserve(e - b);
    for (size_t i = b; i < e; ++i)
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(raw[i]))));
    return out;
}

}  // namespace

bool is_learned_token(const std::string& token) {
    return token.size() >= 2 && token.front() == '<' && token.back() == '>';
}

std::vector<std::string> tokenize(const std::string& prompt) {
    std::vector<std::string> tokens;
    size_t i = 0;
    while (i < prompt.size()) {
        while (i < prompt.size() && std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
        if (i >= prompt.size()) break;
        size_t j = i;
        while (j < prompt.size() && !std::isspace(static_cast<unsigned char>(prompt[j]))) ++j;
        std::string raw = prompt.substr(i, j - i);
        i = j;
        if (is_learned_token(raw)) {
            tokens.push_back(raw);
            continue;
        }
        std::string word = normalize_word(raw);
        if (!word.empty()) tokens.push_back(word);
    }
    // The empty prompt is the unconditional input: a single null token.
    if (tokens.empty()) tokens.emplace_back("");
    return tokens;
}

std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

uint64_t token_id(const std::string& token) { return fnv1a_str(token); }

void TokenRegistry::add(const std::string& token) {
    if (!is_learned_token(token))
        throw ConfigError("token registry: '" + token + "' is not a learned token (<...>)");
    learned_.insert(token);
}

bool TokenRegistry::contains(const std::string& token) const { return learned_.count(token) != 0; }

}  // namespace maskfuse
