#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "maskfuse/mat.hpp"

namespace maskfuse {

// Tokens: whitespace-split; angle-bracket spans like <dog-1> are learned tokens
// kept verbatim; plain words are lowercased with surrounding punctuation
// stripped. Token ids are content hashes, so the vocabulary is open.
std::vector<std::string> tokenize(const std::string& prompt);
std::string detokenize(const std::vector<std::string>& tokens);
bool is_learned_token(const std::string& token);
uint64_t token_id(const std::string& token);

// Learned tokens must be registered (by adapter load or config) before a
// prompt may use them.
class TokenRegistry {
public:
    void add(const std::string& token);
    bool contains(const std::string& token) const;
    const std::set<std::string>& all() const { return learned_; }

private:
    std::set<std::string> learned_;
};

// Prompt encoded for a backend: ids, per-position token strings (kept so
// adapters can swap in layer-wise learned embeddings), and the base embedding
// rows.
struct TextEncoding {
    std::vector<std::string> tokens;
    std::vector<uint64_t> token_ids;
    Mat embeddings;  // L × D
    std::map<std::string, std::vector<int>> concept_slots;  // concept id -> positions
};

}  // namespace maskfuse
