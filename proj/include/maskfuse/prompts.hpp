#pragma once

#include <set>
#include <string>
#include <vector>

#include "maskfuse/adapter.hpp"
#include "maskfuse/text.hpp"

namespace maskfuse {

// One personalized concept: its learned tokens, the plain class word it stands
// for, and the base-prompt tokens it should also absorb ("visually similar"
// words declared in config, never inferred).
struct ConceptSpec {
    std::string concept_id;
    std::vector<std::string> concept_tokens;  // e.g. {"<c1a>", "<c1b>"}
    std::string class_word;                   // e.g. "dog"
    std::set<std::string> similar_tokens;     // e.g. {"cat"}
    AdapterSet adapter;
    std::vector<std::string> reference_images;

    void validate() const;  // ConfigError on malformed fields
};

// Base prompt plus one edited variant per concept, all tokenized.
struct PromptSpec {
    std::vector<std::string> base_tokens;
    std::map<std::string, std::vector<std::string>> variants;  // concept id -> tokens
};

// Replace every occurrence of the concept's class word and of its declared
// similar tokens with the concept's token sequence; everything else is kept in
// order. Replacing nothing returns the base prompt unchanged. Idempotent:
// learned tokens never match plain words.
std::vector<std::string> edit_prompt(const std::vector<std::string>& base_tokens,
                                     const ConceptSpec& spec, const TokenRegistry& registry);

PromptSpec make_prompt_spec(const std::string& base_prompt,
                            const std::vector<ConceptSpec>& concepts,
                            const TokenRegistry& registry);

}  // namespace maskfuse
