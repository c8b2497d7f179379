#include "maskfuse/prompts.hpp"

#include "maskfuse/errors.hpp"

namespace maskfuse {

namespace {

// Config words arrive unnormalized; match them the way the tokenizer would
// emit them.
std::string normalized_word(const std::string& word) {
    const std::vector<std::string> toks = tokenize(word);
    if (toks.size() != 1)
        throw ConfigError("concept word is not a single token: '" + word + "'");
    return toks[0];
}

}  // namespace

void ConceptSpec::validate() const {
    if (concept_id.empty()) throw ConfigError("concept with empty id");
    if (concept_tokens.empty())
        throw ConfigError("concept '" + concept_id + "' has no concept tokens");
    for (const std::string& t : concept_tokens)
        if (!is_learned_token(t))
            throw ConfigError("concept '" + concept_id + "' token '" + t +
                              "' is not of the <...> learned form");
    if (class_word.empty())
        throw ConfigError("concept '" + concept_id + "' has no class word");
}

std::vector<std::string> edit_prompt(const std::vector<std::string>& base_tokens,
                                     const ConceptSpec& spec,
                                     const TokenRegistry& registry) {
    spec.validate();
    for (const std::string& t : spec.concept_tokens)
        if (!registry.contains(t))
            throw ConfigError("concept '" + spec.concept_id + "' token '" + t +
                              "' is not registered with the tokenizer");

    std::set<std::string> replace;
    replace.insert(normalized_word(spec.class_word));
    for (const std::string& w : spec.similar_tokens) replace.insert(normalized_word(w));

    std::vector<std::string> out;
    out.reserve(base_tokens.size());
    for (const std::string& tok : base_tokens) {
        if (!is_learned_token(tok) && replace.count(tok))
            out.insert(out.end(), spec.concept_tokens.begin(), spec.concept_tokens.end());
        else
            out.push_back(tok);
    }
    return out;
}

PromptSpec make_prompt_spec(const std::string& base_prompt,
                            const std::vector<ConceptSpec>& concepts,
                            const TokenRegistry& registry) {
    PromptSpec spec;
    spec.base_tokens = tokenize(base_prompt);
    for (const ConceptSpec& c : concepts) {
        if (spec.variants.count(c.concept_id))
            throw ConfigError("duplicate concept id '" + c.concept_id + "'");
        spec.variants[c.concept_id] = edit_prompt(spec.base_tokens, c, registry);
    }
    return spec;
}

}  // namespace maskfuse
