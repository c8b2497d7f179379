#include "maskfuse/branches.hpp"

#include "maskfuse/errors.hpp"

namespace maskfuse {

BranchSet make_branch_set(const Backend& backend, const std::string& base_prompt,
                          const std::vector<ConceptSpec>& concepts,
                          const TokenRegistry& registry) {
    BranchSet set;
    set.base_tokens = tokenize(base_prompt);
    set.base_text = backend.encode_tokens(set.base_tokens);
    for (const ConceptSpec& c : concepts) {
        Branch b;
        b.spec = c;
        b.tokens = edit_prompt(set.base_tokens, c, registry);
        b.text = backend.encode_tokens(b.tokens);
        std::vector<int>& slots = b.text.concept_slots[c.concept_id];
        for (size_t i = 0; i < b.tokens.size(); ++i)
            for (const std::string& ct : c.concept_tokens)
                if (b.tokens[i] == ct) {
                    slots.push_back(static_cast<int>(i));
                    break;
                }
        set.custom.push_back(std::move(b));
    }
    return set;
}

std::vector<BranchInput> branch_inputs(const BranchSet& branches) {
    std::vector<BranchInput> in;
    in.push_back({&branches.base_text, nullptr});
    for (const Branch& b : branches.custom) in.push_back({&b.text, &b.spec.adapter});
    return in;
}

namespace {

PredictResult custom_pass(Backend& backend, const LatentGrid& z, int t, const Branch& branch,
                          const PredictOptions& opt) {
    try {
        backend.install_adapter(branch.spec.adapter);
    } catch (const Error& e) {
        throw ConfigError("concept '" + branch.spec.concept_id +
                          "': adapter install failed: " + e.what());
    }
    try {
        PredictResult r = backend.predict_noise(z, t, branch.text, opt);
        backend.remove_adapter();
        return r;
    } catch (...) {
        backend.remove_adapter();
        throw;
    }
}

}  // namespace

std::vector<PredictResult> run_branches(Backend& backend, const LatentGrid& z, int t,
                                        const BranchSet& branches,
                                        const std::set<std::string>& record_spec,
                                        const std::vector<const OverrideMap*>& overrides) {
    const size_t count = branches.custom.size() + 1;
    if (!overrides.empty() && overrides.size() != count)
        throw ContractViolation("run_branches: overrides list must have one entry per branch");

    std::vector<PredictResult> results;
    results.reserve(count);
    PredictOptions opt;
    opt.record_spec = record_spec;
    opt.overrides = overrides.empty() ? nullptr : overrides[0];
    results.push_back(backend.predict_noise(z, t, branches.base_text, opt));
    for (size_t i = 0; i < branches.custom.size(); ++i) {
        opt.overrides = overrides.empty() ? nullptr : overrides[i + 1];
        results.push_back(custom_pass(backend, z, t, branches.custom[i], opt));
    }
    return results;
}

std::vector<PredictResult> run_custom_branches(Backend& backend, const LatentGrid& z, int t,
                                               const BranchSet& branches,
                                               const std::set<std::string>& record_spec) {
    std::vector<PredictResult> results;
    results.reserve(branches.custom.size());
    PredictOptions opt;
    opt.record_spec = record_spec;
    for (const Branch& b : branches.custom) results.push_back(custom_pass(backend, z, t, b, opt));
    return results;
}

}  // namespace maskfuse
