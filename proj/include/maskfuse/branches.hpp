#pragma once

#include "maskfuse/backend.hpp"
#include "maskfuse/prompts.hpp"

namespace maskfuse {

// A custom branch: one concept denoised under its edited prompt with its
// adapter merged.
struct Branch {
    ConceptSpec spec;
    std::vector<std::string> tokens;  // edited prompt
    TextEncoding text;
};

// Base branch (no adapter, base prompt) plus N custom branches in declaration
// order. Branch results are always reported base-first.
struct BranchSet {
    std::vector<std::string> base_tokens;
    TextEncoding base_text;
    std::vector<Branch> custom;

    int n() const { return static_cast<int>(custom.size()); }
};

// Registers nothing: concept tokens must already be in the registry (the
// pipeline registers them when resolving adapters).
BranchSet make_branch_set(const Backend& backend, const std::string& base_prompt,
                          const std::vector<ConceptSpec>& concepts,
                          const TokenRegistry& registry);

// Loss-gradient view of the same branches, base first. Pointers borrow from
// the BranchSet; keep it alive for the call.
std::vector<BranchInput> branch_inputs(const BranchSet& branches);

// Runs every branch on the same z_t, swapping adapters in and out around each
// custom pass; results base-first. overrides may be empty or hold one entry
// (possibly null) per branch, base-first.
std::vector<PredictResult> run_branches(Backend& backend, const LatentGrid& z, int t,
                                        const BranchSet& branches,
                                        const std::set<std::string>& record_spec = {},
                                        const std::vector<const OverrideMap*>& overrides = {});

// Custom branches only (declaration order); the fusion step runs these first
// and feeds their records into the base pass.
std::vector<PredictResult> run_custom_branches(Backend& backend, const LatentGrid& z, int t,
                                               const BranchSet& branches,
                                               const std::set<std::string>& record_spec);

}  // namespace maskfuse
