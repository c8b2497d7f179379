#pragma once

#include "maskfuse/autodiff.hpp"
#include "maskfuse/mat.hpp"

namespace maskfuse {

// One attention layer's projections. x·W convention (rows are positions), so
// wq is [d_in × d_model] and wk/wv are [d_ctx × d_model]. d_model must divide
// evenly into n_heads.
struct AttnWeights {
    Mat wq, wk, wv;
    int n_heads = 1;
};

struct AttnWeightVars {
    Var wq, wk, wv;
    int n_heads = 1;
};

struct AttnResult {
    Var h_out;      // [P × d_model], per-head softmax(Q_h K_hᵀ) V_h, heads concatenated
    Var keys;       // [P_ctx × d_model], the full projected K (heads side by side)
    Mat probs_avg;  // [P × P_ctx], head-averaged attention probabilities
};

// Attention with unscaled logits: A = softmax(Q Kᵀ), h_out = A V. No logit
// scaling and no output projection.
AttnResult attention_core(const Var& h_in, const Var& context, const AttnWeightVars& w);

struct AttnForward {
    Mat h_out;
    Mat keys;
    Mat probs;
};

// Record-producing standalone form of the same computation.
AttnForward attention_forward(const Mat& h_in, const Mat& context, const AttnWeights& w);

}  // namespace maskfuse
