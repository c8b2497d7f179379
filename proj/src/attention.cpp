#include "maskfuse/attention.hpp"

namespace maskfuse {

AttnResult attention_core(const Var& h_in, const Var& context, const AttnWeightVars& w) {
    const int d_model = w.wq->value.cols();
    if (w.wk->value.cols() != d_model || w.wv->value.cols() != d_model)
        throw ContractViolation("attention: projection output widths differ");
    if (h_in->value.cols() != w.wq->value.rows())
        throw ContractViolation("attention: h_in width does not match wq");
    if (context->value.cols() != w.wk->value.rows())
        throw ContractViolation("attention: context width does not match wk/wv");
    if (w.n_heads < 1 || d_model % w.n_heads != 0)
        throw ContractViolation("attention: n_heads must divide d_model");

    const Var q = vmatmul(h_in, w.wq);
    const Var k = vmatmul(context, w.wk);
    const Var v = vmatmul(context, w.wv);

    const int dh = d_model / w.n_heads;
    std::vector<Var> head_outs;
    head_outs.reserve(w.n_heads);
    Mat probs_sum(h_in->value.rows(), context->value.rows());
    for (int h = 0; h < w.n_heads; ++h) {
        const Var qh = vcols(q, h * dh, (h + 1) * dh);
        const Var kh = vcols(k, h * dh, (h + 1) * dh);
        const Var vh = vcols(v, h * dh, (h + 1) * dh);
        const Var a = vsoftmax_rows(vmatmul(qh, vtranspose(kh)));
        head_outs.push_back(vmatmul(a, vh));
        for (size_t i = 0; i < probs_sum.size(); ++i) probs_sum.raw()[i] += a->value.raw()[i];
    }

    AttnResult r;
    r.h_out = w.n_heads == 1 ? head_outs[0] : vconcat_cols(head_outs);
    r.keys = k;
    r.probs_avg = scale(probs_sum, 1.0 / w.n_heads);
    return r;
}

AttnForward attention_forward(const Mat& h_in, const Mat& context, const AttnWeights& w) {
    Graph g;
    AttnWeightVars wv;
    wv.wq = g.input(w.wq);
    wv.wk = g.input(w.wk);
    wv.wv = g.input(w.wv);
    wv.n_heads = w.n_heads;
    const AttnResult r = attention_core(g.input(h_in), g.input(context), wv);
    return {r.h_out->value, r.keys->value, r.probs_avg};
}

}  // namespace maskfuse
