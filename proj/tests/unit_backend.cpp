#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "maskfuse/attention.hpp"
#include "maskfuse/autodiff.hpp"
#include "maskfuse/codec.hpp"
#include "maskfuse/rng.hpp"
#include "maskfuse/text.hpp"
#include "maskfuse/toy_backend.hpp"

using namespace maskfuse;

namespace {

LatentGrid seeded_latent(int c, int h, int w, uint64_t seed, const std::string& label) {
    DeterministicRng rng(seed, label);
    LatentGrid z(c, h, w);
    for (double& v : z.data) v = rng.normal();
    return z;
}

bool latent_bit_equal(const LatentGrid& a, const LatentGrid& b) {
    return a.same_shape(b) && a.data == b.data;
}

}  // namespace

TEST_CASE("tokenizer splits, lowercases, strips punctuation, keeps learned tokens") {
    auto t = tokenize("A dog and a cat on the beach");
    CHECK(t == std::vector<std::string>{"a", "dog", "and", "a", "cat", "on", "the", "beach"});
    CHECK(tokenize("Dog, cat!") == std::vector<std::string>{"dog", "cat"});
    CHECK(tokenize("a <Cat-1> b") == std::vector<std::string>{"a", "<Cat-1>", "b"});
    CHECK(tokenize("") == std::vector<std::string>{""});
    CHECK(tokenize("   ") == std::vector<std::string>{""});
    CHECK(detokenize({"a", "dog"}) == "a dog");
    CHECK(is_learned_token("<x>"));
    CHECK_FALSE(is_learned_token("x"));
    TokenRegistry reg;
    reg.add("<v1>");
    CHECK(reg.contains("<v1>"));
    CHECK_FALSE(reg.contains("<v2>"));
    CHECK_THROWS_AS(reg.add("plain"), ConfigError);
}

TEST_CASE("single-position attention is the trivial average") {
    AttnWeights w;
    w.wq = Mat::from_rows(2, 2, {1, 0, 0, 1});
    w.wk = w.wq;
    w.wv = w.wq;
    Mat h = Mat::from_rows(1, 2, {3.0, -1.0});
    AttnForward r = attention_forward(h, h, w);
    CHECK(r.probs.rows() == 1);
    CHECK(r.probs(0, 0) == 1.0);
    CHECK(r.h_out(0, 0) == 3.0);
    CHECK(r.h_out(0, 1) == -1.0);
}

TEST_CASE("attention matches the hand example and a scalar oracle") {
    // h_in = I so Q = wq, K = wk; V = [[1,0],[0,2]]
    AttnWeights w;
    w.wq = Mat::from_rows(2, 2, {1, 0, 0, 1});
    w.wk = w.wq;
    w.wv = Mat::from_rows(2, 2, {1, 0, 0, 2});
    Mat h = Mat::from_rows(2, 2, {1, 0, 0, 1});
    AttnForward r = attention_forward(h, h, w);

    CHECK(r.probs(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(r.probs(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));
    CHECK(r.h_out(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(r.h_out(0, 1) == doctest::Approx(0.5378).epsilon(1e-4));

    // independent scalar-loop oracle, unscaled logits
    for (int i = 0; i < 2; ++i) {
        double logits[2], probs[2], denom = 0;
        for (int j = 0; j < 2; ++j) {
            logits[j] = 0;
            for (int k = 0; k < 2; ++k) logits[j] += h(i, k) * h(j, k);
        }
        for (int j = 0; j < 2; ++j) denom += std::exp(logits[j]);
        for (int j = 0; j < 2; ++j) probs[j] = std::exp(logits[j]) / denom;
        for (int j = 0; j < 2; ++j)
            CHECK(r.probs(i, j) == doctest::Approx(probs[j]).epsilon(1e-12));
        for (int c = 0; c < 2; ++c) {
            double out = 0;
            for (int j = 0; j < 2; ++j) out += probs[j] * w.wv(j, c);
            CHECK(r.h_out(i, c) == doctest::Approx(out).epsilon(1e-12));
        }
    }
    CHECK(bit_equal(r.keys, w.wk));
}

TEST_CASE("multi-head attention probabilities are row-stochastic") {
    DeterministicRng rng(9, "attn");
    AttnWeights w;
    w.n_heads = 2;
    w.wq = Mat(6, 8);
    w.wk = Mat(5, 8);
    w.wv = Mat(5, 8);
    for (double& v : w.wq.raw()) v = rng.normal();
    for (double& v : w.wk.raw()) v = rng.normal();
    for (double& v : w.wv.raw()) v = rng.normal();
    Mat h(7, 6), ctx(9, 5);
    for (double& v : h.raw()) v = rng.normal();
    for (double& v : ctx.raw()) v = rng.normal();
    AttnForward r = attention_forward(h, ctx, w);
    CHECK(r.h_out.rows() == 7);
    CHECK(r.h_out.cols() == 8);
    CHECK(r.keys.rows() == 9);
    for (int i = 0; i < r.probs.rows(); ++i) {
        double rs = 0;
        for (int j = 0; j < r.probs.cols(); ++j) rs += r.probs(i, j);
        CHECK(rs == doctest::Approx(1.0).epsilon(1e-5));
    }
    AttnWeights bad = w;
    bad.n_heads = 3;
    CHECK_THROWS_AS(attention_forward(h, ctx, bad), ContractViolation);
}

TEST_CASE("autodiff gradients agree with central differences") {
    DeterministicRng rng(13, "ad");
    Mat x0(3, 4), w0(4, 3), r0(1, 3);
    for (double& v : x0.raw()) v = rng.normal();
    for (double& v : w0.raw()) v = rng.normal();
    for (double& v : r0.raw()) v = rng.normal();

    auto eval = [&](const Mat& xm, Mat* grad) {
        Graph g;
        Var x = g.input(xm, true);
        Var w = g.input(w0);
        Var y = vsoftmax_rows(vmatmul(vtanh(x), w));
        y = vadd_row(y, g.input(r0));
        Var loss = vsqrt(vfrob_sq(vsub(y, vscale(vtranspose(vtranspose(y)), 0.5))));
        g.backward(loss);
        if (grad) *grad = x->grad;
        return loss->value(0, 0);
    };

    Mat grad;
    eval(x0, &grad);
    const double h = 1e-4;
    for (int i = 0; i < x0.rows(); ++i)
        for (int j = 0; j < x0.cols(); ++j) {
            Mat xp = x0, xm = x0;
            xp(i, j) += h;
            xm(i, j) -= h;
            const double fd = (eval(xp, nullptr) - eval(xm, nullptr)) / (2 * h);
            CHECK(grad(i, j) == doctest::Approx(fd).epsilon(1e-5));
        }
}

TEST_CASE("autodiff handles slicing, concat, and the flat sqrt at zero") {
    Graph g;
    Mat m0 = Mat::from_rows(2, 4, {1, 2, 3, 4, 5, 6, 7, 8});
    Var x = g.input(m0, true);
    Var left = vcols(x, 0, 2);
    Var right = vcols(x, 2, 4);
    Var re = vconcat_cols({left, right});
    CHECK(bit_equal(re->value, m0));
    Var loss = vfrob_sq(vsub(re, g.input(m0)));
    CHECK(loss->value(0, 0) == 0.0);
    Var root = vsqrt(loss);
    g.backward(root);
    CHECK(x->has_grad);
    CHECK(max_abs(x->grad) == 0.0);  // sqrt'(0) treated as 0
}

TEST_CASE("codec encode is the exact left inverse of decode") {
    ToyCodec codec(4, 8, 77);
    // E·D = I, checked against an independently assembled product
    const Mat& D = codec.decode_matrix();
    const Mat& E = codec.encode_matrix();
    Mat ed = matmul(E, D);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(ed(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));

    LatentGrid z = seeded_latent(4, 8, 8, 3, "codec-z");
    LatentGrid back = codec.encode(codec.decode(z));
    for (size_t i = 0; i < z.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(z.data[i]).epsilon(1e-10));
}

TEST_CASE("codec roundtrip from pixels is the column-space projection") {
    ToyCodec codec(4, 8, 77);
    const Mat& D = codec.decode_matrix();
    // oracle projection P = D (DᵀD)⁻¹ Dᵀ assembled with long-double Cramer-free
    // elimination, independent of the codec's own inverse
    const int n = D.cols(), m = D.rows();
    std::vector<std::vector<long double>> g(n, std::vector<long double>(2 * n, 0.0L));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            long double s = 0.0L;
            for (int k = 0; k < m; ++k) s += (long double)D(k, i) * D(k, j);
            g[i][j] = s;
        }
        g[i][n + i] = 1.0L;
    }
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (fabsl(g[r][col]) > fabsl(g[piv][col])) piv = r;
        std::swap(g[piv], g[col]);
        const long double d = g[col][col];
        for (int j = 0; j < 2 * n; ++j) g[col][j] /= d;
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const long double f = g[r][col];
            for (int j = 0; j < 2 * n; ++j) g[r][j] -= f * g[col][j];
        }
    }
    Mat gram_inv(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) gram_inv(i, j) = (double)g[i][n + j];
    Mat proj = matmul(D, matmul(gram_inv, transpose(D)));

    Image img(16, 16);
    DeterministicRng rng(4, "pix");
    for (double& v : img.planes) v = rng.uniform();
    Image round = codec.decode(codec.encode(img));
    // per block: round = proj · img
    for (int by = 0; by < 2; ++by)
        for (int bx = 0; bx < 2; ++bx)
            for (int c = 0; c < 3; ++c)
                for (int dy = 0; dy < 8; ++dy)
                    for (int dx = 0; dx < 8; ++dx) {
                        const int row = (c * 8 + dy) * 8 + dx;
                        double want = 0;
                        for (int c2 = 0; c2 < 3; ++c2)
                            for (int y2 = 0; y2 < 8; ++y2)
                                for (int x2 = 0; x2 < 8; ++x2)
                                    want += proj(row, (c2 * 8 + y2) * 8 + x2) *
                                            img.at(c2, by * 8 + y2, bx * 8 + x2);
                        CHECK(round.at(c, by * 8 + dy, bx * 8 + dx) ==
                              doctest::Approx(want).epsilon(1e-6));
                    }

    Image zero(16, 16);
    LatentGrid zl = codec.encode(zero);
    CHECK(max_abs(zl.as_rows()) == 0.0);
    Image zi = codec.decode(LatentGrid(4, 2, 2));
    for (double v : zi.planes) CHECK(v == 0.0);
    Image odd(17, 16);
    CHECK_THROWS_AS(codec.encode(odd), IngestionError);
}

TEST_CASE("decode shape contract holds at the default latent size") {
    ToyBackend be;
    LatentGrid z(4, 16, 16);
    Image img = be.decode_latent(z);
    CHECK(img.width == 128);
    CHECK(img.height == 128);
    CHECK(be.encode_image(img).height == 16);
}

TEST_CASE("apply_delta places a rank-1 outer product in the row convention") {
    Mat w(2, 2);
    LowRankDelta d;
    d.up = Mat::from_rows(2, 1, {1, 0});    // [d_out × r]
    d.down = Mat::from_rows(1, 2, {0, 1});  // [r × d_in]
    Mat w2 = apply_delta(w, d, 0.7);
    // up·down = [[0,1],[0,0]] in [d_out × d_in]; transposed into [d_in × d_out]
    int nonzero = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            if (w2(i, j) != 0.0) {
                ++nonzero;
                CHECK(w2(i, j) == 0.7);
                CHECK(i == 1);
                CHECK(j == 0);
            }
    CHECK(nonzero == 1);
    CHECK(AdapterSet{}.merge_coefficient == 0.7);
}

TEST_CASE("adapter merge with coefficient zero is bitwise identity") {
    ToyBackend be;
    AdapterSet a = synthesize_adapter("cat", {"<cat-a>", "<cat-b>"}, 101,
                                      be.adapter_weight_shapes(), be.cross_layer_ids(),
                                      be.ctx_dim());
    std::map<std::string, Mat> store;
    for (const auto& [name, _] : be.adapter_weight_shapes()) store[name] = be.weight(name);
    auto merged0 = merge_adapter(store, a, 0.0);
    for (const auto& [name, w] : store) CHECK(bit_equal(merged0.at(name), w));
    auto merged = merge_adapter(store, a, 0.7);
    bool changed = false;
    for (const auto& [name, w] : store) changed = changed || !bit_equal(merged.at(name), w);
    CHECK(changed);
}

TEST_CASE("disjoint-layer adapter merges commute") {
    ToyBackend be;
    auto shapes = be.adapter_weight_shapes();
    std::map<std::string, std::pair<int, int>> s1, s2;
    for (const auto& [name, sh] : shapes)
        (name.rfind("dec0", 0) == 0 ? s1 : s2)[name] = sh;
    AdapterSet a1 = synthesize_adapter("one", {"<o>"}, 5, s1, {}, be.ctx_dim());
    AdapterSet a2 = synthesize_adapter("two", {"<t>"}, 6, s2, {}, be.ctx_dim());
    std::map<std::string, Mat> store;
    for (const auto& [name, _] : shapes) store[name] = be.weight(name);
    auto ab = merge_adapter(merge_adapter(store, a1, 0.7), a2, 0.7);
    auto ba = merge_adapter(merge_adapter(store, a2, 0.7), a1, 0.7);
    for (const auto& [name, _] : store) CHECK(bit_equal(ab.at(name), ba.at(name)));
}

TEST_CASE("adapter archive roundtrip is exact") {
    ToyBackend be;
    AdapterSet a = synthesize_adapter("cat", {"<cat-a>", "<cat-b>"}, 101,
                                      be.adapter_weight_shapes(), be.cross_layer_ids(),
                                      be.ctx_dim());
    const std::string path = "/tmp/maskfuse_test_adapter.naa";
    save_adapter(a, path);
    AdapterSet b = load_adapter(path);
    CHECK(b.concept_id == a.concept_id);
    CHECK(b.rank == a.rank);
    CHECK(b.merge_coefficient == a.merge_coefficient);
    CHECK(b.tokens == a.tokens);
    CHECK(b.deltas.size() == a.deltas.size());
    for (const auto& [name, d] : a.deltas) {
        CHECK(bit_equal(b.deltas.at(name).down, d.down));
        CHECK(bit_equal(b.deltas.at(name).up, d.up));
    }
    for (const auto& [tok, by_layer] : a.embeddings)
        for (const auto& [layer, row] : by_layer)
            CHECK(bit_equal(b.embeddings.at(tok).at(layer), row));
    CHECK(b.content_hash() == a.content_hash());
    std::remove(path.c_str());
}

TEST_CASE("encode_text shapes, null token, and length limit") {
    ToyBackend be;
    TextEncoding t = be.encode_text("a dog");
    CHECK(t.tokens.size() == 2);
    CHECK(t.embeddings.rows() == 2);
    CHECK(t.embeddings.cols() == be.ctx_dim());
    CHECK(t.token_ids[1] == token_id("dog"));

    TextEncoding empty = be.encode_text("");
    CHECK(empty.tokens == std::vector<std::string>{""});
    CHECK(empty.embeddings.rows() == 1);

    std::string longprompt;
    for (int i = 0; i < 17; ++i) longprompt += "w" + std::to_string(i) + " ";
    CHECK_THROWS_AS(be.encode_text(longprompt), ContractViolation);

    // same token at different positions gets different rows
    TextEncoding rep = be.encode_text("dog dog");
    CHECK_FALSE(bit_equal(Mat::from_rows(1, 8, std::vector<double>(rep.embeddings.row(0),
                                                                   rep.embeddings.row(0) + 8)),
                          Mat::from_rows(1, 8, std::vector<double>(rep.embeddings.row(1),
                                                                   rep.embeddings.row(1) + 8))));
}

TEST_CASE("predict_noise is deterministic and shape-preserving") {
    ToyBackend be;
    LatentGrid z = seeded_latent(4, 16, 16, 1, "z");
    TextEncoding text = be.encode_text("a dog and a cat");
    PredictOptions opt;
    opt.record_spec = {"dec0.self", "dec5.self", "mid.cross"};
    PredictResult a = be.predict_noise(z, 995, text, opt);
    PredictResult b = be.predict_noise(z, 995, text, opt);
    CHECK(latent_bit_equal(a.noise, b.noise));
    CHECK(a.record.layers.size() == 3);
    for (const auto& [id, lr] : a.record.layers) {
        CHECK(bit_equal(lr.keys, b.record.layers.at(id).keys));
        CHECK(bit_equal(lr.probs, b.record.layers.at(id).probs));
        CHECK(bit_equal(lr.output, b.record.layers.at(id).output));
        for (int i = 0; i < lr.probs.rows(); ++i) {
            double rs = 0;
            for (int j = 0; j < lr.probs.cols(); ++j) rs += lr.probs(i, j);
            CHECK(rs == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
    // smaller latents work too
    LatentGrid z8 = seeded_latent(4, 8, 8, 1, "z8");
    PredictResult c = be.predict_noise(z8, 40, text);
    CHECK(c.noise.height == 8);
    CHECK(c.noise.width == 8);

    CHECK_THROWS_AS(be.predict_noise(z, -1, text), ContractViolation);
    PredictOptions badopt;
    badopt.record_spec = {"dec9.self"};
    CHECK_THROWS_AS(be.predict_noise(z, 5, text, badopt), ConfigError);
}

TEST_CASE("record grids follow the layer resolution map") {
    ToyBackend be;
    CHECK(be.layer_grid("dec0.self", 16, 16) == std::pair<int, int>{8, 8});
    CHECK(be.layer_grid("mid.cross", 16, 16) == std::pair<int, int>{8, 8});
    CHECK(be.layer_grid("dec3.self", 16, 16) == std::pair<int, int>{16, 16});
    CHECK(be.layer_grid("dec5.cross", 16, 16) == std::pair<int, int>{16, 16});
    CHECK_THROWS_AS(be.layer_grid("nope", 16, 16), ConfigError);
    CHECK(be.layer_ids().size() == 14);
    CHECK(be.cross_layer_ids().size() == 7);

    LatentGrid z = seeded_latent(4, 16, 16, 2, "grid");
    TextEncoding text = be.encode_text("x");
    PredictOptions opt;
    opt.record_spec = {"dec0.self", "dec5.self"};
    PredictResult r = be.predict_noise(z, 100, text, opt);
    CHECK(r.record.layers.at("dec0.self").probs.rows() == 64);
    CHECK(r.record.layers.at("dec5.self").probs.rows() == 256);
}

TEST_CASE("overrides replace a layer's output before downstream computation") {
    ToyBackend be;
    LatentGrid z = seeded_latent(4, 16, 16, 3, "ovr");
    TextEncoding text = be.encode_text("a dog");
    PredictResult plain = be.predict_noise(z, 200, text);

    OverrideMap ovr;
    ovr["dec2.self"] = Mat(64, 8);  // zeros
    PredictOptions opt;
    opt.overrides = &ovr;
    opt.record_spec = {"dec2.self"};
    PredictResult forced = be.predict_noise(z, 200, text, opt);
    CHECK(latent_max_abs_diff(plain.noise, forced.noise) > 0.0);
    CHECK(max_abs(forced.record.layers.at("dec2.self").output) == 0.0);

    OverrideMap bad;
    bad["mid.self"] = Mat(64, 8);
    PredictOptions badopt;
    badopt.overrides = &bad;
    CHECK_THROWS_AS(be.predict_noise(z, 200, text, badopt), ConfigError);
    OverrideMap wrong;
    wrong["dec2.self"] = Mat(3, 3);
    PredictOptions wopt;
    wopt.overrides = &wrong;
    CHECK_THROWS_AS(be.predict_noise(z, 200, text, wopt), ContractViolation);
}

TEST_CASE("layer hook sees every attention output and can replace it") {
    ToyBackend be;
    LatentGrid z = seeded_latent(4, 16, 16, 4, "hook");
    TextEncoding text = be.encode_text("a dog");
    std::vector<std::string> seen;
    LayerHook hook = [&](const std::string& id, const Mat& h) {
        seen.push_back(id);
        if (id == "dec4.self") return Mat(h.rows(), h.cols());  // zeros
        return h;
    };
    PredictOptions opt;
    opt.hook = &hook;
    opt.record_spec = {"dec4.self"};
    PredictResult hooked = be.predict_noise(z, 200, text, opt);
    CHECK(seen.size() == 14);
    CHECK(seen.front() == "mid.self");
    CHECK(seen.back() == "dec5.cross");
    CHECK(max_abs(hooked.record.layers.at("dec4.self").output) == 0.0);
    PredictResult plain = be.predict_noise(z, 200, text);
    CHECK(latent_max_abs_diff(plain.noise, hooked.noise) > 0.0);
}

TEST_CASE("installed adapter changes outputs and removal restores them bitwise") {
    ToyBackend be;
    LatentGrid z = seeded_latent(4, 16, 16, 5, "ad");
    TextEncoding text = be.encode_text("a <cat-a> <cat-b>");
    AdapterSet cat = synthesize_adapter("cat", {"<cat-a>", "<cat-b>"}, 101,
                                        be.adapter_weight_shapes(), be.cross_layer_ids(),
                                        be.ctx_dim());
    PredictResult before = be.predict_noise(z, 300, text);
    be.install_adapter(cat);
    CHECK(be.adapter_installed());
    PredictResult with = be.predict_noise(z, 300, text);
    CHECK(latent_max_abs_diff(before.noise, with.noise) > 0.0);
    CHECK_THROWS_AS(be.install_adapter(cat), ContractViolation);
    be.remove_adapter();
    PredictResult after = be.predict_noise(z, 300, text);
    CHECK(latent_bit_equal(before.noise, after.noise));
}

TEST_CASE("adapter isolation: branch output ignores other adapters entirely") {
    ToyBackend be;
    LatentGrid z = seeded_latent(4, 16, 16, 6, "iso");
    TextEncoding text = be.encode_text("a <cat-a>");
    AdapterSet cat = synthesize_adapter("cat", {"<cat-a>"}, 101, be.adapter_weight_shapes(),
                                        be.cross_layer_ids(), be.ctx_dim());
    AdapterSet dogA = synthesize_adapter("dog", {"<dog-a>"}, 102, be.adapter_weight_shapes(),
                                         be.cross_layer_ids(), be.ctx_dim());
    AdapterSet dogB = synthesize_adapter("dog", {"<dog-a>"}, 999, be.adapter_weight_shapes(),
                                         be.cross_layer_ids(), be.ctx_dim());

    auto run_with = [&](const AdapterSet& other) {
        be.install_adapter(other);
        be.remove_adapter();
        be.install_adapter(cat);
        PredictResult r = be.predict_noise(z, 300, text);
        be.remove_adapter();
        return r;
    };
    CHECK(latent_bit_equal(run_with(dogA).noise, run_with(dogB).noise));
}

TEST_CASE("loss gradient is zero at the reference and scales linearly") {
    ToyBackend be;
    LatentGrid z = seeded_latent(4, 8, 8, 7, "lg");
    TextEncoding text = be.encode_text("a dog");
    PredictOptions opt;
    opt.record_spec = {"dec0.self"};
    Mat own_keys = be.predict_noise(z, 500, text, opt).record.layers.at("dec0.self").keys;

    LayoutLossSpec spec;
    spec.layer_id = "dec0.self";
    spec.reference = own_keys;
    std::vector<BranchInput> branches{{&text, nullptr}};
    LossGradResult zero = be.loss_gradient(z, 500, branches, spec);
    CHECK(zero.loss == 0.0);
    CHECK(max_abs(zero.grad.as_rows()) == 0.0);

    LatentGrid z2 = seeded_latent(4, 8, 8, 8, "lg2");
    LossGradResult g1 = be.loss_gradient(z2, 500, branches, spec);
    spec.loss_scale = 3.0;
    LossGradResult g3 = be.loss_gradient(z2, 500, branches, spec);
    CHECK(g3.loss == doctest::Approx(3.0 * g1.loss).epsilon(1e-12));
    for (size_t i = 0; i < g1.grad.data.size(); ++i) {
        if (g1.grad.data[i] == 0.0) {
            CHECK(g3.grad.data[i] == 0.0);
        } else {
            CHECK(g3.grad.data[i] / g1.grad.data[i] == doctest::Approx(3.0).epsilon(1e-10));
        }
    }
}

TEST_CASE("loss gradient matches central finite differences everywhere") {
    ToyBackend be;
    LatentGrid z = seeded_latent(4, 8, 8, 9, "fd");
    TextEncoding base = be.encode_text("a dog and a cat");
    TextEncoding var = be.encode_text("a <cat-a> and a <cat-a>");
    AdapterSet cat = synthesize_adapter("cat", {"<cat-a>"}, 101, be.adapter_weight_shapes(),
                                        be.cross_layer_ids(), be.ctx_dim());

    LayoutLossSpec spec;
    spec.layer_id = "dec0.self";
    LatentGrid zr = seeded_latent(4, 8, 8, 10, "fd-ref");
    PredictOptions ro;
    ro.record_spec = {"dec0.self"};
    spec.reference = be.predict_noise(zr, 500, base, ro).record.layers.at("dec0.self").keys;

    std::vector<BranchInput> branches{{&base, nullptr}, {&var, &cat}};
    LossGradResult lg = be.loss_gradient(z, 500, branches, spec);
    const double h = 1e-4;
    double max_rel = 0;
    for (size_t i = 0; i < z.data.size(); ++i) {
        LatentGrid zp = z, zm = z;
        zp.data[i] += h;
        zm.data[i] -= h;
        const double fd = (be.loss_gradient(zp, 500, branches, spec).loss -
                           be.loss_gradient(zm, 500, branches, spec).loss) /
                          (2 * h);
        const double denom = std::max(std::fabs(fd), std::fabs(lg.grad.data[i]));
        if (denom > 1e-12)
            max_rel = std::max(max_rel, std::fabs(fd - lg.grad.data[i]) / denom);
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("gradient capability degrades via the advertised flag") {
    struct NoGradBackend : ToyBackend {
        bool supports_loss_gradient() const override { return false; }
        LossGradResult loss_gradient(const LatentGrid&, int, const std::vector<BranchInput>&,
                                     const LayoutLossSpec&) override {
            throw CapabilityError("gradients unavailable");
        }
    };
    NoGradBackend be;
    CHECK_FALSE(be.supports_loss_gradient());
    LatentGrid z(4, 8, 8);
    TextEncoding text = be.encode_text("a");
    CHECK_THROWS_AS(be.loss_gradient(z, 1, {{&text, nullptr}}, LayoutLossSpec{}),
                    CapabilityError);
}

TEST_CASE("weights archive roundtrip reproduces predictions bitwise") {
    ToyBackend be;
    const std::string path = "/tmp/maskfuse_test_weights.naa";
    be.save_weights(path);
    ToyBackend back = ToyBackend::from_archive(path);
    CHECK(back.weights_hash() == be.weights_hash());
    LatentGrid z = seeded_latent(4, 16, 16, 11, "war");
    TextEncoding text = be.encode_text("a dog");
    CHECK(latent_bit_equal(be.predict_noise(z, 123, text).noise,
                           back.predict_noise(z, 123, text).noise));
    std::remove(path.c_str());
}
