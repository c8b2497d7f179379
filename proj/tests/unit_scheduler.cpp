#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "maskfuse/rng.hpp"
#include "maskfuse/schedule.hpp"
#include "maskfuse/toy_backend.hpp"

using namespace maskfuse;

namespace {

LatentGrid rand_latent(int c, int h, int w, uint64_t seed) {
    DeterministicRng rng(seed, "sched-test");
    LatentGrid z(c, h, w);
    for (double& v : z.data) v = rng.normal();
    return z;
}

}  // namespace

TEST_CASE("make_schedule builds linear betas with cumulative alpha_bar") {
    NoiseSchedule one = make_schedule(1, 0.25, 0.5);
    CHECK(one.betas.size() == 1);
    CHECK(one.alpha_bar[0] == 0.75);

    NoiseSchedule s = make_schedule();
    CHECK(s.t_train == 1000);
    CHECK(s.betas.front() == doctest::Approx(0.00085).epsilon(1e-12));
    CHECK(s.betas.back() == doctest::Approx(0.012).epsilon(1e-12));
    // independent cumulative-product oracle
    double prod = 1.0;
    for (int t = 0; t < 1000; ++t) {
        const double beta = 0.00085 + (0.012 - 0.00085) * t / 999.0;
        CHECK(s.betas[t] == doctest::Approx(beta).epsilon(1e-12));
        prod *= 1.0 - beta;
        CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-12));
        if (t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        CHECK(s.betas[t] > 0.0);
        CHECK(s.betas[t] < 1.0);
    }
    CHECK(s.alpha_bar.front() > 0.99);
    CHECK(s.alpha_bar.back() < 0.05);
    CHECK(s.alpha_bar_at(-1) == 1.0);
    CHECK_THROWS_AS(s.alpha_bar_at(1000), ContractViolation);

    CHECK_THROWS_AS(make_schedule(1000, 0.2, 0.2), ConfigError);
    CHECK_THROWS_AS(make_schedule(1000, 0.0, 0.5), ConfigError);
    CHECK_THROWS_AS(make_schedule(1000, 0.5, 1.0), ConfigError);
}

TEST_CASE("timestep grid is a strictly decreasing uniform subsample") {
    const std::vector<int> g = timestep_grid(200);
    CHECK(g.size() == 200);
    CHECK(g.front() == 995);
    CHECK(g.back() == 0);
    for (size_t k = 1; k < g.size(); ++k) CHECK(g[k] == g[k - 1] - 5);
    const std::vector<int> full = timestep_grid(1000);
    CHECK(full.front() == 999);
    CHECK(full.back() == 0);
    CHECK(full.size() == 1000);
    CHECK_THROWS_AS(timestep_grid(300), ConfigError);
    CHECK_THROWS_AS(timestep_grid(0), ConfigError);
}

TEST_CASE("ddim_step with zero noise is a pure rescale") {
    NoiseSchedule s = make_schedule();
    LatentGrid z = rand_latent(4, 8, 8, 1);
    LatentGrid eps(4, 8, 8);
    LatentGrid out = ddim_step(z, eps, 995, 990, s);
    const double f = std::sqrt(s.alpha_bar_at(990) / s.alpha_bar_at(995));
    for (size_t i = 0; i < z.data.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(f * z.data[i]).epsilon(1e-12));

    // equal alpha_bar at both levels (hand-built schedule) → exact identity
    NoiseSchedule flat;
    flat.t_train = 2;
    flat.betas = {0.5, 0.5};
    flat.alpha_bar = {0.25, 0.25};
    LatentGrid same = ddim_step(z, eps, 1, 0, flat);
    for (size_t i = 0; i < z.data.size(); ++i) CHECK(same.data[i] == z.data[i]);

    CHECK_THROWS_AS(ddim_step(z, eps, 990, 995, s), ContractViolation);
    CHECK_THROWS_AS(ddim_step(z, eps, 1000, 0, s), ContractViolation);
    CHECK_THROWS_AS(ddim_step(z, eps, 5, -2, s), ContractViolation);
}

TEST_CASE("invert step then ddim_step with the same noise is the identity") {
    NoiseSchedule s = make_schedule();
    DeterministicRng rng(2, "pairs");
    for (int rep = 0; rep < 20; ++rep) {
        LatentGrid z = rand_latent(4, 8, 8, 100 + rep);
        LatentGrid eps = rand_latent(4, 8, 8, 200 + rep);
        const int t = 1 + static_cast<int>(rng.below(999));
        const int t_prev = static_cast<int>(rng.below(static_cast<uint64_t>(t + 1))) - 1;
        LatentGrid noisy = ddim_invert_step(z, eps, t, t_prev, s);
        LatentGrid back = ddim_step(noisy, eps, t, t_prev, s);
        CHECK(latent_max_abs_diff(back, z) < 1e-10);
    }
}

TEST_CASE("cfg_combine follows the guidance formula") {
    LatentGrid u(4, 8, 8), c(4, 8, 8);
    DeterministicRng rng(3, "cfg");
    for (double& v : u.data) v = rng.normal();
    for (double& v : c.data) v = rng.normal();
    CHECK(latent_max_abs_diff(cfg_combine(u, c, 1.0), c) == 0.0);
    CHECK(latent_max_abs_diff(cfg_combine(u, c, 0.0), u) == 0.0);
    LatentGrid mix = cfg_combine(u, c, 7.5);
    for (size_t i = 0; i < mix.data.size(); ++i)
        CHECK(mix.data[i] ==
              doctest::Approx(u.data[i] + 7.5 * (c.data[i] - u.data[i])).epsilon(1e-12));

    LatentGrid zero(4, 8, 8), one(4, 8, 8);
    for (double& v : one.data) v = 1.0;
    LatentGrid guided = cfg_combine(zero, one, 7.5);
    for (double v : guided.data) CHECK(v == 7.5);
}

TEST_CASE("inversion visits every level, records on request, and reproduces bitwise") {
    ToyBackend be;
    NoiseSchedule s = make_schedule();
    LatentGrid z0 = rand_latent(4, 8, 8, 4);
    TextEncoding text = be.encode_text("a dog and a cat");

    InversionResult none = ddim_invert(be, z0, text, 0, {}, s);
    CHECK(none.levels == std::vector<int>{-1});
    CHECK(none.latents.size() == 1);
    CHECK(latent_max_abs_diff(none.latents[0], z0) == 0.0);
    CHECK(none.records.empty());

    InversionResult a = ddim_invert(be, z0, text, 25, {"dec0.self"}, s);
    CHECK(a.levels.size() == 26);
    CHECK(a.levels.front() == -1);
    CHECK(a.levels.back() == 24);
    CHECK(a.records.size() == 25);
    for (const auto& [t, rec] : a.records) {
        CHECK(rec.layers.size() == 1);
        CHECK(rec.layers.count("dec0.self") == 1);
    }
    InversionResult b = ddim_invert(be, z0, text, 25, {"dec0.self"}, s);
    for (size_t i = 0; i < a.latents.size(); ++i)
        CHECK(a.latents[i].data == b.latents[i].data);
}

TEST_CASE("full inversion then full sampling reconstructs the latent") {
    ToyBackend be;
    NoiseSchedule s = make_schedule();
    // clean latent from the codec so magnitudes match the generation regime
    DeterministicRng rng(5, "img");
    Image img(64, 64);
    for (double& v : img.planes) v = rng.uniform();
    LatentGrid z0 = be.encode_image(img);

    TextEncoding text = be.encode_text("a dog and a cat");
    InversionResult inv = ddim_invert(be, z0, text, 1000, {}, s);
    LatentGrid z_back =
        ddim_sample(be, inv.latents.back(), text, timestep_grid(1000), s, 1.0);
    CHECK(latent_mse(z_back, z0) < 1e-3);
}

TEST_CASE("trajectory archive roundtrip is exact") {
    ToyBackend be;
    NoiseSchedule s = make_schedule();
    LatentGrid z0 = rand_latent(4, 8, 8, 6);
    TextEncoding text = be.encode_text("a dog");
    InversionResult inv = ddim_invert(be, z0, text, 7, {"dec0.self", "dec5.self"}, s);

    const std::string path = "/tmp/maskfuse_test_traj.naa";
    save_inversion(inv, path, {{"image_hash", "abc"}});
    InversionResult back = load_inversion(path);
    CHECK(back.levels == inv.levels);
    REQUIRE(back.latents.size() == inv.latents.size());
    for (size_t i = 0; i < inv.latents.size(); ++i)
        CHECK(back.latents[i].data == inv.latents[i].data);
    REQUIRE(back.records.size() == inv.records.size());
    for (const auto& [t, rec] : inv.records)
        for (const auto& [layer, lr] : rec.layers) {
            CHECK(bit_equal(back.records.at(t).layers.at(layer).keys, lr.keys));
            CHECK(bit_equal(back.records.at(t).layers.at(layer).probs, lr.probs));
            CHECK(bit_equal(back.records.at(t).layers.at(layer).output, lr.output));
        }
    std::remove(path.c_str());
}

TEST_CASE("initial latent drawing is seed-determined") {
    LatentGrid a = draw_initial_latent(4, 16, 16, 3);
    LatentGrid b = draw_initial_latent(4, 16, 16, 3);
    LatentGrid c = draw_initial_latent(4, 16, 16, 4);
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
    double m = 0, v = 0;
    for (double x : a.data) {
        m += x;
        v += x * x;
    }
    m /= a.data.size();
    CHECK(std::fabs(m) < 0.1);
    CHECK(v / a.data.size() - m * m == doctest::Approx(1.0).epsilon(0.15));
}
