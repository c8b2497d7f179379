#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "maskfuse/archive.hpp"
#include "maskfuse/image.hpp"
#include "maskfuse/mat.hpp"
#include "maskfuse/rng.hpp"

using namespace maskfuse;

namespace {

std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string tmp_path(const std::string& name) {
    return std::string("/tmp/maskfuse_test_") + name;
}

}  // namespace

TEST_CASE("matmul matches scalar loops") {
    Mat a = Mat::from_rows(2, 3, {1, 2, 3, 4, 5, 6});
    Mat b = Mat::from_rows(3, 2, {7, 8, 9, 10, 11, 12});
    Mat c = matmul(a, b);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
            CHECK(c(i, j) == s);
        }
    CHECK_THROWS_AS(matmul(a, a), ContractViolation);
}

TEST_CASE("transpose and elementwise ops") {
    Mat a = Mat::from_rows(2, 3, {1, -2, 3, 4, 5, -6});
    Mat t = transpose(a);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) CHECK(t(j, i) == a(i, j));
    Mat s = sub(add(a, a), a);
    CHECK(bit_equal(s, a));
    CHECK(max_abs(a) == 6.0);
    CHECK(max_abs_diff(a, scale(a, 1.0)) == 0.0);
    CHECK(frobenius_dist(a, a) == 0.0);
    double fr = 0;
    for (double v : a.raw()) fr += v * v;
    CHECK(frobenius_norm(a) == doctest::Approx(std::sqrt(fr)).epsilon(1e-12));
}

TEST_CASE("softmax_rows is unscaled and row-stochastic") {
    // softmax([1,0]) computed with a scalar oracle
    Mat logits = Mat::from_rows(1, 2, {1.0, 0.0});
    Mat p = softmax_rows(logits);
    const double e1 = std::exp(1.0), e0 = 1.0;
    CHECK(p(0, 0) == doctest::Approx(e1 / (e1 + e0)).epsilon(1e-12));
    CHECK(p(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(p(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));

    DeterministicRng rng(3, "softmax");
    Mat big(13, 29);
    for (double& v : big.raw()) v = 8.0 * rng.normal();
    Mat q = softmax_rows(big);
    for (int i = 0; i < q.rows(); ++i) {
        double rs = 0;
        for (int j = 0; j < q.cols(); ++j) {
            CHECK(q(i, j) >= 0.0);
            rs += q(i, j);
        }
        CHECK(rs == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("fnv1a matches published vectors") {
    CHECK(fnv1a("", 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a_str("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a_str("foobar") == 0x85944171f73967e8ull);
    CHECK(hash_hex(0xcbf29ce484222325ull) == "cbf29ce484222325");
}

TEST_CASE("rng streams are deterministic and label-separated") {
    DeterministicRng a(42, "x"), b(42, "x"), c(42, "y");
    for (int i = 0; i < 100; ++i) {
        const double u = a.uniform();
        CHECK(u == b.uniform());
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    bool differs = false;
    DeterministicRng a2(42, "x");
    for (int i = 0; i < 10; ++i) differs = differs || (a2.uniform() != c.uniform());
    CHECK(differs);
    for (int i = 0; i < 100; ++i) CHECK(a.below(17) < 17);
}

TEST_CASE("box-muller normals have sane moments") {
    DeterministicRng rng(7, "normals");
    const int n = 20000;
    double mean = 0, m2 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        mean += v;
        m2 += v * v;
    }
    mean /= n;
    const double var = m2 / n - mean * mean;
    CHECK(std::fabs(mean) < 0.03);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("archive roundtrips doubles bitwise and f32-quantized values exactly") {
    Archive ar;
    DeterministicRng rng(5, "archive");
    Mat m(3, 4);
    for (double& v : m.raw()) v = rng.normal();
    ar.put_mat("weights.a", m);
    Mat q(2, 2);
    for (double& v : q.raw()) v = static_cast<double>(static_cast<float>(rng.normal()));
    ar.put_mat("weights.q", q, "f4");
    ar.put_scalar("coeff", 0.7);
    ar.put("cube", {2, 2, 2}, std::vector<double>(8, 1.5), "f4");
    ar.set_meta("concept_id", "cat");

    const std::string path = tmp_path("roundtrip.naa");
    ar.save(path);
    Archive back = Archive::load(path);

    CHECK(bit_equal(back.get_mat("weights.a"), m));
    CHECK(bit_equal(back.get_mat("weights.q"), q));
    CHECK(back.get_scalar("coeff") == 0.7);
    CHECK(back.get("cube").shape == std::vector<int64_t>{2, 2, 2});
    CHECK(back.get_meta("concept_id") == "cat");
    CHECK(back.content_hash() == ar.content_hash());
    std::remove(path.c_str());
}

TEST_CASE("archive rejects corrupt input and missing names") {
    CHECK_THROWS_AS(Archive::deserialize({1, 2, 3}), IoError);
    std::vector<unsigned char> bad = {'N', 'A', 'A', '1', 255, 0, 0, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(Archive::deserialize(bad), IoError);
    Archive ar;
    CHECK_THROWS_AS(ar.get("nope"), IoError);
    CHECK_THROWS_AS(ar.put("bad", {2, 2}, {1.0}), ContractViolation);
    CHECK_THROWS_AS(ar.put("bad", {1}, {1.0}, "f2"), ContractViolation);
}

TEST_CASE("serialized archives are byte-stable") {
    Archive ar;
    ar.put("z", {2}, {1.0, 2.0});
    ar.put("a", {1}, {3.0});
    const auto bytes1 = ar.serialize();
    Archive ar2;
    ar2.put("a", {1}, {3.0});
    ar2.put("z", {2}, {1.0, 2.0});
    CHECK(bytes1 == ar2.serialize());  // insertion order must not leak
}

TEST_CASE("u8 conversion clamps and rounds half up") {
    Image img(2, 1);
    img.at(0, 0, 0) = -0.2;
    img.at(1, 0, 0) = 0.5;
    img.at(2, 0, 0) = 1.7;
    img.at(0, 0, 1) = 127.4 / 255.0;
    img.at(1, 0, 1) = 127.6 / 255.0;
    img.at(2, 0, 1) = 0.0;
    ImageU8 u = to_u8(img);
    CHECK(u.at(0, 0, 0) == 0);
    CHECK(u.at(0, 0, 1) == 128);
    CHECK(u.at(0, 0, 2) == 255);
    CHECK(u.at(0, 1, 0) == 127);
    CHECK(u.at(0, 1, 1) == 128);
    CHECK(u.at(0, 1, 2) == 0);
}

TEST_CASE("png roundtrip preserves pixels and output bytes are reproducible") {
    ImageU8 img(9, 5);
    DeterministicRng rng(11, "png");
    for (auto& v : img.rgb) v = static_cast<uint8_t>(rng.below(256));

    const std::string p1 = tmp_path("a.png"), p2 = tmp_path("b.png");
    write_png(p1, img);
    write_png(p2, img);
    CHECK(slurp(p1) == slurp(p2));

    ImageU8 back = read_png(p1);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.rgb == img.rgb);
    CHECK(image_hash(back) == image_hash(img));

    img.rgb[0] ^= 1;
    CHECK(image_hash(back) != image_hash(img));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("gray png roundtrips through rgb expansion") {
    std::vector<uint8_t> gray = {0, 64, 128, 255, 10, 20};
    const std::string p = tmp_path("gray.png");
    write_png_gray(p, 3, 2, gray);
    ImageU8 rgb = read_png(p);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x)
            for (int c = 0; c < 3; ++c) CHECK(rgb.at(y, x, c) == gray[y * 3 + x]);
    CHECK_THROWS_AS(read_png(tmp_path("missing.png")), IngestionError);
    std::remove(p.c_str());
}
