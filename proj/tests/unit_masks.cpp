#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <vector>

#include "maskfuse/masks.hpp"

using namespace maskfuse;

namespace {

// Square attention-style matrix whose rows are uniform distributions over
// their group's cells. Rows within a group are identical, so every k-means
// pass recovers exactly the groups (surplus clusters come out empty and are
// dropped).
Mat partition_probs(const std::vector<std::vector<int>>& groups, int cells) {
    Mat probs(cells, cells);
    for (const std::vector<int>& g : groups) {
        const double p = 1.0 / static_cast<double>(g.size());
        for (int i : g)
            for (int j : g) probs(i, j) = p;
    }
    return probs;
}

MaskGrid mask_of(const std::vector<int>& cells_on, int h, int w) {
    MaskGrid m(h, w);
    for (int i : cells_on) m.cells[i] = 1;
    return m;
}

std::vector<int> on_cells(const MaskGrid& m) {
    std::vector<int> out;
    for (size_t i = 0; i < m.cells.size(); ++i)
        if (m.cells[i]) out.push_back(static_cast<int>(i));
    return out;
}

bool mask_equal(const MaskGrid& a, const MaskGrid& b) {
    return a.h == b.h && a.w == b.w && a.cells == b.cells;
}

// Test-side IoU, written from scratch.
double iou(const MaskGrid& a, const MaskGrid& b) {
    int inter = 0, uni = 0;
    for (size_t i = 0; i < a.cells.size(); ++i) {
        if (a.cells[i] && b.cells[i]) ++inter;
        if (a.cells[i] || b.cells[i]) ++uni;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

// Naive transcription of the refinement rule, used as the oracle: per concept
// pick the best-IoU candidate from its own branch and from the base branch
// (strict improvement, first candidate wins ties), union them, then hand every
// cell claimed by more than one concept back to its previous owner. A concept
// with no overlapping candidate at all keeps its previous mask.
struct OracleOut {
    std::map<std::string, MaskGrid> masks;
    std::vector<std::string> degenerate;
};

OracleOut oracle_refine(const std::vector<std::string>& order,
                        const std::map<std::string, std::vector<MaskGrid>>& custom_cands,
                        const std::vector<MaskGrid>& base_cands,
                        const std::map<std::string, MaskGrid>& prev) {
    OracleOut out;
    std::map<std::string, MaskGrid> unions;
    for (const std::string& id : order) {
        const MaskGrid& old = prev.at(id);
        auto best = [&](const std::vector<MaskGrid>& cands) -> const MaskGrid* {
            double bd = 0.0;
            const MaskGrid* bm = nullptr;
            for (const MaskGrid& c : cands)
                if (iou(c, old) > bd) {
                    bd = iou(c, old);
                    bm = &c;
                }
            return bm;
        };
        const MaskGrid* mc = best(custom_cands.at(id));
        const MaskGrid* mb = best(base_cands);
        if (!mc && !mb) {
            unions[id] = old;
            out.degenerate.push_back(id);
            continue;
        }
        MaskGrid u(old.h, old.w);
        for (size_t i = 0; i < u.cells.size(); ++i)
            u.cells[i] = ((mc && mc->cells[i]) || (mb && mb->cells[i])) ? 1 : 0;
        unions[id] = u;
    }
    std::vector<int> sum(static_cast<size_t>(prev.begin()->second.h) * prev.begin()->second.w, 0);
    for (const auto& [id, u] : unions)
        for (size_t i = 0; i < u.cells.size(); ++i) sum[i] += u.cells[i] != 0 ? 1 : 0;
    for (const std::string& id : order) {
        MaskGrid m(prev.at(id).h, prev.at(id).w);
        for (size_t i = 0; i < m.cells.size(); ++i)
            m.cells[i] = sum[i] > 1 ? prev.at(id).cells[i] : unions.at(id).cells[i];
        out.masks[id] = m;
    }
    return out;
}

ConceptMasks prev_masks(int h, int w, const std::vector<std::pair<std::string, std::vector<int>>>& spec) {
    ConceptMasks prev;
    prev.h = h;
    prev.w = w;
    for (const auto& [id, cells] : spec) {
        prev.order.push_back(id);
        prev.by_concept[id] = mask_of(cells, h, w);
    }
    return prev;
}

std::vector<ConceptSpec> dummy_concepts(const std::vector<std::string>& ids) {
    std::vector<ConceptSpec> out;
    for (const std::string& id : ids) {
        ConceptSpec c;
        c.concept_id = id;
        c.concept_tokens = {"<" + id + ">"};
        c.class_word = id;
        out.push_back(c);
    }
    return out;
}

}  // namespace

TEST_CASE("kmeans: duplicate points split by value, labels in first-occurrence order") {
    Mat pts(4, 1);
    pts(0, 0) = 0.0;
    pts(1, 0) = 0.0;
    pts(2, 0) = 10.0;
    pts(3, 0) = 10.0;

    SegmentationMap seg = kmeans_rows(pts, 2, 2, 2, 13, 100, 1e-6);
    CHECK(seg.k == 2);
    CHECK(seg.labels == std::vector<int>{0, 0, 1, 1});

    // requesting more clusters than distinct values collapses to the values
    SegmentationMap over = kmeans_rows(pts, 4, 2, 2, 13, 100, 1e-6);
    CHECK(over.k == 2);
    CHECK(over.labels == std::vector<int>{0, 0, 1, 1});

    // single cluster
    SegmentationMap one = kmeans_rows(pts, 1, 2, 2, 13, 100, 1e-6);
    CHECK(one.k == 1);
    CHECK(one.labels == std::vector<int>(4, 0));
}

TEST_CASE("kmeans: well-separated groups are recovered exactly, any seed") {
    // nine points, three tight groups, interleaved row order
    Mat pts(9, 2);
    const double centers[3][2] = {{0, 0}, {100, 0}, {0, 100}};
    for (int i = 0; i < 9; ++i) {
        pts(i, 0) = centers[i % 3][0] + 0.01 * (i / 3);
        pts(i, 1) = centers[i % 3][1];
    }
    for (uint64_t seed : {1ull, 13ull, 97ull}) {
        SegmentationMap seg = kmeans_rows(pts, 3, 3, 3, seed, 100, 1e-6);
        REQUIRE(seg.k == 3);
        // interleaved input + first-occurrence labels -> 0,1,2,0,1,2,...
        CHECK(seg.labels == std::vector<int>{0, 1, 2, 0, 1, 2, 0, 1, 2});
    }
}

TEST_CASE("kmeans: determinism and bounds") {
    Mat pts(6, 3);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 3; ++j) pts(i, j) = (i * 7 + j * 3) % 5;
    SegmentationMap a = kmeans_rows(pts, 3, 2, 3, 42, 100, 1e-6);
    SegmentationMap b = kmeans_rows(pts, 3, 2, 3, 42, 100, 1e-6);
    CHECK(a.labels == b.labels);

    CHECK_THROWS_AS(kmeans_rows(pts, 0, 2, 3, 1, 100, 1e-6), ContractViolation);
    CHECK_THROWS_AS(kmeans_rows(pts, 7, 2, 3, 1, 100, 1e-6), ContractViolation);
    CHECK_THROWS_AS(kmeans_rows(pts, 2, 3, 3, 1, 100, 1e-6), ContractViolation);  // 6 != 9
}

TEST_CASE("cluster_self_attention rejects non-square input") {
    Mat rect(4, 3);
    RefineConfig cfg;
    CHECK_THROWS_AS(cluster_self_attention(rect, 2, 2, 2, cfg), ContractViolation);
}

TEST_CASE("matching degree is intersection over union") {
    const MaskGrid a = mask_of({0, 1}, 2, 2);
    const MaskGrid b = mask_of({1, 2}, 2, 2);
    const MaskGrid empty(2, 2);
    CHECK(matching_degree(a, a) == 1.0);
    CHECK(matching_degree(a, b) == doctest::Approx(1.0 / 3.0));
    CHECK(matching_degree(a, mask_of({2, 3}, 2, 2)) == 0.0);
    CHECK(matching_degree(empty, empty) == 0.0);
    CHECK(matching_degree(a, empty) == 0.0);
    CHECK_THROWS_AS(matching_degree(a, MaskGrid(3, 3)), ContractViolation);
}

TEST_CASE("candidate segments enumerate every clustering in the k range") {
    const std::vector<int> ga{0, 1, 3, 4};
    const std::vector<int> gb{2, 5, 6, 7, 8};
    const Mat probs = partition_probs({ga, gb}, 9);
    RefineConfig cfg;

    // two concepts: k in [2,4]; every pass collapses to the two groups
    std::vector<MaskGrid> cands = candidate_segments(probs, 2, 3, 3, cfg);
    REQUIRE(cands.size() == 6);
    const MaskGrid ma = mask_of(ga, 3, 3), mb = mask_of(gb, 3, 3);
    int hits_a = 0, hits_b = 0;
    for (const MaskGrid& c : cands) {
        if (mask_equal(c, ma)) ++hits_a;
        if (mask_equal(c, mb)) ++hits_b;
    }
    CHECK(hits_a == 3);
    CHECK(hits_b == 3);

    // one concept: k in [1,2]; the k=1 pass contributes the whole grid
    std::vector<MaskGrid> single = candidate_segments(probs, 1, 3, 3, cfg);
    REQUIRE(single.size() == 3);
    CHECK(single[0].count() == 9);
    CHECK(mask_equal(single[1], ma));
    CHECK(mask_equal(single[2], mb));
}

TEST_CASE("refinement: clean two-concept case matches the oracle and hand-derived masks") {
    const std::vector<int> a1{0, 1, 3, 4}, b1{2, 5, 6, 7, 8};
    const std::vector<int> a2{4, 5, 7, 8}, b2{0, 1, 2, 3, 6};
    const std::vector<int> ab{0, 1, 2}, bb{3, 4, 5, 6, 7, 8};
    const Mat p1 = partition_probs({a1, b1}, 9);
    const Mat p2 = partition_probs({a2, b2}, 9);
    const Mat pb = partition_probs({ab, bb}, 9);
    ConceptMasks prev = prev_masks(3, 3, {{"c1", {0, 1}}, {"c2", {8}}});
    RefineConfig cfg;

    RefineOutcome got = refine_masks(pb, {p1, p2}, prev, cfg);
    CHECK(got.warnings.empty());
    CHECK(got.masks.order == prev.order);

    OracleOut want = oracle_refine(
        prev.order,
        {{"c1", {mask_of(a1, 3, 3), mask_of(b1, 3, 3)}},
         {"c2", {mask_of(a2, 3, 3), mask_of(b2, 3, 3)}}},
        {mask_of(ab, 3, 3), mask_of(bb, 3, 3)}, prev.by_concept);
    CHECK(mask_equal(got.masks.of("c1"), want.masks.at("c1")));
    CHECK(mask_equal(got.masks.of("c2"), want.masks.at("c2")));

    // derived once by hand: unions {0..4} and {3..8} collide on {3,4}, which
    // belonged to neither previous mask
    CHECK(on_cells(got.masks.of("c1")) == std::vector<int>{0, 1, 2});
    CHECK(on_cells(got.masks.of("c2")) == std::vector<int>{5, 6, 7, 8});
    CHECK(masks_disjoint(got.masks));
}

TEST_CASE("refinement: contested cells go back to their previous owner") {
    const std::vector<int> a1{3, 4, 5}, b1{0, 1, 2, 6, 7, 8};
    const std::vector<int> a2{4, 5}, b2{0, 1, 2, 3, 6, 7, 8};
    const std::vector<int> ab{3, 4}, bb{0, 1, 2, 5, 6, 7, 8};
    ConceptMasks prev = prev_masks(3, 3, {{"c1", {3, 4}}, {"c2", {5}}});
    RefineConfig cfg;

    RefineOutcome got = refine_masks(partition_probs({ab, bb}, 9),
                                     {partition_probs({a1, b1}, 9), partition_probs({a2, b2}, 9)},
                                     prev, cfg);
    OracleOut want = oracle_refine(
        prev.order,
        {{"c1", {mask_of(a1, 3, 3), mask_of(b1, 3, 3)}},
         {"c2", {mask_of(a2, 3, 3), mask_of(b2, 3, 3)}}},
        {mask_of(ab, 3, 3), mask_of(bb, 3, 3)}, prev.by_concept);
    CHECK(mask_equal(got.masks.of("c1"), want.masks.at("c1")));
    CHECK(mask_equal(got.masks.of("c2"), want.masks.at("c2")));

    // cell 4 is contested and was concept 1's; cell 5 is contested and was
    // concept 2's
    CHECK(on_cells(got.masks.of("c1")) == std::vector<int>{3, 4});
    CHECK(on_cells(got.masks.of("c2")) == std::vector<int>{0, 1, 2, 5, 6, 7, 8});
    CHECK(masks_disjoint(got.masks));
}

TEST_CASE("refinement: a concept with an empty previous mask keeps it, with a warning") {
    const std::vector<int> a{0, 1}, b{2, 3, 4, 5, 6, 7, 8};
    const std::vector<int> ab{0, 3}, bb{1, 2, 4, 5, 6, 7, 8};
    ConceptMasks prev = prev_masks(3, 3, {{"gone", {}}, {"alive", {0}}});
    RefineConfig cfg;

    RefineOutcome got = refine_masks(partition_probs({ab, bb}, 9),
                                     {partition_probs({a, b}, 9), partition_probs({a, b}, 9)},
                                     prev, cfg);
    REQUIRE(got.warnings.size() == 1);
    CHECK(got.warnings[0].find("gone") != std::string::npos);
    CHECK(got.masks.of("gone").empty_mask());
    CHECK(on_cells(got.masks.of("alive")) == std::vector<int>{0, 1, 3});

    OracleOut want = oracle_refine(prev.order,
                                   {{"gone", {mask_of(a, 3, 3), mask_of(b, 3, 3)}},
                                    {"alive", {mask_of(a, 3, 3), mask_of(b, 3, 3)}}},
                                   {mask_of(ab, 3, 3), mask_of(bb, 3, 3)}, prev.by_concept);
    CHECK(want.degenerate == std::vector<std::string>{"gone"});
    CHECK(mask_equal(got.masks.of("gone"), want.masks.at("gone")));
    CHECK(mask_equal(got.masks.of("alive"), want.masks.at("alive")));
}

TEST_CASE("refinement: masks matching the clusters are a fixed point") {
    const std::vector<int> a{0, 1, 3, 4}, rest_a{2, 5, 6, 7, 8};
    const std::vector<int> b{2, 5}, rest_b{0, 1, 3, 4, 6, 7, 8};
    const std::vector<int> both{0, 1, 2, 3, 4, 5}, neither{6, 7, 8};
    ConceptMasks prev = prev_masks(3, 3, {{"c1", a}, {"c2", b}});
    RefineConfig cfg;

    RefineOutcome got = refine_masks(
        partition_probs({both, neither}, 9),
        {partition_probs({a, rest_a}, 9), partition_probs({b, rest_b}, 9)}, prev, cfg);
    CHECK(got.warnings.empty());
    CHECK(mask_equal(got.masks.of("c1"), prev.of("c1")));
    CHECK(mask_equal(got.masks.of("c2"), prev.of("c2")));
}

TEST_CASE("refinement: all-zero masks are a fixed point (every concept degenerates)") {
    const std::vector<int> a{0, 1}, b{2, 3, 4, 5, 6, 7, 8};
    ConceptMasks prev = prev_masks(3, 3, {{"c1", {}}, {"c2", {}}});
    RefineConfig cfg;
    RefineOutcome got = refine_masks(partition_probs({a, b}, 9),
                                     {partition_probs({a, b}, 9), partition_probs({a, b}, 9)},
                                     prev, cfg);
    CHECK(got.warnings.size() == 2);
    CHECK(got.masks.of("c1").empty_mask());
    CHECK(got.masks.of("c2").empty_mask());
}

TEST_CASE("refinement: single concept unions its two best candidates") {
    const std::vector<int> a{0, 1, 2}, rest{3, 4, 5, 6, 7, 8};
    const std::vector<int> ab{0, 3, 6}, restb{1, 2, 4, 5, 7, 8};
    ConceptMasks prev = prev_masks(3, 3, {{"solo", {0}}});
    RefineConfig cfg;
    RefineOutcome got = refine_masks(partition_probs({ab, restb}, 9),
                                     {partition_probs({a, rest}, 9)}, prev, cfg);
    CHECK(on_cells(got.masks.of("solo")) == std::vector<int>{0, 1, 2, 3, 6});
}

TEST_CASE("refinement requires one attention map per concept") {
    ConceptMasks prev = prev_masks(3, 3, {{"c1", {0}}, {"c2", {8}}});
    RefineConfig cfg;
    const Mat p = partition_probs({{0, 1, 2, 3}, {4, 5, 6, 7, 8}}, 9);
    CHECK_THROWS_AS(refine_masks(p, {p}, prev, cfg), ContractViolation);
}

TEST_CASE("refine cadence covers every fifth step of the window") {
    RefineConfig cfg;
    std::vector<int> hits;
    for (int s = 0; s < 200; ++s)
        if (cfg.refine_at(s)) hits.push_back(s);
    CHECK(hits == std::vector<int>{50, 55, 60, 65, 70, 75, 80});
    cfg.enabled = false;
    CHECK_FALSE(cfg.refine_at(50));
}

TEST_CASE("mask rescale: replicate up, majority down, ties round up") {
    MaskGrid m(2, 2);
    m.at(0, 0) = 1;
    m.at(1, 1) = 1;

    CHECK(mask_equal(rescale_mask(m, 2, 2), m));

    MaskGrid up = rescale_mask(m, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(up.at(y, x) == m.at(y / 2, x / 2));

    // checkerboard: every 2x2 block holds two ones -> tie -> 1
    MaskGrid board(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) board.at(y, x) = (x + y) % 2;
    MaskGrid down = rescale_mask(board, 2, 2);
    CHECK(down.count() == 4);

    // a lone cell per block is a minority -> 0
    MaskGrid sparse(4, 4);
    sparse.at(0, 0) = 1;
    sparse.at(2, 3) = 1;
    CHECK(rescale_mask(sparse, 2, 2).count() == 0);

    MaskGrid ones(4, 4);
    for (auto& c : ones.cells) c = 1;
    CHECK(rescale_mask(ones, 2, 2).count() == 4);
    CHECK(rescale_mask(ones, 1, 1).count() == 1);  // factor 4

    CHECK_THROWS_AS(rescale_mask(mask_of({0}, 3, 3), 2, 2), ContractViolation);
    CHECK_THROWS_AS(rescale_mask(mask_of({0}, 4, 4), 4, 2), ContractViolation);
    CHECK_THROWS_AS(rescale_mask(mask_of({0}, 6, 6), 2, 2), ContractViolation);  // factor 3
    CHECK_THROWS_AS(rescale_mask(mask_of({0}, 4, 4), 8, 2), ContractViolation);  // mixed
}

TEST_CASE("joint rescale keeps concept masks disjoint under contested coarse cells") {
    // block (0,0): two cells each -> tie, declaration order wins
    // block (0,1): three cells for b, one for a -> b wins
    // block (1,0): one cell for a only -> below threshold, nobody
    // block (1,1): all four cells of b -> b
    ConceptMasks fine = prev_masks(4, 4, {{"a", {0, 1, 6, 8}}, {"b", {4, 5, 2, 3, 7, 10, 11, 14, 15}}});
    REQUIRE(masks_disjoint(fine));

    ConceptMasks coarse = rescale_concept_masks(fine, 2, 2);
    CHECK(masks_disjoint(coarse));
    CHECK(on_cells(coarse.of("a")) == std::vector<int>{0});
    CHECK(on_cells(coarse.of("b")) == std::vector<int>{1, 3});

    // the naive per-mask path would have overlapped on cell 0
    CHECK(rescale_mask(fine.of("a"), 2, 2).at(0, 0) == 1);
    CHECK(rescale_mask(fine.of("b"), 2, 2).at(0, 0) == 1);

    // identity and upscale keep the per-concept geometry
    ConceptMasks same = rescale_concept_masks(fine, 4, 4);
    CHECK(mask_equal(same.of("a"), fine.of("a")));
    ConceptMasks up = rescale_concept_masks(coarse, 4, 4);
    CHECK(mask_equal(up.of("a"), rescale_mask(coarse.of("a"), 4, 4)));
    CHECK(masks_disjoint(up));
}

TEST_CASE("initial masks grow from seed regions to their best reference cluster") {
    const std::vector<int> ga{0, 1, 3, 4}, gb{2, 5, 6, 7, 8};
    const Mat ref = partition_probs({ga, gb}, 9);
    RefineConfig cfg;
    std::vector<ConceptSpec> concepts = dummy_concepts({"left", "right"});

    std::map<std::string, MaskGrid> seeds;
    seeds["left"] = mask_of({0}, 3, 3);
    seeds["right"] = mask_of({8}, 3, 3);
    ConceptMasks init = init_masks_from_inversion(ref, 3, 3, concepts, seeds, cfg);
    CHECK(on_cells(init.of("left")) == ga);
    CHECK(on_cells(init.of("right")) == gb);
    CHECK(masks_disjoint(init));

    // a seed at double resolution is rescaled before matching
    std::map<std::string, MaskGrid> hi = seeds;
    MaskGrid big(6, 6);
    big.at(0, 0) = big.at(0, 1) = big.at(1, 0) = big.at(1, 1) = 1;
    hi["left"] = big;
    ConceptMasks init2 = init_masks_from_inversion(ref, 3, 3, concepts, hi, cfg);
    CHECK(on_cells(init2.of("left")) == ga);

    std::map<std::string, MaskGrid> missing;
    missing["left"] = seeds["left"];
    CHECK_THROWS_AS(init_masks_from_inversion(ref, 3, 3, concepts, missing, cfg), ConfigError);

    std::map<std::string, MaskGrid> overlapping = seeds;
    overlapping["right"] = mask_of({0, 8}, 3, 3);
    CHECK_THROWS_AS(init_masks_from_inversion(ref, 3, 3, concepts, overlapping, cfg),
                    ConfigError);

    std::map<std::string, MaskGrid> hollow = seeds;
    hollow["right"] = MaskGrid(3, 3);  // empty seed: no cluster can match
    try {
        init_masks_from_inversion(ref, 3, 3, concepts, hollow, cfg);
        FAIL("expected InitializationError");
    } catch (const InitializationError& e) {
        CHECK(std::string(e.what()).find("right") != std::string::npos);
    }
}

TEST_CASE("external masks pass through with rescaling; absent entries are config errors") {
    std::vector<ConceptSpec> concepts = dummy_concepts({"a", "b"});
    std::map<std::string, MaskGrid> supplied;
    supplied["a"] = mask_of({0, 1}, 4, 4);
    MaskGrid big(8, 8);
    for (int y = 4; y < 8; ++y)
        for (int x = 0; x < 8; ++x) big.at(y, x) = 1;
    supplied["b"] = big;

    ConceptMasks m = masks_from_external(concepts, supplied, 4, 4);
    CHECK(mask_equal(m.of("a"), supplied["a"]));
    CHECK(on_cells(m.of("b")) == std::vector<int>{8, 9, 10, 11, 12, 13, 14, 15});

    supplied.erase("b");
    CHECK_THROWS_AS(masks_from_external(concepts, supplied, 4, 4), ConfigError);
}

TEST_CASE("zero masks, disjointness, and lookup") {
    std::vector<ConceptSpec> concepts = dummy_concepts({"a", "b"});
    ConceptMasks z = zero_masks(concepts, 4, 4);
    CHECK(z.order == std::vector<std::string>{"a", "b"});
    CHECK(z.of("a").empty_mask());
    CHECK(masks_disjoint(z));
    CHECK_THROWS_AS(z.of("c"), ContractViolation);

    ConceptMasks clash = prev_masks(2, 2, {{"a", {0, 1}}, {"b", {1, 2}}});
    CHECK_FALSE(masks_disjoint(clash));
}

TEST_CASE("mask png roundtrip preserves every cell") {
    MaskGrid m(5, 7);
    for (size_t i = 0; i < m.cells.size(); ++i) m.cells[i] = (i * i + i / 3) % 3 == 0;
    const char* path = "unit_masks_tmp.png";
    write_mask_png(m, path);
    MaskGrid back = read_mask_png(path);
    CHECK(mask_equal(back, m));
    std::remove(path);
}
