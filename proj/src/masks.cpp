#include "maskfuse/masks.hpp"

#include <algorithm>
#include <cmath>

#include "maskfuse/image.hpp"
#include "maskfuse/log.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

size_t MaskGrid::count() const {
    size_t n = 0;
    for (uint8_t c : cells) n += c != 0;
    return n;
}

const MaskGrid& ConceptMasks::of(const std::string& id) const {
    auto it = by_concept.find(id);
    if (it == by_concept.end()) throw ContractViolation("no mask for concept '" + id + "'");
    return it->second;
}

MaskGrid SegmentationMap::cluster_mask(int label) const {
    MaskGrid m(h, w);
    for (size_t i = 0; i < labels.size(); ++i) m.cells[i] = labels[i] == label ? 1 : 0;
    return m;
}

namespace {

double sq_dist(const Mat& points, int row, const std::vector<double>& center) {
    double d = 0.0;
    for (int j = 0; j < points.cols(); ++j) {
        const double diff = points(row, j) - center[j];
        d += diff * diff;
    }
    return d;
}

}  // namespace

SegmentationMap kmeans_rows(const Mat& points, int k, int h, int w, uint64_t seed,
                            int max_iter, double tol) {
    const int p = points.rows();
    const int dim = points.cols();
    if (p != h * w) throw ContractViolation("kmeans: point count does not match the grid");
    if (k < 1 || k > p) throw ContractViolation("kmeans: k out of range");

    DeterministicRng rng(seed, "kmeans");
    // k-means++ seeding
    std::vector<std::vector<double>> centers;
    centers.reserve(k);
    {
        std::vector<double> c(dim);
        const int first = static_cast<int>(rng.below(static_cast<uint64_t>(p)));
        for (int j = 0; j < dim; ++j) c[j] = points(first, j);
        centers.push_back(c);
    }
    std::vector<double> best_d(p);
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < p; ++i) {
            double d = sq_dist(points, i, centers[0]);
            for (size_t c = 1; c < centers.size(); ++c)
                d = std::min(d, sq_dist(points, i, centers[c]));
            best_d[i] = d;
            total += d;
        }
        int chosen;
        if (total <= 0.0) {
            // all points coincide with existing centers; duplicates collapse
            // into empty clusters later
            chosen = static_cast<int>(rng.below(static_cast<uint64_t>(p)));
        } else {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            chosen = p - 1;
            for (int i = 0; i < p; ++i) {
                acc += best_d[i];
                if (acc >= r) {
                    chosen = i;
                    break;
                }
            }
        }
        std::vector<double> c(dim);
        for (int j = 0; j < dim; ++j) c[j] = points(chosen, j);
        centers.push_back(std::move(c));
    }

    // Lloyd iterations
    std::vector<int> labels(p, 0);
    double prev_inertia = -1.0;
    for (int it = 0; it < max_iter; ++it) {
        double inertia = 0.0;
        for (int i = 0; i < p; ++i) {
            int best = 0;
            double d = sq_dist(points, i, centers[0]);
            for (int c = 1; c < k; ++c) {
                const double dc = sq_dist(points, i, centers[c]);
                if (dc < d) {
                    d = dc;
                    best = c;
                }
            }
            labels[i] = best;
            inertia += d;
        }
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<int> counts(k, 0);
        for (int i = 0; i < p; ++i) {
            ++counts[labels[i]];
            for (int j = 0; j < dim; ++j) sums[labels[i]][j] += points(i, j);
        }
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (int j = 0; j < dim; ++j) centers[c][j] = sums[c][j] / counts[c];
        if (prev_inertia >= 0.0) {
            const double denom = std::max(prev_inertia, 1e-300);
            if (std::fabs(prev_inertia - inertia) <= tol * denom) break;
        }
        prev_inertia = inertia;
    }

    // drop empty clusters; compact labels in first-occurrence order
    std::vector<int> remap(k, -1);
    int next = 0;
    for (int i = 0; i < p; ++i) {
        if (remap[labels[i]] < 0) remap[labels[i]] = next++;
        labels[i] = remap[labels[i]];
    }
    if (next < k)
        MF_LOG_DEBUG("kmeans: %d of %d clusters empty, returning %d", k - next, k, next);

    SegmentationMap seg;
    seg.h = h;
    seg.w = w;
    seg.k = next;
    seg.labels = std::move(labels);
    return seg;
}

SegmentationMap cluster_self_attention(const Mat& probs, int k, int h, int w,
                                       const RefineConfig& config) {
    if (probs.rows() != probs.cols())
        throw ContractViolation("cluster_self_attention: probability matrix must be square");
    return kmeans_rows(probs, k, h, w, config.kmeans_seed, config.kmeans_max_iter,
                       config.kmeans_tol);
}

double matching_degree(const MaskGrid& segment, const MaskGrid& prev_mask) {
    if (segment.h != prev_mask.h || segment.w != prev_mask.w)
        throw ContractViolation("matching_degree: resolution mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < segment.cells.size(); ++i) {
        const bool a = segment.cells[i] != 0, b = prev_mask.cells[i] != 0;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<MaskGrid> candidate_segments(const Mat& probs, int n_concepts, int h, int w,
                                         const RefineConfig& config) {
    std::vector<MaskGrid> out;
    const int lo = std::max(config.cluster_min_mult * n_concepts, 1);
    const int hi = config.cluster_max_mult * n_concepts;
    for (int k = lo; k <= hi; ++k) {
        const SegmentationMap seg =
            cluster_self_attention(probs, std::min(k, probs.rows()), h, w, config);
        for (int label = 0; label < seg.k; ++label) out.push_back(seg.cluster_mask(label));
    }
    return out;
}

namespace {

// Best-IoU candidate against the previous mask; empty grid when every
// candidate scores zero (the caller decides the fallback).
MaskGrid best_candidate(const std::vector<MaskGrid>& candidates, const MaskGrid& prev,
                        bool* any_positive) {
    double best = 0.0;
    const MaskGrid* pick = nullptr;
    for (const MaskGrid& c : candidates) {
        const double d = matching_degree(c, prev);
        if (d > best) {
            best = d;
            pick = &c;
        }
    }
    *any_positive = pick != nullptr;
    return pick ? *pick : MaskGrid(prev.h, prev.w);
}

ConceptMasks overlap_resolve(const std::vector<std::string>& order,
                             const std::map<std::string, MaskGrid>& unions,
                             const ConceptMasks& prev) {
    ConceptMasks out;
    out.h = prev.h;
    out.w = prev.w;
    out.order = order;
    std::vector<int> sum(static_cast<size_t>(prev.h) * prev.w, 0);
    for (const auto& [id, m] : unions)
        for (size_t i = 0; i < m.cells.size(); ++i) sum[i] += m.cells[i] != 0;
    for (const std::string& id : order) {
        const MaskGrid& mp = unions.at(id);
        const MaskGrid& old = prev.of(id);
        MaskGrid m(prev.h, prev.w);
        for (size_t i = 0; i < m.cells.size(); ++i)
            m.cells[i] = sum[i] > 1 ? old.cells[i] : mp.cells[i];
        out.by_concept[id] = std::move(m);
    }
    return out;
}

}  // namespace

RefineOutcome refine_masks(const Mat& probs_base, const std::vector<Mat>& probs_customs,
                           const ConceptMasks& prev, const RefineConfig& config) {
    const int n = static_cast<int>(prev.order.size());
    if (static_cast<int>(probs_customs.size()) != n)
        throw ContractViolation("refine_masks: one custom attention map per concept required");

    RefineOutcome outcome;
    const std::vector<MaskGrid> base_cands =
        candidate_segments(probs_base, n, prev.h, prev.w, config);
    std::map<std::string, MaskGrid> unions;
    for (int i = 0; i < n; ++i) {
        const std::string& id = prev.order[i];
        const MaskGrid& old = prev.of(id);
        bool custom_hit = false, base_hit = false;
        const std::vector<MaskGrid> custom_cands =
            candidate_segments(probs_customs[i], n, prev.h, prev.w, config);
        const MaskGrid m_custom = best_candidate(custom_cands, old, &custom_hit);
        const MaskGrid m_base = best_candidate(base_cands, old, &base_hit);
        if (!custom_hit && !base_hit) {
            outcome.warnings.push_back("concept '" + id +
                                       "': no cluster overlaps the previous mask, keeping it");
            MF_LOG_WARN("%s", outcome.warnings.back().c_str());
            unions[id] = old;
            continue;
        }
        MaskGrid u(prev.h, prev.w);
        for (size_t c = 0; c < u.cells.size(); ++c)
            u.cells[c] = (m_custom.cells[c] || m_base.cells[c]) ? 1 : 0;
        unions[id] = std::move(u);
    }
    outcome.masks = overlap_resolve(prev.order, unions, prev);
    return outcome;
}

MaskGrid rescale_mask(const MaskGrid& mask, int target_h, int target_w) {
    if (mask.h <= 0 || mask.w <= 0) throw ContractViolation("rescale_mask: empty source");
    if (target_h == mask.h && target_w == mask.w) return mask;
    const bool up = target_h > mask.h;
    const int fh = up ? target_h / mask.h : mask.h / target_h;
    const int fw = up ? target_w / mask.w : mask.w / target_w;
    const bool divides = up ? (target_h % mask.h == 0 && target_w % mask.w == 0)
                            : (mask.h % target_h == 0 && mask.w % target_w == 0);
    if (!divides || fh != fw || (target_h > mask.h) != (target_w > mask.w))
        throw ContractViolation("rescale_mask: non-integer or anisotropic scale factor");
    if ((fh & (fh - 1)) != 0)
        throw ContractViolation("rescale_mask: scale factor must be a power of two");

    MaskGrid out(target_h, target_w);
    if (up) {
        for (int y = 0; y < target_h; ++y)
            for (int x = 0; x < target_w; ++x) out.at(y, x) = mask.at(y / fh, x / fw);
    } else {
        for (int y = 0; y < target_h; ++y)
            for (int x = 0; x < target_w; ++x) {
                int s = 0;
                for (int dy = 0; dy < fh; ++dy)
                    for (int dx = 0; dx < fw; ++dx) s += mask.at(y * fh + dy, x * fw + dx);
                out.at(y, x) = 2 * s >= fh * fw ? 1 : 0;  // average >= 0.5, ties up
            }
    }
    return out;
}

ConceptMasks rescale_concept_masks(const ConceptMasks& masks, int target_h, int target_w) {
    ConceptMasks out;
    out.h = target_h;
    out.w = target_w;
    out.order = masks.order;
    if (target_h == masks.h && target_w == masks.w) {
        out.by_concept = masks.by_concept;
        return out;
    }
    if (target_h > masks.h) {
        for (const std::string& id : masks.order)
            out.by_concept[id] = rescale_mask(masks.of(id), target_h, target_w);
        return out;
    }
    // validate the factor via the single-mask path, then award each coarse
    // cell to the best-covering concept
    if (!masks.order.empty()) rescale_mask(masks.of(masks.order.front()), target_h, target_w);
    const int f = masks.h / target_h;
    for (const std::string& id : masks.order) out.by_concept[id] = MaskGrid(target_h, target_w);
    for (int y = 0; y < target_h; ++y)
        for (int x = 0; x < target_w; ++x) {
            int best = 0;
            const std::string* owner = nullptr;
            for (const std::string& id : masks.order) {
                const MaskGrid& m = masks.of(id);
                int s = 0;
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx) s += m.at(y * f + dy, x * f + dx);
                if (s > best) {
                    best = s;
                    owner = &id;
                }
            }
            if (owner && 2 * best >= f * f) out.by_concept[*owner].at(y, x) = 1;
        }
    return out;
}

ConceptMasks init_masks_from_inversion(const Mat& ref_probs, int h, int w,
                                       const std::vector<ConceptSpec>& concepts,
                                       const std::map<std::string, MaskGrid>& seed_regions,
                                       const RefineConfig& config) {
    ConceptMasks seeds;
    seeds.h = h;
    seeds.w = w;
    for (const ConceptSpec& c : concepts) {
        auto it = seed_regions.find(c.concept_id);
        if (it == seed_regions.end())
            throw ConfigError("no seed region for concept '" + c.concept_id + "'");
        seeds.order.push_back(c.concept_id);
        seeds.by_concept[c.concept_id] = it->second.h == h && it->second.w == w
                                             ? it->second
                                             : rescale_mask(it->second, h, w);
    }
    if (!masks_disjoint(seeds)) throw ConfigError("seed regions overlap; they must be disjoint");

    if (concepts.empty()) return seeds;
    const std::vector<MaskGrid> cands =
        candidate_segments(ref_probs, static_cast<int>(concepts.size()), h, w, config);
    std::map<std::string, MaskGrid> picked;
    for (const ConceptSpec& c : concepts) {
        bool hit = false;
        MaskGrid best = best_candidate(cands, seeds.of(c.concept_id), &hit);
        if (!hit)
            throw InitializationError("mask initialization: no reference cluster overlaps the "
                                      "seed region of concept '" +
                                      c.concept_id + "'");
        picked[c.concept_id] = std::move(best);
    }
    return overlap_resolve(seeds.order, picked, seeds);
}

ConceptMasks masks_from_external(const std::vector<ConceptSpec>& concepts,
                                 const std::map<std::string, MaskGrid>& supplied, int h, int w) {
    ConceptMasks out;
    out.h = h;
    out.w = w;
    for (const ConceptSpec& c : concepts) {
        auto it = supplied.find(c.concept_id);
        if (it == supplied.end())
            throw ConfigError("no external mask for concept '" + c.concept_id + "'");
        out.order.push_back(c.concept_id);
        out.by_concept[c.concept_id] = it->second.h == h && it->second.w == w
                                           ? it->second
                                           : rescale_mask(it->second, h, w);
    }
    if (!masks_disjoint(out)) throw ConfigError("external masks overlap; they must be disjoint");
    return out;
}

ConceptMasks zero_masks(const std::vector<ConceptSpec>& concepts, int h, int w) {
    ConceptMasks out;
    out.h = h;
    out.w = w;
    for (const ConceptSpec& c : concepts) {
        out.order.push_back(c.concept_id);
        out.by_concept[c.concept_id] = MaskGrid(h, w);
    }
    return out;
}

bool masks_disjoint(const ConceptMasks& masks) {
    std::vector<int> sum(static_cast<size_t>(masks.h) * masks.w, 0);
    for (const auto& [id, m] : masks.by_concept)
        for (size_t i = 0; i < m.cells.size(); ++i) sum[i] += m.cells[i] != 0;
    for (int s : sum)
        if (s > 1) return false;
    return true;
}

void write_mask_png(const MaskGrid& mask, const std::string& path) {
    std::vector<uint8_t> gray(mask.cells.size());
    for (size_t i = 0; i < mask.cells.size(); ++i) gray[i] = mask.cells[i] ? 255 : 0;
    write_png_gray(path, mask.w, mask.h, gray);
}

MaskGrid read_mask_png(const std::string& path) {
    const ImageU8 img = read_png(path);
    MaskGrid m(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            m.at(y, x) = img.rgb[3 * (static_cast<size_t>(y) * img.width + x)] >= 128 ? 1 : 0;
    return m;
}

}  // namespace maskfuse
