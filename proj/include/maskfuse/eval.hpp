#pragma once

#include <map>
#include <string>
#include <vector>

#include "maskfuse/errors.hpp"
#include "maskfuse/image.hpp"

namespace maskfuse {

// One subject segment pulled out of an image by a prompt.
struct SegmentRecord {
    std::string source_id;
    std::string prompt;
    int width = 0, height = 0;           // full-image grid the mask lives on
    std::vector<uint8_t> mask;           // width*height, 0/1, non-empty
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // mask bounding box, half-open
    ImageU8 crop;                        // pixels under the bounding box

    void validate() const;
};

// Detection/segmentation seam. Implementations must be deterministic for
// identical inputs. An empty supported-prompt list means unconstrained.
class SegmenterClient {
public:
    virtual ~SegmenterClient() = default;
    virtual std::vector<std::string> supported_prompts() const = 0;
    virtual int max_image_size() const { return 4096; }
    virtual std::vector<SegmentRecord> segment(const ImageU8& image, const std::string& image_id,
                                               const std::string& prompt) = 0;
};

// Segment-similarity seam: embeddings plus a similarity on them. The default
// similarity is cosine (identical embeddings score exactly 1); lookup-table
// scorers override similarity directly.
class EmbeddingScorer {
public:
    virtual ~EmbeddingScorer() = default;
    virtual int dim() const = 0;
    virtual double lo() const { return -1.0; }
    virtual double hi() const { return 1.0; }
    virtual std::vector<double> embed(const SegmentRecord& segment) = 0;
    virtual double similarity(const SegmentRecord& a, const SegmentRecord& b);
};

// Whole-image prompt-alignment seam; ships mock-only.
class TextScorer {
public:
    virtual ~TextScorer() = default;
    virtual double score(const ImageU8& image, const std::string& prompt) = 0;
};

// --- deterministic mock clients -------------------------------------------

struct ColorRule {
    std::string prompt;
    uint8_t r = 0, g = 0, b = 0;
    int tolerance = 8;  // per-channel absolute
};

// Matches pixels near a configured color per prompt and splits them into
// 4-connected components, largest-first by (y0, x0) scan order.
class ColorRegionSegmenter : public SegmenterClient {
public:
    explicit ColorRegionSegmenter(std::vector<ColorRule> rules, int min_area = 4)
        : rules_(std::move(rules)), min_area_(min_area) {}

    std::vector<std::string> supported_prompts() const override;
    std::vector<SegmentRecord> segment(const ImageU8& image, const std::string& image_id,
                                       const std::string& prompt) override;

private:
    std::vector<ColorRule> rules_;
    int min_area_;
};

// Normalized mean-color embedding, cosine similarity in [0, 1].
class HistogramScorer : public EmbeddingScorer {
public:
    int dim() const override { return 3; }
    double lo() const override { return 0.0; }
    double hi() const override { return 1.0; }
    std::vector<double> embed(const SegmentRecord& segment) override;
};

// Fixture scorer: similarities looked up by unordered (source_id|prompt) key
// pair; unknown pairs score 0, identical keys score 1.
class TableScorer : public EmbeddingScorer {
public:
    void set(const std::string& key_a, const std::string& key_b, double sim);
    static std::string key(const SegmentRecord& s) { return s.source_id + "|" + s.prompt; }

    int dim() const override { return 1; }
    double lo() const override { return 0.0; }
    double hi() const override { return 1.0; }
    std::vector<double> embed(const SegmentRecord& segment) override;
    double similarity(const SegmentRecord& a, const SegmentRecord& b) override;

private:
    std::map<std::pair<std::string, std::string>, double> table_;
};

// Prompt hashed to a unit direction, scored against the image's normalized
// mean color.
class MockTextScorer : public TextScorer {
public:
    double score(const ImageU8& image, const std::string& prompt) override;
};

// --- metrics ---------------------------------------------------------------

struct ConceptEval {
    std::string concept_id;
    std::string prompt;  // class-word prompt used for extraction
    std::vector<std::string> reference_ids;
    std::vector<ImageU8> references;  // parallel to reference_ids, >= 1
};

struct SegSimReport {
    struct PairSim {
        std::string concept_id;
        std::string reference_id;
        int reference_segment = 0;
        int generated_segment = 0;  // index into the unioned generated list
        double sim = 0.0;
    };
    std::map<std::string, double> concept_averages;
    std::map<std::string, std::vector<double>> reference_max;  // concept -> per-reference best
    std::vector<PairSim> pairs;                                // full audit matrix
    double score = 0.0;
};

// Capability-checked client call; client exceptions surface as
// EvaluationError for the caller to record.
std::vector<SegmentRecord> extract_segments(const ImageU8& image, const std::string& image_id,
                                            const std::string& prompt, SegmenterClient& client);

// Union generated segments over all concept prompts (deduplicated by mask),
// then per concept take each reference image's best pairwise similarity and
// average, and finally average over concepts.
SegSimReport segsim_score(const ImageU8& generated, const std::string& generated_id,
                          const std::vector<ConceptEval>& concepts, SegmenterClient& segmenter,
                          EmbeddingScorer& scorer);

struct CountReport {
    int expected_total = 0;
    std::vector<int> counts;  // per successfully processed image
    std::vector<std::string> failures;
    double frac_fewer = 0.0;
    double frac_more = 0.0;
};

// Per image, the number of distinct detected subjects across the category
// prompts; fractions are taken over successfully processed images.
CountReport count_subjects(const std::vector<std::pair<std::string, ImageU8>>& images,
                           const std::vector<std::string>& category_prompts, int expected_total,
                           SegmenterClient& client);

// --- batch plumbing --------------------------------------------------------

struct BatchEntry {
    std::string image_path;
    std::string prompt_id;
    uint64_t seed = 0;
};

std::vector<BatchEntry> read_batch_manifest(const std::string& path);
void write_batch_manifest(const std::vector<BatchEntry>& entries, const std::string& path);

struct BatchEvalResult {
    std::vector<std::pair<std::string, SegSimReport>> per_image;  // image path -> report
    CountReport count;
    std::vector<std::string> failures;
    double mean_segsim = 0.0;
    double mean_text_alignment = 0.0;
    bool has_text_alignment = false;
};

// prompt_texts maps a manifest entry's prompt_id to the prompt wording the
// text scorer sees; entries without a mapping skip text alignment.
BatchEvalResult evaluate_batch(const std::vector<BatchEntry>& entries,
                               const std::vector<ConceptEval>& concepts,
                               const std::vector<std::string>& category_prompts,
                               int expected_total, SegmenterClient& segmenter,
                               EmbeddingScorer& scorer, TextScorer* text = nullptr,
                               const std::map<std::string, std::string>& prompt_texts = {});

// Structured report plus an aligned-column table.
void write_eval_reports(const BatchEvalResult& result, const std::string& json_path,
                        const std::string& table_path);

// Reference values measured with full-scale pretrained components — far
// outside the toy backend's reach. Documentation only; nothing asserts them.
struct FullScaleReference {
    static constexpr double text_alignment_clip = 0.3107;
    static constexpr double text_alignment_reward = 1.2542;
    static constexpr double image_alignment_clip = 0.9190;
    static constexpr double image_alignment_dino = 0.8569;
    static constexpr double frac_fewer = 0.0075;
    static constexpr double frac_more = 0.0350;
};

}  // namespace maskfuse
