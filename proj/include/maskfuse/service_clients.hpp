#pragma once

#include "maskfuse/eval.hpp"

namespace maskfuse {

// Narrow request/response contract with out-of-process model services:
//   POST segment_path  {image_id, prompt, width, height, rgb_b64} ->
//       {segments: [{mask_b64}, ...]}   (one w*h 0/1 byte plane each)
//   POST embed_path    {width, height, rgb_b64} -> {embedding: [..]}
// Bounding boxes and crops are derived client-side from the returned masks.
struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string segment_path = "/segment";
    std::string embed_path = "/embed";
    int timeout_ms = 2000;
    int retries = 2;  // additional attempts after the first
};

class HttpSegmenterClient : public SegmenterClient {
public:
    explicit HttpSegmenterClient(ServiceConfig cfg) : cfg_(std::move(cfg)) {}

    std::vector<std::string> supported_prompts() const override { return {}; }
    std::vector<SegmentRecord> segment(const ImageU8& image, const std::string& image_id,
                                       const std::string& prompt) override;

private:
    ServiceConfig cfg_;
};

class HttpEmbeddingScorer : public EmbeddingScorer {
public:
    HttpEmbeddingScorer(ServiceConfig cfg, int dimensionality)
        : cfg_(std::move(cfg)), dim_(dimensionality) {}

    int dim() const override { return dim_; }
    std::vector<double> embed(const SegmentRecord& segment) override;

private:
    ServiceConfig cfg_;
    int dim_;
};

// Exposed for the service clients and their tests.
std::string base64_encode(const std::vector<uint8_t>& data);
std::vector<uint8_t> base64_decode(const std::string& text);

}  // namespace maskfuse
