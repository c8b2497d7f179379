#include "maskfuse/service_clients.hpp"

#include <httplib.h>
#include <json.hpp>

namespace maskfuse {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int alphabet_index(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

nlohmann::json post_json(const ServiceConfig& cfg, const std::string& path,
                         const nlohmann::json& body, const std::string& what) {
    httplib::Client client(cfg.host, cfg.port);
    const time_t sec = cfg.timeout_ms / 1000, usec = (cfg.timeout_ms % 1000) * 1000;
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
        httplib::Result res = client.Post(path, payload, "application/json");
        if (!res) {
            last_error = "no response (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status != 200) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        nlohmann::json out = nlohmann::json::parse(res->body, nullptr, false);
        if (out.is_discarded()) {
            last_error = "unparseable response body";
            continue;
        }
        return out;
    }
    throw EvaluationError(what + " service at " + cfg.host + ":" + std::to_string(cfg.port) +
                          path + " failed after " + std::to_string(cfg.retries + 1) +
                          " attempts: " + last_error);
}

}  // namespace

std::string base64_encode(const std::vector<uint8_t>& data) {
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    for (size_t i = 0; i < data.size(); i += 3) {
        uint32_t chunk = uint32_t(data[i]) << 16;
        if (i + 1 < data.size()) chunk |= uint32_t(data[i + 1]) << 8;
        if (i + 2 < data.size()) chunk |= uint32_t(data[i + 2]);
        out.push_back(kAlphabet[(chunk >> 18) & 63]);
        out.push_back(kAlphabet[(chunk >> 12) & 63]);
        out.push_back(i + 1 < data.size() ? kAlphabet[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < data.size() ? kAlphabet[chunk & 63] : '=');
    }
    return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
    std::vector<uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    uint32_t chunk = 0;
    int have = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        const int v = alphabet_index(c);
        if (v < 0) throw IngestionError("invalid base64 input");
        chunk = (chunk << 6) | uint32_t(v);
        if (++have == 4) {
            out.push_back((chunk >> 16) & 0xff);
            out.push_back((chunk >> 8) & 0xff);
            out.push_back(chunk & 0xff);
            have = 0;
            chunk = 0;
        }
    }
    if (have == 2)
        out.push_back((chunk >> 4) & 0xff);
    else if (have == 3) {
        out.push_back((chunk >> 10) & 0xff);
        out.push_back((chunk >> 2) & 0xff);
    } else if (have != 0) {
        throw IngestionError("truncated base64 input");
    }
    return out;
}

std::vector<SegmentRecord> HttpSegmenterClient::segment(const ImageU8& image,
                                                        const std::string& image_id,
                                                        const std::string& prompt) {
    nlohmann::json req;
    req["image_id"] = image_id;
    req["prompt"] = prompt;
    req["width"] = image.width;
    req["height"] = image.height;
    req["rgb_b64"] = base64_encode(image.rgb);
    const nlohmann::json res = post_json(cfg_, cfg_.segment_path, req, "segmentation");
    if (!res.contains("segments") || !res["segments"].is_array())
        throw EvaluationError("segmentation service returned no segment list");

    std::vector<SegmentRecord> out;
    for (const nlohmann::json& s : res["segments"]) {
        SegmentRecord rec;
        rec.source_id = image_id;
        rec.prompt = prompt;
        rec.width = image.width;
        rec.height = image.height;
        rec.mask = base64_decode(s.at("mask_b64").get<std::string>());
        if (static_cast<int>(rec.mask.size()) != image.width * image.height)
            throw EvaluationError("segmentation service returned a mask of the wrong size");
        rec.x0 = image.width;
        rec.y0 = image.height;
        rec.x1 = 0;
        rec.y1 = 0;
        for (int i = 0; i < image.width * image.height; ++i) {
            if (!rec.mask[i]) continue;
            const int y = i / image.width, x = i % image.width;
            rec.x0 = std::min(rec.x0, x);
            rec.y0 = std::min(rec.y0, y);
            rec.x1 = std::max(rec.x1, x + 1);
            rec.y1 = std::max(rec.y1, y + 1);
        }
        if (rec.x1 <= rec.x0) continue;  // all-empty mask: drop
        rec.crop.width = rec.x1 - rec.x0;
        rec.crop.height = rec.y1 - rec.y0;
        rec.crop.rgb.resize(static_cast<size_t>(rec.crop.width) * rec.crop.height * 3);
        for (int y = rec.y0; y < rec.y1; ++y)
            for (int x = rec.x0; x < rec.x1; ++x)
                for (int c = 0; c < 3; ++c)
                    rec.crop.rgb[3 * (static_cast<size_t>(y - rec.y0) * rec.crop.width +
                                      (x - rec.x0)) + c] =
                        image.rgb[3 * (static_cast<size_t>(y) * image.width + x) + c];
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<double> HttpEmbeddingScorer::embed(const SegmentRecord& segment) {
    nlohmann::json req;
    req["width"] = segment.crop.width;
    req["height"] = segment.crop.height;
    req["rgb_b64"] = base64_encode(segment.crop.rgb);
    const nlohmann::json res = post_json(cfg_, cfg_.embed_path, req, "embedding");
    if (!res.contains("embedding") || !res["embedding"].is_array())
        throw EvaluationError("embedding service returned no vector");
    std::vector<double> v = res["embedding"].get<std::vector<double>>();
    if (static_cast<int>(v.size()) != dim_)
        throw EvaluationError("embedding service returned dimension " +
                              std::to_string(v.size()) + ", expected " + std::to_string(dim_));
    return v;
}

}  // namespace maskfuse
