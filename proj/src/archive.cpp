#include "maskfuse/archive.hpp"

#include <cstdio>
#include <cstring>

#include "json.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'N', 'A', 'A', '1'};

void append_u64(std::vector<unsigned char>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

uint64_t read_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

void append_f32(std::vector<unsigned char>& out, double v) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

void append_f64(std::vector<unsigned char>& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    append_u64(out, bits);
}

double read_f32(const unsigned char* p) {
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
}

double read_f64(const unsigned char* p) {
    const uint64_t bits = read_u64(p);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

int64_t ArchiveEntry::count() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

void Archive::put(const std::string& name, std::vector<int64_t> shape, std::vector<double> data,
                  const std::string& dtype) {
    if (dtype != "f4" && dtype != "f8")
        throw ContractViolation("archive: unsupported dtype '" + dtype + "'");
    ArchiveEntry e;
    e.shape = std::move(shape);
    e.dtype = dtype;
    e.data = std::move(data);
    if (e.count() != static_cast<int64_t>(e.data.size()))
        throw ContractViolation("archive: data size does not match shape for '" + name + "'");
    entries_[name] = std::move(e);
}

void Archive::put_mat(const std::string& name, const Mat& m, const std::string& dtype) {
    put(name, {m.rows(), m.cols()}, m.raw(), dtype);
}

void Archive::put_scalar(const std::string& name, double v, const std::string& dtype) {
    put(name, {}, {v}, dtype);
}

bool Archive::contains(const std::string& name) const { return entries_.count(name) != 0; }

const ArchiveEntry& Archive::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("archive: missing array '" + name + "'");
    return it->second;
}

Mat Archive::get_mat(const std::string& name) const {
    const ArchiveEntry& e = get(name);
    if (e.shape.size() != 2)
        throw ContractViolation("archive: '" + name + "' is not 2-d");
    return Mat::from_rows(static_cast<int>(e.shape[0]), static_cast<int>(e.shape[1]), e.data);
}

double Archive::get_scalar(const std::string& name) const {
    const ArchiveEntry& e = get(name);
    if (e.data.size() != 1)
        throw ContractViolation("archive: '" + name + "' is not a scalar");
    return e.data[0];
}

std::vector<std::string> Archive::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
}

void Archive::set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }

bool Archive::has_meta(const std::string& key) const { return meta_.count(key) != 0; }

const std::string& Archive::get_meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw IoError("archive: missing metadata key '" + key + "'");
    return it->second;
}

std::vector<unsigned char> Archive::serialize() const {
    // Payload first so the manifest can carry offsets. std::map iteration gives
    // a stable name order, which makes the whole byte stream deterministic.
    std::vector<unsigned char> payload;
    json manifest;
    manifest["arrays"] = json::object();
    for (const auto& [name, e] : entries_) {
        json je;
        je["shape"] = e.shape;
        je["dtype"] = e.dtype;
        je["offset"] = payload.size();
        for (double v : e.data) {
            if (e.dtype == "f4")
                append_f32(payload, v);
            else
                append_f64(payload, v);
        }
        manifest["arrays"][name] = je;
    }
    manifest["meta"] = meta_;

    const std::string mtext = manifest.dump();
    std::vector<unsigned char> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    append_u64(out, mtext.size());
    out.insert(out.end(), mtext.begin(), mtext.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Archive Archive::deserialize(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw IoError("archive: bad magic");
    const uint64_t mlen = read_u64(bytes.data() + 4);
    if (12 + mlen > bytes.size()) throw IoError("archive: truncated manifest");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 12, bytes.begin() + 12 + mlen);
    } catch (const json::exception& e) {
        throw IoError(std::string("archive: manifest parse failure: ") + e.what());
    }

    Archive a;
    const unsigned char* payload = bytes.data() + 12 + mlen;
    const size_t payload_size = bytes.size() - 12 - mlen;
    for (auto& [name, je] : manifest.at("arrays").items()) {
        ArchiveEntry e;
        e.shape = je.at("shape").get<std::vector<int64_t>>();
        e.dtype = je.at("dtype").get<std::string>();
        const uint64_t offset = je.at("offset").get<uint64_t>();
        const int64_t n = e.count();
        const size_t width = e.dtype == "f4" ? 4 : 8;
        if (offset + n * width > payload_size)
            throw IoError("archive: array '" + name + "' exceeds payload");
        e.data.resize(n);
        for (int64_t i = 0; i < n; ++i) {
            const unsigned char* p = payload + offset + i * width;
            e.data[i] = e.dtype == "f4" ? read_f32(p) : read_f64(p);
        }
        a.entries_[name] = std::move(e);
    }
    if (manifest.contains("meta"))
        a.meta_ = manifest["meta"].get<std::map<std::string, std::string>>();
    return a;
}

void Archive::save(const std::string& path) const {
    const std::vector<unsigned char> bytes = serialize();
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("archive: cannot open '" + path + "' for writing");
    const size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (written != bytes.size()) throw IoError("archive: short write to '" + path + "'");
}

Archive Archive::load(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("archive: cannot open '" + path + "'");
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<unsigned char> bytes(size > 0 ? size : 0);
    const size_t got = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (got != bytes.size()) throw IoError("archive: short read from '" + path + "'");
    return deserialize(bytes);
}

uint64_t Archive::content_hash() const {
    const std::vector<unsigned char> bytes = serialize();
    return fnv1a(bytes.data(), bytes.size());
}

}  // namespace maskfuse
