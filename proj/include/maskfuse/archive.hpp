#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maskfuse/mat.hpp"

namespace maskfuse {

// Named-array archive: a magic tag, a JSON manifest (name -> shape/dtype/offset
// plus free-form metadata), then raw little-endian payload. Arrays live in
// memory as double; dtype "f4" entries are stored as float32 on disk, so only
// values exactly representable in float32 roundtrip bitwise (weights are drawn
// at float32 precision for exactly this reason).
struct ArchiveEntry {
    std::vector<int64_t> shape;
    std::string dtype = "f8";  // "f4" or "f8"
    std::vector<double> data;

    int64_t count() const;
};

class Archive {
public:
    void put(const std::string& name, std::vector<int64_t> shape, std::vector<double> data,
             const std::string& dtype = "f8");
    void put_mat(const std::string& name, const Mat& m, const std::string& dtype = "f8");
    void put_scalar(const std::string& name, double v, const std::string& dtype = "f8");

    bool contains(const std::string& name) const;
    const ArchiveEntry& get(const std::string& name) const;
    Mat get_mat(const std::string& name) const;
    double get_scalar(const std::string& name) const;
    std::vector<std::string> names() const;

    void set_meta(const std::string& key, const std::string& value);
    bool has_meta(const std::string& key) const;
    const std::string& get_meta(const std::string& key) const;

    void save(const std::string& path) const;
    static Archive load(const std::string& path);

    std::vector<unsigned char> serialize() const;
    static Archive deserialize(const std::vector<unsigned char>& bytes);

    // FNV-1a over the serialized bytes; stable content identity.
    uint64_t content_hash() const;

private:
    std::map<std::string, ArchiveEntry> entries_;
    std::map<std::string, std::string> meta_;
};

}  // namespace maskfuse
