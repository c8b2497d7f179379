#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace maskfuse {

// 64-bit FNV-1a. Used for content hashes (weights, images, configs) and for
// deriving stream seeds from string labels, so hashes are stable across
// platforms and standard-library versions.
uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull);
uint64_t fnv1a_str(const std::string& s, uint64_t h = 0xcbf29ce484222325ull);
uint64_t fnv1a_u64(uint64_t v, uint64_t h = 0xcbf29ce484222325ull);
uint64_t fnv1a_doubles(const std::vector<double>& v, uint64_t h = 0xcbf29ce484222325ull);

std::string hash_hex(uint64_t h);

// mt19937_64 with hand-rolled uniform/normal transforms. std::*_distribution
// output is implementation-defined, so we avoid it: the exact draw sequence is
// part of the reproducibility contract.
class DeterministicRng {
public:
    explicit DeterministicRng(uint64_t seed) : engine_(seed) {}
    // Sub-stream seeded by (seed, label) so independent consumers cannot
    // collide or shift each other's sequences.
    DeterministicRng(uint64_t seed, const std::string& label)
        : engine_(fnv1a_str(label, fnv1a_u64(seed))) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1): top 53 bits of the engine output.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; one cached value per pair.
    double normal();

    // Uniform integer in [0, n) by rejection-free 128-bit multiply-shift.
    uint64_t below(uint64_t n);

    std::vector<double> normal_vec(size_t n);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace maskfuse
