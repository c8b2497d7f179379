#include "maskfuse/rng.hpp"

#include <cmath>
#include <cstdio>

namespace maskfuse {

uint64_t fnv1a(const void* data, size_t len, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a_str(const std::string& s, uint64_t h) { return fnv1a(s.data(), s.size(), h); }

uint64_t fnv1a_u64(uint64_t v, uint64_t h) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    return fnv1a(bytes, 8, h);
}

uint64_t fnv1a_doubles(const std::vector<double>& v, uint64_t h) {
    return fnv1a(v.data(), v.size() * sizeof(double), h);
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

double DeterministicRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller on two fresh uniforms; u1 shifted away from 0 for the log.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

uint64_t DeterministicRng::below(uint64_t n) {
    // Lemire multiply-shift; bias is < 2^-64 per draw, irrelevant here and
    // fully deterministic.
    const unsigned __int128 m = static_cast<unsigned __int128>(engine_()) * n;
    return static_cast<uint64_t>(m >> 64);
}

std::vector<double> DeterministicRng::normal_vec(size_t n) {
    std::vector<double> out(n);
    for (double& v : out) v = normal();
    return out;
}

}  // namespace maskfuse
