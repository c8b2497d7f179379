#include "maskfuse/latent.hpp"

#include "maskfuse/rng.hpp"

namespace maskfuse {

Mat LatentGrid::as_rows() const {
    Mat m(positions(), channels);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) m(y * width + x, c) = at(c, y, x);
    return m;
}

LatentGrid LatentGrid::from_rows(const Mat& rows, int channels, int height, int width) {
    if (rows.rows() != height * width || rows.cols() != channels)
        throw ContractViolation("LatentGrid::from_rows: shape mismatch");
    LatentGrid z(channels, height, width);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) z.at(c, y, x) = rows(y * width + x, c);
    return z;
}

void check_latent(const LatentGrid& z) {
    auto pow2 = [](int v) { return v >= 1 && (v & (v - 1)) == 0; };
    if (z.channels < 1 || z.height < 8 || z.width < 8 || !pow2(z.height) || !pow2(z.width))
        throw ContractViolation("latent: H and W must be powers of two, at least 8");
    for (double v : z.data)
        if (!std::isfinite(v)) throw ContractViolation("latent: non-finite entry");
}

double latent_mse(const LatentGrid& a, const LatentGrid& b) {
    if (!a.same_shape(b)) throw ContractViolation("latent_mse: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

double latent_max_abs_diff(const LatentGrid& a, const LatentGrid& b) {
    if (!a.same_shape(b)) throw ContractViolation("latent_max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

uint64_t latent_hash(const LatentGrid& z) {
    uint64_t h = fnv1a_u64(static_cast<uint64_t>(z.channels));
    h = fnv1a_u64(static_cast<uint64_t>(z.height), h);
    h = fnv1a_u64(static_cast<uint64_t>(z.width), h);
    return fnv1a(z.data.data(), z.data.size() * sizeof(double), h);
}

}  // namespace maskfuse
