#include "maskfuse/codec.hpp"

#include "maskfuse/rng.hpp"

namespace maskfuse {

Mat invert_small(const Mat& m) {
    if (m.rows() != m.cols()) throw ContractViolation("invert_small: not square");
    const int n = m.rows();
    Mat a = m;
    Mat inv(n, n);
    for (int i = 0; i < n; ++i) inv(i, i) = 1.0;
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
        if (std::fabs(a(pivot, col)) < 1e-12)
            throw ContractViolation("invert_small: singular matrix");
        if (pivot != col)
            for (int j = 0; j < n; ++j) {
                std::swap(a(col, j), a(pivot, j));
                std::swap(inv(col, j), inv(pivot, j));
            }
        const double d = a(col, col);
        for (int j = 0; j < n; ++j) {
            a(col, j) /= d;
            inv(col, j) /= d;
        }
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a(r, col);
            if (f == 0.0) continue;
            for (int j = 0; j < n; ++j) {
                a(r, j) -= f * a(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

ToyCodec::ToyCodec(int channels, int factor, uint64_t seed)
    : channels_(channels), factor_(factor) {
    DeterministicRng rng(seed, "codec");
    d_ = Mat(3 * factor * factor, channels);
    for (double& v : d_.raw())
        v = static_cast<double>(static_cast<float>(0.2 * rng.normal()));
    e_ = matmul(invert_small(matmul(transpose(d_), d_)), transpose(d_));
}

LatentGrid ToyCodec::encode(const Image& pixels) const {
    if (pixels.width % factor_ != 0 || pixels.height % factor_ != 0)
        throw IngestionError("codec: image dimensions must be multiples of " +
                             std::to_string(factor_));
    const int h = pixels.height / factor_, w = pixels.width / factor_;
    LatentGrid z(channels_, h, w);
    const int block = 3 * factor_ * factor_;
    Mat v(block, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c)
                for (int dy = 0; dy < factor_; ++dy)
                    for (int dx = 0; dx < factor_; ++dx)
                        v((c * factor_ + dy) * factor_ + dx, 0) =
                            pixels.at(c, y * factor_ + dy, x * factor_ + dx);
            const Mat zc = matmul(e_, v);
            for (int c = 0; c < channels_; ++c) z.at(c, y, x) = zc(c, 0);
        }
    return z;
}

Image ToyCodec::decode(const LatentGrid& z) const {
    if (z.channels != channels_)
        throw ContractViolation("codec: latent channel count mismatch");
    Image img(z.width * factor_, z.height * factor_);
    Mat zc(channels_, 1);
    for (int y = 0; y < z.height; ++y)
        for (int x = 0; x < z.width; ++x) {
            for (int c = 0; c < channels_; ++c) zc(c, 0) = z.at(c, y, x);
            const Mat v = matmul(d_, zc);
            for (int c = 0; c < 3; ++c)
                for (int dy = 0; dy < factor_; ++dy)
                    for (int dx = 0; dx < factor_; ++dx)
                        img.at(c, y * factor_ + dy, x * factor_ + dx) =
                            v((c * factor_ + dy) * factor_ + dx, 0);
        }
    return img;
}

}  // namespace maskfuse
