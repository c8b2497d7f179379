#pragma once

#include "maskfuse/image.hpp"
#include "maskfuse/latent.hpp"
#include "maskfuse/mat.hpp"

namespace maskfuse {

// Linear bias-free pixel<->latent codec. Each latent cell (C values) decodes
// to one factor×factor RGB block via a seeded matrix D [3·f² × C]; encode uses
// the exact left inverse (DᵀD)⁻¹Dᵀ, so encode(decode(z)) == z identically and
// decode(encode(x)) is the projection of x onto D's column space.
class ToyCodec {
public:
    ToyCodec(int channels, int factor, uint64_t seed);

    int channels() const { return channels_; }
    int factor() const { return factor_; }

    LatentGrid encode(const Image& pixels) const;
    Image decode(const LatentGrid& z) const;

    const Mat& decode_matrix() const { return d_; }
    const Mat& encode_matrix() const { return e_; }

private:
    int channels_;
    int factor_;
    Mat d_;  // [3·f² × C], float32-quantized draws
    Mat e_;  // [C × 3·f²], exact left inverse in double precision
};

// Gauss-Jordan inverse for small symmetric positive matrices.
Mat invert_small(const Mat& m);

}  // namespace maskfuse
