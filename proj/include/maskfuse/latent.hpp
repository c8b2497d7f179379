#pragma once

#include <optional>
#include <vector>

#include "maskfuse/mat.hpp"

namespace maskfuse {

// z_t: C×H×W real grid. Spatial layout is row-major (y, x); position index
// p = y*W + x is the row index used by every attention-grid matrix.
struct LatentGrid {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;  // C planes of H×W
    std::optional<int> timestep_hint;

    LatentGrid() = default;
    LatentGrid(int c, int h, int w)
        : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, 0.0) {}

    double& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    size_t size() const { return data.size(); }
    int positions() const { return height * width; }

    bool same_shape(const LatentGrid& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    // [P × C] view: row p = position, column = channel.
    Mat as_rows() const;
    static LatentGrid from_rows(const Mat& rows, int channels, int height, int width);
};

void check_latent(const LatentGrid& z);  // shape invariants + finiteness

double latent_mse(const LatentGrid& a, const LatentGrid& b);
double latent_max_abs_diff(const LatentGrid& a, const LatentGrid& b);
uint64_t latent_hash(const LatentGrid& z);

}  // namespace maskfuse
