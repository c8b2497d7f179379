#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace maskfuse {

// Planar RGB image, values in [0, 1]. Channel plane c is height*width doubles,
// row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> planes;  // 3 * height * width

    Image() = default;
    Image(int w, int h) : width(w), height(h), planes(static_cast<size_t>(3) * w * h, 0.0) {}

    double& at(int c, int y, int x) {
        return planes[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return planes[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

// 8-bit interleaved RGB rows, as written to disk.
struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // 3 * height * width, interleaved

    ImageU8() = default;
    ImageU8(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(3) * w * h, 0) {}

    uint8_t& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const {
        return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

ImageU8 to_u8(const Image& img);     // clamp to [0,1], round half up
Image from_u8(const ImageU8& img);   // v / 255

// PNG files carry pixels only — no timestamps or ancillary chunks — so equal
// pixels give byte-identical files.
void write_png(const std::string& path, const ImageU8& img);
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& gray);
ImageU8 read_png(const std::string& path);

uint64_t image_hash(const ImageU8& img);

}  // namespace maskfuse
