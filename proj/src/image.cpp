#include "maskfuse/image.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>

#include "maskfuse/errors.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

ImageU8 to_u8(const Image& img) {
    ImageU8 out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = img.at(c, y, x);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                out.at(y, x, c) = static_cast<uint8_t>(std::floor(v * 255.0 + 0.5));
            }
    return out;
}

Image from_u8(const ImageU8& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = img.at(y, x, c) / 255.0;
    return out;
}

namespace {

struct PngWriter {
    std::FILE* f = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (f) std::fclose(f);
    }
};

void write_png_impl(const std::string& path, int width, int height, int color_type,
                    const uint8_t* pixels, int stride) {
    PngWriter w;
    w.f = std::fopen(path.c_str(), "wb");
    if (!w.f) throw IoError("png: cannot open '" + path + "' for writing");
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!w.png) throw IoError("png: writer allocation failed");
    w.info = png_create_info_struct(w.png);
    if (!w.info) throw IoError("png: info allocation failed");
    if (setjmp(png_jmpbuf(w.png))) throw IoError("png: write failure for '" + path + "'");

    png_init_io(w.png, w.f);
    png_set_IHDR(w.png, w.info, width, height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Pixels only: no tIME/tEXt chunks, fixed filter, so output bytes depend
    // solely on pixel content.
    png_set_filter(w.png, 0, PNG_FILTER_NONE);
    png_set_compression_level(w.png, 6);
    png_write_info(w.png, w.info);
    for (int y = 0; y < height; ++y)
        png_write_row(w.png, const_cast<png_bytep>(pixels + static_cast<size_t>(y) * stride));
    png_write_end(w.png, w.info);
}

struct PngReader {
    std::FILE* f = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
    write_png_impl(path, img.width, img.height, PNG_COLOR_TYPE_RGB, img.rgb.data(),
                   img.width * 3);
}

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& gray) {
    if (static_cast<size_t>(width) * height != gray.size())
        throw ContractViolation("png: gray buffer size does not match dimensions");
    write_png_impl(path, width, height, PNG_COLOR_TYPE_GRAY, gray.data(), width);
}

ImageU8 read_png(const std::string& path) {
    PngReader r;
    r.f = std::fopen(path.c_str(), "rb");
    if (!r.f) throw IngestionError("png: cannot open '" + path + "'");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, r.f) != 8 || png_sig_cmp(sig, 0, 8))
        throw IngestionError("png: '" + path + "' is not a PNG file");
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!r.png) throw IoError("png: reader allocation failed");
    r.info = png_create_info_struct(r.png);
    if (!r.info) throw IoError("png: info allocation failed");
    if (setjmp(png_jmpbuf(r.png))) throw IngestionError("png: read failure for '" + path + "'");

    png_init_io(r.png, r.f);
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);

    // Normalize every input to 8-bit RGB.
    png_set_strip_16(r.png);
    png_set_strip_alpha(r.png);
    png_set_palette_to_rgb(r.png);
    png_set_expand_gray_1_2_4_to_8(r.png);
    png_set_gray_to_rgb(r.png);
    png_read_update_info(r.png, r.info);

    const int width = static_cast<int>(png_get_image_width(r.png, r.info));
    const int height = static_cast<int>(png_get_image_height(r.png, r.info));
    if (png_get_rowbytes(r.png, r.info) != static_cast<size_t>(width) * 3)
        throw IngestionError("png: unexpected row layout in '" + path + "'");

    ImageU8 img(width, height);
    for (int y = 0; y < height; ++y)
        png_read_row(r.png, img.rgb.data() + static_cast<size_t>(y) * width * 3, nullptr);
    png_read_end(r.png, nullptr);
    return img;
}

uint64_t image_hash(const ImageU8& img) {
    uint64_t h = fnv1a_u64(static_cast<uint64_t>(img.width));
    h = fnv1a_u64(static_cast<uint64_t>(img.height), h);
    return fnv1a(img.rgb.data(), img.rgb.size(), h);
}

}  // namespace maskfuse
