#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pollen/tensor.hpp"

namespace pollen {

// 8-bit RGB image, HWC row-major.
struct ImageU8 {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> pixels;  // height * width * 3

    uint8_t* at(int64_t y, int64_t x) { return pixels.data() + (y * width + x) * 3; }
    const uint8_t* at(int64_t y, int64_t x) const { return pixels.data() + (y * width + x) * 3; }
};

ImageU8 make_image(int64_t width, int64_t height, uint8_t r, uint8_t g, uint8_t b);

// Format picked from the extension: .png or .ppm. Both round-trip the exact
// pixel bytes. Writes are atomic (temp file + rename).
void write_image(const std::string& path, const ImageU8& img);
ImageU8 read_image(const std::string& path);

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);

// Exact box-filter downscale (area averaging), fractional coverage included.
ImageU8 resize_area(const ImageU8& src, int64_t dst_width, int64_t dst_height);

// H x W x 3 float tensor scaled to [0, 1].
Tensor image_to_tensor(const ImageU8& img);

}  // namespace pollen
