#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "madapt/tensor.hpp"

namespace madapt {

// 8-bit RGB pixels, row-major, interleaved.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    bool operator==(const ImageBuffer&) const = default;
};

// Decodes PPM (P6, maxval 255) or PNG (8-bit gray/RGB with optional alpha;
// alpha dropped, grayscale replicated to RGB). The format is detected from
// the file contents, not the extension.
ImageBuffer load_image(const std::filesystem::path& path);

// Encodes by extension: .ppm as binary P6, .png as 8-bit RGB. Writes to a
// temporary file and renames, so failures leave no partial output.
void save_image(const ImageBuffer& image, const std::filesystem::path& path);

// Decode/encode against in-memory bytes (the file paths above go through
// these).
ImageBuffer decode_image(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_ppm(const ImageBuffer& image);
std::vector<std::uint8_t> encode_png(const ImageBuffer& image);

// [0,255] bytes -> [0,1] doubles, shape 1 x 3 x H x W.
Tensor to_tensor(const ImageBuffer& image);
// Clamps to [0,1], scales by 255, rounds half away from zero. Expects
// 3 x H x W or 1 x 3 x H x W.
ImageBuffer from_tensor(const Tensor& t);

ImageBuffer resize_bilinear(const ImageBuffer& image, int new_width, int new_height);
ImageBuffer crop(const ImageBuffer& image, int x0, int y0, int width, int height);

}  // namespace madapt
