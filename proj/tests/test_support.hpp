#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "madapt/image_io.hpp"

namespace madapt_tests {

// Deterministic synthetic photograph/painting stand-ins: smooth ramps and
// blobs for "content", broad low-frequency textures for "style". Spatial
// frequencies stay well above the 8-pixel bottleneck of the codec so the
// identity mapping is actually representable at desk scale.
inline madapt::ImageBuffer synthetic_image(int width, int height, int variant) {
    madapt::ImageBuffer image;
    image.width = width;
    image.height = height;
    image.data.resize(static_cast<std::size_t>(width) * height * 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double u = static_cast<double>(x) / (width - 1);
            const double v = static_cast<double>(y) / (height - 1);
            double r = 0, g = 0, b = 0;
            switch (variant % 8) {
                case 0:  // horizontal ramp
                    r = 0.3 + 0.5 * u;
                    g = 0.35 + 0.25 * u;
                    b = 0.75 - 0.5 * u;
                    break;
                case 1:  // vertical ramp
                    r = 0.7 - 0.45 * v;
                    g = 0.3 + 0.45 * v;
                    b = 0.45;
                    break;
                case 2:  // radial blob
                    r = g = b = 0.3 + 0.5 * std::exp(-6.0 * ((u - 0.5) * (u - 0.5) +
                                                             (v - 0.55) * (v - 0.55)));
                    g *= 0.85;
                    break;
                case 3:  // two soft patches on a ramp
                    r = 0.35 + 0.3 * std::exp(-10.0 * ((u - 0.3) * (u - 0.3) +
                                                       (v - 0.3) * (v - 0.3)));
                    g = 0.35 + 0.3 * std::exp(-10.0 * ((u - 0.7) * (u - 0.7) +
                                                       (v - 0.7) * (v - 0.7)));
                    b = 0.4 + 0.2 * (u + v) / 2;
                    break;
                case 4:  // broad diagonal stripes
                    r = 0.5 + 0.25 * std::sin(6.0 * (u + v));
                    g = 0.35;
                    b = 0.5 - 0.25 * std::sin(6.0 * (u + v));
                    break;
                case 5:  // soft large checker
                    r = g = 0.45 + 0.28 * std::sin(7.0 * u) * std::sin(7.0 * v);
                    b = 0.55;
                    break;
                case 6:  // broad rings
                    r = 0.5 + 0.25 * std::cos(11.0 * std::hypot(u - 0.5, v - 0.5));
                    g = 0.5 - 0.18 * std::cos(11.0 * std::hypot(u - 0.5, v - 0.5));
                    b = 0.35;
                    break;
                default:  // gentle crosshatch
                    r = 0.5 + 0.22 * std::sin(8.0 * u) * std::sin(8.0 * v);
                    g = 0.5 + 0.22 * std::cos(8.0 * u) * std::cos(8.0 * v);
                    b = 0.6 - 0.25 * u;
                    break;
            }
            const std::size_t idx = (static_cast<std::size_t>(y) * width + x) * 3;
            image.data[idx + 0] = static_cast<std::uint8_t>(std::clamp(r, 0.0, 1.0) * 255.0 + 0.5);
            image.data[idx + 1] = static_cast<std::uint8_t>(std::clamp(g, 0.0, 1.0) * 255.0 + 0.5);
            image.data[idx + 2] = static_cast<std::uint8_t>(std::clamp(b, 0.0, 1.0) * 255.0 + 0.5);
        }
    }
    return image;
}

inline std::vector<std::filesystem::path> write_corpus(const std::filesystem::path& dir,
                                                       const std::string& prefix,
                                                       int first_variant, int count, int width,
                                                       int height) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (int i = 0; i < count; ++i) {
        const auto path = dir / (prefix + std::to_string(i) + ".ppm");
        madapt::save_image(synthetic_image(width, height, first_variant + i), path);
        paths.push_back(path);
    }
    return paths;
}

}  // namespace madapt_tests
