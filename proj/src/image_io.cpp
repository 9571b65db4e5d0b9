#include "madapt/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace madapt {

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("read failure on " + path.string());
    }
    return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open " + tmp.string() + " for writing");
        }
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("write failure on " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move temporary file into place at " + path.string());
    }
}

// ---- PPM (P6) ----

// Skips whitespace and '#' comment lines between header tokens.
std::size_t skip_ppm_separators(const std::vector<std::uint8_t>& bytes, std::size_t pos) {
    while (pos < bytes.size()) {
        const char ch = static_cast<char>(bytes[pos]);
        if (ch == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') {
                ++pos;
            }
        } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    return pos;
}

long parse_ppm_int(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    pos = skip_ppm_separators(bytes, pos);
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
        throw FormatError("PPM: expected an integer in the header");
    }
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        value = value * 10 + (bytes[pos] - '0');
        if (value > 1000000) {
            throw FormatError("PPM: header value out of range");
        }
        ++pos;
    }
    return value;
}

ImageBuffer decode_ppm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 2;  // past "P6"
    const long width = parse_ppm_int(bytes, pos);
    const long height = parse_ppm_int(bytes, pos);
    const long maxval = parse_ppm_int(bytes, pos);
    if (width <= 0 || height <= 0) {
        throw FormatError("PPM: non-positive dimensions");
    }
    if (maxval != 255) {
        throw FormatError("PPM: only maxval 255 is supported, got " + std::to_string(maxval));
    }
    if (pos >= bytes.size()) {
        throw FormatError("PPM: missing pixel payload");
    }
    ++pos;  // the single whitespace byte after maxval
    const std::size_t expected = static_cast<std::size_t>(width) * height * 3;
    if (bytes.size() - pos < expected) {
        throw FormatError("PPM: truncated pixel payload");
    }
    ImageBuffer image;
    image.width = static_cast<int>(width);
    image.height = static_cast<int>(height);
    image.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + expected));
    return image;
}

// ---- PNG ----

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

int png_channels(int color_type) {
    switch (color_type) {
        case 0: return 1;  // grayscale
        case 2: return 3;  // RGB
        case 4: return 2;  // grayscale + alpha
        case 6: return 4;  // RGBA
        default: return 0;
    }
}

std::uint8_t paeth(std::uint8_t a, std::uint8_t b, std::uint8_t c) {
    const int p = int(a) + int(b) - int(c);
    const int pa = std::abs(p - int(a));
    const int pb = std::abs(p - int(b));
    const int pc = std::abs(p - int(c));
    if (pa <= pb && pa <= pc) {
        return a;
    }
    return pb <= pc ? b : c;
}

ImageBuffer decode_png(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 + 25) {
        throw FormatError("PNG: truncated file");
    }
    std::size_t pos = 8;
    bool saw_ihdr = false;
    bool saw_iend = false;
    std::uint32_t width = 0, height = 0;
    int color_type = -1;
    std::vector<std::uint8_t> idat;

    while (pos + 8 <= bytes.size()) {
        const std::uint32_t length = read_be32(bytes.data() + pos);
        if (length > 0x7fffffffu || pos + 12 + length > bytes.size()) {
            throw FormatError("PNG: truncated chunk");
        }
        char type[5] = {0};
        std::memcpy(type, bytes.data() + pos + 4, 4);
        const std::uint8_t* data = bytes.data() + pos + 8;
        const std::uint32_t stored_crc = read_be32(data + length);
        std::uint32_t crc = crc32(0L, Z_NULL, 0);
        crc = crc32(crc, bytes.data() + pos + 4, length + 4);
        if (crc != stored_crc) {
            throw FormatError(std::string("PNG: CRC mismatch in ") + type + " chunk");
        }

        if (std::strcmp(type, "IHDR") == 0) {
            if (length != 13) {
                throw FormatError("PNG: malformed IHDR");
            }
            width = read_be32(data);
            height = read_be32(data + 4);
            const int bit_depth = data[8];
            color_type = data[9];
            const int interlace = data[12];
            if (width == 0 || height == 0 || width > 1u << 20 || height > 1u << 20 ||
                static_cast<std::uint64_t>(width) * height > (1u << 26)) {
                throw FormatError("PNG: bad dimensions");
            }
            if (bit_depth != 8) {
                throw FormatError("PNG: only 8-bit depth is supported, got " +
                                  std::to_string(bit_depth));
            }
            if (png_channels(color_type) == 0) {
                throw FormatError("PNG: unsupported color type " + std::to_string(color_type));
            }
            if (interlace != 0) {
                throw FormatError("PNG: interlaced images are not supported");
            }
            saw_ihdr = true;
        } else if (std::strcmp(type, "IDAT") == 0) {
            if (!saw_ihdr) {
                throw FormatError("PNG: IDAT before IHDR");
            }
            idat.insert(idat.end(), data, data + length);
        } else if (std::strcmp(type, "IEND") == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + length;
    }
    if (!saw_ihdr || !saw_iend) {
        throw FormatError("PNG: missing IHDR or IEND");
    }
    if (idat.empty()) {
        throw FormatError("PNG: no pixel data");
    }

    const int channels = png_channels(color_type);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    const std::size_t raw_size = (stride + 1) * height;
    std::vector<std::uint8_t> raw(raw_size);
    uLongf out_len = raw_size;
    const int rc = uncompress(raw.data(), &out_len, idat.data(), idat.size());
    if (rc != Z_OK || out_len != raw_size) {
        throw FormatError("PNG: corrupt compressed stream");
    }

    // Undo per-scanline filters in place (into `pixels`).
    std::vector<std::uint8_t> pixels(stride * height);
    for (std::uint32_t y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
        std::uint8_t* cur = pixels.data() + y * stride;
        const std::uint8_t* up = y > 0 ? pixels.data() + (y - 1) * stride : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const std::uint8_t left = i >= static_cast<std::size_t>(channels)
                                          ? cur[i - channels] : std::uint8_t(0);
            const std::uint8_t above = up ? up[i] : std::uint8_t(0);
            const std::uint8_t corner = (up && i >= static_cast<std::size_t>(channels))
                                            ? up[i - channels] : std::uint8_t(0);
            switch (filter) {
                case 0: cur[i] = src[i]; break;
                case 1: cur[i] = static_cast<std::uint8_t>(src[i] + left); break;
                case 2: cur[i] = static_cast<std::uint8_t>(src[i] + above); break;
                case 3: cur[i] = static_cast<std::uint8_t>(src[i] + ((left + above) >> 1)); break;
                case 4:
                    cur[i] = static_cast<std::uint8_t>(src[i] + paeth(left, above, corner));
                    break;
                default: throw FormatError("PNG: unknown filter type");
            }
        }
    }

    ImageBuffer image;
    image.width = static_cast<int>(width);
    image.height = static_cast<int>(height);
    image.data.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t p = 0; p < static_cast<std::size_t>(width) * height; ++p) {
        const std::uint8_t* src = pixels.data() + p * channels;
        std::uint8_t* dst = image.data.data() + p * 3;
        if (channels <= 2) {  // grayscale replicated, alpha dropped
            dst[0] = dst[1] = dst[2] = src[0];
        } else {
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
        }
    }
    return image;
}

void append_png_chunk(std::vector<std::uint8_t>& out, const char* type,
                      const std::vector<std::uint8_t>& data) {
    write_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + type_pos, static_cast<uInt>(4 + data.size()));
    write_be32(out, crc);
}

}  // namespace

ImageBuffer decode_image(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
        return decode_png(bytes);
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
        return decode_ppm(bytes);
    }
    std::string detected = "unknown";
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] >= '1' && bytes[1] <= '7') {
        detected = std::string("PNM type P") + static_cast<char>(bytes[1]);
    } else if (bytes.size() >= 2 && bytes[0] == 0xff && bytes[1] == 0xd8) {
        detected = "JPEG";
    } else if (bytes.size() >= 4 && std::memcmp(bytes.data(), "GIF8", 4) == 0) {
        detected = "GIF";
    } else if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') {
        detected = "BMP";
    }
    throw FormatError("unsupported image format (detected: " + detected + ")");
}

ImageBuffer load_image(const std::filesystem::path& path) {
    return decode_image(read_file(path));
}

std::vector<std::uint8_t> encode_ppm(const ImageBuffer& image) {
    const std::string header = "P6\n" + std::to_string(image.width) + " " +
                               std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.data.begin(), image.data.end());
    return out;
}

std::vector<std::uint8_t> encode_png(const ImageBuffer& image) {
    std::vector<std::uint8_t> out(kPngSignature, kPngSignature + 8);

    std::vector<std::uint8_t> ihdr;
    write_be32(ihdr, static_cast<std::uint32_t>(image.width));
    write_be32(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: RGB
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    append_png_chunk(out, "IHDR", ihdr);

    const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
    std::vector<std::uint8_t> raw((stride + 1) * image.height);
    for (int y = 0; y < image.height; ++y) {
        raw[y * (stride + 1)] = 0;  // filter: none
        std::memcpy(raw.data() + y * (stride + 1) + 1, image.data.data() + y * stride, stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                  Z_DEFAULT_COMPRESSION) != Z_OK) {
        throw NumericError("PNG: deflate failed");
    }
    compressed.resize(bound);
    append_png_chunk(out, "IDAT", compressed);
    append_png_chunk(out, "IEND", {});
    return out;
}

void save_image(const ImageBuffer& image, const std::filesystem::path& path) {
    if (image.data.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
        throw ContractError("save_image: buffer size does not match dimensions");
    }
    const std::string ext = path.extension().string();
    std::vector<std::uint8_t> bytes;
    if (ext == ".ppm") {
        bytes = encode_ppm(image);
    } else if (ext == ".png") {
        bytes = encode_png(image);
    } else {
        throw FormatError("save_image: unsupported extension '" + ext + "' (use .ppm or .png)");
    }
    write_file_atomic(path, bytes);
}

Tensor to_tensor(const ImageBuffer& image) {
    const std::int64_t h = image.height, w = image.width;
    if (image.data.size() != static_cast<std::size_t>(h) * w * 3) {
        throw ContractError("to_tensor: buffer size does not match dimensions");
    }
    Tensor t = Tensor::zeros({1, 3, h, w});
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t i = 0; i < h * w; ++i) {
            t.raw()[c * h * w + i] = image.data[static_cast<std::size_t>(i) * 3 + c] / 255.0;
        }
    }
    return t;
}

ImageBuffer from_tensor(const Tensor& t) {
    Shape shape = t.shape();
    std::int64_t h = 0, w = 0, offset = 0;
    if (shape.size() == 4 && shape[0] == 1 && shape[1] == 3) {
        h = shape[2];
        w = shape[3];
    } else if (shape.size() == 3 && shape[0] == 3) {
        h = shape[1];
        w = shape[2];
    } else {
        throw DimensionError("from_tensor: expected 1 x 3 x H x W or 3 x H x W, got " +
                             shape_str(shape));
    }
    ImageBuffer image;
    image.width = static_cast<int>(w);
    image.height = static_cast<int>(h);
    image.data.resize(static_cast<std::size_t>(h) * w * 3);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t i = 0; i < h * w; ++i) {
            double v = t.at(offset + c * h * w + i);
            v = std::clamp(v, 0.0, 1.0);
            image.data[static_cast<std::size_t>(i) * 3 + c] =
                static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
        }
    }
    return image;
}

ImageBuffer resize_bilinear(const ImageBuffer& image, int new_width, int new_height) {
    if (new_width <= 0 || new_height <= 0) {
        throw ContractError("resize_bilinear: target dimensions must be positive");
    }
    ImageBuffer out;
    out.width = new_width;
    out.height = new_height;
    out.data.resize(static_cast<std::size_t>(new_width) * new_height * 3);
    const double sx = static_cast<double>(image.width) / new_width;
    const double sy = static_cast<double>(image.height) / new_height;
    for (int y = 0; y < new_height; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), image.height - 1);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < new_width; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), image.width - 1);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double v00 = image.data[(static_cast<std::size_t>(y0) * image.width + x0) * 3 + c];
                const double v01 = image.data[(static_cast<std::size_t>(y0) * image.width + x1) * 3 + c];
                const double v10 = image.data[(static_cast<std::size_t>(y1) * image.width + x0) * 3 + c];
                const double v11 = image.data[(static_cast<std::size_t>(y1) * image.width + x1) * 3 + c];
                const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                 wy * ((1 - wx) * v10 + wx * v11);
                out.data[(static_cast<std::size_t>(y) * new_width + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
            }
        }
    }
    return out;
}

ImageBuffer crop(const ImageBuffer& image, int x0, int y0, int width, int height) {
    if (x0 < 0 || y0 < 0 || width <= 0 || height <= 0 || x0 + width > image.width ||
        y0 + height > image.height) {
        throw ContractError("crop: region out of bounds");
    }
    ImageBuffer out;
    out.width = width;
    out.height = height;
    out.data.resize(static_cast<std::size_t>(width) * height * 3);
    for (int y = 0; y < height; ++y) {
        std::memcpy(out.data.data() + static_cast<std::size_t>(y) * width * 3,
                    image.data.data() + (static_cast<std::size_t>(y0 + y) * image.width + x0) * 3,
                    static_cast<std::size_t>(width) * 3);
    }
    return out;
}

}  // namespace madapt
