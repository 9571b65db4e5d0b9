#include "madapt/codec.hpp"

#include <cstring>
#include <fstream>

namespace madapt {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'D', 'A', 'P', 'T', 'W', '\0'};
constexpr std::uint32_t kVersion = 1;

void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(out, bits);
}

class Reader {
  public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    void read(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw FormatError("weight file: truncated");
        }
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::uint16_t u16() {
        std::uint8_t b[2];
        read(b, 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t u32() {
        std::uint8_t b[4];
        read(b, 4);
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
               (std::uint32_t(b[3]) << 24);
    }

    std::uint64_t u64() {
        std::uint64_t v = 0;
        std::uint8_t b[8];
        read(b, 8);
        for (int i = 7; i >= 0; --i) {
            v = (v << 8) | b[i];
        }
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    bool exhausted() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

  private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void EncoderSpec::validate() const {
    for (auto c : stage_channels) {
        if (c < 1) {
            throw ConfigError("EncoderSpec: stage channels must be positive");
        }
    }
    if (convs_per_stage < 1) {
        throw ConfigError("EncoderSpec: convs_per_stage must be at least 1");
    }
    if (input_channels != 3) {
        throw ConfigError("EncoderSpec: input must have 3 channels");
    }
}

const Tensor& FeatureTaps::tap(int index) const {
    if (index < 1 || index > 4) {
        throw ContractError("FeatureTaps: tap index must be 1..4");
    }
    return taps[static_cast<std::size_t>(index - 1)];
}

FeatureTaps encode(const Tensor& image, const EncoderWeights& weights) {
    if (image.rank() != 4) {
        throw DimensionError("encode: expected B x 3 x H x W image, got " +
                             shape_str(image.shape()));
    }
    if (image.dim(1) != weights.spec.input_channels) {
        throw DimensionError("encode: expected " + std::to_string(weights.spec.input_channels) +
                             " input channels, got " + shape_str(image.shape()));
    }
    if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0) {
        throw DimensionError("encode: spatial dims of " + shape_str(image.shape()) +
                             " must be divisible by 8; pad or resize the image first");
    }
    FeatureTaps out;
    Tensor x = image;
    for (std::size_t stage = 0; stage < 4; ++stage) {
        for (const ConvLayer& conv : weights.stages[stage]) {
            x = relu(bias_add(conv2d(x, conv.kernel, conv.stride, conv.padding), conv.bias));
        }
        out.taps[stage] = x;
    }
    return out;
}

Tensor decode(const Tensor& features, const DecoderWeights& weights) {
    if (features.rank() != 4) {
        throw DimensionError("decode: expected B x C x h x w features, got " +
                             shape_str(features.shape()));
    }
    if (features.dim(1) != weights.convs[0].kernel.dim(1)) {
        throw DimensionError("decode: feature channels " + shape_str(features.shape()) +
                             " do not match decoder input " +
                             shape_str(weights.convs[0].kernel.shape()));
    }
    Tensor x = features;
    for (std::size_t i = 0; i < 3; ++i) {
        const ConvLayer& conv = weights.convs[i];
        x = relu(bias_add(conv2d(x, conv.kernel, conv.stride, conv.padding), conv.bias));
        x = upsample2_nearest(x);
    }
    const ConvLayer& last = weights.convs[3];
    return bias_add(conv2d(x, last.kernel, last.stride, last.padding), last.bias);
}

Tensor& ModuleWeights::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw ConfigError("missing parameter '" + name + "'");
    }
    return it->second;
}

const Tensor& ModuleWeights::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw ConfigError("missing parameter '" + name + "'");
    }
    return it->second;
}

void ModuleWeights::insert(std::string name, Tensor tensor) {
    if (!tensor.defined()) {
        throw ContractError("ModuleWeights: undefined tensor for '" + name + "'");
    }
    auto [it, inserted] = entries_.emplace(std::move(name), std::move(tensor));
    if (!inserted) {
        throw ContractError("ModuleWeights: duplicate parameter '" + it->first + "'");
    }
}

std::vector<std::uint8_t> serialize_weights(const ModuleWeights& weights) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    append_u32(out, kVersion);
    append_u32(out, static_cast<std::uint32_t>(weights.size()));
    for (const auto& [name, tensor] : weights) {
        if (name.size() > 0xffff) {
            throw ContractError("parameter name too long: " + name);
        }
        append_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(tensor.rank()));
        for (auto d : tensor.shape()) {
            append_u64(out, static_cast<std::uint64_t>(d));
        }
        for (std::int64_t i = 0; i < tensor.size(); ++i) {
            append_f32(out, static_cast<float>(tensor.at(i)));
        }
    }
    return out;
}

ModuleWeights deserialize_weights(const std::vector<std::uint8_t>& bytes) {
    Reader reader(bytes);
    char magic[8];
    reader.read(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) {
        throw FormatError("weight file: bad magic");
    }
    const std::uint32_t version = reader.u32();
    if (version != kVersion) {
        throw FormatError("weight file: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = reader.u32();
    ModuleWeights weights;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint16_t name_len = reader.u16();
        std::string name(name_len, '\0');
        reader.read(name.data(), name_len);
        const std::uint8_t rank = [&] {
            std::uint8_t r;
            reader.read(&r, 1);
            return r;
        }();
        if (rank > 8) {
            throw FormatError("weight file: implausible rank for '" + name + "'");
        }
        Shape shape(rank);
        std::int64_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            const std::uint64_t dim = reader.u64();
            if (dim == 0 || dim > (1ull << 32) || n > (1ll << 32) / static_cast<std::int64_t>(dim)) {
                throw FormatError("weight file: implausible dimensions for '" + name + "'");
            }
            shape[d] = static_cast<std::int64_t>(dim);
            n *= shape[d];
        }
        // The payload must actually be present before anything is allocated,
        // so a forged header cannot trigger a huge allocation.
        if (reader.remaining() / 4 < static_cast<std::size_t>(n)) {
            throw FormatError("weight file: truncated values for '" + name + "'");
        }
        std::vector<double> values(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            values[static_cast<std::size_t>(i)] = static_cast<double>(reader.f32());
        }
        weights.insert(std::move(name), Tensor::from_data(std::move(shape), std::move(values)));
    }
    if (!reader.exhausted()) {
        throw FormatError("weight file: trailing bytes after last entry");
    }
    return weights;
}

void save_weights(const ModuleWeights& weights, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = serialize_weights(weights);
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
        throw IoError("cannot move weights into place at " + path.string());
    }
}

ModuleWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("read failure on " + path.string());
    }
    return deserialize_weights(bytes);
}

}  // namespace madapt
