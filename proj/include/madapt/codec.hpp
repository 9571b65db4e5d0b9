#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "madapt/tensor.hpp"

namespace madapt {

// Four-stage convolutional encoder: 3x3 kernels, rectification after each
// conv, stride-2 downsampling on the first conv of stages 2..4.
struct EncoderSpec {
    std::array<std::int64_t, 4> stage_channels{8, 16, 32, 64};
    int convs_per_stage = 1;
    std::int64_t input_channels = 3;

    void validate() const;
};

// The four stage activations for one batch (analogs of the first conv of
// each encoder stage). Tap i lives at spatial resolution H/2^(i-1).
struct FeatureTaps {
    std::array<Tensor, 4> taps;

    const Tensor& tap(int index) const;  // 1-based
};

struct ConvLayer {
    Tensor kernel;  // O x C x k x k
    Tensor bias;    // O
    std::int64_t stride = 1;
    std::int64_t padding = 1;
};

struct EncoderWeights {
    EncoderSpec spec;
    std::vector<std::vector<ConvLayer>> stages;  // [4][convs_per_stage]
};

struct DecoderWeights {
    // Mirror of the encoder: conv+relu then x2 nearest upsampling three
    // times, followed by a final conv to 3 channels with no activation.
    std::vector<ConvLayer> convs;  // size 4
};

FeatureTaps encode(const Tensor& image, const EncoderWeights& weights);
Tensor decode(const Tensor& features, const DecoderWeights& weights);

// Named parameter collection. Iteration order is the sorted name order, which
// training and serialization rely on for determinism.
class ModuleWeights {
  public:
    using Map = std::map<std::string, Tensor>;

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    void insert(std::string name, Tensor tensor);
    std::size_t size() const { return entries_.size(); }
    Map::iterator begin() { return entries_.begin(); }
    Map::iterator end() { return entries_.end(); }
    Map::const_iterator begin() const { return entries_.begin(); }
    Map::const_iterator end() const { return entries_.end(); }

  private:
    Map entries_;
};

// Binary weight format, little-endian: magic "MADAPTW\0", u32 version=1,
// u32 entry count; per entry u16 name length, name bytes, u8 rank,
// rank x u64 dims, then dims-product f32 values. In-memory doubles are
// narrowed to f32 on disk.
void save_weights(const ModuleWeights& weights, const std::filesystem::path& path);
ModuleWeights load_weights(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_weights(const ModuleWeights& weights);
ModuleWeights deserialize_weights(const std::vector<std::uint8_t>& bytes);

}  // namespace madapt
