#pragma once

#include <vector>

#include "madapt/tensor.hpp"
#include "madapt/whitening.hpp"

namespace madapt {

// Row-stochastic attention map: N x N for position attention, C x C for
// channel attention, N_c x N_s for the cross-attention of the co-adaptation
// module. Every row sums to 1 after the softmax.
using AttentionMap = Tensor;

// Projection kernels of one self-adaptation module. conv1/conv2 feed the
// attention map, conv3 is the value path; all are bias-free, stride 1, with
// padding that preserves spatial dims. Zeroing conv3 makes the module the
// identity on its input.
struct SAWeights {
    Tensor conv1;
    Tensor conv2;
    Tensor conv3;

    void validate() const;
    std::int64_t channels() const { return conv1.dim(1); }
    std::int64_t kernel_size() const { return conv1.dim(2); }
};

// Projection kernels of the co-adaptation module. conv_c projects the
// whitened content feature, conv_s the whitened style feature, conv_v the raw
// style feature (value path). Kernel size is 1 or 3.
struct CAWeights {
    Tensor conv_c;
    Tensor conv_s;
    Tensor conv_v;

    void validate() const;
    std::int64_t channels() const { return conv_c.dim(1); }
    std::int64_t kernel_size() const { return conv_c.dim(2); }
};

struct AdaptationWeights {
    SAWeights content_sa;
    SAWeights style_sa;
    CAWeights ca;
};

// Position-wise content self-adaptation: attention over an N x N map built
// from whitened projections, residual added to the raw input. When
// `attention` is given, the per-sample row-stochastic maps are appended.
Tensor content_sa_forward(const Tensor& f_c, const SAWeights& w, const WhitenConfig& wh,
                          std::vector<AttentionMap>* attention = nullptr);

// Channel-wise style self-adaptation: C x C attention, no whitening.
Tensor style_sa_forward(const Tensor& f_s, const SAWeights& w,
                        std::vector<AttentionMap>* attention = nullptr);

// Cross attention from content positions to style positions (N_c x N_s map);
// the rearranged style features are residual-added to the content input, so
// the output carries the content spatial dims.
Tensor co_adaptation_forward(const Tensor& f_cc, const Tensor& f_ss, const CAWeights& w,
                             const WhitenConfig& wh, std::vector<AttentionMap>* attention = nullptr);

Tensor multi_adapt_forward(const Tensor& f_c, const Tensor& f_s, const AdaptationWeights& w,
                           const WhitenConfig& wh);

// alpha * f_cs + (1 - alpha) * f_c; the endpoints return the inputs
// unchanged, bit-exactly.
Tensor alpha_blend(const Tensor& f_cs, const Tensor& f_c, double alpha);

struct WeightedStyle {
    Tensor features;
    double weight = 0.0;
};

// Convex combination of per-style stylized features; weights must be
// non-negative and sum to 1 within 1e-9.
Tensor interpolate_styles(const Tensor& f_c, const std::vector<WeightedStyle>& styles,
                          const AdaptationWeights& w, const WhitenConfig& wh);

}  // namespace madapt
