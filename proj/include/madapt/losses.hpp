#pragma once

#include <utility>
#include <vector>

#include "madapt/codec.hpp"
#include "madapt/tensor.hpp"

namespace madapt {

// Weights and toggles for the five loss terms. Defaults follow the reference
// configuration (1, 5, 50, 1, 1); the content and disentanglement-content
// terms use the deepest tap, style statistics use all four.
struct LossConfig {
    double lambda_c = 1.0;
    double lambda_s = 5.0;
    double lambda_id = 50.0;
    double lambda_dis_c = 1.0;
    double lambda_dis_s = 1.0;
    bool enable_disentanglement = true;
    int content_layer = 4;
    std::vector<int> style_layers{1, 2, 3, 4};

    void validate() const;
};

// ||phi_layer(I_cs) - phi_layer(I_c)||_2 (root of the sum of squares),
// averaged over the batch.
Tensor content_loss(const FeatureTaps& taps_cs, const FeatureTaps& taps_c, int layer);

// Sum over layers of the distances between per-channel means and variances,
// batch-averaged. Spatial dims of the two inputs may differ.
Tensor style_loss(const FeatureTaps& taps_cs, const FeatureTaps& taps_s,
                  const std::vector<int>& layers);

// Pixel-space reconstruction penalty for the two identity mappings.
Tensor identity_loss(const Tensor& i_cc, const Tensor& i_c, const Tensor& i_ss, const Tensor& i_s);

// (dis_content, dis_style): feature distance between results sharing a
// content, and statistics distance between results sharing a style.
std::pair<Tensor, Tensor> disentanglement_losses(const FeatureTaps& taps_cs1,
                                                 const FeatureTaps& taps_cs2,
                                                 const FeatureTaps& taps_sc1,
                                                 const FeatureTaps& taps_sc2,
                                                 const LossConfig& cfg);

struct LossTerms {
    Tensor content;
    Tensor style;
    Tensor identity;
    Tensor dis_content;  // may be undefined when disentanglement is disabled
    Tensor dis_style;
};

Tensor total_loss(const LossTerms& terms, const LossConfig& cfg);

}  // namespace madapt
