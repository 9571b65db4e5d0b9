#include "madapt/losses.hpp"

namespace madapt {

namespace {

// Batch-averaged L2 norm of the difference.
Tensor norm_distance(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    return mean_all(l2_norm_per_sample(sub(a, b)));
}

// Mean and variance statistics distance at one layer; channel counts must
// match, spatial dims may differ.
Tensor stats_distance(const Tensor& a, const Tensor& b, const char* what) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
        throw DimensionError(std::string(what) + ": incompatible feature shapes " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto [mean_a, var_a] = channel_stats(a);
    auto [mean_b, var_b] = channel_stats(b);
    Tensor mean_term = mean_all(l2_norm_per_sample(sub(mean_a, mean_b)));
    Tensor var_term = mean_all(l2_norm_per_sample(sub(var_a, var_b)));
    return add(mean_term, var_term);
}

Tensor stats_distance_sum(const FeatureTaps& a, const FeatureTaps& b,
                          const std::vector<int>& layers, const char* what) {
    Tensor acc;
    for (int layer : layers) {
        Tensor term = stats_distance(a.tap(layer), b.tap(layer), what);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

}  // namespace

void LossConfig::validate() const {
    if (lambda_c < 0.0 || lambda_s < 0.0 || lambda_id < 0.0 || lambda_dis_c < 0.0 ||
        lambda_dis_s < 0.0) {
        throw ConfigError("LossConfig: loss weights must be non-negative");
    }
    if (content_layer < 1 || content_layer > 4) {
        throw ConfigError("LossConfig: content_layer must be 1..4");
    }
    if (style_layers.empty()) {
        throw ConfigError("LossConfig: style_layers must not be empty");
    }
    for (int layer : style_layers) {
        if (layer < 1 || layer > 4) {
            throw ConfigError("LossConfig: style layers must be 1..4");
        }
    }
}

Tensor content_loss(const FeatureTaps& taps_cs, const FeatureTaps& taps_c, int layer) {
    return norm_distance(taps_cs.tap(layer), taps_c.tap(layer), "content_loss");
}

Tensor style_loss(const FeatureTaps& taps_cs, const FeatureTaps& taps_s,
                  const std::vector<int>& layers) {
    if (layers.empty()) {
        throw ContractError("style_loss: no layers given");
    }
    return stats_distance_sum(taps_cs, taps_s, layers, "style_loss");
}

Tensor identity_loss(const Tensor& i_cc, const Tensor& i_c, const Tensor& i_ss,
                     const Tensor& i_s) {
    Tensor content_branch = norm_distance(i_cc, i_c, "identity_loss content branch");
    Tensor style_branch = norm_distance(i_ss, i_s, "identity_loss style branch");
    return add(content_branch, style_branch);
}

std::pair<Tensor, Tensor> disentanglement_losses(const FeatureTaps& taps_cs1,
                                                 const FeatureTaps& taps_cs2,
                                                 const FeatureTaps& taps_sc1,
                                                 const FeatureTaps& taps_sc2,
                                                 const LossConfig& cfg) {
    cfg.validate();
    Tensor dis_content = norm_distance(taps_cs1.tap(cfg.content_layer),
                                       taps_cs2.tap(cfg.content_layer), "dis_content");
    Tensor dis_style = stats_distance_sum(taps_sc1, taps_sc2, cfg.style_layers, "dis_style");
    return {dis_content, dis_style};
}

Tensor total_loss(const LossTerms& terms, const LossConfig& cfg) {
    cfg.validate();
    if (!terms.content.defined() || !terms.style.defined() || !terms.identity.defined()) {
        throw ContractError("total_loss: content, style, and identity terms are required");
    }
    Tensor total = mul_scalar(terms.content, cfg.lambda_c);
    if (cfg.enable_disentanglement) {
        if (!terms.dis_content.defined() || !terms.dis_style.defined()) {
            throw ContractError("total_loss: disentanglement enabled but terms are missing");
        }
        total = add(total, mul_scalar(terms.dis_content, cfg.lambda_dis_c));
    }
    total = add(total, mul_scalar(terms.identity, cfg.lambda_id));
    total = add(total, mul_scalar(terms.style, cfg.lambda_s));
    if (cfg.enable_disentanglement) {
        total = add(total, mul_scalar(terms.dis_style, cfg.lambda_dis_s));
    }
    return total;
}

}  // namespace madapt
