#include "madapt/multi_adaptation.hpp"

#include <cmath>

namespace madapt {

namespace {

void validate_projection(const Tensor& kernel, const char* name, std::int64_t channels,
                         bool restrict_to_1_or_3) {
    if (!kernel.defined() || kernel.rank() != 4) {
        throw DimensionError(std::string(name) + ": expected O x C x k x k kernel");
    }
    if (kernel.dim(0) != channels || kernel.dim(1) != channels) {
        throw DimensionError(std::string(name) + ": kernel " + shape_str(kernel.shape()) +
                             " must preserve the channel count " + std::to_string(channels));
    }
    const std::int64_t k = kernel.dim(2);
    if (k != kernel.dim(3) || k % 2 == 0) {
        throw DimensionError(std::string(name) + ": kernel must be square with odd size, got " +
                             shape_str(kernel.shape()));
    }
    if (restrict_to_1_or_3 && k != 1 && k != 3) {
        throw DimensionError(std::string(name) + ": kernel size must be 1 or 3, got " +
                             std::to_string(k));
    }
}

Tensor project(const Tensor& x, const Tensor& kernel) {
    const std::int64_t pad = (kernel.dim(2) - 1) / 2;
    return conv2d(x, kernel, 1, pad);
}

Tensor flatten_sample(const Tensor& x, std::int64_t b) {
    return reshape(slice_batch(x, b), {x.dim(1), x.dim(2) * x.dim(3)});
}

void check_feature_input(const Tensor& f, std::int64_t channels, const char* name) {
    if (f.rank() != 4) {
        throw DimensionError(std::string(name) + ": expected B x C x H x W features, got " +
                             shape_str(f.shape()));
    }
    if (f.dim(1) != channels) {
        throw DimensionError(std::string(name) + ": features " + shape_str(f.shape()) +
                             " do not match projection channels " + std::to_string(channels));
    }
}

}  // namespace

void SAWeights::validate() const {
    if (!conv1.defined() || !conv2.defined() || !conv3.defined()) {
        throw ContractError("SAWeights: undefined kernel");
    }
    const std::int64_t c = conv1.dim(1);
    validate_projection(conv1, "SAWeights.conv1", c, false);
    validate_projection(conv2, "SAWeights.conv2", c, false);
    validate_projection(conv3, "SAWeights.conv3", c, false);
}

void CAWeights::validate() const {
    if (!conv_c.defined() || !conv_s.defined() || !conv_v.defined()) {
        throw ContractError("CAWeights: undefined kernel");
    }
    const std::int64_t c = conv_c.dim(1);
    validate_projection(conv_c, "CAWeights.conv_c", c, true);
    validate_projection(conv_s, "CAWeights.conv_s", c, true);
    validate_projection(conv_v, "CAWeights.conv_v", c, true);
    if (conv_s.dim(2) != conv_c.dim(2) || conv_v.dim(2) != conv_c.dim(2)) {
        throw DimensionError("CAWeights: the three kernels must share one size");
    }
}

Tensor content_sa_forward(const Tensor& f_c, const SAWeights& w, const WhitenConfig& wh,
                          std::vector<AttentionMap>* attention) {
    w.validate();
    check_feature_input(f_c, w.channels(), "content_sa_forward");
    const std::int64_t b = f_c.dim(0), c = f_c.dim(1), h = f_c.dim(2), width = f_c.dim(3);

    Tensor whitened = zca_whiten(f_c, wh);
    Tensor f1 = project(whitened, w.conv1);
    Tensor f2 = project(whitened, w.conv2);
    Tensor f3 = project(f_c, w.conv3);

    std::vector<Tensor> outputs;
    outputs.reserve(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        Tensor m1 = flatten_sample(f1, i);
        Tensor m2 = flatten_sample(f2, i);
        Tensor m3 = flatten_sample(f3, i);
        Tensor a = softmax_rows(matmul(transpose(m1), m2));  // N x N
        if (attention != nullptr) {
            attention->push_back(a);
        }
        Tensor mixed = matmul(m3, transpose(a));
        Tensor residual = add(mixed, flatten_sample(f_c, i));
        outputs.push_back(reshape(residual, {1, c, h, width}));
    }
    return b == 1 ? outputs.front() : stack_batch(outputs);
}

Tensor style_sa_forward(const Tensor& f_s, const SAWeights& w, std::vector<AttentionMap>* attention) {
    w.validate();
    check_feature_input(f_s, w.channels(), "style_sa_forward");
    const std::int64_t b = f_s.dim(0), c = f_s.dim(1), h = f_s.dim(2), width = f_s.dim(3);

    Tensor f1 = project(f_s, w.conv1);
    Tensor f2 = project(f_s, w.conv2);
    Tensor f3 = project(f_s, w.conv3);

    std::vector<Tensor> outputs;
    outputs.reserve(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        Tensor m1 = flatten_sample(f1, i);
        Tensor m2 = flatten_sample(f2, i);
        Tensor m3 = flatten_sample(f3, i);
        Tensor a = softmax_rows(matmul(m1, transpose(m2)));  // C x C
        if (attention != nullptr) {
            attention->push_back(a);
        }
        Tensor mixed = matmul(transpose(a), m3);
        Tensor residual = add(mixed, flatten_sample(f_s, i));
        outputs.push_back(reshape(residual, {1, c, h, width}));
    }
    return b == 1 ? outputs.front() : stack_batch(outputs);
}

Tensor co_adaptation_forward(const Tensor& f_cc, const Tensor& f_ss, const CAWeights& w,
                             const WhitenConfig& wh, std::vector<AttentionMap>* attention) {
    w.validate();
    check_feature_input(f_cc, w.channels(), "co_adaptation_forward content");
    check_feature_input(f_ss, w.channels(), "co_adaptation_forward style");
    if (f_cc.dim(0) != f_ss.dim(0)) {
        throw DimensionError("co_adaptation_forward: batch sizes disagree, " +
                             shape_str(f_cc.shape()) + " vs " + shape_str(f_ss.shape()));
    }
    const std::int64_t b = f_cc.dim(0), c = f_cc.dim(1), h = f_cc.dim(2), width = f_cc.dim(3);

    Tensor white_c = zca_whiten(f_cc, wh);
    Tensor white_s = zca_whiten(f_ss, wh);
    Tensor p_c = project(white_c, w.conv_c);
    Tensor p_s = project(white_s, w.conv_s);
    Tensor v_s = project(f_ss, w.conv_v);

    std::vector<Tensor> outputs;
    outputs.reserve(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        Tensor mc = flatten_sample(p_c, i);
        Tensor ms = flatten_sample(p_s, i);
        Tensor mv = flatten_sample(v_s, i);
        Tensor a = softmax_rows(matmul(transpose(mc), ms));  // N_c x N_s
        if (attention != nullptr) {
            attention->push_back(a);
        }
        Tensor rearranged = matmul(mv, transpose(a));  // C x N_c
        Tensor residual = add(rearranged, flatten_sample(f_cc, i));
        outputs.push_back(reshape(residual, {1, c, h, width}));
    }
    return b == 1 ? outputs.front() : stack_batch(outputs);
}

Tensor multi_adapt_forward(const Tensor& f_c, const Tensor& f_s, const AdaptationWeights& w,
                           const WhitenConfig& wh) {
    Tensor f_cc = content_sa_forward(f_c, w.content_sa, wh);
    Tensor f_ss = style_sa_forward(f_s, w.style_sa);
    return co_adaptation_forward(f_cc, f_ss, w.ca, wh);
}

Tensor alpha_blend(const Tensor& f_cs, const Tensor& f_c, double alpha) {
    if (f_cs.shape() != f_c.shape()) {
        throw DimensionError("alpha_blend: shape mismatch " + shape_str(f_cs.shape()) + " vs " +
                             shape_str(f_c.shape()));
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ContractError("alpha_blend: alpha must lie in [0,1], got " + std::to_string(alpha));
    }
    if (alpha == 0.0) {
        return f_c;
    }
    if (alpha == 1.0) {
        return f_cs;
    }
    return add(mul_scalar(f_cs, alpha), mul_scalar(f_c, 1.0 - alpha));
}

Tensor interpolate_styles(const Tensor& f_c, const std::vector<WeightedStyle>& styles,
                          const AdaptationWeights& w, const WhitenConfig& wh) {
    if (styles.empty()) {
        throw ContractError("interpolate_styles: at least one style is required");
    }
    double total = 0.0;
    for (const auto& s : styles) {
        if (s.weight < 0.0) {
            throw ContractError("interpolate_styles: weights must be non-negative");
        }
        total += s.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ContractError("interpolate_styles: weights sum to " + std::to_string(total) +
                            ", expected 1");
    }
    Tensor acc;
    for (const auto& s : styles) {
        Tensor term = mul_scalar(multi_adapt_forward(f_c, s.features, w, wh), s.weight);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

}  // namespace madapt
