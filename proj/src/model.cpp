#include "madapt/model.hpp"

#include <cmath>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <vector>

namespace madapt {

namespace {

std::string stage_conv_name(int stage, int conv) {
    return "encoder.stage" + std::to_string(stage + 1) + ".conv" + std::to_string(conv + 1);
}

Tensor he_kernel(Shape shape, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / fan_in));
}

ConvLayer fresh_conv(Model& model, const std::string& name, std::int64_t out_ch,
                     std::int64_t in_ch, std::int64_t k, std::int64_t stride,
                     std::mt19937_64& rng) {
    ConvLayer layer;
    layer.kernel = he_kernel({out_ch, in_ch, k, k}, rng);
    // Nonzero bias init keeps rectifier pre-activations off the kink even on
    // all-zero input patches.
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
    layer.bias = Tensor::zeros({out_ch});
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::int64_t i = 0; i < out_ch; ++i) {
        layer.bias.raw()[i] = dist(rng);
    }
    layer.stride = stride;
    layer.padding = (k - 1) / 2;
    model.params.insert(name + ".kernel", layer.kernel);
    model.params.insert(name + ".bias", layer.bias);
    return layer;
}

Tensor fresh_projection(Model& model, const std::string& name, std::int64_t channels,
                        std::int64_t k, std::mt19937_64& rng) {
    Tensor kernel = he_kernel({channels, channels, k, k}, rng);
    model.params.insert(name + ".kernel", kernel);
    return kernel;
}

// Binding helpers: pull a named tensor, validate its shape, collect problems
// instead of failing fast so the error can list every offender.

struct Binder {
    const ModuleWeights& weights;
    std::vector<std::string> problems;
    std::set<std::string> consumed;

    Tensor take(const std::string& name, const Shape& expected) {
        if (!weights.contains(name)) {
            problems.push_back(name + " (missing)");
            return Tensor();
        }
        consumed.insert(name);
        Tensor t = weights.at(name);
        if (t.shape() != expected) {
            problems.push_back(name + " (expected " + shape_str(expected) + ", got " +
                               shape_str(t.shape()) + ")");
        }
        return t;
    }

    Tensor take_any(const std::string& name) {
        if (!weights.contains(name)) {
            problems.push_back(name + " (missing)");
            return Tensor();
        }
        consumed.insert(name);
        return weights.at(name);
    }
};

}  // namespace

Model make_model(const EncoderSpec& spec, int ca_kernel, std::uint64_t seed) {
    spec.validate();
    if (ca_kernel != 1 && ca_kernel != 3) {
        throw ConfigError("make_model: CA kernel size must be 1 or 3");
    }
    Model model;
    model.spec = spec;
    std::mt19937_64 rng(seed);

    model.encoder.spec = spec;
    std::int64_t in_ch = spec.input_channels;
    for (int stage = 0; stage < 4; ++stage) {
        std::vector<ConvLayer> convs;
        for (int conv = 0; conv < spec.convs_per_stage; ++conv) {
            const std::int64_t stride = (stage > 0 && conv == 0) ? 2 : 1;
            convs.push_back(fresh_conv(model, stage_conv_name(stage, conv),
                                       spec.stage_channels[static_cast<std::size_t>(stage)],
                                       in_ch, 3, stride, rng));
            in_ch = spec.stage_channels[static_cast<std::size_t>(stage)];
        }
        model.encoder.stages.push_back(std::move(convs));
    }

    const auto& ch = spec.stage_channels;
    model.decoder.convs.push_back(fresh_conv(model, "decoder.conv1", ch[2], ch[3], 3, 1, rng));
    model.decoder.convs.push_back(fresh_conv(model, "decoder.conv2", ch[1], ch[2], 3, 1, rng));
    model.decoder.convs.push_back(fresh_conv(model, "decoder.conv3", ch[0], ch[1], 3, 1, rng));
    model.decoder.convs.push_back(fresh_conv(model, "decoder.conv4", 3, ch[0], 3, 1, rng));

    const std::int64_t c4 = ch[3];
    model.adapt.content_sa.conv1 = fresh_projection(model, "content_sa.conv1", c4, 1, rng);
    model.adapt.content_sa.conv2 = fresh_projection(model, "content_sa.conv2", c4, 1, rng);
    model.adapt.content_sa.conv3 = fresh_projection(model, "content_sa.conv3", c4, 1, rng);
    model.adapt.style_sa.conv1 = fresh_projection(model, "style_sa.conv1", c4, 1, rng);
    model.adapt.style_sa.conv2 = fresh_projection(model, "style_sa.conv2", c4, 1, rng);
    model.adapt.style_sa.conv3 = fresh_projection(model, "style_sa.conv3", c4, 1, rng);
    model.adapt.ca.conv_c = fresh_projection(model, "ca.conv_c", c4, ca_kernel, rng);
    model.adapt.ca.conv_s = fresh_projection(model, "ca.conv_s", c4, ca_kernel, rng);
    model.adapt.ca.conv_v = fresh_projection(model, "ca.conv_v", c4, ca_kernel, rng);
    return model;
}

Model bind_model(const ModuleWeights& weights) {
    Binder binder{weights, {}, {}};

    // Infer the encoder layout from kernel shapes before strict validation.
    EncoderSpec spec;
    int convs_per_stage = 0;
    while (weights.contains(stage_conv_name(0, convs_per_stage) + ".kernel")) {
        ++convs_per_stage;
    }
    if (convs_per_stage == 0) {
        throw ConfigError("bind_model: no encoder parameters found (encoder.stage1.conv1.*)");
    }
    spec.convs_per_stage = convs_per_stage;
    for (int stage = 0; stage < 4; ++stage) {
        const std::string name = stage_conv_name(stage, 0) + ".kernel";
        if (!weights.contains(name)) {
            throw ConfigError("bind_model: missing parameter '" + name + "'");
        }
        spec.stage_channels[static_cast<std::size_t>(stage)] = weights.at(name).dim(0);
    }

    std::int64_t ca_kernel = 1;
    if (weights.contains("ca.conv_c.kernel")) {
        ca_kernel = weights.at("ca.conv_c.kernel").dim(2);
    }

    Model model;
    model.spec = spec;
    model.encoder.spec = spec;
    std::int64_t in_ch = spec.input_channels;
    for (int stage = 0; stage < 4; ++stage) {
        const std::int64_t out_ch = spec.stage_channels[static_cast<std::size_t>(stage)];
        std::vector<ConvLayer> convs;
        for (int conv = 0; conv < spec.convs_per_stage; ++conv) {
            const std::string name = stage_conv_name(stage, conv);
            ConvLayer layer;
            layer.kernel = binder.take(name + ".kernel", {out_ch, in_ch, 3, 3});
            layer.bias = binder.take(name + ".bias", {out_ch});
            layer.stride = (stage > 0 && conv == 0) ? 2 : 1;
            layer.padding = 1;
            convs.push_back(layer);
            in_ch = out_ch;
        }
        model.encoder.stages.push_back(std::move(convs));
    }

    const auto& ch = spec.stage_channels;
    const Shape dec_shapes[4] = {{ch[2], ch[3], 3, 3}, {ch[1], ch[2], 3, 3},
                                 {ch[0], ch[1], 3, 3}, {3, ch[0], 3, 3}};
    for (int i = 0; i < 4; ++i) {
        const std::string name = "decoder.conv" + std::to_string(i + 1);
        ConvLayer layer;
        layer.kernel = binder.take(name + ".kernel", dec_shapes[i]);
        layer.bias = binder.take(name + ".bias", {dec_shapes[i][0]});
        model.decoder.convs.push_back(layer);
    }

    const std::int64_t c4 = ch[3];
    const Shape sa_shape{c4, c4, 1, 1};
    const Shape ca_shape{c4, c4, ca_kernel, ca_kernel};
    model.adapt.content_sa.conv1 = binder.take("content_sa.conv1.kernel", sa_shape);
    model.adapt.content_sa.conv2 = binder.take("content_sa.conv2.kernel", sa_shape);
    model.adapt.content_sa.conv3 = binder.take("content_sa.conv3.kernel", sa_shape);
    model.adapt.style_sa.conv1 = binder.take("style_sa.conv1.kernel", sa_shape);
    model.adapt.style_sa.conv2 = binder.take("style_sa.conv2.kernel", sa_shape);
    model.adapt.style_sa.conv3 = binder.take("style_sa.conv3.kernel", sa_shape);
    model.adapt.ca.conv_c = binder.take("ca.conv_c.kernel", ca_shape);
    model.adapt.ca.conv_s = binder.take("ca.conv_s.kernel", ca_shape);
    model.adapt.ca.conv_v = binder.take("ca.conv_v.kernel", ca_shape);
    if (ca_kernel != 1 && ca_kernel != 3) {
        binder.problems.push_back("ca.conv_c.kernel (kernel size must be 1 or 3, got " +
                                  std::to_string(ca_kernel) + ")");
    }

    if (!binder.problems.empty()) {
        std::ostringstream msg;
        msg << "bind_model: incompatible weights:";
        for (const auto& p : binder.problems) {
            msg << "\n  " << p;
        }
        throw ConfigError(msg.str());
    }

    for (const auto& [name, tensor] : weights) {
        (void)tensor;
        if (binder.consumed.count(name) == 0) {
            std::cerr << "warning: skipping unknown parameter '" << name << "'\n";
        } else {
            model.params.insert(name, weights.at(name));
        }
    }
    return model;
}

void set_trainable(Model& model, bool freeze_encoder) {
    for (auto& [name, tensor] : model.params) {
        const bool frozen = freeze_encoder && name.rfind("encoder.", 0) == 0;
        tensor.set_requires_grad(!frozen);
    }
}

EncoderWeights snapshot_encoder(const Model& model) {
    EncoderWeights snapshot;
    snapshot.spec = model.encoder.spec;
    for (const auto& stage : model.encoder.stages) {
        std::vector<ConvLayer> convs;
        for (const ConvLayer& conv : stage) {
            ConvLayer copy;
            copy.kernel = conv.kernel.detach();
            copy.bias = conv.bias.detach();
            copy.stride = conv.stride;
            copy.padding = conv.padding;
            convs.push_back(copy);
        }
        snapshot.stages.push_back(std::move(convs));
    }
    return snapshot;
}

}  // namespace madapt
