#include "madapt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace madapt {

namespace {

std::int64_t draw_index(std::int64_t n, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::int64_t> dist(0, n - 1);
    return dist(rng);
}

// Second draw without replacement.
std::int64_t draw_other_index(std::int64_t n, std::int64_t first, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::int64_t> dist(0, n - 2);
    std::int64_t pick = dist(rng);
    if (pick >= first) {
        ++pick;
    }
    return pick;
}

Tensor preprocess(const ImageBuffer& image, std::int64_t crop_size, std::mt19937_64& rng) {
    const std::int64_t target_short = std::llround(1.4 * static_cast<double>(crop_size));
    const std::int64_t short_side = std::min(image.width, image.height);
    const double scale = static_cast<double>(target_short) / static_cast<double>(short_side);
    const int new_w = static_cast<int>(std::max<std::int64_t>(
        crop_size, std::llround(scale * image.width)));
    const int new_h = static_cast<int>(std::max<std::int64_t>(
        crop_size, std::llround(scale * image.height)));
    ImageBuffer resized = resize_bilinear(image, new_w, new_h);

    std::uniform_int_distribution<int> dx(0, new_w - static_cast<int>(crop_size));
    std::uniform_int_distribution<int> dy(0, new_h - static_cast<int>(crop_size));
    const int x0 = dx(rng);
    const int y0 = dy(rng);
    return to_tensor(crop(resized, x0, y0, static_cast<int>(crop_size),
                          static_cast<int>(crop_size)));
}

Tensor assemble_batch(std::vector<Tensor>& parts) {
    if (parts.size() == 1) {
        return parts.front();
    }
    // Inputs are constants; build the batch directly instead of via graph ops.
    Shape shape = parts.front().shape();
    shape[0] = static_cast<std::int64_t>(parts.size());
    Tensor out = Tensor::zeros(shape);
    const std::int64_t block = parts.front().size();
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out.raw().segment(static_cast<std::int64_t>(i) * block, block) = parts[i].raw();
    }
    return out;
}

std::string format_metrics(std::int64_t step, double l_c, double l_s, double l_id, double l_dc,
                           double l_ds, double total) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "step=%lld l_c=%.17g l_s=%.17g l_id=%.17g l_dc=%.17g l_ds=%.17g total=%.17g",
                  static_cast<long long>(step), l_c, l_s, l_id, l_dc, l_ds, total);
    return std::string(buf);
}

}  // namespace

void TrainConfig::validate() const {
    if (crop_size <= 0 || crop_size % 8 != 0) {
        throw ConfigError("TrainConfig: crop_size must be a positive multiple of 8");
    }
    if (batch_size < 1) {
        throw ConfigError("TrainConfig: batch_size must be at least 1");
    }
    if (!(learning_rate > 0.0)) {
        throw ConfigError("TrainConfig: learning_rate must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("TrainConfig: betas must lie in [0,1)");
    }
    if (!(adam_eps > 0.0)) {
        throw ConfigError("TrainConfig: adam_eps must be positive");
    }
    if (max_steps < 0) {
        throw ConfigError("TrainConfig: max_steps must be non-negative");
    }
    if (checkpoint_every < 1) {
        throw ConfigError("TrainConfig: checkpoint_every must be at least 1");
    }
    if (ca_kernel != 1 && ca_kernel != 3) {
        throw ConfigError("TrainConfig: ca_kernel must be 1 or 3");
    }
}

std::vector<ImageBuffer> load_image_set(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const std::string ext = entry.path().extension().string();
        if (ext == ".ppm" || ext == ".png") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<ImageBuffer> images;
    images.reserve(files.size());
    for (const auto& f : files) {
        images.push_back(load_image(f));
    }
    return images;
}

Quadruplet sample_quadruplet(const std::vector<ImageBuffer>& content,
                             const std::vector<ImageBuffer>& style, std::int64_t crop_size,
                             std::int64_t batch_size, std::mt19937_64& rng) {
    if (content.size() < 2 || style.size() < 2) {
        throw ConfigError("sample_quadruplet: each set needs at least 2 images");
    }
    if (crop_size <= 0 || batch_size < 1) {
        throw ConfigError("sample_quadruplet: bad crop or batch size");
    }
    std::vector<Tensor> c1, c2, s1, s2;
    for (std::int64_t b = 0; b < batch_size; ++b) {
        const std::int64_t nc = static_cast<std::int64_t>(content.size());
        const std::int64_t ns = static_cast<std::int64_t>(style.size());
        const std::int64_t i1 = draw_index(nc, rng);
        const std::int64_t i2 = draw_other_index(nc, i1, rng);
        const std::int64_t j1 = draw_index(ns, rng);
        const std::int64_t j2 = draw_other_index(ns, j1, rng);
        c1.push_back(preprocess(content[static_cast<std::size_t>(i1)], crop_size, rng));
        c2.push_back(preprocess(content[static_cast<std::size_t>(i2)], crop_size, rng));
        s1.push_back(preprocess(style[static_cast<std::size_t>(j1)], crop_size, rng));
        s2.push_back(preprocess(style[static_cast<std::size_t>(j2)], crop_size, rng));
    }
    Quadruplet quad;
    quad.c1 = assemble_batch(c1);
    quad.c2 = assemble_batch(c2);
    quad.s1 = assemble_batch(s1);
    quad.s2 = assemble_batch(s2);
    return quad;
}

void adam_step(ModuleWeights& params, AdamState& state, const AdamConfig& cfg) {
    const std::int64_t t = ++state.step;
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (auto& [name, tensor] : params) {
        if (!tensor.requires_grad()) {
            continue;
        }
        if (!tensor.has_grad()) {
            throw ContractError("adam_step: missing gradient for parameter '" + name + "'");
        }
        const Eigen::ArrayXd& g = tensor.grad();
        auto& slot = state.slots[name];
        if (slot.m.size() != g.size()) {
            slot.m = Eigen::ArrayXd::Zero(g.size());
            slot.v = Eigen::ArrayXd::Zero(g.size());
        }
        slot.m = cfg.beta1 * slot.m + (1.0 - cfg.beta1) * g;
        slot.v = cfg.beta2 * slot.v + (1.0 - cfg.beta2) * g.square();
        tensor.raw() -=
            cfg.learning_rate * (slot.m / bias1) / ((slot.v / bias2).sqrt() + cfg.eps);
    }
}

TrainResult train_loop(Model& model, const std::vector<ImageBuffer>& content,
                       const std::vector<ImageBuffer>& style,
                       const std::filesystem::path& out_dir, const TrainConfig& cfg,
                       const LossConfig& loss_cfg) {
    cfg.validate();
    loss_cfg.validate();
    if (content.empty() || style.empty()) {
        throw ConfigError("train_loop: empty dataset");
    }
    std::filesystem::create_directories(out_dir);

    set_trainable(model, cfg.freeze_encoder);
    const EncoderWeights loss_net = snapshot_encoder(model);

    std::mt19937_64 rng(cfg.seed);
    AdamConfig adam_cfg{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps};
    AdamState state;

    TrainResult result;
    result.metrics_path = out_dir / "metrics.log";
    std::ofstream metrics(result.metrics_path, std::ios::trunc);
    if (!metrics) {
        throw IoError("cannot open " + result.metrics_path.string());
    }

    auto checkpoint = [&](std::int64_t step) {
        const std::filesystem::path path =
            out_dir / ("ckpt_" + std::to_string(step) + ".madaptw");
        save_weights(model.params, path);
        return path;
    };
    result.final_checkpoint = checkpoint(0);

    for (std::int64_t step = 1; step <= cfg.max_steps; ++step) {
        Quadruplet quad =
            sample_quadruplet(content, style, cfg.crop_size, cfg.batch_size, rng);
        for (auto& [name, tensor] : model.params) {
            (void)name;
            tensor.zero_grad();
        }

        Graph graph;
        Tensor total;
        LossTerms terms;
        {
            GraphScope scope(graph);
            const FeatureTaps taps_c1 = encode(quad.c1, model.encoder);
            const FeatureTaps taps_s1 = encode(quad.s1, model.encoder);
            const Tensor f_c1 = taps_c1.tap(4);
            const Tensor f_s1 = taps_s1.tap(4);

            // I_{c1|s1} serves the content/style losses and both
            // disentanglement pairs.
            const Tensor image_cs11 =
                decode(multi_adapt_forward(f_c1, f_s1, model.adapt, model.whiten), model.decoder);
            const Tensor image_cc =
                decode(multi_adapt_forward(f_c1, f_c1, model.adapt, model.whiten), model.decoder);
            const Tensor image_ss =
                decode(multi_adapt_forward(f_s1, f_s1, model.adapt, model.whiten), model.decoder);

            const FeatureTaps loss_taps_cs11 = encode(image_cs11, loss_net);
            const FeatureTaps loss_taps_c1 = encode(quad.c1, loss_net);
            const FeatureTaps loss_taps_s1 = encode(quad.s1, loss_net);

            terms.content = content_loss(loss_taps_cs11, loss_taps_c1, loss_cfg.content_layer);
            terms.style = style_loss(loss_taps_cs11, loss_taps_s1, loss_cfg.style_layers);
            terms.identity = identity_loss(image_cc, quad.c1, image_ss, quad.s1);

            if (loss_cfg.enable_disentanglement) {
                const Tensor f_c2 = encode(quad.c2, model.encoder).tap(4);
                const Tensor f_s2 = encode(quad.s2, model.encoder).tap(4);
                const Tensor image_cs12 = decode(
                    multi_adapt_forward(f_c1, f_s2, model.adapt, model.whiten), model.decoder);
                const Tensor image_cs21 = decode(
                    multi_adapt_forward(f_c2, f_s1, model.adapt, model.whiten), model.decoder);
                const FeatureTaps loss_taps_cs12 = encode(image_cs12, loss_net);
                const FeatureTaps loss_taps_cs21 = encode(image_cs21, loss_net);
                auto [dis_c, dis_s] = disentanglement_losses(
                    loss_taps_cs11, loss_taps_cs12, loss_taps_cs11, loss_taps_cs21, loss_cfg);
                terms.dis_content = dis_c;
                terms.dis_style = dis_s;
            }
            total = total_loss(terms, loss_cfg);
        }

        const double total_value = total.item();
        if (!std::isfinite(total_value)) {
            std::ostringstream dump;
            dump << "train_loop: non-finite total loss at step " << step
                 << "; components: content=" << terms.content.item()
                 << " style=" << terms.style.item() << " identity=" << terms.identity.item();
            if (terms.dis_content.defined()) {
                dump << " dis_content=" << terms.dis_content.item()
                     << " dis_style=" << terms.dis_style.item();
            }
            std::cerr << dump.str() << "\n";
            throw NumericError(dump.str());
        }

        graph.backward(total);
        adam_step(model.params, state, adam_cfg);
        if (state.step != step) {
            throw ContractError("train_loop: optimizer step counter out of sync");
        }

        metrics << format_metrics(step, terms.content.item(), terms.style.item(),
                                  terms.identity.item(),
                                  terms.dis_content.defined() ? terms.dis_content.item() : 0.0,
                                  terms.dis_style.defined() ? terms.dis_style.item() : 0.0,
                                  total_value)
                << "\n";
        if (!metrics) {
            throw IoError("write failure on " + result.metrics_path.string());
        }

        if (step % cfg.checkpoint_every == 0 || step == cfg.max_steps) {
            result.final_checkpoint = checkpoint(step);
        }
    }
    metrics.flush();
    result.steps = cfg.max_steps;
    return result;
}

}  // namespace madapt
