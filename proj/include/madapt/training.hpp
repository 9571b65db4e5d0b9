#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "madapt/image_io.hpp"
#include "madapt/losses.hpp"
#include "madapt/model.hpp"

namespace madapt {

struct TrainConfig {
    std::int64_t crop_size = 64;
    std::int64_t batch_size = 1;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::int64_t max_steps = 2000;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 500;
    int ca_kernel = 1;
    bool freeze_encoder = false;

    void validate() const;
};

// Two content images and two style images, batched; within a sample the two
// content draws are distinct dataset indices, likewise the styles.
struct Quadruplet {
    Tensor c1, c2, s1, s2;  // each B x 3 x crop x crop
};

// Loads every .ppm/.png in a directory, sorted by filename.
std::vector<ImageBuffer> load_image_set(const std::filesystem::path& dir);

// Draws indices without replacement per set, resizes each pick so its shorter
// side is 1.4x the crop, and takes a uniform random crop.
Quadruplet sample_quadruplet(const std::vector<ImageBuffer>& content,
                             const std::vector<ImageBuffer>& style, std::int64_t crop_size,
                             std::int64_t batch_size, std::mt19937_64& rng);

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    struct Moments {
        Eigen::ArrayXd m;
        Eigen::ArrayXd v;
    };
    std::map<std::string, Moments> slots;
    std::int64_t step = 0;
};

// One bias-corrected adaptive-moment update over every trainable parameter.
// A trainable parameter without a populated gradient raises ContractError
// naming it.
void adam_step(ModuleWeights& params, AdamState& state, const AdamConfig& cfg);

struct TrainResult {
    std::filesystem::path metrics_path;
    std::filesystem::path final_checkpoint;
    std::int64_t steps = 0;
};

// Full optimization loop: per step, sample a quadruplet, run the five
// stylization passes the losses need, backprop the total loss, and apply one
// optimizer step. Writes `metrics.log` (one line per step) and periodic
// `ckpt_{step}.madaptw` checkpoints into out_dir.
TrainResult train_loop(Model& model, const std::vector<ImageBuffer>& content,
                       const std::vector<ImageBuffer>& style,
                       const std::filesystem::path& out_dir, const TrainConfig& cfg,
                       const LossConfig& loss_cfg);

}  // namespace madapt
