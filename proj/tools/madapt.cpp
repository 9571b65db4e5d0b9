#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "madapt/gradcheck.hpp"
#include "madapt/image_io.hpp"
#include "madapt/losses.hpp"
#include "madapt/model.hpp"
#include "madapt/multi_adaptation.hpp"
#include "madapt/training.hpp"

namespace {

using namespace madapt;

constexpr int kExitOk = 0;
constexpr int kExitNumeric = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct TrainOptions {
    std::string content_dir;
    std::string style_dir;
    std::string out_dir;
    std::string config_file;
    std::int64_t crop = 64;
    std::int64_t steps = 2000;
    std::uint64_t seed = 0;
    bool no_disentanglement = false;
    bool freeze_encoder = false;
};

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1") {
        return true;
    }
    if (value == "false" || value == "0") {
        return false;
    }
    throw ConfigError("config: boolean expected for '" + key + "', got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& value, const std::string& key) {
    std::vector<int> out;
    std::stringstream stream(value);
    std::string token;
    while (std::getline(stream, token, ',')) {
        try {
            out.push_back(std::stoi(token));
        } catch (const std::exception&) {
            throw ConfigError("config: integer list expected for '" + key + "'");
        }
    }
    if (out.empty()) {
        throw ConfigError("config: empty list for '" + key + "'");
    }
    return out;
}

// Flat key=value file; '#' starts a comment line. Keys mirror the
// TrainConfig/LossConfig fields. Command-line flags override file values.
void apply_config_file(const std::string& path, TrainConfig& train, LossConfig& loss) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file " + path);
    }
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "crop_size") train.crop_size = std::stoll(value);
            else if (key == "batch_size") train.batch_size = std::stoll(value);
            else if (key == "learning_rate") train.learning_rate = std::stod(value);
            else if (key == "beta1") train.beta1 = std::stod(value);
            else if (key == "beta2") train.beta2 = std::stod(value);
            else if (key == "adam_eps") train.adam_eps = std::stod(value);
            else if (key == "max_steps") train.max_steps = std::stoll(value);
            else if (key == "seed") train.seed = std::stoull(value);
            else if (key == "checkpoint_every") train.checkpoint_every = std::stoll(value);
            else if (key == "ca_kernel") train.ca_kernel = std::stoi(value);
            else if (key == "freeze_encoder") train.freeze_encoder = parse_bool(value, key);
            else if (key == "lambda_c") loss.lambda_c = std::stod(value);
            else if (key == "lambda_s") loss.lambda_s = std::stod(value);
            else if (key == "lambda_id") loss.lambda_id = std::stod(value);
            else if (key == "lambda_dis_c") loss.lambda_dis_c = std::stod(value);
            else if (key == "lambda_dis_s") loss.lambda_dis_s = std::stod(value);
            else if (key == "enable_disentanglement")
                loss.enable_disentanglement = parse_bool(value, key);
            else if (key == "content_layer") loss.content_layer = std::stoi(value);
            else if (key == "style_layers") loss.style_layers = parse_int_list(value, key);
            else throw ConfigError("config: unknown key '" + key + "'");
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("config: bad value for '" + key + "': '" + value + "'");
        }
    }
}

int run_train(const TrainOptions& opts, const CLI::App& cmd) {
    TrainConfig cfg;
    LossConfig loss_cfg;
    if (!opts.config_file.empty()) {
        apply_config_file(opts.config_file, cfg, loss_cfg);
    }
    if (cmd.count("--crop") > 0 || opts.config_file.empty()) cfg.crop_size = opts.crop;
    if (cmd.count("--steps") > 0 || opts.config_file.empty()) cfg.max_steps = opts.steps;
    if (cmd.count("--seed") > 0 || opts.config_file.empty()) cfg.seed = opts.seed;
    if (opts.no_disentanglement) loss_cfg.enable_disentanglement = false;
    if (opts.freeze_encoder) cfg.freeze_encoder = true;
    cfg.validate();
    loss_cfg.validate();

    const std::vector<ImageBuffer> content = load_image_set(opts.content_dir);
    const std::vector<ImageBuffer> style = load_image_set(opts.style_dir);
    if (content.size() < 2 || style.size() < 2) {
        throw ConfigError("train: each dataset directory needs at least 2 images");
    }

    Model model = make_model(EncoderSpec{}, cfg.ca_kernel, cfg.seed);
    const TrainResult result =
        train_loop(model, content, style, opts.out_dir, cfg, loss_cfg);
    std::cout << "trained " << result.steps << " steps\n"
              << "metrics: " << result.metrics_path.string() << "\n"
              << "checkpoint: " << result.final_checkpoint.string() << "\n";
    return kExitOk;
}

// Output locations are checked before any heavy computation starts.
void require_writable_destination(const std::string& out_path) {
    const std::filesystem::path parent =
        std::filesystem::absolute(std::filesystem::path(out_path)).parent_path();
    if (!std::filesystem::is_directory(parent)) {
        throw IoError("output directory does not exist: " + parent.string());
    }
}

Model load_inference_model(const std::string& weights_path, int expected_ca_kernel) {
    Model model = bind_model(load_weights(weights_path));
    if (model.adapt.ca.kernel_size() != expected_ca_kernel) {
        throw ConfigError("weights carry a " + std::to_string(model.adapt.ca.kernel_size()) +
                          "x" + std::to_string(model.adapt.ca.kernel_size()) +
                          " co-adaptation kernel; pass --ca-kernel " +
                          std::to_string(model.adapt.ca.kernel_size()) +
                          " or supply matching weights");
    }
    model.whiten.mode = WhitenConfig::Mode::exact;
    return model;
}

int run_stylize(const std::string& weights_path, const std::string& content_path,
                const std::string& style_path, const std::string& out_path, double alpha,
                int ca_kernel) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ContractError("stylize: --alpha must lie in [0,1]");
    }
    require_writable_destination(out_path);
    Model model = load_inference_model(weights_path, ca_kernel);
    const Tensor content = to_tensor(load_image(content_path));
    const Tensor style = to_tensor(load_image(style_path));
    const Tensor f_c = encode(content, model.encoder).tap(4);
    const Tensor f_s = encode(style, model.encoder).tap(4);
    const Tensor f_cs = multi_adapt_forward(f_c, f_s, model.adapt, model.whiten);
    const Tensor image = decode(alpha_blend(f_cs, f_c, alpha), model.decoder);
    save_image(from_tensor(image), out_path);
    return kExitOk;
}

int run_interpolate(const std::string& weights_path, const std::string& content_path,
                    const std::vector<std::string>& style_specs, const std::string& out_path) {
    require_writable_destination(out_path);
    Model model = load_inference_model(weights_path, 1);
    const Tensor content = to_tensor(load_image(content_path));
    const Tensor f_c = encode(content, model.encoder).tap(4);

    std::vector<WeightedStyle> styles;
    for (const std::string& spec : style_specs) {
        const auto colon = spec.rfind(':');
        if (colon == std::string::npos || colon + 1 == spec.size()) {
            throw ContractError("interpolate: style must be given as PATH:WEIGHT, got '" + spec +
                                "'");
        }
        WeightedStyle ws;
        try {
            ws.weight = std::stod(spec.substr(colon + 1));
        } catch (const std::exception&) {
            throw ContractError("interpolate: bad weight in '" + spec + "'");
        }
        ws.features = encode(to_tensor(load_image(spec.substr(0, colon))), model.encoder).tap(4);
        styles.push_back(ws);
    }
    const Tensor f_cs = interpolate_styles(f_c, styles, model.adapt, model.whiten);
    save_image(from_tensor(decode(f_cs, model.decoder)), out_path);
    return kExitOk;
}

int run_gradcheck(std::uint64_t seed) {
    const GradCheckReport report = gradcheck_full_pipeline(seed);
    std::cout << report.to_string();
    if (!report.passed(1e-4)) {
        std::cerr << "gradcheck FAILED: worst offender " << report.worst_parameter << " at "
                  << report.worst << " (threshold 1e-4)\n";
        return kExitNumeric;
    }
    std::cout << "gradcheck passed (threshold 1e-4)\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"madapt: attention-based arbitrary style transfer"};
    app.require_subcommand(1);

    TrainOptions train_opts;
    CLI::App* train = app.add_subcommand("train", "train a model on two image directories");
    train->add_option("--content", train_opts.content_dir, "content image directory")->required();
    train->add_option("--style", train_opts.style_dir, "style image directory")->required();
    train->add_option("--out", train_opts.out_dir, "output directory")->required();
    train->add_option("--crop", train_opts.crop, "training crop size");
    train->add_option("--steps", train_opts.steps, "optimization steps");
    train->add_option("--seed", train_opts.seed, "RNG seed");
    train->add_flag("--no-disentanglement", train_opts.no_disentanglement,
                    "drop the disentanglement losses");
    train->add_flag("--freeze-encoder", train_opts.freeze_encoder,
                    "keep encoder weights fixed");
    train->add_option("--config", train_opts.config_file, "key=value config file");

    std::string weights_path, content_path, style_path, out_path;
    double alpha = 1.0;
    int ca_kernel = 1;
    CLI::App* stylize = app.add_subcommand("stylize", "stylize one content image");
    stylize->add_option("--weights", weights_path, "weight file")->required();
    stylize->add_option("--content", content_path, "content image")->required();
    stylize->add_option("--style", style_path, "style image")->required();
    stylize->add_option("--out", out_path, "output image")->required();
    stylize->add_option("--alpha", alpha, "content-style trade-off in [0,1]");
    stylize->add_option("--ca-kernel", ca_kernel, "co-adaptation kernel size (1 or 3)");

    std::vector<std::string> style_specs;
    CLI::App* interpolate = app.add_subcommand("interpolate", "blend several styles");
    interpolate->add_option("--weights", weights_path, "weight file")->required();
    interpolate->add_option("--content", content_path, "content image")->required();
    interpolate->add_option("--style", style_specs, "style as PATH:WEIGHT (repeatable)")
        ->required();
    interpolate->add_option("--out", out_path, "output image")->required();

    std::uint64_t gradcheck_seed = 17;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "verify gradients end to end");
    gradcheck->add_option("--seed", gradcheck_seed, "RNG seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (train->parsed()) {
            return run_train(train_opts, *train);
        }
        if (stylize->parsed()) {
            return run_stylize(weights_path, content_path, style_path, out_path, alpha,
                               ca_kernel);
        }
        if (interpolate->parsed()) {
            return run_interpolate(weights_path, content_path, style_specs, out_path);
        }
        if (gradcheck->parsed()) {
            return run_gradcheck(gradcheck_seed);
        }
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitUsage;
}
