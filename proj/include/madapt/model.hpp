#pragma once

#include <cstdint>
#include <string>

#include "madapt/codec.hpp"
#include "madapt/multi_adaptation.hpp"
#include "madapt/whitening.hpp"

namespace madapt {

// The full style-transfer network: encoder, decoder, and the three adaptation
// sub-modules. `params` holds the same tensors under stable names for the
// optimizer and serialization; the typed views share storage with it.
struct Model {
    EncoderSpec spec;
    EncoderWeights encoder;
    DecoderWeights decoder;
    AdaptationWeights adapt;
    WhitenConfig whiten;
    ModuleWeights params;
};

// Fresh model with He-style random initialization, deterministic per seed.
Model make_model(const EncoderSpec& spec, int ca_kernel, std::uint64_t seed);

// Rebuilds a model from a named weight collection (e.g. a checkpoint),
// inferring the encoder spec and CA kernel size from kernel shapes. Unknown
// parameter names are skipped with a warning on stderr; missing or
// inconsistently shaped parameters raise ConfigError listing the offenders.
Model bind_model(const ModuleWeights& weights);

// Marks parameters trainable; encoder tensors stay frozen when requested.
void set_trainable(Model& model, bool freeze_encoder);

// Deep frozen copy of the encoder, used as the loss network.
EncoderWeights snapshot_encoder(const Model& model);

}  // namespace madapt
