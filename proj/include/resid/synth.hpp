#pragma once

// Synthetic residual-stream traces with planted task structure.
//
// Every unit is produced in model space and pushed through the same frozen
// LayerNorm and output projection that decompose.hpp describes, so stored
// outputs are exactly the sum of their units.
//
// Head h carries a rank-r latent whose k-th component lands on a fixed unit
// direction u_k of output space with amplitude head_scale * 0.7^k. A planted
// (head, component) replaces that component's standard-normal coefficient by
// a mix of class codes and noise. The class encodings are built from the
// planted directions so that they are orthonormal.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "resid/core.hpp"
#include "resid/decompose.hpp"
#include "resid/pursuit.hpp"
#include "resid/trace.hpp"

namespace resid {

struct PlantedComponent {
    UnitId unit;
    int component = 0;
    double strength = 1.0;  // in [0, 1]
};

struct SynthConfig {
    int n_layers = 2;
    int heads_per_layer = 4;
    int d_model = 32;
    int d_out = 16;
    int n_classes = 2;
    std::map<std::string, int> samples{{"train", 1024}, {"val", 256}, {"test", 512}};
    std::vector<PlantedComponent> planted;
    double noise_scale = 1.0;   // std of each MLP contribution (model space)
    double head_scale = 1.0;    // output-space amplitude of a head's first component
    double embed_scale = 3.0;   // std of the shared token-embedding vector
    double decay = 0.7;         // geometric decay of head spectra
    std::uint64_t seed = 0;

    int d_head() const { return heads_per_layer > 0 ? d_model / heads_per_layer : 0; }
};

void validate(const SynthConfig& cfg);
nlohmann::ordered_json to_json(const SynthConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct PlantedInfo {
    PlantedComponent planted;
    RowVector direction;  // output-space direction of the planted component
};

struct SynthTrace {
    TraceManifest manifest;                   // paths follow unit_file_name
    std::map<std::string, SplitData> splits;  // output unit is the stored sum
    std::map<std::string, Matrix> sum_streams;
    std::map<std::string, std::vector<std::vector<RawHeadTensor>>> raw_heads;  // [split][layer][head]
    TaskSpec task;
    ProjectionSpec projection;
    std::vector<PlantedInfo> planted;
    std::vector<int> head_ranks;  // per head, canonical (layer, index) order
};

/// Deterministic in cfg (including seed). Throws ValidationError on invalid
/// configs, including a planted component beyond the head's rank budget.
SynthTrace gen_trace(const SynthConfig& cfg);

/// Text-atom stand-ins: the class encodings followed by `n_distractors`
/// random unit vectors.
Dictionary synth_dictionary(const SynthTrace& trace, std::uint64_t seed, int n_distractors);

/// Writes manifest.json, units/, task.json + task.rdt, projection/,
/// dictionary.jsonl and synth_config.json under `dir`.
void write_synth_trace(const std::filesystem::path& dir, const SynthTrace& trace, const SynthConfig& cfg);

}  // namespace resid
