#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "resid/core.hpp"

namespace resid {

struct UnitEntry {
    UnitId unit;
    std::string path;  // relative to the manifest file
    std::int64_t n_samples = 0;
};

/// Catalog of every residual unit of one model run, per dataset split.
struct TraceManifest {
    std::string model_name;
    int n_layers = 0;
    int heads_per_layer = 0;
    int d_model = 0;
    int d_head = 0;
    int d_out = 0;
    std::map<std::string, std::vector<UnitEntry>> splits;
    std::map<std::string, std::vector<int>> labels;

    int n_heads() const { return n_layers * heads_per_layer; }
    /// n_layers * heads_per_layer + n_layers + 2 (embed and output).
    int units_per_split() const { return n_heads() + n_layers + 2; }
};

/// Units of a split in canonical order: embed, then per layer its heads and
/// its mlp, then the output.
std::vector<UnitId> canonical_units(int n_layers, int heads_per_layer);

nlohmann::ordered_json to_json(const TraceManifest& manifest);
TraceManifest manifest_from_json(const nlohmann::json& j);

/// Structural checks that need no file access. Throws ValidationError.
void validate(const TraceManifest& manifest);

/// All units of one split, loaded into memory.
struct SplitData {
    std::string name;
    std::vector<UnitTensor> units;  // canonical order, output last
    std::vector<int> labels;        // empty when the split is unlabeled

    const UnitTensor& unit(const UnitId& id) const;
    const UnitTensor& output() const;
    std::vector<const UnitTensor*> heads() const;
    Eigen::Index n_samples() const { return units.empty() ? 0 : units.front().n_samples(); }
};

/// A validated manifest plus lazy access to its unit tensors.
class Trace {
public:
    Trace(TraceManifest manifest, std::filesystem::path root);

    const TraceManifest& manifest() const { return manifest_; }
    const std::filesystem::path& root() const { return root_; }

    bool has_split(const std::string& split) const { return manifest_.splits.count(split) > 0; }
    std::vector<std::string> split_names() const;
    const std::vector<int>& labels(const std::string& split) const;

    UnitTensor load_unit(const std::string& split, const UnitId& id) const;
    SplitData load_split(const std::string& split) const;

private:
    const UnitEntry& entry(const std::string& split, const UnitId& id) const;

    TraceManifest manifest_;
    std::filesystem::path root_;
};

/// Parses and validates `manifest_path`, checking every referenced file's
/// header (shape and sample count) without reading payloads.
Trace load_trace(const std::filesystem::path& manifest_path);

void write_manifest(const std::filesystem::path& manifest_path, const TraceManifest& manifest);

/// Conventional relative file name for a unit, e.g. "units/train/L03_head07.rdt".
std::string unit_file_name(const std::string& split, const UnitId& id);

nlohmann::ordered_json to_json(const UnitId& id);
UnitId unit_id_from_json(const nlohmann::json& j);

/// Task file: JSON {"class_names": [...], "encodings": "<file>.rdt"} next to
/// an RDT1 tensor holding the C x d_out class encodings.
void write_task(const std::filesystem::path& json_path, const TaskSpec& task);
TaskSpec read_task(const std::filesystem::path& json_path);

}  // namespace resid
