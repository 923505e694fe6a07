#include "resid/trace.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "resid/error.hpp"
#include "resid/tensor_io.hpp"

namespace resid {

std::vector<UnitId> canonical_units(int n_layers, int heads_per_layer) {
    std::vector<UnitId> ids;
    ids.reserve(static_cast<std::size_t>(n_layers * heads_per_layer + n_layers + 2));
    ids.push_back(UnitId::embed());
    for (int l = 0; l < n_layers; ++l) {
        for (int h = 0; h < heads_per_layer; ++h) ids.push_back(UnitId::head(l, h));
        ids.push_back(UnitId::mlp(l));
    }
    ids.push_back(UnitId::output(n_layers));
    return ids;
}

nlohmann::ordered_json to_json(const UnitId& id) {
    nlohmann::ordered_json j;
    j["layer"] = id.layer;
    j["kind"] = std::string(to_string(id.kind));
    j["index"] = id.index;
    return j;
}

UnitId unit_id_from_json(const nlohmann::json& j) {
    try {
        return {j.at("layer").get<int>(), parse_unit_kind(j.at("kind").get<std::string>()),
                j.at("index").get<int>()};
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed unit id: ") + e.what());
    }
}

nlohmann::ordered_json to_json(const TraceManifest& m) {
    nlohmann::ordered_json j;
    j["model_name"] = m.model_name;
    j["n_layers"] = m.n_layers;
    j["heads_per_layer"] = m.heads_per_layer;
    j["d_model"] = m.d_model;
    j["d_head"] = m.d_head;
    j["d_out"] = m.d_out;
    nlohmann::ordered_json splits = nlohmann::ordered_json::object();
    for (const auto& [name, entries] : m.splits) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& e : entries) {
            nlohmann::ordered_json ej;
            ej["unit"] = to_json(e.unit);
            ej["path"] = e.path;
            ej["n_samples"] = e.n_samples;
            arr.push_back(std::move(ej));
        }
        splits[name] = std::move(arr);
    }
    j["splits"] = std::move(splits);
    if (!m.labels.empty()) {
        nlohmann::ordered_json labels = nlohmann::ordered_json::object();
        for (const auto& [name, l] : m.labels) labels[name] = l;
        j["labels"] = std::move(labels);
    }
    return j;
}

TraceManifest manifest_from_json(const nlohmann::json& j) {
    TraceManifest m;
    try {
        m.model_name = j.at("model_name").get<std::string>();
        m.n_layers = j.at("n_layers").get<int>();
        m.heads_per_layer = j.at("heads_per_layer").get<int>();
        m.d_model = j.at("d_model").get<int>();
        m.d_head = j.at("d_head").get<int>();
        m.d_out = j.at("d_out").get<int>();
        for (const auto& [name, arr] : j.at("splits").items()) {
            auto& entries = m.splits[name];
            for (const auto& ej : arr) {
                entries.push_back({unit_id_from_json(ej.at("unit")), ej.at("path").get<std::string>(),
                                   ej.at("n_samples").get<std::int64_t>()});
            }
        }
        if (j.contains("labels") && !j.at("labels").is_null()) {
            for (const auto& [name, arr] : j.at("labels").items()) {
                m.labels[name] = arr.get<std::vector<int>>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

void validate(const TraceManifest& m) {
    if (m.n_layers < 1 || m.heads_per_layer < 1 || m.d_model < 1 || m.d_head < 1 || m.d_out < 1) {
        throw ValidationError("manifest dimensions must be positive");
    }
    if (m.d_head * m.heads_per_layer != m.d_model) {
        throw ValidationError("dimension mismatch: d_head * heads_per_layer != d_model");
    }
    if (m.splits.empty()) throw ValidationError("manifest lists no splits");
    const auto expected = canonical_units(m.n_layers, m.heads_per_layer);
    const std::set<UnitId> expected_set(expected.begin(), expected.end());
    for (const auto& [name, entries] : m.splits) {
        std::set<UnitId> seen;
        for (const auto& e : entries) {
            if (!expected_set.count(e.unit)) {
                throw ValidationError("split '" + name + "': unexpected unit " + to_string(e.unit) +
                                      " (layer " + std::to_string(e.unit.layer) + ", index " +
                                      std::to_string(e.unit.index) + ")");
            }
            if (!seen.insert(e.unit).second) {
                throw ValidationError("split '" + name + "': duplicate unit " + to_string(e.unit));
            }
            if (e.n_samples < 1) throw ValidationError("split '" + name + "': empty unit " + to_string(e.unit));
        }
        for (const auto& id : expected) {
            if (!seen.count(id)) throw ValidationError("split '" + name + "': missing unit " + to_string(id));
        }
        const auto n0 = entries.front().n_samples;
        for (const auto& e : entries) {
            if (e.n_samples != n0) {
                throw ValidationError("split '" + name + "': inconsistent sample count (" +
                                      to_string(e.unit) + " has " + std::to_string(e.n_samples) +
                                      ", expected " + std::to_string(n0) + ")");
            }
        }
        if (auto it = m.labels.find(name); it != m.labels.end()) {
            if (static_cast<std::int64_t>(it->second.size()) != n0) {
                throw ValidationError("split '" + name + "': label count does not match sample count");
            }
        }
    }
    for (const auto& [name, l] : m.labels) {
        if (!m.splits.count(name)) throw ValidationError("labels given for unknown split '" + name + "'");
        for (int c : l) {
            if (c < 0) throw ValidationError("split '" + name + "': negative label");
        }
    }
}

const UnitTensor& SplitData::unit(const UnitId& id) const {
    for (const auto& u : units) {
        if (u.unit == id) return u;
    }
    throw ValidationError("split '" + name + "': missing unit " + to_string(id));
}

const UnitTensor& SplitData::output() const {
    for (const auto& u : units) {
        if (u.unit.kind == UnitKind::output) return u;
    }
    throw ValidationError("split '" + name + "': missing output unit");
}

std::vector<const UnitTensor*> SplitData::heads() const {
    std::vector<const UnitTensor*> out;
    for (const auto& u : units) {
        if (u.unit.is_head()) out.push_back(&u);
    }
    return out;
}

Trace::Trace(TraceManifest manifest, std::filesystem::path root)
    : manifest_(std::move(manifest)), root_(std::move(root)) {
    validate(manifest_);
}

std::vector<std::string> Trace::split_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : manifest_.splits) names.push_back(name);
    return names;
}

const std::vector<int>& Trace::labels(const std::string& split) const {
    auto it = manifest_.labels.find(split);
    if (it == manifest_.labels.end()) throw ValidationError("split '" + split + "' has no labels");
    return it->second;
}

const UnitEntry& Trace::entry(const std::string& split, const UnitId& id) const {
    auto it = manifest_.splits.find(split);
    if (it == manifest_.splits.end()) throw ValidationError("unknown split '" + split + "'");
    for (const auto& e : it->second) {
        if (e.unit == id) return e;
    }
    throw ValidationError("split '" + split + "': missing unit " + to_string(id));
}

UnitTensor Trace::load_unit(const std::string& split, const UnitId& id) const {
    const auto& e = entry(split, id);
    UnitTensor t{id, read_tensor(root_ / e.path), {}};
    if (t.data.rows() != e.n_samples || t.data.cols() != manifest_.d_out) {
        throw ValidationError("dimension mismatch in " + e.path);
    }
    t.sample_ids = index_sample_ids(t.data.rows());
    return t;
}

SplitData Trace::load_split(const std::string& split) const {
    SplitData data;
    data.name = split;
    for (const auto& id : canonical_units(manifest_.n_layers, manifest_.heads_per_layer)) {
        data.units.push_back(load_unit(split, id));
    }
    if (auto it = manifest_.labels.find(split); it != manifest_.labels.end()) data.labels = it->second;
    return data;
}

Trace load_trace(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
    }
    Trace trace(manifest_from_json(j), manifest_path.parent_path());
    for (const auto& [name, entries] : trace.manifest().splits) {
        for (const auto& e : entries) {
            const auto shape = read_tensor_shape(trace.root() / e.path);
            if (shape.rows != e.n_samples || shape.cols != trace.manifest().d_out) {
                throw ValidationError("dimension mismatch: " + e.path + " has shape [" +
                                      std::to_string(shape.rows) + "," + std::to_string(shape.cols) + "]");
            }
        }
    }
    return trace;
}

void write_manifest(const std::filesystem::path& manifest_path, const TraceManifest& manifest) {
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    out << to_json(manifest).dump(1) << '\n';
}

std::string unit_file_name(const std::string& split, const UnitId& id) {
    char buf[64];
    switch (id.kind) {
        case UnitKind::head: std::snprintf(buf, sizeof buf, "L%02d_head%02d.rdt", id.layer, id.index); break;
        case UnitKind::mlp: std::snprintf(buf, sizeof buf, "L%02d_mlp.rdt", id.layer); break;
        case UnitKind::embed: std::snprintf(buf, sizeof buf, "embed.rdt"); break;
        case UnitKind::output: std::snprintf(buf, sizeof buf, "output.rdt"); break;
    }
    return "units/" + split + "/" + buf;
}

void write_task(const std::filesystem::path& json_path, const TaskSpec& task) {
    validate(task);
    const auto tensor_name = json_path.stem().string() + ".rdt";
    write_tensor(json_path.parent_path() / tensor_name, task.encodings);
    nlohmann::ordered_json j;
    j["class_names"] = task.class_names;
    j["encodings"] = tensor_name;
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + json_path.string());
    out << j.dump(1) << '\n';
}

TaskSpec read_task(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open " + json_path.string());
    TaskSpec task;
    try {
        const auto j = nlohmann::json::parse(in);
        task.class_names = j.at("class_names").get<std::vector<std::string>>();
        task.encodings = read_tensor(json_path.parent_path() / j.at("encodings").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("task file " + json_path.string() + ": " + e.what());
    }
    validate(task);
    return task;
}

}  // namespace resid
