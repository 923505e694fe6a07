#include "resid/decompose.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "resid/error.hpp"
#include "resid/tensor_io.hpp"

namespace resid {

void validate(const ProjectionSpec& spec) {
    const auto d = spec.d_model();
    if (d < 1 || spec.d_out() < 1) throw ValidationError("projection spec: empty projection");
    if (spec.attn_out_weight.size() != spec.attn_out_bias.size()) {
        throw ValidationError("projection spec: weight/bias layer count mismatch");
    }
    for (std::size_t l = 0; l < spec.attn_out_weight.size(); ++l) {
        if (spec.attn_out_weight[l].rows() != d || spec.attn_out_weight[l].cols() != d ||
            spec.attn_out_bias[l].size() != d) {
            throw ValidationError("projection spec: layer " + std::to_string(l) + " has wrong shape");
        }
        require_finite(spec.attn_out_weight[l], "attention output weight");
        require_finite(spec.attn_out_bias[l], "attention output bias");
    }
    if (spec.ln_gain.size() != d || spec.ln_shift.size() != d) {
        throw ValidationError("projection spec: LayerNorm parameters have wrong length");
    }
    require_finite(spec.ln_gain, "LayerNorm gain");
    require_finite(spec.ln_shift, "LayerNorm shift");
    require_finite(spec.projection, "output projection");
    if (!(spec.layernorm_eps > 0.0)) throw ValidationError("projection spec: layernorm_eps must be > 0");
}

namespace {

void check_layer(const std::vector<RawHeadTensor>& raw, const ProjectionSpec& spec, int layer) {
    if (layer < 0 || layer >= spec.n_layers()) {
        throw ValidationError("layer " + std::to_string(layer) + " out of range");
    }
    if (raw.empty()) throw ValidationError("distribute_heads: no heads given");
    const auto n_heads = static_cast<Eigen::Index>(raw.size());
    if (spec.d_model() % n_heads != 0) {
        throw ValidationError("shape mismatch: d_model not divisible by head count");
    }
    const auto d_head = spec.d_model() / n_heads;
    const auto n = raw.front().data.rows();
    for (std::size_t h = 0; h < raw.size(); ++h) {
        if (raw[h].data.rows() != n || raw[h].data.cols() != d_head) {
            throw ValidationError("shape mismatch: head " + std::to_string(h) + " is " +
                                  std::to_string(raw[h].data.rows()) + "x" + std::to_string(raw[h].data.cols()) +
                                  ", expected " + std::to_string(n) + "x" + std::to_string(d_head));
        }
    }
}

}  // namespace

std::vector<Matrix> distribute_heads(const std::vector<RawHeadTensor>& raw, const ProjectionSpec& spec,
                                     int layer) {
    check_layer(raw, spec, layer);
    const auto n_heads = static_cast<Eigen::Index>(raw.size());
    const auto d_head = spec.d_model() / n_heads;
    const Matrix& w = spec.attn_out_weight[static_cast<std::size_t>(layer)];
    const RowVector bias_share = spec.attn_out_bias[static_cast<std::size_t>(layer)].transpose() / double(n_heads);

    std::vector<Matrix> out;
    out.reserve(raw.size());
    for (Eigen::Index h = 0; h < n_heads; ++h) {
        // Zero-padding H to column block h and multiplying by W only touches rows h*d_head.. of W.
        Matrix contrib = raw[static_cast<std::size_t>(h)].data * w.middleRows(h * d_head, d_head);
        contrib.rowwise() += bias_share;
        out.push_back(std::move(contrib));
    }
    return out;
}

Matrix attention_output(const std::vector<RawHeadTensor>& raw, const ProjectionSpec& spec, int layer) {
    check_layer(raw, spec, layer);
    const auto n = raw.front().data.rows();
    Matrix cat(n, spec.d_model());
    Eigen::Index col = 0;
    for (const auto& h : raw) {
        cat.middleCols(col, h.data.cols()) = h.data;
        col += h.data.cols();
    }
    Matrix out = cat * spec.attn_out_weight[static_cast<std::size_t>(layer)];
    out.rowwise() += spec.attn_out_bias[static_cast<std::size_t>(layer)].transpose();
    return out;
}

Matrix LayerNormAffine::apply(const Matrix& unit) const {
    if (unit.rows() != scale.rows() || unit.cols() != scale.cols()) {
        throw ValidationError("layernorm affine: unit shape does not match frozen statistics");
    }
    Matrix centered = unit.colwise() - unit.rowwise().mean();
    return centered.cwiseProduct(scale) * projection;
}

LayerNormAffine layernorm_affine(const Matrix& sum_stream, const ProjectionSpec& spec) {
    validate(spec);
    if (sum_stream.cols() != spec.d_model()) throw ValidationError("layernorm affine: width != d_model");
    const auto n = sum_stream.rows();
    const auto d = sum_stream.cols();
    LayerNormAffine a;
    a.scale.resize(n, d);
    for (Eigen::Index s = 0; s < n; ++s) {
        const double mean = sum_stream.row(s).mean();
        const double var = (sum_stream.row(s).array() - mean).square().mean();
        if (!(var > 0.0)) throw NumericError("degenerate row " + std::to_string(s) + ": zero variance");
        const double inv_sigma = 1.0 / std::sqrt(var + spec.layernorm_eps);
        a.scale.row(s) = spec.ln_gain.transpose() * inv_sigma;
    }
    a.shift = spec.ln_shift.transpose() * spec.projection;
    a.projection = spec.projection;
    return a;
}

Matrix project_output(const Matrix& sum_stream, const ProjectionSpec& spec) {
    validate(spec);
    Matrix normed(sum_stream.rows(), sum_stream.cols());
    for (Eigen::Index s = 0; s < sum_stream.rows(); ++s) {
        const double mean = sum_stream.row(s).mean();
        const double var = (sum_stream.row(s).array() - mean).square().mean();
        if (!(var > 0.0)) throw NumericError("degenerate row " + std::to_string(s) + ": zero variance");
        const RowVector z = (sum_stream.row(s).array() - mean) / std::sqrt(var + spec.layernorm_eps);
        normed.row(s) = z.cwiseProduct(spec.ln_gain.transpose()) + spec.ln_shift.transpose();
    }
    return normed * spec.projection;
}

UnitTensor assemble_output(const std::vector<const UnitTensor*>& units, int n_layers) {
    const UnitTensor* embed = nullptr;
    for (const auto* u : units) {
        if (u->unit.kind == UnitKind::embed) embed = u;
    }
    if (embed == nullptr) throw ValidationError("assemble_output: missing embed unit");
    UnitTensor out{UnitId::output(n_layers), Matrix::Zero(embed->data.rows(), embed->data.cols()),
                   embed->sample_ids};
    for (const auto* u : units) {
        if (u->unit.kind == UnitKind::output) continue;
        if (u->data.rows() != out.data.rows() || u->data.cols() != out.data.cols()) {
            throw ValidationError("assemble_output: unit " + to_string(u->unit) + " has mismatched shape");
        }
        out.data += u->data;
    }
    return out;
}

UnitTensor assemble_output(const std::vector<UnitTensor>& units, int n_layers) {
    std::vector<const UnitTensor*> ptrs;
    ptrs.reserve(units.size());
    for (const auto& u : units) ptrs.push_back(&u);
    return assemble_output(ptrs, n_layers);
}

void write_projection_spec(const std::filesystem::path& dir, const ProjectionSpec& spec) {
    validate(spec);
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json idx;
    idx["n_layers"] = spec.n_layers();
    idx["d_model"] = spec.d_model();
    idx["d_out"] = spec.d_out();
    idx["layernorm_eps"] = spec.layernorm_eps;
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (int l = 0; l < spec.n_layers(); ++l) {
        const std::string w = "attn_out_weight_" + std::to_string(l) + ".rdt";
        const std::string b = "attn_out_bias_" + std::to_string(l) + ".rdt";
        write_tensor(dir / w, spec.attn_out_weight[static_cast<std::size_t>(l)]);
        write_vector(dir / b, spec.attn_out_bias[static_cast<std::size_t>(l)]);
        layers.push_back({{"weight", w}, {"bias", b}});
    }
    idx["layers"] = std::move(layers);
    write_vector(dir / "ln_gain.rdt", spec.ln_gain);
    write_vector(dir / "ln_shift.rdt", spec.ln_shift);
    write_tensor(dir / "projection.rdt", spec.projection);
    idx["ln_gain"] = "ln_gain.rdt";
    idx["ln_shift"] = "ln_shift.rdt";
    idx["projection"] = "projection.rdt";
    std::ofstream out(dir / "index.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "index.json").string());
    out << idx.dump(1) << '\n';
}

ProjectionSpec read_projection_spec(const std::filesystem::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw IoError("cannot open " + (dir / "index.json").string());
    ProjectionSpec spec;
    try {
        const auto idx = nlohmann::json::parse(in);
        spec.layernorm_eps = idx.at("layernorm_eps").get<double>();
        for (const auto& layer : idx.at("layers")) {
            spec.attn_out_weight.push_back(read_tensor(dir / layer.at("weight").get<std::string>()));
            spec.attn_out_bias.push_back(read_vector(dir / layer.at("bias").get<std::string>()));
        }
        spec.ln_gain = read_vector(dir / idx.at("ln_gain").get<std::string>());
        spec.ln_shift = read_vector(dir / idx.at("ln_shift").get<std::string>());
        spec.projection = read_tensor(dir / idx.at("projection").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed projection index: ") + e.what());
    }
    validate(spec);
    return spec;
}

}  // namespace resid
