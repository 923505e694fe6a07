#include "resid/synth.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "resid/error.hpp"
#include "resid/rng.hpp"
#include "resid/tensor_io.hpp"

namespace resid {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Rows of a C x (C-1) matrix: unit-norm vertices of a regular simplex
// centered at the origin.
Matrix simplex_codes(int c) {
    Matrix basis(c, c - 1);
    for (int j = 0; j < c - 1; ++j) {
        Vector e = Vector::Constant(c, -1.0 / c);
        e(j) += 1.0;
        for (int k = 0; k < j; ++k) e -= basis.col(k).dot(e) * basis.col(k);
        basis.col(j) = e.normalized();
    }
    return basis * std::sqrt(static_cast<double>(c) / (c - 1));
}

// Removes from `v` its components along the orthonormal rows of `q`.
RowVector orthogonalize(RowVector v, const std::vector<RowVector>& q) {
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& r : q) v -= v.dot(r) * r;
    }
    return v;
}

// Orthogonal projector (d x d) onto the complement of span(cols of b).
Matrix complement_projector(const Matrix& b) {
    const Eigen::Index d = b.rows();
    if (b.cols() == 0) return Matrix::Identity(d, d);
    Eigen::ColPivHouseholderQR<Matrix> qr(b);
    const Eigen::Index r = qr.rank();
    const Matrix q = (qr.householderQ() * Matrix::Identity(d, d)).leftCols(r);
    return Matrix::Identity(d, d) - q * q.transpose();
}

struct HeadModel {
    Matrix latent;  // r x d_head, row k maps to output direction k
    Matrix out;     // r x d_out, orthonormal rows
    Vector amp;     // r
};

}  // namespace

void validate(const SynthConfig& cfg) {
    if (cfg.n_layers < 1 || cfg.heads_per_layer < 1) throw ValidationError("synth: need at least one layer and head");
    if (cfg.d_model < 2 || cfg.d_model % cfg.heads_per_layer != 0) {
        throw ValidationError("synth: d_model must be a multiple of heads_per_layer");
    }
    if (cfg.d_head() < 2) throw ValidationError("synth: d_head must be >= 2");
    if (cfg.n_classes < 2) throw ValidationError("synth: n_classes must be >= 2");
    if (cfg.d_out < cfg.n_classes + 1) throw ValidationError("synth: d_out must exceed n_classes");
    if (cfg.d_out > cfg.d_model) throw ValidationError("synth: d_out must not exceed d_model");
    if (cfg.samples.empty()) throw ValidationError("synth: no splits");
    for (const auto& [name, n] : cfg.samples) {
        if (name.empty() || name.find('/') != std::string::npos) throw ValidationError("synth: bad split name");
        if (n < 2) throw ValidationError("synth: split '" + name + "' needs at least 2 samples");
    }
    if (!(cfg.noise_scale >= 0.0) || !(cfg.head_scale > 0.0) || !(cfg.embed_scale > 0.0)) {
        throw ValidationError("synth: scales must be positive (noise_scale may be 0)");
    }
    if (!(cfg.decay > 0.0 && cfg.decay <= 1.0)) throw ValidationError("synth: decay must be in (0, 1]");
    if (static_cast<int>(cfg.planted.size()) > cfg.n_classes - 1) {
        throw ValidationError("synth: at most n_classes-1 planted components");
    }
    std::set<UnitId> seen;
    for (const auto& p : cfg.planted) {
        if (!p.unit.is_head() || p.unit.layer < 0 || p.unit.layer >= cfg.n_layers || p.unit.index < 0 ||
            p.unit.index >= cfg.heads_per_layer) {
            throw ValidationError("synth: planted unit " + to_string(p.unit) + " is not a head of the model");
        }
        if (!(p.strength >= 0.0 && p.strength <= 1.0)) throw ValidationError("synth: strength must be in [0, 1]");
        if (p.component < 0 || p.component >= std::min(cfg.d_head(), cfg.d_out)) {
            throw ValidationError("synth: over-constrained planting: component " + std::to_string(p.component) +
                                  " exceeds the rank budget of " + to_string(p.unit));
        }
        if (!seen.insert(p.unit).second) throw ValidationError("synth: head planted twice: " + to_string(p.unit));
    }
}

nlohmann::ordered_json to_json(const SynthConfig& cfg) {
    nlohmann::ordered_json j;
    j["n_layers"] = cfg.n_layers;
    j["heads_per_layer"] = cfg.heads_per_layer;
    j["d_model"] = cfg.d_model;
    j["d_out"] = cfg.d_out;
    j["n_classes"] = cfg.n_classes;
    j["samples"] = cfg.samples;
    j["planted"] = nlohmann::ordered_json::array();
    for (const auto& p : cfg.planted) {
        nlohmann::ordered_json e;
        e["unit"] = to_json(p.unit);
        e["component"] = p.component;
        e["strength"] = p.strength;
        j["planted"].push_back(e);
    }
    j["noise_scale"] = cfg.noise_scale;
    j["head_scale"] = cfg.head_scale;
    j["embed_scale"] = cfg.embed_scale;
    j["decay"] = cfg.decay;
    j["seed"] = cfg.seed;
    return j;
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("synth config must be a JSON object");
    SynthConfig cfg;
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "n_layers") cfg.n_layers = v.get<int>();
            else if (key == "heads_per_layer") cfg.heads_per_layer = v.get<int>();
            else if (key == "d_model") cfg.d_model = v.get<int>();
            else if (key == "d_out") cfg.d_out = v.get<int>();
            else if (key == "n_classes") cfg.n_classes = v.get<int>();
            else if (key == "samples") cfg.samples = v.get<std::map<std::string, int>>();
            else if (key == "planted") {
                cfg.planted.clear();
                for (const auto& e : v) {
                    PlantedComponent p;
                    p.unit = unit_id_from_json(e.at("unit"));
                    p.component = e.value("component", 0);
                    p.strength = e.value("strength", 1.0);
                    cfg.planted.push_back(p);
                }
            } else if (key == "noise_scale") cfg.noise_scale = v.get<double>();
            else if (key == "head_scale") cfg.head_scale = v.get<double>();
            else if (key == "embed_scale") cfg.embed_scale = v.get<double>();
            else if (key == "decay") cfg.decay = v.get<double>();
            else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
            else throw ValidationError("synth config: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("synth config: bad value for '" + key + "': " + e.what());
        }
    }
    validate(cfg);
    return cfg;
}

SynthTrace gen_trace(const SynthConfig& cfg) {
    validate(cfg);
    const int L = cfg.n_layers, H = cfg.heads_per_layer, dm = cfg.d_model, dh = cfg.d_head(), dout = cfg.d_out;
    const int C = cfg.n_classes;
    Rng rng(derive_seed(cfg.seed, 1));

    SynthTrace tr;
    ProjectionSpec& spec = tr.projection;
    for (int l = 0; l < L; ++l) {
        spec.attn_out_weight.push_back(rng.normal_matrix(dm, dm, 1.0 / std::sqrt(static_cast<double>(dm))));
        spec.attn_out_bias.push_back(rng.normal_vector(dm, 0.02));
    }
    spec.ln_gain.resize(dm);
    for (int i = 0; i < dm; ++i) spec.ln_gain(i) = rng.uniform(0.5, 1.5);
    spec.ln_shift = rng.normal_vector(dm, 0.1);
    spec.projection = rng.normal_matrix(dm, dout, 1.0 / std::sqrt(static_cast<double>(dm)));

    // Linear part of LayerNorm + projection, shared by every unit up to the
    // per-sample 1/sigma factor.
    const Matrix centering = Matrix::Identity(dm, dm) - Matrix::Constant(dm, dm, 1.0 / dm);
    const Matrix ln_map = centering * spec.ln_gain.asDiagonal() * spec.projection;  // dm x dout

    // Heads: latent directions chosen so their images are orthonormal.
    std::vector<HeadModel> heads(static_cast<std::size_t>(L * H));
    for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
            const Matrix m = spec.attn_out_weight[static_cast<std::size_t>(l)].middleRows(h * dh, dh) * ln_map;
            Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
            const Vector& s = svd.singularValues();
            int usable = 0;
            while (usable < s.size() && s(usable) > 1e-8 * s(0)) ++usable;
            int r = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(dh - 1)));
            for (const auto& p : cfg.planted) {
                if (p.unit == UnitId::head(l, h)) r = std::max(r, p.component + 1);
            }
            r = std::min(r, usable);
            HeadModel& hm = heads[static_cast<std::size_t>(l * H + h)];
            hm.latent.resize(r, dh);
            hm.out.resize(r, dout);
            hm.amp.resize(r);
            for (int k = 0; k < r; ++k) {
                hm.latent.row(k) = svd.matrixU().col(k).transpose() / s(k);
                hm.out.row(k) = svd.matrixV().col(k).transpose();
                hm.amp(k) = cfg.head_scale * std::pow(cfg.decay, k);
            }
            tr.head_ranks.push_back(r);
        }
    }
    for (const auto& p : cfg.planted) {
        const auto& hm = heads[static_cast<std::size_t>(p.unit.layer * H + p.unit.index)];
        if (p.component >= hm.out.rows()) {
            throw ValidationError("synth: over-constrained planting: " + to_string(p.unit) + " has rank " +
                                  std::to_string(hm.out.rows()));
        }
        tr.planted.push_back({p, hm.out.row(p.component)});
    }

    // Class encodings t_c = (w + sqrt(C-1) * sum_j S_cj v_j) / sqrt(C), with
    // v_j the planted directions (then random fill) and w orthogonal to all.
    std::vector<RowVector> dirs;
    for (const auto& pi : tr.planted) {
        RowVector v = orthogonalize(pi.direction, dirs);
        if (v.norm() < 1e-6) throw ValidationError("synth: planted directions are linearly dependent");
        dirs.push_back(v.normalized());
    }
    while (static_cast<int>(dirs.size()) < C) {
        RowVector v = orthogonalize(rng.normal_vector(dout).transpose(), dirs);
        dirs.push_back(v.normalized());
    }
    const RowVector w = dirs.back();
    const Matrix codes = simplex_codes(C);
    tr.task.encodings.resize(C, dout);
    for (int c = 0; c < C; ++c) {
        RowVector t = w;
        for (int j = 0; j < C - 1; ++j) t += std::sqrt(C - 1.0) * codes(c, j) * dirs[static_cast<std::size_t>(j)];
        tr.task.encodings.row(c) = t / std::sqrt(static_cast<double>(C));
        tr.task.class_names.push_back("class_" + std::to_string(c));
    }

    // Keep the embedding and the LayerNorm shift out of the task span.
    const Matrix task_t = tr.task.encodings.transpose();  // dout x C, orthonormal columns
    const Matrix embed_proj = complement_projector(ln_map * task_t);
    const Matrix shift_proj = complement_projector(spec.projection * task_t);
    spec.ln_shift = shift_proj * spec.ln_shift;
    const RowVector embed0 = (embed_proj * rng.normal_vector(dm, cfg.embed_scale)).transpose();

    tr.manifest.model_name = "synth";
    tr.manifest.n_layers = L;
    tr.manifest.heads_per_layer = H;
    tr.manifest.d_model = dm;
    tr.manifest.d_head = dh;
    tr.manifest.d_out = dout;

    for (const auto& [name, n] : cfg.samples) {
        Rng srng(derive_seed(cfg.seed, fnv1a(name)));
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (auto& y : labels) y = static_cast<int>(srng.below(static_cast<std::uint64_t>(C)));

        Matrix embed = srng.normal_matrix(n, dm, 0.1 * cfg.embed_scale) * embed_proj;
        embed.rowwise() += embed0;
        Matrix sum = embed;

        std::vector<std::vector<RawHeadTensor>> raw(static_cast<std::size_t>(L));
        std::vector<std::vector<Matrix>> head_model(static_cast<std::size_t>(L));
        std::vector<Matrix> mlp_model;
        for (int l = 0; l < L; ++l) {
            for (int h = 0; h < H; ++h) {
                const auto& hm = heads[static_cast<std::size_t>(l * H + h)];
                const auto r = hm.latent.rows();
                Matrix z = srng.normal_matrix(n, r);
                for (std::size_t p = 0; p < tr.planted.size(); ++p) {
                    const auto& pc = tr.planted[p].planted;
                    if (pc.unit != UnitId::head(l, h)) continue;
                    const double s = pc.strength;
                    for (int i = 0; i < n; ++i) {
                        const double code = std::sqrt(C - 1.0) * codes(labels[static_cast<std::size_t>(i)],
                                                                        static_cast<Eigen::Index>(p));
                        z(i, pc.component) = s * code + std::sqrt(1.0 - s * s) * z(i, pc.component);
                    }
                }
                raw[static_cast<std::size_t>(l)].push_back(
                    {UnitId::head(l, h), z * hm.amp.asDiagonal() * hm.latent});
            }
            head_model[static_cast<std::size_t>(l)] = distribute_heads(raw[static_cast<std::size_t>(l)], spec, l);
            for (const auto& m : head_model[static_cast<std::size_t>(l)]) sum += m;
            mlp_model.push_back(srng.normal_matrix(n, dm, cfg.noise_scale));
            sum += mlp_model.back();
        }

        const LayerNormAffine affine = layernorm_affine(sum, spec);
        SplitData split;
        split.name = name;
        split.labels = labels;
        const auto ids = index_sample_ids(n);
        auto push = [&](const UnitId& id, Matrix data) {
            split.units.push_back({id, round_to_f32(data), ids});
        };
        push(UnitId::embed(), affine.apply(embed).rowwise() + affine.shift);
        for (int l = 0; l < L; ++l) {
            for (int h = 0; h < H; ++h) {
                push(UnitId::head(l, h), affine.apply(head_model[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)]));
            }
            push(UnitId::mlp(l), affine.apply(mlp_model[static_cast<std::size_t>(l)]));
        }
        Matrix y = Matrix::Zero(n, dout);
        for (const auto& u : split.units) y += u.data;
        push(UnitId::output(L), y);

        std::vector<UnitEntry> entries;
        for (const auto& u : split.units) entries.push_back({u.unit, unit_file_name(name, u.unit), n});
        tr.manifest.splits[name] = std::move(entries);
        tr.manifest.labels[name] = labels;
        tr.splits[name] = std::move(split);
        tr.sum_streams[name] = std::move(sum);
        tr.raw_heads[name] = std::move(raw);
    }
    validate(tr.manifest);
    return tr;
}

Dictionary synth_dictionary(const SynthTrace& trace, std::uint64_t seed, int n_distractors) {
    if (n_distractors < 0) throw ValidationError("synth: negative distractor count");
    Rng rng(derive_seed(seed, 2));
    const auto c = trace.task.n_classes();
    Matrix rows(c + n_distractors, trace.task.dim());
    rows.topRows(c) = trace.task.encodings;
    std::vector<std::string> labels = trace.task.class_names;
    for (int i = 0; i < n_distractors; ++i) {
        rows.row(c + i) = rng.normal_vector(trace.task.dim()).transpose();
        labels.push_back("distractor_" + std::to_string(i));
    }
    return Dictionary::from_rows(rows, std::move(labels));
}

void write_synth_trace(const std::filesystem::path& dir, const SynthTrace& trace, const SynthConfig& cfg) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, split] : trace.splits) {
        std::filesystem::create_directories(dir / "units" / name);
        for (const auto& u : split.units) write_tensor(dir / unit_file_name(name, u.unit), u);
    }
    write_manifest(dir / "manifest.json", trace.manifest);
    write_task(dir / "task.json", trace.task);
    write_projection_spec(dir / "projection", trace.projection);
    write_dictionary(dir / "dictionary.jsonl", synth_dictionary(trace, cfg.seed, 3 * cfg.n_classes));
    std::ofstream out(dir / "synth_config.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "synth_config.json").string());
    out << to_json(cfg).dump(1) << '\n';
}

}  // namespace resid
