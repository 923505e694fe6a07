#include "resid/residual.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "resid/align.hpp"
#include "resid/error.hpp"
#include "resid/tensor_io.hpp"

namespace resid {

LambdaSet LambdaSet::ones(const BasisMap& bases, const std::vector<UnitId>& units, bool recenter) {
    LambdaSet set;
    set.recenter = recenter;
    for (const auto& u : units) {
        auto it = bases.find(u);
        if (it == bases.end()) throw ValidationError("missing basis for " + to_string(u));
        set.entries[u] = Vector::Ones(it->second.size());
    }
    return set;
}

std::int64_t LambdaSet::param_count() const {
    std::int64_t n = 0;
    for (const auto& [u, v] : entries) n += v.size();
    return n;
}

std::string_view to_string(RdVariant v) {
    switch (v) {
        case RdVariant::RD: return "RD";
        case RdVariant::RD_star: return "RD_star";
        case RdVariant::RD_Y: return "RD_Y";
    }
    return "?";
}

RdVariant parse_rd_variant(std::string_view text) {
    if (text == "RD") return RdVariant::RD;
    if (text == "RD_star") return RdVariant::RD_star;
    if (text == "RD_Y") return RdVariant::RD_Y;
    throw ValidationError("unknown variant '" + std::string(text) + "' (expected RD, RD_star or RD_Y)");
}

void validate(const RdConfig& cfg) {
    if (!(cfg.evr_truncation > 0.0 && cfg.evr_truncation <= 1.0)) {
        throw ValidationError("evr_truncation must be in (0, 1]");
    }
    if (cfg.basis_source.empty()) throw ValidationError("basis_source is empty");
}

nlohmann::ordered_json to_json(const RdConfig& cfg) {
    nlohmann::ordered_json j;
    j["variant"] = std::string(to_string(cfg.variant));
    j["evr_truncation"] = cfg.evr_truncation;
    j["include_embed"] = cfg.include_embed;
    j["basis_source"] = cfg.basis_source;
    j["recenter"] = cfg.recenter;
    return j;
}

Matrix rd_transform(const Matrix& x, const PcaBasis& basis, const Vector& lambda, bool recenter) {
    if (lambda.size() != basis.size()) {
        throw ValidationError("lambda length " + std::to_string(lambda.size()) + " != basis size " +
                              std::to_string(basis.size()));
    }
    if (x.cols() != basis.dim()) throw ValidationError("rd_transform: dimension mismatch");
    const Matrix coords = (x.rowwise() - basis.mean) * basis.components.transpose();
    Matrix out = (coords * lambda.asDiagonal()) * basis.components;
    if (recenter) out.rowwise() += basis.mean;
    return out;
}

PcaBasis truncate_basis(const PcaBasis& basis, double evr_threshold) {
    if (!(evr_threshold > 0.0 && evr_threshold <= 1.0)) throw ValidationError("evr threshold must be in (0, 1]");
    Eigen::Index m = 0;
    double cum = 0.0;
    while (m < basis.size()) {
        cum += basis.evr(m++);
        if (cum >= evr_threshold - 1e-12) break;
    }
    PcaBasis out = basis;
    out.components = basis.components.topRows(m);
    out.singular_values = basis.singular_values.head(m);
    out.evr = basis.evr.head(m);
    return out;
}

std::vector<UnitId> rd_units(int n_layers, int heads_per_layer, const RdConfig& cfg) {
    std::vector<UnitId> units;
    if (cfg.variant == RdVariant::RD_Y) return {UnitId::output(n_layers)};
    for (const auto& u : canonical_units(n_layers, heads_per_layer)) {
        switch (u.kind) {
            case UnitKind::head: units.push_back(u); break;
            case UnitKind::mlp:
                if (cfg.variant == RdVariant::RD) units.push_back(u);
                break;
            case UnitKind::embed:
                if (cfg.variant == RdVariant::RD && cfg.include_embed) units.push_back(u);
                break;
            case UnitKind::output: break;
        }
    }
    return units;
}

BasisMap fit_rd_bases(const SplitData& reference, int n_layers, int heads_per_layer, const RdConfig& cfg) {
    validate(cfg);
    BasisMap bases;
    for (const auto& u : rd_units(n_layers, heads_per_layer, cfg)) {
        PcaBasis b = fit_pca(reference.unit(u));
        if (cfg.variant == RdVariant::RD_star) b = truncate_basis(b, cfg.evr_truncation);
        bases.emplace(u, std::move(b));
    }
    return bases;
}

namespace {

const PcaBasis& basis_for(const BasisMap& bases, const UnitId& u) {
    auto it = bases.find(u);
    if (it == bases.end()) throw ValidationError("missing basis for " + to_string(u));
    return it->second;
}

const Vector& lambda_for(const LambdaSet& lambdas, const UnitId& u) {
    auto it = lambdas.entries.find(u);
    if (it == lambdas.entries.end()) throw ValidationError("missing lambda for " + to_string(u));
    return it->second;
}

// Layout shared by rd_output and RdProblem.
int split_layers(const SplitData& split) { return split.output().unit.layer; }

int split_heads_per_layer(const SplitData& split) {
    int h = 0;
    for (const auto& u : split.units) {
        if (u.unit.is_head() && u.unit.layer == 0) ++h;
    }
    return h;
}

}  // namespace

UnitTensor rd_output(const SplitData& split, const BasisMap& bases, const LambdaSet& lambdas, const RdConfig& cfg) {
    validate(cfg);
    const UnitTensor& out = split.output();
    UnitTensor res;
    res.unit = out.unit;
    res.sample_ids = out.sample_ids;
    if (cfg.variant == RdVariant::RD_Y) {
        res.data = rd_transform(out.data, basis_for(bases, out.unit), lambda_for(lambdas, out.unit), lambdas.recenter);
        return res;
    }
    const auto units = rd_units(split_layers(split), split_heads_per_layer(split), cfg);
    res.data = Matrix::Zero(out.n_samples(), out.dim());
    for (const auto& t : split.units) {
        if (t.unit.kind == UnitKind::output) continue;
        if (std::find(units.begin(), units.end(), t.unit) != units.end()) {
            res.data += rd_transform(t.data, basis_for(bases, t.unit), lambda_for(lambdas, t.unit), lambdas.recenter);
        } else {
            res.data += t.data;
        }
    }
    return res;
}

std::int64_t rd_param_count(const TraceManifest& manifest, const RdConfig& cfg, const BasisMap* bases) {
    validate(cfg);
    const std::int64_t L = manifest.n_layers, H = manifest.heads_per_layer;
    const std::int64_t dh = manifest.d_head, dout = manifest.d_out;
    if (bases) {
        std::int64_t n = 0;
        for (const auto& u : rd_units(manifest.n_layers, manifest.heads_per_layer, cfg)) n += basis_for(*bases, u).size();
        return n;
    }
    switch (cfg.variant) {
        case RdVariant::RD: return L * H * dh + L * dout + (cfg.include_embed ? dout : 0);
        case RdVariant::RD_star: return L * H * dh;
        case RdVariant::RD_Y: return dout;
    }
    return 0;
}

RdProblem::RdProblem(const SplitData& split, const BasisMap& bases, const RdConfig& cfg) : recenter_(cfg.recenter) {
    validate(cfg);
    const UnitTensor& out = split.output();
    constant_ = Matrix::Zero(out.n_samples(), out.dim());
    auto add_unit = [&](const UnitTensor& t) {
        const PcaBasis& b = basis_for(bases, t.unit);
        if (b.dim() != t.dim()) throw ValidationError("basis dimension mismatch for " + to_string(t.unit));
        units_.push_back(t.unit);
        offsets_.push_back(n_params_);
        n_params_ += b.size();
        coords_.push_back((t.data.rowwise() - b.mean) * b.components.transpose());
        phis_.push_back(b.components);
        if (recenter_) constant_.rowwise() += b.mean;
    };
    if (cfg.variant == RdVariant::RD_Y) {
        add_unit(out);
        return;
    }
    const auto units = rd_units(split_layers(split), split_heads_per_layer(split), cfg);
    for (const auto& t : split.units) {
        if (t.unit.kind == UnitKind::output) continue;
        if (std::find(units.begin(), units.end(), t.unit) != units.end()) add_unit(t);
        else constant_ += t.data;
    }
}

Vector RdProblem::pack(const LambdaSet& lambdas) const {
    Vector p(n_params_);
    for (std::size_t k = 0; k < units_.size(); ++k) {
        const Vector& l = lambda_for(lambdas, units_[k]);
        if (l.size() != phis_[k].rows()) throw ValidationError("lambda length mismatch for " + to_string(units_[k]));
        p.segment(offsets_[k], l.size()) = l;
    }
    return p;
}

LambdaSet RdProblem::unpack(const Vector& params) const {
    LambdaSet set;
    set.recenter = recenter_;
    for (std::size_t k = 0; k < units_.size(); ++k) {
        set.entries[units_[k]] = params.segment(offsets_[k], phis_[k].rows());
    }
    return set;
}

Matrix RdProblem::forward(const Vector& params, std::span<const Eigen::Index> rows) const {
    if (params.size() != n_params_) throw ValidationError("parameter count mismatch");
    if (rows.empty()) {
        Matrix y = constant_;
        for (std::size_t k = 0; k < units_.size(); ++k) {
            y.noalias() += (coords_[k] * params.segment(offsets_[k], phis_[k].rows()).asDiagonal()) * phis_[k];
        }
        return y;
    }
    const auto b = static_cast<Eigen::Index>(rows.size());
    Matrix y(b, constant_.cols());
    for (Eigen::Index i = 0; i < b; ++i) y.row(i) = constant_.row(rows[static_cast<std::size_t>(i)]);
    for (std::size_t k = 0; k < units_.size(); ++k) {
        const Eigen::Index m = phis_[k].rows();
        Matrix c(b, m);
        for (Eigen::Index i = 0; i < b; ++i) {
            c.row(i) = coords_[k].row(rows[static_cast<std::size_t>(i)]).cwiseProduct(
                params.segment(offsets_[k], m).transpose());
        }
        y.noalias() += c * phis_[k];
    }
    return y;
}

double RdProblem::loss_and_grad(const Vector& params, std::span<const Eigen::Index> rows, std::span<const int> labels,
                                const Matrix& unit_classes, double tau, Vector* grad) const {
    std::vector<Eigen::Index> all;
    if (rows.empty()) {
        all.resize(static_cast<std::size_t>(n_samples()));
        std::iota(all.begin(), all.end(), Eigen::Index{0});
        rows = all;
    }
    const Matrix y = forward(params, rows);
    std::vector<int> lab(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) lab[i] = labels[static_cast<std::size_t>(rows[i])];
    Matrix g;
    const double loss = zeroshot_loss(y, unit_classes, lab, tau, grad ? &g : nullptr);
    if (grad) {
        grad->resize(n_params_);
        const auto b = static_cast<Eigen::Index>(rows.size());
        for (std::size_t k = 0; k < units_.size(); ++k) {
            const Eigen::Index m = phis_[k].rows();
            const Matrix gp = g * phis_[k].transpose();  // b x m
            Vector acc = Vector::Zero(m);
            for (Eigen::Index i = 0; i < b; ++i) {
                acc += coords_[k].row(rows[static_cast<std::size_t>(i)]).cwiseProduct(gp.row(i)).transpose();
            }
            grad->segment(offsets_[k], m) = acc;
        }
    }
    return loss;
}

RdGradient rd_loss_and_grad(const LambdaSet& lambdas, const SplitData& batch, const BasisMap& bases,
                            const TaskSpec& task, std::span<const int> labels, const RdConfig& cfg, double tau) {
    validate(task);
    if (batch.n_samples() == 0) throw ValidationError("rd_loss_and_grad: empty batch");
    if (static_cast<Eigen::Index>(labels.size()) != batch.n_samples()) throw ValidationError("label count mismatch");
    RdConfig c = cfg;
    c.recenter = lambdas.recenter;
    const RdProblem problem(batch, bases, c);
    Vector g;
    RdGradient res;
    res.loss = problem.loss_and_grad(problem.pack(lambdas), {}, labels, normalize_rows(task.encodings, "class encoding"),
                                     tau, &g);
    res.grad = problem.unpack(g);
    return res;
}

ResidualFit fit_residual(const SplitData& train, const SplitData& val, const BasisMap& bases, const TaskSpec& task,
                         const RdConfig& cfg, const OptimConfig& optim) {
    require_nondegenerate(task);
    if (train.labels.empty() || val.labels.empty()) throw ValidationError("fit_residual: unlabeled split");
    const RdProblem tr(train, bases, cfg);
    const RdProblem va(val, bases, cfg);
    const Matrix cls = normalize_rows(task.encodings, "class encoding");

    auto loss_fn = [&](std::span<const Eigen::Index> batch, const Vector& p, Vector& grad) {
        return tr.loss_and_grad(p, batch, train.labels, cls, optim.tau, &grad);
    };
    auto val_fn = [&](const Vector& p) { return zeroshot_eval(va.forward(p), task, val.labels); };

    ResidualFit res;
    res.training = train_adam(Vector::Ones(tr.n_params()), tr.n_samples(), optim, loss_fn, val_fn);
    res.lambdas = tr.unpack(res.training.best_params);
    return res;
}

void write_lambda_set(const std::filesystem::path& dir, const LambdaSet& lambdas) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json index;
    index["recenter"] = lambdas.recenter;
    index["entries"] = nlohmann::ordered_json::array();
    int k = 0;
    for (const auto& [u, v] : lambdas.entries) {
        char name[32];
        std::snprintf(name, sizeof name, "lambda_%03d.rdt", k++);
        write_vector(dir / name, v);
        nlohmann::ordered_json e;
        e["unit"] = to_json(u);
        e["file"] = name;
        e["length"] = v.size();
        index["entries"].push_back(e);
    }
    std::ofstream f(dir / "index.json", std::ios::binary);
    if (!f) throw IoError("cannot write " + (dir / "index.json").string());
    f << index.dump(2) << '\n';
}

LambdaSet read_lambda_set(const std::filesystem::path& dir) {
    std::ifstream f(dir / "index.json", std::ios::binary);
    if (!f) throw IoError("cannot open " + (dir / "index.json").string());
    nlohmann::json index;
    try {
        index = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("lambda index: ") + e.what());
    }
    LambdaSet set;
    try {
        set.recenter = index.at("recenter").get<bool>();
        for (const auto& e : index.at("entries")) {
            const UnitId u = unit_id_from_json(e.at("unit"));
            Vector v = read_vector(dir / e.at("file").get<std::string>());
            if (v.size() != e.at("length").get<Eigen::Index>()) throw FormatError("lambda length mismatch for " + to_string(u));
            set.entries[u] = std::move(v);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("lambda index: ") + e.what());
    }
    return set;
}

void write_training_log(std::ostream& out, const std::vector<EpochMetrics>& history) {
    out << "epoch,train_loss,val_acc\n";
    char buf[96];
    for (const auto& m : history) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", m.epoch, m.train_loss, m.val_accuracy);
        out << buf;
    }
}

}  // namespace resid
