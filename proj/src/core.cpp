#include "resid/core.hpp"

#include <cmath>

#include "resid/error.hpp"

namespace resid {

std::string_view to_string(UnitKind kind) {
    switch (kind) {
        case UnitKind::head: return "head";
        case UnitKind::mlp: return "mlp";
        case UnitKind::embed: return "embed";
        case UnitKind::output: return "output";
    }
    return "unknown";
}

UnitKind parse_unit_kind(std::string_view text) {
    if (text == "head") return UnitKind::head;
    if (text == "mlp") return UnitKind::mlp;
    if (text == "embed") return UnitKind::embed;
    if (text == "output") return UnitKind::output;
    throw ValidationError("unknown unit kind '" + std::string(text) + "'");
}

std::string to_string(const UnitId& id) {
    switch (id.kind) {
        case UnitKind::head: return "L" + std::to_string(id.layer) + ".H" + std::to_string(id.index);
        case UnitKind::mlp: return "L" + std::to_string(id.layer) + ".MLP";
        case UnitKind::embed: return "EMBED";
        case UnitKind::output: return "OUTPUT";
    }
    return "?";
}

UnitId parse_unit_id(std::string_view text, int n_layers) {
    if (text == "EMBED") return UnitId::embed();
    if (text == "OUTPUT" && n_layers >= 0) return UnitId::output(n_layers);
    auto fail = [&] { return ValidationError("malformed unit name '" + std::string(text) + "'"); };
    auto parse_int = [&](std::string_view digits) {
        if (digits.empty() || digits.size() > 6) throw fail();
        int v = 0;
        for (char c : digits) {
            if (c < '0' || c > '9') throw fail();
            v = v * 10 + (c - '0');
        }
        return v;
    };
    if (text.size() < 4 || text[0] != 'L') throw fail();
    const auto dot = text.find('.');
    if (dot == std::string_view::npos) throw fail();
    const int layer = parse_int(text.substr(1, dot - 1));
    const auto rest = text.substr(dot + 1);
    if (rest == "MLP") return UnitId::mlp(layer);
    if (rest.size() >= 2 && rest[0] == 'H') return UnitId::head(layer, parse_int(rest.substr(1)));
    throw fail();
}

std::vector<std::string> index_sample_ids(Eigen::Index n) {
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) ids.push_back(std::to_string(i));
    return ids;
}

void require_finite(const Matrix& m, std::string_view what) {
    if (!m.allFinite()) {
        throw ValidationError(std::string(what) + ": non-finite value");
    }
}

void validate(const TaskSpec& task) {
    if (task.n_classes() < 2) throw ValidationError("task needs at least 2 classes");
    if (static_cast<Eigen::Index>(task.class_names.size()) != task.n_classes()) {
        throw ValidationError("task class_names length does not match encodings rows");
    }
    require_finite(task.encodings, "task encodings");
    for (Eigen::Index c = 0; c < task.n_classes(); ++c) {
        if (task.encodings.row(c).squaredNorm() == 0.0) {
            throw ValidationError("task encoding for class '" + task.class_names[c] + "' is zero");
        }
    }
}

Matrix normalize_rows(const Matrix& m, std::string_view what) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw NumericError(std::string(what) + ": zero-norm row " + std::to_string(i));
        }
        out.row(i) = m.row(i) / norm;
    }
    return out;
}

}  // namespace resid
