#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace resid {

// In-memory numerics are 64-bit; on-disk payloads are 32-bit (see tensor_io.hpp).
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class UnitKind : std::uint8_t { head, mlp, embed, output };

std::string_view to_string(UnitKind kind);
UnitKind parse_unit_kind(std::string_view text);

/// Identifies one additive contributor of the residual stream.
///
/// Embed units live at layer 0 with index 0. The output unit is placed at
/// layer `n_layers` so that the natural ordering walks the stream front to back.
struct UnitId {
    int layer = 0;
    UnitKind kind = UnitKind::head;
    int index = 0;

    static UnitId head(int layer, int index) { return {layer, UnitKind::head, index}; }
    static UnitId mlp(int layer) { return {layer, UnitKind::mlp, 0}; }
    static UnitId embed() { return {0, UnitKind::embed, 0}; }
    static UnitId output(int n_layers) { return {n_layers, UnitKind::output, 0}; }

    bool is_head() const { return kind == UnitKind::head; }

    auto operator<=>(const UnitId&) const = default;
};

/// Short human-readable name: "L3.H7", "L3.MLP", "EMBED", "OUTPUT".
std::string to_string(const UnitId& id);

/// Inverse of to_string(UnitId). "OUTPUT" needs the model depth since the
/// output unit sits at layer n_layers. Throws ValidationError on bad names.
UnitId parse_unit_id(std::string_view text, int n_layers = -1);

/// One residual unit's output-space contributions over a set of samples.
struct UnitTensor {
    UnitId unit;
    Matrix data;  // n_samples x d_out
    std::vector<std::string> sample_ids;

    Eigen::Index n_samples() const { return data.rows(); }
    Eigen::Index dim() const { return data.cols(); }
};

/// Default opaque sample ids "0", "1", ... used when a file carries none.
std::vector<std::string> index_sample_ids(Eigen::Index n);

/// Throws ValidationError unless every entry of `m` is finite.
void require_finite(const Matrix& m, std::string_view what);

/// Class encodings that define a zero-shot task.
struct TaskSpec {
    std::vector<std::string> class_names;
    Matrix encodings;  // C x d_out

    Eigen::Index n_classes() const { return encodings.rows(); }
    Eigen::Index dim() const { return encodings.cols(); }
};

/// Checks C >= 2, name count, finite and nonzero rows.
void validate(const TaskSpec& task);

/// Rows scaled to unit l2 norm. Throws NumericError on a zero row.
Matrix normalize_rows(const Matrix& m, std::string_view what);

}  // namespace resid
