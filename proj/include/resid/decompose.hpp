#pragma once

// Additive residual decomposition of a pre-norm transformer.
//
// Per layer the attention output cat(H_1..H_Nh) W + b is split into per-head
// terms H_h W[block h] + b / Nh. The final LayerNorm is frozen into a
// per-sample affine map using the statistics of the full residual sum, so every
// unit can be pushed through LayerNorm and the output projection on its own.

#include <filesystem>
#include <vector>

#include "resid/core.hpp"

namespace resid {

/// Model weights needed to map raw contributions into output space.
struct ProjectionSpec {
    std::vector<Matrix> attn_out_weight;  // per layer, d_model x d_model
    std::vector<Vector> attn_out_bias;    // per layer, d_model
    Vector ln_gain;                       // d_model
    Vector ln_shift;                      // d_model
    Matrix projection;                    // d_model x d_out
    double layernorm_eps = 1e-5;

    int n_layers() const { return static_cast<int>(attn_out_weight.size()); }
    Eigen::Index d_model() const { return projection.rows(); }
    Eigen::Index d_out() const { return projection.cols(); }
};

/// Throws ValidationError on inconsistent shapes, non-finite entries, or eps <= 0.
void validate(const ProjectionSpec& spec);

/// Un-projected output of one attention head: n x d_head.
struct RawHeadTensor {
    UnitId unit;
    Matrix data;
};

/// Per-head d_model-space contributions of one layer. `raw` must hold all
/// heads of the layer ordered by head index.
std::vector<Matrix> distribute_heads(const std::vector<RawHeadTensor>& raw, const ProjectionSpec& spec,
                                     int layer);

/// Monolithic form cat(H_1..H_Nh) W + b, used as the reference path.
Matrix attention_output(const std::vector<RawHeadTensor>& raw, const ProjectionSpec& spec, int layer);

/// LayerNorm + projection with statistics frozen from a given residual sum.
///
/// For sample s with mean m_s and std sigma_s of the full sum, a unit row u maps
/// to ((u - mean(u)) * gain / sigma_s) P. The shift (ln_shift P) is not part of
/// any unit's image and must be added exactly once.
struct LayerNormAffine {
    Matrix scale;      // n x d_model, gain_j / sigma_s
    RowVector shift;   // d_out, ln_shift * P
    Matrix projection; // d_model x d_out

    /// Maps one unit's n x d_model contribution to output space (without shift).
    Matrix apply(const Matrix& unit) const;
};

/// Freezes LayerNorm statistics of `sum_stream` (n x d_model). Throws
/// NumericError("degenerate row") when a row has zero variance.
LayerNormAffine layernorm_affine(const Matrix& sum_stream, const ProjectionSpec& spec);

/// Reference path: P(LayerNorm(sum_stream)) computed directly.
Matrix project_output(const Matrix& sum_stream, const ProjectionSpec& spec);

/// Elementwise sum of all non-output units. Throws ValidationError when no
/// embed unit is present or shapes disagree.
UnitTensor assemble_output(const std::vector<const UnitTensor*>& units, int n_layers);
UnitTensor assemble_output(const std::vector<UnitTensor>& units, int n_layers);

/// Directory of RDT1 tensors plus index.json.
void write_projection_spec(const std::filesystem::path& dir, const ProjectionSpec& spec);
ProjectionSpec read_projection_spec(const std::filesystem::path& dir);

}  // namespace resid
