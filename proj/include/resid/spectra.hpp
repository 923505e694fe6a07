#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include "resid/core.hpp"

namespace resid {

/// PCA of one unit.
struct PcaBasis {
    UnitId unit;
    RowVector mean;           // d_out
    Matrix components;        // m x d_out, orthonormal rows, descending singular value
    Vector singular_values;   // m, descending
    Vector evr;               // m, explained variance ratio w.r.t. the total variance

    Eigen::Index size() const { return components.rows(); }
    Eigen::Index dim() const { return components.cols(); }
};

struct PcaOptions {
    std::optional<Eigen::Index> max_components;
    /// Components with singular value <= rank_tol * s_1 are dropped.
    double rank_tol = 1e-6;
};

/// SVD of the centered data. Each component's largest-magnitude entry is made
/// positive. Throws ValidationError when n < 2.
PcaBasis fit_pca(const UnitTensor& x, const PcaOptions& options = {});
PcaBasis fit_pca(const Matrix& x, const PcaOptions& options = {});

struct LinearId {
    int value = 0;
    /// True when the retained components explain less than the threshold.
    bool below_threshold = false;
};

/// Smallest k with cumulative EVR >= threshold. Throws ValidationError for
/// threshold outside (0, 1] or empty EVR.
LinearId linear_id(const PcaBasis& basis, double threshold = 0.99);
LinearId linear_id(const Vector& evr, double threshold = 0.99);

struct TwoNnOptions {
    double discard_fraction = 0.1;
};

/// Censored maximum-likelihood TwoNN estimate from neighbor-distance ratios
/// mu_i = r2 / r1. The largest `discard_fraction` of ratios are treated as
/// right-censored at the largest kept ratio:
///   d = N_kept / (sum_{kept} ln mu_i + N_discarded * ln mu_cut).
/// With nothing discarded this is N / sum ln mu_i.
double twonn_from_ratios(std::span<const double> ratios, double discard_fraction);

/// Neighbor ratios r2/r1 for each point after removing exact duplicate rows.
std::vector<double> twonn_ratios(const Matrix& x);

/// TwoNN intrinsic dimension. Exact Euclidean nearest neighbors; duplicate rows
/// removed first. Throws ValidationError with fewer than 10 distinct points.
double twonn_id(const Matrix& x, const TwoNnOptions& options = {});

struct IdProfile {
    UnitId unit;
    int linear_id = 0;
    bool linear_id_below_threshold = false;
    double twonn_id = 0.0;
    double ratio = 0.0;  // linear_id / twonn_id
    double evr1 = 0.0;
};

IdProfile id_profile(const UnitTensor& x, double threshold = 0.99, const TwoNnOptions& options = {});

/// RDT1 tensors (mean, components, singular values, evr) plus basis.json.
void write_pca_basis(const std::filesystem::path& dir, const std::string& stem, const PcaBasis& basis);
PcaBasis read_pca_basis(const std::filesystem::path& dir, const std::string& stem);

}  // namespace resid
