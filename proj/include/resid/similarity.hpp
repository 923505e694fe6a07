#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "resid/core.hpp"
#include "resid/spectra.hpp"

namespace resid {

/// Unit-norm vectors with nonnegative weights sorted in descending order.
struct WeightedBasis {
    Matrix vectors;  // k x d
    Vector weights;  // k

    Eigen::Index size() const { return vectors.rows(); }

    /// Components of `basis` weighted by singular values, or by ones.
    static WeightedBasis from_pca(const PcaBasis& basis, bool weighted);
};

/// Throws ValidationError on non-unit rows, negative or unsorted weights.
void validate(const WeightedBasis& b);

struct SpectralPair {
    Eigen::Index i = 0;
    Eigen::Index j = 0;
    double score = 0.0;  // |u_i . v_j| * w1_i * w2_j
};

struct SpectralMatch {
    std::vector<SpectralPair> pairs;
    double score = 0.0;
};

/// Greedy matching without replacement: repeatedly take the unused pair with
/// the largest |u_i . v_j| (ties to the lowest (i, j)), then weight it.
std::vector<SpectralPair> spectral_matches(const WeightedBasis& a, const WeightedBasis& b);

/// sqrt(sum_n s_n^2 / sum_n (w1_n w2_n)^2), n < min(k1, k2).
double normalized_spectral_cosine(const WeightedBasis& a, const WeightedBasis& b);

SpectralMatch spectral_match(const WeightedBasis& a, const WeightedBasis& b);

/// Normalized spectral cosine between two unit bases (weights = singular values
/// when `weighted`, else 1).
double unit_similarity(const PcaBasis& reference, const PcaBasis& other, bool weighted);

struct GridCell {
    std::string dataset;
    UnitId unit;
    double score = 0.0;
};

/// CSV with header "dataset,layer,head,score".
void write_grid_csv(std::ostream& out, const std::vector<GridCell>& cells);

}  // namespace resid
