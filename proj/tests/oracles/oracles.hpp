#pragma once

// Brute-force reference implementations used only by the tests. They share
// no code with the library routines they check.

#include <functional>
#include <vector>

#include "resid/core.hpp"

namespace oracle {

using resid::Matrix;
using resid::Vector;

struct Pca {
    Vector mean;
    Matrix components;  // rows, descending eigenvalue
    Vector eigenvalues;
    Vector evr;
};

/// Eigen-decomposition of the explicit sample covariance (d <= 64).
Pca pca(const Matrix& x);

struct SubsetFit {
    std::vector<int> support;  // ascending
    double residual_norm = 0.0;
};

/// Best support of exactly `size` atoms by exhaustive least squares over all
/// subsets (d <= 16, k <= 24, size <= 3). Atoms are rows of `dict`.
SubsetFit exhaustive_pursuit(const Vector& signal, const Matrix& dict, int size);

/// Central-difference gradient of f at x with step h.
Vector finite_diff(const std::function<double(const Vector&)>& f, const Vector& x, double h);

}  // namespace oracle
