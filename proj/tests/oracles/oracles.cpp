#include "oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace oracle {

Pca pca(const Matrix& x) {
    if (x.rows() < 2 || x.cols() > 64) throw std::invalid_argument("oracle::pca: size limits exceeded");
    const auto n = static_cast<double>(x.rows());
    Pca out;
    out.mean = x.colwise().sum().transpose() / n;
    Matrix cov = Matrix::Zero(x.cols(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Vector c = x.row(i).transpose() - out.mean;
        cov += c * c.transpose();
    }
    cov /= n - 1.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    const auto d = x.cols();
    out.eigenvalues.resize(d);
    out.components.resize(d, d);
    for (Eigen::Index k = 0; k < d; ++k) {
        out.eigenvalues(k) = std::max(0.0, es.eigenvalues()(d - 1 - k));
        out.components.row(k) = es.eigenvectors().col(d - 1 - k).transpose();
    }
    const double total = out.eigenvalues.sum();
    out.evr = total > 0.0 ? Vector(out.eigenvalues / total) : Vector(Vector::Zero(d));
    return out;
}

namespace {

double ls_residual(const Vector& signal, const Matrix& dict, const std::vector<int>& idx) {
    Matrix a(signal.size(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) a.col(static_cast<Eigen::Index>(j)) = dict.row(idx[j]).transpose();
    // Normal equations solved with a full pivoting LU: deliberately a different route.
    const Matrix g = a.transpose() * a;
    const Vector coef = g.fullPivLu().solve(a.transpose() * signal);
    return (signal - a * coef).norm();
}

}  // namespace

SubsetFit exhaustive_pursuit(const Vector& signal, const Matrix& dict, int size) {
    if (signal.size() > 16 || dict.rows() > 24 || size < 1 || size > 3 || size > dict.rows()) {
        throw std::invalid_argument("oracle::exhaustive_pursuit: size limits exceeded");
    }
    SubsetFit best;
    best.residual_norm = std::numeric_limits<double>::infinity();
    const int k = static_cast<int>(dict.rows());
    std::vector<int> idx(static_cast<std::size_t>(size));
    std::function<void(int, int)> rec = [&](int pos, int start) {
        if (pos == size) {
            const double r = ls_residual(signal, dict, idx);
            if (r < best.residual_norm) {
                best.residual_norm = r;
                best.support = idx;
            }
            return;
        }
        for (int a = start; a < k; ++a) {
            idx[static_cast<std::size_t>(pos)] = a;
            rec(pos + 1, a + 1);
        }
    };
    rec(0, 0);
    return best;
}

Vector finite_diff(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
    Vector g(x.size());
    Vector p = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        p(i) = x(i) + h;
        const double up = f(p);
        p(i) = x(i) - h;
        const double down = f(p);
        p(i) = x(i);
        g(i) = (up - down) / (2.0 * h);
    }
    return g;
}

}  // namespace oracle
