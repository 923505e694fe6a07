#include "resid/similarity.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "resid/error.hpp"

namespace resid {

WeightedBasis WeightedBasis::from_pca(const PcaBasis& basis, bool weighted) {
    WeightedBasis b;
    // Re-normalize rows: bases read back from binary32 files drift by ~1e-7.
    b.vectors = basis.size() > 0 ? normalize_rows(basis.components, "pca component") : basis.components;
    b.weights = weighted ? basis.singular_values : Vector::Ones(basis.size());
    return b;
}

void validate(const WeightedBasis& b) {
    if (b.size() < 1) throw ValidationError("weighted basis is empty");
    if (b.weights.size() != b.size()) throw ValidationError("weighted basis: weight count mismatch");
    require_finite(b.vectors, "basis vectors");
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        if (std::abs(b.vectors.row(i).norm() - 1.0) > 1e-6) {
            throw ValidationError("weighted basis: row " + std::to_string(i) + " is not normalized");
        }
        if (!(b.weights(i) >= 0.0)) throw ValidationError("weighted basis: negative weight");
        if (i > 0 && b.weights(i) > b.weights(i - 1)) {
            throw ValidationError("weighted basis: weights must be sorted descending");
        }
    }
}

std::vector<SpectralPair> spectral_matches(const WeightedBasis& a, const WeightedBasis& b) {
    validate(a);
    validate(b);
    if (a.vectors.cols() != b.vectors.cols()) throw ValidationError("spectral match: dimension mismatch");
    const Matrix cos = (a.vectors * b.vectors.transpose()).cwiseAbs();
    const auto m = std::min(a.size(), b.size());
    std::vector<char> used_i(static_cast<std::size_t>(a.size()), 0), used_j(static_cast<std::size_t>(b.size()), 0);
    std::vector<SpectralPair> pairs;
    pairs.reserve(static_cast<std::size_t>(m));
    for (Eigen::Index n = 0; n < m; ++n) {
        double best = -1.0;
        Eigen::Index bi = 0, bj = 0;
        for (Eigen::Index i = 0; i < cos.rows(); ++i) {
            if (used_i[static_cast<std::size_t>(i)]) continue;
            for (Eigen::Index j = 0; j < cos.cols(); ++j) {
                if (used_j[static_cast<std::size_t>(j)]) continue;
                if (cos(i, j) > best) {
                    best = cos(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        used_i[static_cast<std::size_t>(bi)] = used_j[static_cast<std::size_t>(bj)] = 1;
        pairs.push_back({bi, bj, std::min(best, 1.0) * a.weights(bi) * b.weights(bj)});
    }
    return pairs;
}

SpectralMatch spectral_match(const WeightedBasis& a, const WeightedBasis& b) {
    SpectralMatch out;
    out.pairs = spectral_matches(a, b);
    double num = 0.0, den = 0.0;
    for (std::size_t n = 0; n < out.pairs.size(); ++n) {
        num += out.pairs[n].score * out.pairs[n].score;
        const double w = a.weights(static_cast<Eigen::Index>(n)) * b.weights(static_cast<Eigen::Index>(n));
        den += w * w;
    }
    if (!(den > 0.0)) throw NumericError("normalized spectral cosine: all weights are zero");
    out.score = std::sqrt(num / den);
    return out;
}

double normalized_spectral_cosine(const WeightedBasis& a, const WeightedBasis& b) {
    return spectral_match(a, b).score;
}

double unit_similarity(const PcaBasis& reference, const PcaBasis& other, bool weighted) {
    if (reference.dim() != other.dim()) throw ValidationError("unit_similarity: d_out mismatch");
    return normalized_spectral_cosine(WeightedBasis::from_pca(reference, weighted),
                                      WeightedBasis::from_pca(other, weighted));
}

void write_grid_csv(std::ostream& out, const std::vector<GridCell>& cells) {
    out << "dataset,layer,head,score\n";
    char buf[64];
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof buf, "%.9g", c.score);
        out << c.dataset << ',' << c.unit.layer << ',' << c.unit.index << ',' << buf << '\n';
    }
}

}  // namespace resid
