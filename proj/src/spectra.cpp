#include "resid/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "resid/error.hpp"
#include "resid/tensor_io.hpp"

namespace resid {

PcaBasis fit_pca(const Matrix& x, const PcaOptions& options) {
    const auto n = x.rows();
    const auto d = x.cols();
    if (n < 2) throw ValidationError("fit_pca needs at least 2 samples");
    require_finite(x, "fit_pca input");

    PcaBasis basis;
    basis.mean = x.colwise().mean();
    const Matrix centered = x.rowwise() - basis.mean;
    const double total = centered.squaredNorm();

    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    Eigen::Index m = std::min(n - 1, d);
    if (options.max_components) m = std::min(m, *options.max_components);
    const double cutoff = s.size() > 0 ? options.rank_tol * s(0) : 0.0;
    Eigen::Index keep = 0;
    while (keep < m && s(keep) > cutoff) ++keep;

    basis.components = svd.matrixV().leftCols(keep).transpose();
    basis.singular_values = s.head(keep);
    basis.evr = total > 0.0 ? Vector(s.head(keep).array().square() / total) : Vector::Zero(keep);

    for (Eigen::Index r = 0; r < keep; ++r) {
        Eigen::Index arg = 0;
        basis.components.row(r).cwiseAbs().maxCoeff(&arg);
        if (basis.components(r, arg) < 0) basis.components.row(r) *= -1.0;
    }
    return basis;
}

PcaBasis fit_pca(const UnitTensor& x, const PcaOptions& options) {
    PcaBasis b = fit_pca(x.data, options);
    b.unit = x.unit;
    return b;
}

LinearId linear_id(const Vector& evr, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("linear_id threshold must lie in (0, 1]");
    if (evr.size() == 0) throw ValidationError("linear_id: empty EVR");
    double cum = 0.0;
    for (Eigen::Index k = 0; k < evr.size(); ++k) {
        cum += evr(k);
        // Tolerate rounding in the cumulative sum (e.g. 0.8 + 0.1 + 0.1).
        if (cum >= threshold - 1e-12) return {static_cast<int>(k + 1), false};
    }
    return {static_cast<int>(evr.size()), true};
}

LinearId linear_id(const PcaBasis& basis, double threshold) { return linear_id(basis.evr, threshold); }

double twonn_from_ratios(std::span<const double> ratios, double discard_fraction) {
    if (!(discard_fraction >= 0.0 && discard_fraction < 1.0)) {
        throw ValidationError("discard_fraction must lie in [0, 1)");
    }
    std::vector<double> logs;
    logs.reserve(ratios.size());
    for (double mu : ratios) {
        if (!(mu >= 1.0) || !std::isfinite(mu)) throw ValidationError("neighbor ratio must be finite and >= 1");
        logs.push_back(std::log(mu));
    }
    std::sort(logs.begin(), logs.end());
    const auto n = logs.size();
    const auto n_discard = static_cast<std::size_t>(std::floor(discard_fraction * static_cast<double>(n)));
    const auto n_kept = n - n_discard;
    if (n_kept == 0) throw ValidationError("no ratios left after discarding");
    double sum = std::accumulate(logs.begin(), logs.begin() + static_cast<std::ptrdiff_t>(n_kept), 0.0);
    sum += static_cast<double>(n_discard) * logs[n_kept - 1];
    if (!(sum > 0.0)) throw NumericError("TwoNN: all neighbor ratios equal 1");
    return static_cast<double>(n_kept) / sum;
}

std::vector<double> twonn_ratios(const Matrix& x) {
    // Deduplicate rows (lexicographic sort on exact values).
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    auto row_less = [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
        }
        return false;
    };
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return row_less(a, b) || (!row_less(b, a) && a < b); });
    std::vector<Eigen::Index> distinct;
    for (auto i : order) {
        if (distinct.empty() || row_less(distinct.back(), i)) distinct.push_back(i);
    }
    std::sort(distinct.begin(), distinct.end());

    const auto n = static_cast<Eigen::Index>(distinct.size());
    const auto d = x.cols();
    // Row-major copy keeps the inner distance loop contiguous.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pts(n, d);
    for (Eigen::Index i = 0; i < n; ++i) pts.row(i) = x.row(distinct[static_cast<std::size_t>(i)]);

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> first(static_cast<std::size_t>(n), inf), second(static_cast<std::size_t>(n), inf);
    auto offer = [&](Eigen::Index i, double d2) {
        auto& f = first[static_cast<std::size_t>(i)];
        auto& s = second[static_cast<std::size_t>(i)];
        if (d2 < f) {
            s = f;
            f = d2;
        } else if (d2 < s) {
            s = d2;
        }
    };
    for (Eigen::Index i = 0; i < n; ++i) {
        const double* pi = pts.data() + i * d;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double* pj = pts.data() + j * d;
            double d2 = 0.0;
            for (Eigen::Index k = 0; k < d; ++k) {
                const double diff = pi[k] - pj[k];
                d2 += diff * diff;
            }
            offer(i, d2);
            offer(j, d2);
        }
    }
    std::vector<double> ratios;
    ratios.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n && n >= 3; ++i) {
        ratios.push_back(std::sqrt(second[static_cast<std::size_t>(i)] / first[static_cast<std::size_t>(i)]));
    }
    return ratios;
}

double twonn_id(const Matrix& x, const TwoNnOptions& options) {
    require_finite(x, "twonn_id input");
    const auto ratios = twonn_ratios(x);
    if (ratios.empty() && x.rows() >= 1) {
        // Two or fewer distinct points.
        throw ValidationError("twonn_id: all points duplicated");
    }
    if (ratios.size() < 10) throw ValidationError("twonn_id: fewer than 10 usable points");
    return twonn_from_ratios(ratios, options.discard_fraction);
}

IdProfile id_profile(const UnitTensor& x, double threshold, const TwoNnOptions& options) {
    const PcaBasis basis = fit_pca(x);
    if (basis.size() == 0) throw NumericError("id_profile: unit " + to_string(x.unit) + " has zero variance");
    IdProfile p;
    p.unit = x.unit;
    const auto lid = linear_id(basis, threshold);
    p.linear_id = lid.value;
    p.linear_id_below_threshold = lid.below_threshold;
    p.twonn_id = twonn_id(x.data, options);
    p.ratio = p.linear_id / p.twonn_id;
    p.evr1 = basis.evr(0);
    return p;
}

void write_pca_basis(const std::filesystem::path& dir, const std::string& stem, const PcaBasis& basis) {
    std::filesystem::create_directories(dir);
    write_vector(dir / (stem + ".mean.rdt"), basis.mean.transpose());
    write_tensor(dir / (stem + ".components.rdt"), basis.components);
    write_vector(dir / (stem + ".singular_values.rdt"), basis.singular_values);
    write_vector(dir / (stem + ".evr.rdt"), basis.evr);
    nlohmann::ordered_json side;
    side["unit"] = {{"layer", basis.unit.layer}, {"kind", std::string(to_string(basis.unit.kind))},
                    {"index", basis.unit.index}};
    side["n_components"] = basis.size();
    side["d_out"] = basis.dim();
    side["mean"] = stem + ".mean.rdt";
    side["components"] = stem + ".components.rdt";
    side["singular_values"] = stem + ".singular_values.rdt";
    side["evr"] = stem + ".evr.rdt";
    std::ofstream out(dir / (stem + ".json"), std::ios::trunc);
    if (!out) throw IoError("cannot write basis sidecar in " + dir.string());
    out << side.dump(1) << '\n';
}

PcaBasis read_pca_basis(const std::filesystem::path& dir, const std::string& stem) {
    std::ifstream in(dir / (stem + ".json"));
    if (!in) throw IoError("cannot open basis sidecar " + (dir / (stem + ".json")).string());
    PcaBasis b;
    try {
        const auto side = nlohmann::json::parse(in);
        const auto& u = side.at("unit");
        b.unit = {u.at("layer").get<int>(), parse_unit_kind(u.at("kind").get<std::string>()), u.at("index").get<int>()};
        b.mean = read_vector(dir / side.at("mean").get<std::string>()).transpose();
        b.components = read_tensor(dir / side.at("components").get<std::string>());
        b.singular_values = read_vector(dir / side.at("singular_values").get<std::string>());
        b.evr = read_vector(dir / side.at("evr").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed basis sidecar: ") + e.what());
    }
    return b;
}

}  // namespace resid
