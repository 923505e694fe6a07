#include "resid/pursuit.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "resid/error.hpp"
#include "resid/spectra.hpp"
#include "resid/tensor_io.hpp"

namespace resid {
namespace {

constexpr double kTieTol = 1e-9;
constexpr double kExactTol = 1e-12;
constexpr double kRankTol = 1e-10;

struct Pick {
    int index = -1;
    double score = 0.0;
    bool near_tie = false;
};

Pick argmax_unselected(const Vector& scores, const std::vector<char>& selected) {
    Pick p;
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < scores.size(); ++j) {
        if (selected[static_cast<std::size_t>(j)]) continue;
        if (scores(j) > best) {
            best = scores(j);
            p.index = static_cast<int>(j);
        }
    }
    p.score = best;
    for (Eigen::Index j = 0; j < scores.size(); ++j) {
        if (selected[static_cast<std::size_t>(j)] || j == p.index) continue;
        if (std::abs(scores(j) - best) <= kTieTol) p.near_tie = true;
    }
    return p;
}

Vector row_scores(const Matrix& p, SelectionCriterion criterion) {
    if (criterion == SelectionCriterion::l1) return p.cwiseAbs().rowwise().sum();
    const Vector mean = p.rowwise().mean();
    return (p.colwise() - mean).array().square().rowwise().mean();
}

void check_inputs(const Matrix& signal, const Dictionary& dict, int n_iters, Eigen::Index max_iters) {
    validate(dict);
    if (signal.cols() != dict.dim()) throw ValidationError("signal width does not match dictionary dimension");
    if (signal.rows() < 1) throw ValidationError("empty signal");
    require_finite(signal, "pursuit signal");
    if (n_iters < 0 || n_iters > max_iters) {
        throw ValidationError("n_iters=" + std::to_string(n_iters) + " exceeds the allowed " +
                              std::to_string(max_iters));
    }
}

bool exactly_recovered(const Matrix& residual, double signal_norm) {
    return residual.norm() <= kExactTol * std::max(signal_norm, std::numeric_limits<double>::min());
}

}  // namespace

Dictionary Dictionary::from_rows(const Matrix& rows, std::vector<std::string> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != rows.rows()) {
        throw ValidationError("dictionary label count does not match atom count");
    }
    return {normalize_rows(rows, "dictionary atom"), std::move(labels)};
}

void validate(const Dictionary& dict) {
    if (dict.size() < 1) throw ValidationError("dictionary is empty");
    if (static_cast<Eigen::Index>(dict.labels.size()) != dict.size()) {
        throw ValidationError("dictionary label count does not match atom count");
    }
    require_finite(dict.atoms, "dictionary");
    for (Eigen::Index j = 0; j < dict.size(); ++j) {
        if (std::abs(dict.atoms.row(j).norm() - 1.0) > 1e-6) {
            throw ValidationError("dictionary atom " + std::to_string(j) + " is not unit norm");
        }
    }
}

Dictionary load_dictionary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dictionary " + path.string());
    std::vector<std::string> labels;
    std::vector<Vector> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            labels.push_back(j.at("label").get<std::string>());
            if (j.contains("vector")) {
                const auto v = j.at("vector").get<std::vector<double>>();
                rows.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
            } else {
                rows.push_back(read_vector(path.parent_path() / j.at("path").get<std::string>()));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("dictionary line " + std::to_string(line_no) + ": " + e.what());
        }
        if (rows.back().size() != rows.front().size()) {
            throw ValidationError("dictionary line " + std::to_string(line_no) + ": dimension mismatch");
        }
    }
    if (rows.empty()) throw ValidationError("dictionary " + path.string() + " is empty");
    Matrix atoms(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) atoms.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return Dictionary::from_rows(atoms, std::move(labels));
}

void write_dictionary(const std::filesystem::path& path, const Dictionary& dict) {
    validate(dict);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (Eigen::Index i = 0; i < dict.size(); ++i) {
        nlohmann::ordered_json j;
        j["label"] = dict.labels[static_cast<std::size_t>(i)];
        j["vector"] = std::vector<double>(dict.atoms.row(i).begin(), dict.atoms.row(i).end());
        out << j.dump() << '\n';
    }
}

PursuitResult omp(const Vector& signal, const Dictionary& dict, int n_iters) {
    const Matrix x = signal.transpose();
    check_inputs(x, dict, n_iters, dict.size());
    const double x_norm = signal.norm();

    PursuitResult res;
    res.reconstruction = Matrix::Zero(1, x.cols());
    res.residual = x;
    std::vector<char> selected(static_cast<std::size_t>(dict.size()), 0);
    for (int t = 0; t < n_iters; ++t) {
        if (exactly_recovered(res.residual, x_norm)) {
            res.status = PursuitStatus::exact_recovery;
            break;
        }
        const Vector corr = (dict.atoms * res.residual.row(0).transpose()).cwiseAbs();
        const Pick p = argmax_unselected(corr, selected);
        res.near_tie = res.near_tie || p.near_tie;

        // Least-squares coefficients of the signal on the candidate support.
        Matrix a(x.cols(), static_cast<Eigen::Index>(res.support.size()) + 1);
        for (std::size_t s = 0; s < res.support.size(); ++s) {
            a.col(static_cast<Eigen::Index>(s)) = dict.atoms.row(res.support[s]).transpose();
        }
        a.col(a.cols() - 1) = dict.atoms.row(p.index).transpose();
        Eigen::ColPivHouseholderQR<Matrix> qr(a);
        qr.setThreshold(kRankTol);
        if (qr.rank() < a.cols()) {
            res.status = PursuitStatus::rank_deficient;
            break;
        }
        const Vector coef = qr.solve(signal);
        selected[static_cast<std::size_t>(p.index)] = 1;
        res.support.push_back(p.index);
        res.per_step_criterion.push_back(p.score);
        res.reconstruction = (a * coef).transpose();
        res.residual = x - res.reconstruction;
        res.residual_norms.push_back(res.residual.norm());
    }
    return res;
}

PursuitResult somp(const Matrix& signal, const Dictionary& dict, int n_iters, SelectionCriterion criterion) {
    check_inputs(signal, dict, n_iters, std::min(dict.size(), dict.dim()));
    const double x_norm = signal.norm();

    PursuitResult res;
    res.reconstruction = Matrix::Zero(signal.rows(), signal.cols());
    res.residual = signal;
    std::vector<char> selected(static_cast<std::size_t>(dict.size()), 0);
    for (int t = 0; t < n_iters; ++t) {
        if (exactly_recovered(res.residual, x_norm)) {
            res.status = PursuitStatus::exact_recovery;
            break;
        }
        const Vector scores = row_scores(dict.atoms * res.residual.transpose(), criterion);
        const Pick p = argmax_unselected(scores, selected);
        res.near_tie = res.near_tie || p.near_tie;

        // W = argmin ||X - W D[C]||_F  =>  X_r = X Q Q^T with Q an orthonormal basis of span(D[C]).
        Matrix dt(signal.cols(), static_cast<Eigen::Index>(res.support.size()) + 1);
        for (std::size_t s = 0; s < res.support.size(); ++s) {
            dt.col(static_cast<Eigen::Index>(s)) = dict.atoms.row(res.support[s]).transpose();
        }
        dt.col(dt.cols() - 1) = dict.atoms.row(p.index).transpose();
        Eigen::HouseholderQR<Matrix> qr(dt);
        const Vector diag = qr.matrixQR().diagonal().cwiseAbs();
        if (diag.minCoeff() <= kRankTol * std::max(1.0, diag.maxCoeff())) {
            res.status = PursuitStatus::rank_deficient;
            break;
        }
        const Matrix q = qr.householderQ() * Matrix::Identity(dt.rows(), dt.cols());
        selected[static_cast<std::size_t>(p.index)] = 1;
        res.support.push_back(p.index);
        res.per_step_criterion.push_back(p.score);
        res.reconstruction = (signal * q) * q.transpose();
        res.residual = signal - res.reconstruction;
        res.residual_norms.push_back(res.residual.norm());
    }
    return res;
}

Dictionary project_dictionary(const Dictionary& dict, const Matrix& signal, Eigen::Index rank) {
    if (rank < 1) throw ValidationError("project_dict_rank must be >= 1");
    if (rank >= dict.dim()) return dict;
    PcaOptions opts;
    opts.max_components = rank;
    const PcaBasis basis = fit_pca(signal, opts);
    Dictionary out{dict.atoms * basis.components.transpose() * basis.components, dict.labels};
    for (Eigen::Index j = 0; j < out.size(); ++j) {
        const double norm = out.atoms.row(j).norm();
        if (norm > kRankTol) {
            out.atoms.row(j) /= norm;
        } else {
            out.atoms.row(j).setZero();
        }
    }
    return out;
}

PursuitResult textspan(const Matrix& signal, const Dictionary& dict, int n_iters, const TextSpanOptions& options) {
    check_inputs(signal, dict, n_iters, std::min(dict.size(), dict.dim()));
    Matrix work = options.project_dict_rank ? project_dictionary(dict, signal, *options.project_dict_rank).atoms
                                            : dict.atoms;
    const double x_norm = signal.norm();

    PursuitResult res;
    res.reconstruction = Matrix::Zero(signal.rows(), signal.cols());
    res.residual = signal;
    std::vector<char> selected(static_cast<std::size_t>(dict.size()), 0);
    for (int t = 0; t < n_iters; ++t) {
        if (exactly_recovered(res.residual, x_norm)) {
            res.status = PursuitStatus::exact_recovery;
            break;
        }
        const Vector scores = row_scores(work * res.residual.transpose(), options.criterion);
        const Pick p = argmax_unselected(scores, selected);
        res.near_tie = res.near_tie || p.near_tie;

        const RowVector atom = work.row(p.index);
        const double norm = atom.norm();
        if (norm <= kRankTol) {
            // The picked atom lies in the span of earlier picks.
            res.status = PursuitStatus::rank_deficient;
            break;
        }
        const RowVector dir = atom / norm;
        const Matrix step = (res.residual * dir.transpose()) * dir;
        res.residual -= step;
        res.reconstruction += step;
        work -= (work * dir.transpose()) * dir;

        selected[static_cast<std::size_t>(p.index)] = 1;
        res.support.push_back(p.index);
        res.per_step_criterion.push_back(p.score);
        res.residual_norms.push_back(res.residual.norm());
    }
    return res;
}

double set_similarity(const Matrix& set_a, const Matrix& set_b, SetSimilarity mode) {
    if (set_a.rows() < 1 || set_b.rows() < 1) throw ValidationError("set similarity needs non-empty sets");
    if (set_a.cols() != set_b.cols()) throw ValidationError("set similarity: dimension mismatch");
    const Matrix cos = normalize_rows(set_a, "set_a") * normalize_rows(set_b, "set_b").transpose();
    if (mode == SetSimilarity::mean_cross) return cos.mean();

    const auto m = std::min(cos.rows(), cos.cols());
    std::vector<char> used_a(static_cast<std::size_t>(cos.rows()), 0), used_b(static_cast<std::size_t>(cos.cols()), 0);
    double total = 0.0;
    for (Eigen::Index n = 0; n < m; ++n) {
        double best = -std::numeric_limits<double>::infinity();
        Eigen::Index bi = 0, bj = 0;
        for (Eigen::Index i = 0; i < cos.rows(); ++i) {
            if (used_a[static_cast<std::size_t>(i)]) continue;
            for (Eigen::Index j = 0; j < cos.cols(); ++j) {
                if (used_b[static_cast<std::size_t>(j)]) continue;
                if (cos(i, j) > best) {
                    best = cos(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        used_a[static_cast<std::size_t>(bi)] = used_b[static_cast<std::size_t>(bj)] = 1;
        total += best;
    }
    return total / static_cast<double>(m);
}

double agreement_zscore(const Matrix& set_a, const Matrix& set_b, const Dictionary& dict, SetSimilarity mode) {
    validate(dict);
    if (set_a.cols() != dict.dim()) throw ValidationError("agreement_zscore: dimension mismatch");
    const double sim = set_similarity(set_a, set_b, mode);
    const Matrix pop = normalize_rows(set_a, "set_a") * dict.atoms.transpose();
    const double mean = pop.mean();
    const double sd = std::sqrt((pop.array() - mean).square().mean());
    if (!(sd > 1e-12)) throw NumericError("agreement_zscore: background similarities have zero spread");
    return std::abs(sim - mean) / sd;
}

}  // namespace resid
