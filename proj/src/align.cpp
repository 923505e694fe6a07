#include "resid/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "resid/error.hpp"
#include "resid/parallel.hpp"
#include "resid/rng.hpp"

namespace resid {

namespace {

void check_labels(std::span<const int> labels, Eigen::Index n_rows, Eigen::Index n_classes) {
    if (static_cast<Eigen::Index>(labels.size()) != n_rows) {
        throw ValidationError("label count " + std::to_string(labels.size()) + " != sample count " +
                              std::to_string(n_rows));
    }
    for (int y : labels) {
        if (y < 0 || y >= n_classes) throw ValidationError("label out of range: " + std::to_string(y));
    }
}

}  // namespace

std::vector<int> zeroshot_predict(const Matrix& enc, const TaskSpec& task) {
    validate(task);
    if (enc.cols() != task.dim()) throw ValidationError("encoding dimension does not match task");
    const Matrix cls = normalize_rows(task.encodings, "class encoding");
    const Matrix e = normalize_rows(enc, "encoding row");
    const Matrix cos = e * cls.transpose();
    std::vector<int> pred(static_cast<std::size_t>(enc.rows()));
    for (Eigen::Index i = 0; i < cos.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < cos.cols(); ++c) {
            if (cos(i, c) > cos(i, best)) best = c;
        }
        pred[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return pred;
}

double zeroshot_eval(const Matrix& enc, const TaskSpec& task, std::span<const int> labels) {
    check_labels(labels, enc.rows(), task.n_classes());
    if (enc.rows() == 0) throw ValidationError("zeroshot_eval: no samples");
    const auto pred = zeroshot_predict(enc, task);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double zeroshot_loss(const Matrix& enc, const Matrix& unit_classes, std::span<const int> labels, double tau,
                     Matrix* grad) {
    const Eigen::Index b = enc.rows();
    if (b == 0) throw ValidationError("zeroshot_loss: empty batch");
    if (static_cast<Eigen::Index>(labels.size()) != b) throw ValidationError("zeroshot_loss: label count mismatch");
    if (grad) grad->resize(b, enc.cols());
    double total = 0.0;
    Vector z(unit_classes.rows());
    for (Eigen::Index i = 0; i < b; ++i) {
        const double norm = enc.row(i).norm();
        if (!(norm > 0.0)) throw NumericError("zero-norm encoding row");
        const RowVector yhat = enc.row(i) / norm;
        z.noalias() = tau * (unit_classes * yhat.transpose());
        const double zmax = z.maxCoeff();
        Vector p = (z.array() - zmax).exp();
        const double sum = p.sum();
        const int y = labels[static_cast<std::size_t>(i)];
        total += -(z(y) - zmax - std::log(sum));
        if (grad) {
            p /= sum;
            p(y) -= 1.0;
            const RowVector h = tau * (p.transpose() * unit_classes);
            grad->row(i) = (h - yhat * yhat.dot(h)) / (norm * static_cast<double>(b));
        }
    }
    return total / static_cast<double>(b);
}

TaskSpec build_prototypes(const Matrix& enc, std::span<const int> labels, int n_classes) {
    if (static_cast<Eigen::Index>(labels.size()) != enc.rows()) throw ValidationError("label count mismatch");
    if (labels.empty()) throw ValidationError("build_prototypes: no samples");
    if (n_classes < 0) n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
    check_labels(labels, enc.rows(), n_classes);
    TaskSpec task;
    task.encodings = Matrix::Zero(n_classes, enc.cols());
    std::vector<int> count(static_cast<std::size_t>(n_classes), 0);
    for (Eigen::Index i = 0; i < enc.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        task.encodings.row(y) += enc.row(i);
        ++count[static_cast<std::size_t>(y)];
    }
    for (int c = 0; c < n_classes; ++c) {
        if (count[static_cast<std::size_t>(c)] == 0) throw ValidationError("empty class " + std::to_string(c));
        task.encodings.row(c) /= count[static_cast<std::size_t>(c)];
        task.class_names.push_back("class_" + std::to_string(c));
    }
    return task;
}

std::string_view to_string(ScoreMethod m) {
    switch (m) {
        case ScoreMethod::U: return "U";
        case ScoreMethod::UT: return "UT";
        case ScoreMethod::S: return "S";
    }
    return "?";
}

ScoreMethod parse_score_method(std::string_view text) {
    if (text == "U") return ScoreMethod::U;
    if (text == "UT") return ScoreMethod::UT;
    if (text == "S") return ScoreMethod::S;
    throw ValidationError("unknown score method '" + std::string(text) + "'");
}

double mean_row_pearson(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("pearson: shape mismatch");
    if (a.rows() == 0) throw ValidationError("pearson: no samples");
    if (a.cols() < 2) throw ValidationError("pearson: need at least 2 coordinates");
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const RowVector ca = a.row(i).array() - a.row(i).mean();
        const RowVector cb = b.row(i).array() - b.row(i).mean();
        const double na = ca.norm(), nb = cb.norm();
        const double tol_a = 1e-12 * std::max(1.0, a.row(i).cwiseAbs().maxCoeff());
        const double tol_b = 1e-12 * std::max(1.0, b.row(i).cwiseAbs().maxCoeff());
        if (na <= tol_a || nb <= tol_b) throw NumericError("pearson: constant row " + std::to_string(i));
        total += std::clamp(ca.dot(cb) / (na * nb), -1.0, 1.0);
    }
    return total / static_cast<double>(a.rows());
}

Matrix task_span_basis(const TaskSpec& task) {
    validate(task);
    Eigen::JacobiSVD<Matrix> svd(task.encodings, Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    Eigen::Index r = 0;
    while (r < s.size() && s(r) > 1e-9 * s(0)) ++r;
    if (r < 2) throw ValidationError("degenerate task span (rank " + std::to_string(r) + ")");
    return svd.matrixV().leftCols(r).transpose();
}

UnitScore score_unsupervised(const UnitTensor& head, const UnitTensor& output) {
    return {head.unit, ScoreMethod::U, mean_row_pearson(head.data, output.data)};
}

UnitScore score_task_conditioned(const UnitTensor& head, const UnitTensor& output, const TaskSpec& task) {
    if (head.dim() != task.dim()) throw ValidationError("head dimension does not match task");
    const Matrix q = task_span_basis(task);
    return {head.unit, ScoreMethod::UT, mean_row_pearson(head.data * q.transpose(), output.data * q.transpose())};
}

UnitScore score_supervised(const UnitTensor& head, const TaskSpec& task, std::span<const int> labels) {
    return {head.unit, ScoreMethod::S, zeroshot_eval(head.data, task, labels)};
}

std::vector<UnitScore> score_heads(const SplitData& split, ScoreMethod method, const TaskSpec& task, int threads) {
    const auto heads = split.heads();
    if (heads.empty()) throw ValidationError("split has no heads");
    if (method == ScoreMethod::S && split.labels.empty()) throw ValidationError("S scoring needs labels");
    if (method == ScoreMethod::UT) task_span_basis(task);  // fail before spawning work
    const UnitTensor& out = split.output();
    std::vector<UnitScore> scores(heads.size());
    parallel_for(heads.size(), threads, [&](std::size_t i) {
        switch (method) {
            case ScoreMethod::U: scores[i] = score_unsupervised(*heads[i], out); break;
            case ScoreMethod::UT: scores[i] = score_task_conditioned(*heads[i], out, task); break;
            case ScoreMethod::S: scores[i] = score_supervised(*heads[i], task, split.labels); break;
        }
    });
    return scores;
}

int topk_count(double fraction, std::size_t n) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fraction must be in (0, 1]");
    // Guard against products like 0.05 * 20 landing a hair above an integer.
    const double x = fraction * static_cast<double>(n);
    const double rounded = std::round(x);
    const double k = std::abs(x - rounded) <= 1e-9 * std::max(1.0, x) ? rounded : std::ceil(x);
    return std::max(1, static_cast<int>(k));
}

Selection select_topk(const std::vector<UnitScore>& scores, double fraction) {
    if (scores.empty()) throw ValidationError("select_topk: empty scores");
    for (const auto& s : scores) {
        if (!std::isfinite(s.value)) throw ValidationError("select_topk: non-finite score for " + to_string(s.unit));
    }
    const int k = topk_count(fraction, scores.size());
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a].value != scores[b].value) return scores[a].value > scores[b].value;
        return scores[a].unit < scores[b].unit;
    });
    Selection sel;
    sel.method = std::string(to_string(scores.front().method));
    sel.k = k;
    for (int i = 0; i < k; ++i) sel.units.push_back(scores[order[static_cast<std::size_t>(i)]].unit);
    std::sort(sel.units.begin(), sel.units.end());
    return sel;
}

std::vector<Selection> random_selection(const std::vector<UnitId>& heads, int k,
                                        std::span<const std::uint64_t> seeds) {
    if (k < 0 || static_cast<std::size_t>(k) > heads.size()) {
        throw ValidationError("random_selection: k=" + std::to_string(k) + " exceeds " +
                              std::to_string(heads.size()) + " heads");
    }
    std::vector<Selection> out;
    for (std::uint64_t seed : seeds) {
        Rng rng(seed);
        const auto perm = rng.permutation(heads.size());
        Selection sel;
        sel.method = "R";
        sel.k = k;
        for (int i = 0; i < k; ++i) sel.units.push_back(heads[perm[static_cast<std::size_t>(i)]]);
        std::sort(sel.units.begin(), sel.units.end());
        out.push_back(std::move(sel));
    }
    return out;
}

UnitTensor partial_output(const Selection& selection, const SplitData& split) {
    const UnitTensor& out = split.output();
    UnitTensor res;
    res.unit = out.unit;
    res.sample_ids = out.sample_ids;
    res.data = Matrix::Zero(out.n_samples(), out.dim());
    for (const auto& id : selection.units) res.data += split.unit(id).data;
    return res;
}

double selection_jaccard(const Selection& a, const Selection& b) {
    std::vector<UnitId> sa = a.units, sb = b.units;
    std::sort(sa.begin(), sa.end());
    sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
    std::sort(sb.begin(), sb.end());
    sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::vector<UnitId> inter;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    const auto uni = sa.size() + sb.size() - inter.size();
    return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

void require_nondegenerate(const TaskSpec& task) {
    validate(task);
    const Matrix t = normalize_rows(task.encodings, "class encoding");
    for (Eigen::Index c = 1; c < t.rows(); ++c) {
        if ((t.row(c) - t.row(0)).norm() > 1e-12) return;
    }
    throw ValidationError("degenerate task");
}

Matrix weighted_heads(const SplitData& split, const std::vector<UnitId>& heads, const Vector& weights) {
    if (static_cast<Eigen::Index>(heads.size()) != weights.size()) throw ValidationError("weight count mismatch");
    Matrix y = Matrix::Zero(split.n_samples(), split.output().dim());
    for (std::size_t h = 0; h < heads.size(); ++h) y += weights(static_cast<Eigen::Index>(h)) * split.unit(heads[h]).data;
    return y;
}

UnitWeights optimize_unit_weights(const SplitData& train, const SplitData& val, const TaskSpec& task,
                                  const OptimConfig& cfg) {
    require_nondegenerate(task);
    if (train.labels.empty() || val.labels.empty()) throw ValidationError("optimize_unit_weights: unlabeled split");
    check_labels(train.labels, train.n_samples(), task.n_classes());
    check_labels(val.labels, val.n_samples(), task.n_classes());

    UnitWeights res;
    std::vector<const Matrix*> data;
    for (const auto* h : train.heads()) {
        res.heads.push_back(h->unit);
        data.push_back(&h->data);
    }
    if (data.empty()) throw ValidationError("split has no heads");
    const Matrix cls = normalize_rows(task.encodings, "class encoding");
    const Eigen::Index d = task.dim();

    auto loss_fn = [&](std::span<const Eigen::Index> batch, const Vector& w, Vector& grad) {
        const auto b = static_cast<Eigen::Index>(batch.size());
        Matrix y = Matrix::Zero(b, d);
        std::vector<int> lab(batch.size());
        for (Eigen::Index i = 0; i < b; ++i) {
            const auto r = batch[static_cast<std::size_t>(i)];
            lab[static_cast<std::size_t>(i)] = train.labels[static_cast<std::size_t>(r)];
            for (std::size_t h = 0; h < data.size(); ++h) y.row(i) += w(static_cast<Eigen::Index>(h)) * data[h]->row(r);
        }
        Matrix g;
        const double loss = zeroshot_loss(y, cls, lab, cfg.tau, &g);
        grad.setZero(w.size());
        for (Eigen::Index i = 0; i < b; ++i) {
            const auto r = batch[static_cast<std::size_t>(i)];
            for (std::size_t h = 0; h < data.size(); ++h) grad(static_cast<Eigen::Index>(h)) += g.row(i).dot(data[h]->row(r));
        }
        return loss;
    };
    auto val_fn = [&](const Vector& w) { return zeroshot_eval(weighted_heads(val, res.heads, w), task, val.labels); };

    res.training = train_adam(Vector::Ones(static_cast<Eigen::Index>(data.size())), train.n_samples(), cfg, loss_fn,
                              val_fn);
    res.weights = res.training.best_params;
    return res;
}

Matrix LinearAligner::apply(const Matrix& enc) const {
    if (enc.cols() != map.rows()) throw ValidationError("linear aligner: dimension mismatch");
    return (enc * map).rowwise() + bias;
}

LinearAligner fit_linear_aligner(const Matrix& train_enc, std::span<const int> train_labels, const Matrix& val_enc,
                                 std::span<const int> val_labels, const TaskSpec& task, const OptimConfig& cfg) {
    require_nondegenerate(task);
    check_labels(train_labels, train_enc.rows(), task.n_classes());
    check_labels(val_labels, val_enc.rows(), task.n_classes());
    const Eigen::Index d = task.dim();
    if (train_enc.cols() != d || val_enc.cols() != d) throw ValidationError("encoding dimension does not match task");
    const Matrix cls = normalize_rows(task.encodings, "class encoding");

    auto unpack = [d](const Vector& p) {
        LinearAligner a;
        a.map = Eigen::Map<const Matrix>(p.data(), d, d);
        a.bias = p.tail(d).transpose();
        return a;
    };
    auto loss_fn = [&](std::span<const Eigen::Index> batch, const Vector& p, Vector& grad) {
        const auto b = static_cast<Eigen::Index>(batch.size());
        Matrix x(b, d);
        std::vector<int> lab(batch.size());
        for (Eigen::Index i = 0; i < b; ++i) {
            const auto r = batch[static_cast<std::size_t>(i)];
            x.row(i) = train_enc.row(r);
            lab[static_cast<std::size_t>(i)] = train_labels[static_cast<std::size_t>(r)];
        }
        const Eigen::Map<const Matrix> m(p.data(), d, d);
        const Matrix y = (x * m).rowwise() + p.tail(d).transpose();
        Matrix g;
        const double loss = zeroshot_loss(y, cls, lab, cfg.tau, &g);
        grad.resize(p.size());
        Eigen::Map<Matrix>(grad.data(), d, d) = x.transpose() * g;
        grad.tail(d) = g.colwise().sum().transpose();
        return loss;
    };
    auto val_fn = [&](const Vector& p) { return zeroshot_eval(unpack(p).apply(val_enc), task, val_labels); };

    Vector p0 = Vector::Zero(d * d + d);
    Eigen::Map<Matrix>(p0.data(), d, d).setIdentity();
    auto training = train_adam(std::move(p0), train_enc.rows(), cfg, loss_fn, val_fn);
    LinearAligner res = unpack(training.best_params);
    res.training = std::move(training);
    return res;
}

}  // namespace resid
