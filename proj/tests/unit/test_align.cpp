#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include "../oracles/oracles.hpp"
#include "resid/align.hpp"
#include "resid/decompose.hpp"
#include "resid/error.hpp"
#include "resid/synth.hpp"

using namespace resid;

namespace {

TaskSpec axis_task(int c, int d) {
    std::vector<std::string> names;
    for (int i = 0; i < c; ++i) names.push_back("c" + std::to_string(i));
    return {names, Matrix::Identity(c, d)};
}

SynthConfig planted_cfg(std::uint64_t seed) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.noise_scale = 4.0;
    cfg.samples = {{"train", 1024}, {"val", 256}, {"test", 512}};
    cfg.planted = {{UnitId::head(1, 2), 0, 1.0}};
    return cfg;
}

}  // namespace

TEST_CASE("zero-shot evaluation") {
    const TaskSpec t = axis_task(3, 5);
    const std::vector<int> labels{0, 1, 2};
    CHECK(zeroshot_eval(t.encodings, t, labels) == 1.0);
    const std::vector<int> wrong{1, 2, 0};
    CHECK(zeroshot_eval(t.encodings, t, wrong) == 0.0);

    Rng rng(41);
    Matrix enc(100, 5);
    std::vector<int> y(100);
    for (int i = 0; i < 100; ++i) {
        y[i] = i % 3;
        enc.row(i) = t.encodings.row(y[i]) + rng.normal_matrix(1, 5, 0.01);
    }
    CHECK(zeroshot_eval(enc, t, y) == 1.0);
    // Invariant to positive row scaling of encodings and classes.
    Matrix scaled = enc;
    for (int i = 0; i < 100; ++i) scaled.row(i) *= 1.0 + i;
    TaskSpec t2 = t;
    t2.encodings.row(1) *= 7.0;
    CHECK(zeroshot_predict(scaled, t2) == zeroshot_predict(enc, t));
    CHECK_THROWS_AS(zeroshot_predict(Matrix::Zero(1, 5), t), NumericError);
}

TEST_CASE("zero-shot loss gradient") {
    Rng rng(42);
    const TaskSpec t{{"a", "b", "c"}, rng.normal_matrix(3, 6)};
    const Matrix uc = normalize_rows(t.encodings, "task");
    const Matrix enc = rng.normal_matrix(5, 6);
    const std::vector<int> y{0, 2, 1, 1, 0};
    Matrix g;
    zeroshot_loss(enc, uc, y, 3.0, &g);
    Vector x = Eigen::Map<const Vector>(enc.data(), enc.size());
    const Vector fd = oracle::finite_diff(
        [&](const Vector& v) { return zeroshot_loss(Eigen::Map<const Matrix>(v.data(), 5, 6), uc, y, 3.0, nullptr); },
        x, 1e-6);
    CHECK((Eigen::Map<const Vector>(g.data(), g.size()) - fd).norm() / fd.norm() < 1e-6);
}

TEST_CASE("prototypes") {
    Matrix enc(2, 2);
    enc << 1, 0, 0, 1;
    const std::vector<int> same{0, 0};
    const TaskSpec p = build_prototypes(enc, same, 1);
    CHECK(p.encodings(0, 0) == doctest::Approx(0.5));
    CHECK(p.encodings(0, 1) == doctest::Approx(0.5));
    const std::vector<int> each{0, 1};
    CHECK(build_prototypes(enc, each).encodings == enc);
    const std::vector<int> gap{0, 2};
    CHECK_THROWS_WITH_SUBSTR(build_prototypes(enc, gap), ValidationError, "empty class");

    SynthConfig cfg;
    cfg.noise_scale = 0.0;
    cfg.planted = {{UnitId::head(1, 0), 0, 1.0}};
    const SynthTrace tr = gen_trace(cfg);
    const auto& train = tr.splits.at("train");
    const auto& test = tr.splits.at("test");
    const UnitId h = UnitId::head(1, 0);
    const TaskSpec protos = build_prototypes(train.unit(h).data, train.labels);
    CHECK(zeroshot_eval(test.unit(h).data, protos, test.labels) >= 0.95);
}

TEST_CASE("scorers") {
    Rng rng(43);
    const TaskSpec t{{"a", "b", "c"}, rng.normal_matrix(3, 8)};
    const UnitTensor out{UnitId::output(1), rng.normal_matrix(50, 8), {}};
    SUBCASE("U") {
        CHECK(score_unsupervised({UnitId::head(0, 0), out.data, {}}, out).value == doctest::Approx(1.0));
        CHECK(score_unsupervised({UnitId::head(0, 0), -out.data, {}}, out).value == doctest::Approx(-1.0));
        double prev = 1.0;
        for (double sigma : {0.3, 1.0, 3.0}) {
            Matrix noisy = out.data;
            for (int i = 0; i < 50; ++i) noisy.row(i) += sigma * out.data.row(i).norm() * rng.normal_matrix(1, 8) / std::sqrt(8.0);
            const double v = score_unsupervised({UnitId::head(0, 0), noisy, {}}, out).value;
            CHECK(v > 0.0);
            CHECK(v < prev);
            prev = v;
        }
        Matrix scaled = out.data;
        for (int i = 0; i < 50; ++i) scaled.row(i) *= 0.5 + i;
        CHECK(score_unsupervised({UnitId::head(0, 0), scaled, {}}, out).value == doctest::Approx(1.0));
        Matrix constant = out.data;
        constant.row(3).setConstant(1.0);
        CHECK_THROWS_AS(score_unsupervised({UnitId::head(0, 0), constant, {}}, out), NumericError);
    }
    SUBCASE("UT") {
        CHECK(score_task_conditioned({UnitId::head(0, 0), out.data, {}}, out, t).value == doctest::Approx(1.0));
        const Matrix basis = task_span_basis(t);
        const Matrix off = rng.normal_matrix(50, 8) * (Matrix::Identity(8, 8) - basis.transpose() * basis);
        const UnitTensor head{UnitId::head(0, 0), out.data + 10.0 * off, {}};
        CHECK(score_task_conditioned(head, out, t).value == doctest::Approx(1.0));
        CHECK(score_task_conditioned(head, out, t).value > score_unsupervised(head, out).value);
        TaskSpec flat{{"a", "b"}, Matrix::Ones(2, 8)};
        flat.encodings(1, 0) = 1.0;
        CHECK_THROWS_WITH_SUBSTR(task_span_basis(flat), ValidationError, "degenerate task span");
    }
    SUBCASE("S") {
        const TaskSpec ax = axis_task(3, 8);
        std::vector<int> y(30);
        Matrix enc(30, 8);
        for (int i = 0; i < 30; ++i) {
            y[i] = i % 3;
            enc.row(i) = ax.encodings.row(y[i]);
        }
        CHECK(score_supervised({UnitId::head(0, 0), enc, {}}, ax, y).value == 1.0);
        const TaskSpec ten = axis_task(10, 16);
        std::vector<int> y10(1000);
        for (int i = 0; i < 1000; ++i) y10[i] = i % 10;
        const double chance = score_supervised({UnitId::head(0, 0), rng.normal_matrix(1000, 16), {}}, ten, y10).value;
        CHECK(chance == doctest::Approx(0.1).epsilon(0.5));
    }
}

TEST_CASE("top-k selection") {
    std::vector<UnitScore> s{{UnitId::head(0, 0), ScoreMethod::U, 0.9},
                             {UnitId::head(0, 1), ScoreMethod::U, 0.1},
                             {UnitId::head(0, 2), ScoreMethod::U, 0.5}};
    const Selection a = select_topk(s, 1.0 / 3.0);
    CHECK(a.k == 1);
    CHECK(a.units == std::vector<UnitId>{UnitId::head(0, 0)});
    for (auto& x : s) x.value = 0.3;
    const Selection b = select_topk(s, 0.5);
    CHECK(b.units == std::vector<UnitId>{UnitId::head(0, 0), UnitId::head(0, 1)});
    CHECK(topk_count(0.05, 384) == 20);
    CHECK(topk_count(0.05, 8) == 1);
    CHECK(topk_count(0.25, 8) == 2);
    CHECK_THROWS_AS(select_topk({}, 0.05), ValidationError);
}

TEST_CASE("random selection and jaccard") {
    std::vector<UnitId> heads;
    for (int i = 0; i < 100; ++i) heads.push_back(UnitId::head(i / 10, i % 10));
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const auto all = random_selection(std::vector<UnitId>(heads.begin(), heads.begin() + 7), 7, seeds);
    for (const auto& s : all) CHECK(s.units.size() == 7);
    const std::vector<std::uint64_t> one{42};
    CHECK(random_selection(heads, 5, one)[0].units == random_selection(heads, 5, one)[0].units);
    const auto r = random_selection(heads, 5, seeds);
    double sum = 0;
    int pairs = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(r[i].method == "R");
        for (std::size_t j = i + 1; j < r.size(); ++j, ++pairs) sum += selection_jaccard(r[i], r[j]);
    }
    CHECK(sum / pairs >= 0.0);
    CHECK(sum / pairs <= 0.2);
    CHECK_THROWS_AS(random_selection(heads, 101, seeds), ValidationError);

    const Selection x{{UnitId::head(0, 1), UnitId::head(0, 2)}, "x", 2};
    const Selection y{{UnitId::head(0, 2), UnitId::head(0, 3)}, "y", 2};
    CHECK(selection_jaccard(x, x) == 1.0);
    CHECK(selection_jaccard(x, y) == doctest::Approx(1.0 / 3.0));
    const Selection z{{UnitId::head(1, 1)}, "z", 1};
    CHECK(selection_jaccard(x, z) == 0.0);
    CHECK(selection_jaccard(Selection{}, Selection{}) == 1.0);
}

TEST_CASE("partial output additivity") {
    SynthConfig cfg;
    cfg.samples = {{"train", 40}};
    const SynthTrace tr = gen_trace(cfg);
    const SplitData& s = tr.splits.at("train");
    std::vector<UnitId> all, heads, rest;
    for (const auto& u : s.units) {
        if (u.unit.kind == UnitKind::output) continue;
        all.push_back(u.unit);
        (u.unit.is_head() && u.unit.layer == 0 ? heads : rest).push_back(u.unit);
    }
    const Matrix full = partial_output({all, "all", 0}, s).data;
    CHECK(testutil::rel_err(full, assemble_output(s.units, cfg.n_layers).data) < 1e-12);
    CHECK(testutil::rel_err(full, s.output().data) < 1e-6);
    const Matrix sum = partial_output({heads, "a", 0}, s).data + partial_output({rest, "b", 0}, s).data;
    CHECK(testutil::rel_err(sum, full) < 1e-12);
    CHECK_THROWS_AS(partial_output({{UnitId::head(5, 0)}, "x", 1}, s), ValidationError);
}

TEST_CASE("planted heads score higher under S") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const SynthTrace tr = gen_trace(planted_cfg(seed));
        const auto scores = score_heads(tr.splits.at("train"), ScoreMethod::S, tr.task);
        double planted = 0, others = 0;
        for (const auto& s : scores) (s.unit == UnitId::head(1, 2) ? planted : others) += s.value;
        wins += planted > others / (scores.size() - 1);
    }
    CHECK(wins == 20);
}

TEST_CASE("optimized unit weights") {
    const SynthTrace tr = gen_trace(planted_cfg(3));
    OptimConfig oc;
    oc.lr = 3e-2;
    const UnitWeights w = optimize_unit_weights(tr.splits.at("train"), tr.splits.at("val"), tr.task, oc);
    const SplitData& test = tr.splits.at("test");
    CHECK(zeroshot_eval(weighted_heads(test, w.heads, w.weights), tr.task, test.labels) >= 0.95);
    Eigen::Index top;
    w.weights.cwiseAbs().maxCoeff(&top);
    CHECK(w.heads[static_cast<std::size_t>(top)] == UnitId::head(1, 2));

    SUBCASE("zero epochs keeps the H baseline") {
        OptimConfig zero = oc;
        zero.max_epochs = 0;
        const UnitWeights z = optimize_unit_weights(tr.splits.at("train"), tr.splits.at("val"), tr.task, zero);
        CHECK(z.weights == Vector::Ones(8));
        CHECK(zeroshot_eval(weighted_heads(test, z.heads, z.weights), tr.task, test.labels) ==
              zeroshot_eval(partial_output({z.heads, "H", 8}, test).data, tr.task, test.labels));
    }
    SUBCASE("degenerate task") {
        TaskSpec same = tr.task;
        same.encodings.row(1) = 2.0 * same.encodings.row(0);
        CHECK_THROWS_WITH_SUBSTR(optimize_unit_weights(tr.splits.at("train"), tr.splits.at("val"), same, oc),
                                 ValidationError, "degenerate task");
    }
}

TEST_CASE("linear aligner") {
    Rng rng(44);
    const int d = 6, n = 600;
    const TaskSpec t = axis_task(3, d);
    const Matrix q = rng.orthogonal(d);
    auto make = [&](int count, std::vector<int>& y) {
        Matrix enc(count, d);
        y.resize(count);
        for (int i = 0; i < count; ++i) {
            y[i] = i % 3;
            enc.row(i) = (t.encodings.row(y[i]) + rng.normal_matrix(1, d, 0.2)) * q;
        }
        return enc;
    };
    std::vector<int> ytr, yva, yte;
    const Matrix tr = make(n, ytr), va = make(200, yva), te = make(200, yte);
    OptimConfig oc;
    oc.lr = 3e-2;
    oc.max_epochs = 60;
    oc.patience = 10;
    const LinearAligner la = fit_linear_aligner(tr, ytr, va, yva, t, oc);
    CHECK(zeroshot_eval(la.apply(te), t, yte) >= 0.95);
    CHECK(la.param_count() == d * d + d);

    LinearAligner big;
    big.map = Matrix::Identity(256, 256);
    big.bias = RowVector::Zero(256);
    CHECK(big.param_count() == 65792);

    SUBCASE("identity-solvable task never drops below base") {
        const Matrix plain = tr * q.transpose();
        const Matrix pv = va * q.transpose();
        const LinearAligner id = fit_linear_aligner(plain, ytr, pv, yva, t, oc);
        CHECK(zeroshot_eval(id.apply(pv), t, yva) >= zeroshot_eval(pv, t, yva));
    }
}
