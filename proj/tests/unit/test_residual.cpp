#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <sstream>

#include "../oracles/oracles.hpp"
#include "resid/align.hpp"
#include "resid/error.hpp"
#include "resid/residual.hpp"
#include "resid/synth.hpp"

using namespace resid;
using testutil::rel_err;

namespace {

TraceManifest manifest(int layers, int heads, int d_head, int d_out) {
    TraceManifest m;
    m.n_layers = layers;
    m.heads_per_layer = heads;
    m.d_head = d_head;
    m.d_model = heads * d_head;
    m.d_out = d_out;
    return m;
}

SynthTrace small_trace(std::uint64_t seed, double noise = 1.0) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.noise_scale = noise;
    cfg.samples = {{"train", 256}, {"val", 128}, {"test", 128}};
    cfg.planted = {{UnitId::head(1, 2), 0, 1.0}};
    return gen_trace(cfg);
}

}  // namespace

TEST_CASE("rd_transform") {
    Rng rng(51);
    const Matrix x = rng.normal_matrix(30, 5);
    const PcaBasis b = fit_pca(x);
    CHECK(rel_err(rd_transform(x, b, Vector::Ones(b.size()), true), x) < 1e-12);
    CHECK(rd_transform(x, b, Vector::Zero(b.size()), false).norm() == 0.0);
    Vector lam = Vector::Ones(b.size());
    lam(0) = 2.0;
    const Matrix one = b.mean + 3.0 * b.components.row(0);
    CHECK(rel_err(rd_transform(one, b, lam, true), b.mean + 6.0 * b.components.row(0)) < 1e-12);
    CHECK(rel_err(rd_transform(one, b, lam, false), 6.0 * b.components.row(0)) < 1e-12);
}

TEST_CASE("truncate_basis") {
    PcaBasis b;
    b.mean = RowVector::Zero(4);
    b.components = Matrix::Identity(4, 4);
    b.singular_values = Vector::Ones(4);
    b.evr = Vector(4);
    b.evr << 0.5, 0.3, 0.15, 0.05;
    CHECK(truncate_basis(b, 0.9).size() == 3);
    CHECK(truncate_basis(b, 1.0).size() == 4);
    PcaBasis one = b;
    one.components = Matrix::Identity(1, 4);
    one.singular_values = Vector::Ones(1);
    one.evr = Vector::Ones(1);
    CHECK(truncate_basis(one, 0.9).size() == 1);
}

TEST_CASE("parameter counts of published configurations") {
    RdConfig rd, y;
    y.variant = RdVariant::RD_Y;
    CHECK(rd_param_count(manifest(24, 16, 64, 768), rd) == 43008);
    CHECK(rd_param_count(manifest(24, 16, 64, 256), rd) == 30720);
    CHECK(rd_param_count(manifest(12, 12, 64, 512), rd) == 15360);
    CHECK(rd_param_count(manifest(24, 16, 64, 768), y) == 768);
    CHECK(rd_param_count(manifest(24, 16, 64, 256), y) == 256);
    CHECK(rd_param_count(manifest(12, 12, 64, 512), y) == 512);
    RdConfig star;
    star.variant = RdVariant::RD_star;
    CHECK(rd_param_count(manifest(12, 12, 64, 512), star) == 9216);
    RdConfig emb;
    emb.include_embed = true;
    CHECK(rd_param_count(manifest(12, 12, 64, 512), emb) == 15360 + 512);
}

TEST_CASE("rd_output identities") {
    const SynthTrace tr = small_trace(1);
    const SplitData& train = tr.splits.at("train");
    for (RdVariant v : {RdVariant::RD, RdVariant::RD_star, RdVariant::RD_Y}) {
        RdConfig cfg;
        cfg.variant = v;
        const BasisMap bases = fit_rd_bases(train, 2, 4, cfg);
        const auto units = rd_units(2, 4, cfg);
        const LambdaSet ones = LambdaSet::ones(bases, units);
        const SplitData& test = tr.splits.at("test");
        const Matrix y = rd_output(test, bases, ones, cfg).data;
        if (v != RdVariant::RD_star) CHECK(rel_err(y, test.output().data) < 1e-6);
        // Same predictions as the base encoding.
        if (v != RdVariant::RD_star) CHECK(zeroshot_predict(y, tr.task) == zeroshot_predict(test.output().data, tr.task));
        CHECK(rd_param_count(tr.manifest, cfg, &bases) == ones.param_count());
    }
    SUBCASE("all zero, literal") {
        RdConfig cfg;
        cfg.recenter = false;
        cfg.include_embed = true;
        const BasisMap bases = fit_rd_bases(train, 2, 4, cfg);
        LambdaSet zero = LambdaSet::ones(bases, rd_units(2, 4, cfg), false);
        for (auto& [u, v] : zero.entries) v.setZero();
        CHECK(rd_output(train, bases, zero, cfg).data.norm() == 0.0);
    }
}

TEST_CASE("planted components alone beat the full output") {
    const SynthTrace tr = small_trace(2, 4.0);
    RdConfig cfg;
    const SplitData& train = tr.splits.at("train");
    const BasisMap bases = fit_rd_bases(train, 2, 4, cfg);
    LambdaSet lam = LambdaSet::ones(bases, rd_units(2, 4, cfg));
    const UnitId planted = UnitId::head(1, 2);
    for (auto& [u, v] : lam.entries) {
        v.setZero();
        if (u == planted) {
            Eigen::Index best;
            (bases.at(u).components * tr.planted[0].direction.transpose()).cwiseAbs().maxCoeff(&best);
            v(best) = 1.0;
        }
    }
    const SplitData& test = tr.splits.at("test");
    CHECK(zeroshot_eval(rd_output(test, bases, lam, cfg).data, tr.task, test.labels) >=
          zeroshot_eval(test.output().data, tr.task, test.labels));
}

TEST_CASE("RdProblem matches rd_output and finite differences") {
    const SynthTrace tr = small_trace(3);
    const SplitData& train = tr.splits.at("train");
    for (RdVariant v : {RdVariant::RD, RdVariant::RD_star, RdVariant::RD_Y}) {
        RdConfig cfg;
        cfg.variant = v;
        const BasisMap bases = fit_rd_bases(train, 2, 4, cfg);
        const RdProblem p(train, bases, cfg);
        Rng rng(52);
        const Vector params = Vector::Ones(p.n_params()) + rng.normal_vector(p.n_params(), 0.3);
        CHECK(rel_err(p.forward(params), rd_output(train, bases, p.unpack(params), cfg).data) < 1e-10);
        CHECK(p.pack(p.unpack(params)) == params);

        std::vector<Eigen::Index> rows{0, 5, 9, 17};
        const Matrix uc = normalize_rows(tr.task.encodings, "task");
        Vector g;
        p.loss_and_grad(params, rows, train.labels, uc, 10.0, &g);
        const Vector fd = oracle::finite_diff(
            [&](const Vector& x) { return p.loss_and_grad(x, rows, train.labels, uc, 10.0, nullptr); }, params, 1e-5);
        CHECK((g - fd).norm() / std::max(fd.norm(), 1e-12) < 1e-4);
    }
}

TEST_CASE("rd_loss_and_grad") {
    const SynthTrace tr = small_trace(4);
    const SplitData& train = tr.splits.at("train");
    RdConfig cfg;
    const BasisMap bases = fit_rd_bases(train, 2, 4, cfg);
    const LambdaSet ones = LambdaSet::ones(bases, rd_units(2, 4, cfg));
    SUBCASE("tau to zero") {
        const RdGradient g = rd_loss_and_grad(ones, train, bases, tr.task, train.labels, cfg, 1e-9);
        for (const auto& [u, v] : g.grad.entries) CHECK(v.cwiseAbs().maxCoeff() < 1e-6);
    }
    SUBCASE("mirror symmetry gives equal magnitudes") {
        // Two samples mirrored across the class bisector with mirrored labels.
        SplitData s;
        s.name = "sym";
        const int d = tr.manifest.d_out;
        Matrix a = Matrix::Zero(2, d);
        const RowVector t0 = tr.task.encodings.row(0).normalized(), t1 = tr.task.encodings.row(1).normalized();
        a.row(0) = 0.8 * t0 + 0.2 * t1;
        a.row(1) = 0.2 * t0 + 0.8 * t1;
        s.units.push_back({UnitId::output(2), a, {}});
        s.labels = {0, 1};
        RdConfig yc;
        yc.variant = RdVariant::RD_Y;
        yc.recenter = false;
        PcaBasis b;
        b.unit = UnitId::output(2);
        b.mean = RowVector::Zero(d);
        b.components = Matrix(2, d);
        b.components.row(0) = t0;
        b.components.row(1) = t1;
        b.singular_values = Vector::Ones(2);
        b.evr = Vector::Constant(2, 0.5);
        const BasisMap bm{{b.unit, b}};
        const LambdaSet l = LambdaSet::ones(bm, {b.unit}, false);
        const RdGradient g = rd_loss_and_grad(l, s, bm, tr.task, s.labels, yc, 5.0);
        const Vector& v = g.grad.entries.at(b.unit);
        CHECK(std::abs(v(0)) == doctest::Approx(std::abs(v(1))).epsilon(1e-9));
    }
}

TEST_CASE("fit_residual") {
    SUBCASE("zero epochs keeps ones and base accuracy") {
        const SynthTrace tr = small_trace(5);
        RdConfig cfg;
        const BasisMap bases = fit_rd_bases(tr.splits.at("train"), 2, 4, cfg);
        OptimConfig oc;
        oc.max_epochs = 0;
        const ResidualFit f = fit_residual(tr.splits.at("train"), tr.splits.at("val"), bases, tr.task, cfg, oc);
        for (const auto& [u, v] : f.lambdas.entries) CHECK(v == Vector::Ones(v.size()));
        const SplitData& val = tr.splits.at("val");
        CHECK(f.training.history.size() == 1);
        CHECK(f.training.history[0].val_accuracy == zeroshot_eval(val.output().data, tr.task, val.labels));
    }
    SUBCASE("planted trace recovers the task") {
        SynthConfig c;
        c.seed = 6;
        c.noise_scale = 4.0;
        c.samples = {{"train", 2048}, {"val", 512}, {"test", 1024}};
        c.planted = {{UnitId::head(1, 2), 0, 1.0}};
        const SynthTrace tr = gen_trace(c);
        RdConfig cfg;
        const BasisMap bases = fit_rd_bases(tr.splits.at("train"), 2, 4, cfg);
        OptimConfig oc;
        oc.lr = 3e-2;
        const ResidualFit f = fit_residual(tr.splits.at("train"), tr.splits.at("val"), bases, tr.task, cfg, oc);
        const SplitData& test = tr.splits.at("test");
        CHECK(zeroshot_eval(rd_output(test, bases, f.lambdas, cfg).data, tr.task, test.labels) >= 0.95);
    }
}

TEST_CASE("lambda io and training log") {
    const SynthTrace tr = small_trace(7);
    RdConfig cfg;
    const BasisMap bases = fit_rd_bases(tr.splits.at("train"), 2, 4, cfg);
    LambdaSet l = LambdaSet::ones(bases, rd_units(2, 4, cfg));
    l.entries.begin()->second(0) = 0.25;
    testutil::TempDir dir("residual_io");
    write_lambda_set(dir.path() / "l", l);
    const LambdaSet r = read_lambda_set(dir.path() / "l");
    CHECK(r.recenter == l.recenter);
    CHECK(r.entries.size() == l.entries.size());
    CHECK(r.entries.begin()->second(0) == 0.25);

    std::ostringstream out;
    write_training_log(out, {{0, 1.5, 0.5}, {1, 1.25, 0.75}});
    CHECK(out.str() == "epoch,train_loss,val_acc\n0,1.5,0.5\n1,1.25,0.75\n");
}

TEST_CASE("config validation") {
    RdConfig c;
    c.evr_truncation = 0.0;
    CHECK_THROWS_AS(validate(c), ValidationError);
    CHECK(parse_rd_variant("RD_star") == RdVariant::RD_star);
    CHECK_THROWS_AS(parse_rd_variant("RDX"), ValidationError);
}
