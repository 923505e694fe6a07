#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <cmath>
#include <limits>

#include "../oracles/oracles.hpp"
#include "resid/error.hpp"
#include "resid/optim.hpp"

using namespace resid;

TEST_CASE("adam minimizes a quadratic") {
    Adam adam(2, 0.1);
    Vector x(2);
    x << 3, -2;
    for (int i = 0; i < 500; ++i) {
        const Vector g = 2.0 * x;
        adam.step(x, g);
    }
    CHECK(x.norm() < 1e-2);
}

TEST_CASE("train_adam bookkeeping") {
    OptimConfig cfg;
    cfg.lr = 0.05;
    cfg.batch = 4;
    cfg.max_epochs = 10;
    cfg.patience = 3;
    // Validation accuracy peaks at the initial point.
    const auto loss = [](std::span<const Eigen::Index>, const Vector& p, Vector& g) {
        g = 2.0 * (p.array() - 5.0).matrix();
        return (p.array() - 5.0).square().sum();
    };
    const auto val = [](const Vector& p) { return 1.0 / (1.0 + std::abs(p(0))); };
    const TrainResult r = train_adam(Vector::Zero(1), 16, cfg, loss, val);
    CHECK(r.best_epoch == 0);
    CHECK(r.best_params(0) == 0.0);
    CHECK(r.early_stopped);
    CHECK(r.history.size() == 4);
    CHECK(r.history[0].epoch == 0);

    SUBCASE("deterministic") {
        const TrainResult r2 = train_adam(Vector::Zero(1), 16, cfg, loss, val);
        CHECK(r2.history.back().train_loss == r.history.back().train_loss);
    }
    SUBCASE("divergence") {
        const auto bad = [](std::span<const Eigen::Index>, const Vector& p, Vector& g) {
            g = Vector::Zero(p.size());
            return std::numeric_limits<double>::quiet_NaN();
        };
        try {
            train_adam(Vector::Zero(1), 16, cfg, bad, val);
            FAIL("expected DivergenceError");
        } catch (const DivergenceError& e) {
            CHECK(e.epoch() == 0);
        }
    }
}

TEST_CASE("optim config") {
    OptimConfig c;
    c.lr = -1;
    CHECK_THROWS_AS(validate(c), ValidationError);
    OptimConfig d;
    d.lr = 0.5;
    d.seed = 9;
    const OptimConfig r = optim_config_from_json(to_json(d));
    CHECK(r.lr == 0.5);
    CHECK(r.seed == 9);
    CHECK_THROWS_AS(optim_config_from_json(nlohmann::json{{"nope", 1}}), ValidationError);
}

TEST_CASE("oracles") {
    const Vector x = Vector::Constant(1, 3.0);
    const Vector g = oracle::finite_diff([](const Vector& v) { return v(0) * v(0); }, x, 1e-4);
    CHECK(g(0) == doctest::Approx(6.0).epsilon(1e-6));
    const auto fit = oracle::exhaustive_pursuit(Vector::Unit(3, 1) * 2.0, Matrix::Identity(3, 3), 1);
    CHECK(fit.support == std::vector<int>{1});
    CHECK(fit.residual_norm < 1e-12);
}
