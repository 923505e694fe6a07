#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <sstream>

#include "resid/error.hpp"
#include "resid/similarity.hpp"
#include "resid/synth.hpp"

using namespace resid;

namespace {

WeightedBasis wb(const Matrix& v, const Vector& w) { return {v, w}; }

WeightedBasis random_wb(Rng& rng, int k, int d) {
    Vector w = rng.normal_vector(k).cwiseAbs();
    std::sort(w.data(), w.data() + k, std::greater<>());
    return {testutil::orthonormal_rows(rng, k, d), w};
}

}  // namespace

TEST_CASE("spectral matches") {
    const Matrix e = Matrix::Identity(2, 2);
    SUBCASE("identical bases") {
        const auto p = spectral_matches(wb(e, Vector::Ones(2)), wb(e, Vector::Ones(2)));
        REQUIRE(p.size() == 2);
        CHECK(p[0].i == 0);
        CHECK(p[0].j == 0);
        CHECK(p[0].score == doctest::Approx(1.0));
        CHECK(p[1].i == 1);
        CHECK(p[1].j == 1);
    }
    SUBCASE("45 degree rotation") {
        Matrix r(2, 2);
        const double c = std::sqrt(0.5);
        r << c, c, -c, c;
        const auto p = spectral_matches(wb(e, Vector::Ones(2)), wb(r, Vector::Ones(2)));
        for (const auto& x : p) CHECK(x.score == doctest::Approx(0.7071).epsilon(1e-4));
        CHECK(normalized_spectral_cosine(wb(e, Vector::Ones(2)), wb(r, Vector::Ones(2))) ==
              doctest::Approx(0.7071).epsilon(1e-4));
    }
    SUBCASE("orthogonal singletons") {
        const auto p = spectral_matches(wb(e.topRows(1), Vector::Ones(1)), wb(e.bottomRows(1), Vector::Ones(1)));
        REQUIRE(p.size() == 1);
        CHECK(p[0].score == 0.0);
    }
}

TEST_CASE("normalized spectral cosine properties") {
    Rng rng(31);
    for (int t = 0; t < 200; ++t) {
        const int d = 3 + static_cast<int>(rng.below(8));
        const auto a = random_wb(rng, 1 + static_cast<int>(rng.below(d)), d);
        const auto b = random_wb(rng, 1 + static_cast<int>(rng.below(d)), d);
        const double s = normalized_spectral_cosine(a, b);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0 + 1e-6);
        CHECK(std::abs(s - normalized_spectral_cosine(b, a)) <= 1e-6);
        WeightedBasis flipped = b;
        flipped.vectors.row(0) *= -1.0;
        CHECK(std::abs(s - normalized_spectral_cosine(a, flipped)) <= 1e-12);
    }
    const auto a = random_wb(rng, 4, 6);
    CHECK(normalized_spectral_cosine(a, a) == doctest::Approx(1.0).epsilon(1e-6));
    const Matrix q = rng.orthogonal(6);
    CHECK(normalized_spectral_cosine(wb(q.topRows(3), Vector::Ones(3)), wb(q.bottomRows(3), Vector::Ones(3))) <
          1e-12);
}

TEST_CASE("weighted basis validation") {
    Vector up(2);
    up << 1, 2;
    CHECK_THROWS_AS(validate(wb(Matrix::Identity(2, 2), up)), ValidationError);
    Vector neg(2);
    neg << 1, -1;
    CHECK_THROWS_AS(validate(wb(Matrix::Identity(2, 2), neg)), ValidationError);
    CHECK_THROWS_AS(validate(wb(2.0 * Matrix::Identity(2, 2), Vector::Ones(2))), ValidationError);
    CHECK_THROWS_AS(normalized_spectral_cosine(wb(Matrix::Identity(2, 2), Vector::Zero(2)),
                                               wb(Matrix::Identity(2, 2), Vector::Zero(2))),
                    Error);
}

TEST_CASE("unit similarity") {
    Rng rng(32);
    const Matrix x = rng.normal_matrix(200, 6) * rng.normal_matrix(6, 6);
    const PcaBasis b = fit_pca(x);
    CHECK(unit_similarity(b, b, true) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(unit_similarity(b, fit_pca(x.topRows(80)), true) > 0.0);

    SUBCASE("rotated data equals the direct computation") {
        const Matrix q = rng.orthogonal(6);
        const PcaBasis bq = fit_pca(x * q);
        const double direct = normalized_spectral_cosine(WeightedBasis::from_pca(b, true),
                                                         wb(b.components * q, b.singular_values));
        CHECK(unit_similarity(b, bq, true) == doctest::Approx(direct).epsilon(1e-6));
    }
}

TEST_CASE("planted heads are more similar across splits than unrelated heads") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.samples = {{"a", 300}, {"b", 300}};
        cfg.planted = {{UnitId::head(1, 2), 0, 1.0}};
        const SynthTrace tr = gen_trace(cfg);
        const PcaBasis pa = fit_pca(tr.splits.at("a").unit(UnitId::head(1, 2)));
        const PcaBasis pb = fit_pca(tr.splits.at("b").unit(UnitId::head(1, 2)));
        const PcaBasis other = fit_pca(tr.splits.at("b").unit(UnitId::head(0, 1)));
        wins += unit_similarity(pa, pb, true) > unit_similarity(pa, other, true);
    }
    CHECK(wins == 20);
}

TEST_CASE("grid csv") {
    std::ostringstream out;
    write_grid_csv(out, {{"val", UnitId::head(1, 3), 0.5}});
    CHECK(out.str().rfind("dataset,layer,head,score\n", 0) == 0);
    CHECK(out.str().find("val,1,3,") != std::string::npos);
}
