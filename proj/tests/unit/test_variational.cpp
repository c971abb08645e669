#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "pgcnet/variational.hpp"

using namespace pgcnet;

namespace {

GaussianPosterior<double> scalar_posterior(double mu, double sd) {
    return GaussianPosterior<double>({1, 1, 1, 1, 1}, {mu}, {inverse_softplus(sd)});
}

LayerConfig layer(int cin, int cout, ConvGeometry g, std::string name = "test.layer") {
    LayerConfig c;
    c.name = std::move(name);
    c.in_channels = cin;
    c.out_channels = cout;
    c.geometry = g;
    return c;
}

}  // namespace

TEST_SUITE("variational") {

TEST_CASE("softplus and its inverse") {
    for (double y : {1e-6, 1e-3, 0.5, 1.0, 7.0, 50.0}) CHECK(softplus(inverse_softplus(y)) == doctest::Approx(y).epsilon(1e-12));
    CHECK(softplus(-800.0) >= 0.0);
    CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("kl_to_prior closed-form values") {
    const PriorSpec prior;
    CHECK(std::abs(kl_to_prior(scalar_posterior(0.0, 1.0), prior)) < 1e-12);
    CHECK(kl_to_prior(scalar_posterior(1.0, 1.0), prior) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl_to_prior(scalar_posterior(0.0, 0.5), prior) == doctest::Approx(0.31815).epsilon(1e-5));
    CHECK(std::abs(kl_to_prior(scalar_posterior(0.0, 0.5), prior) - oracle::kl_numeric(0.0, 0.5, 0.0, 1.0)) < 1e-4);
}

TEST_CASE("kl_to_prior matches numerical integration and is positive") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> mu(-2.0, 2.0), sd(0.05, 3.0);
    for (int i = 0; i < 20; ++i) {
        const double m = mu(rng), s = sd(rng);
        const PriorSpec prior{0.3, 1.7};
        const double closed = kl_to_prior(scalar_posterior(m, s), prior);
        CHECK(std::abs(closed - oracle::kl_numeric(m, s, 0.3, 1.7)) < 1e-4);
        CHECK(closed > 0.0);
    }
}

TEST_CASE("kl gradient matches finite differences") {
    GaussianPosterior<double> p({2, 1, 1, 1, 1}, {0.4, -1.2}, {-0.3, 1.1});
    const PriorSpec prior{0.1, 0.8};
    std::vector<double> dm(2, 0.0), dr(2, 0.0);
    accumulate_kl_gradient<double>(p, prior, 2.0, dm, dr);
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
        auto q = p;
        q.mean[i] += h;
        const double up = kl_to_prior(q, prior);
        q.mean[i] -= 2 * h;
        const double dn = kl_to_prior(q, prior);
        CHECK(dm[i] == doctest::Approx(2.0 * (up - dn) / (2 * h)).epsilon(1e-6));
        q = p;
        q.raw_scale[i] += h;
        const double up2 = kl_to_prior(q, prior);
        q.raw_scale[i] -= 2 * h;
        const double dn2 = kl_to_prior(q, prior);
        CHECK(dr[i] == doctest::Approx(2.0 * (up2 - dn2) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("sample_weights statistics, degeneracy and determinism") {
    const auto p = scalar_posterior(0.0, 1.0);
    Rng rng(17);
    const int n = 100000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double w = sample_weights(p, rng)[0];
        s += w;
        s2 += w * w;
    }
    const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(sd - 1.0) < 0.02);
    CHECK(std::abs(mean) < 3.0 / std::sqrt(n));

    GaussianPosterior<double> zero({3, 1, 1, 1, 1}, {0.5, -1.0, 2.0}, {-800.0, -800.0, -800.0});
    Rng r2(1);
    CHECK(sample_weights(zero, r2) == zero.mean);

    Rng a(99), b(99);
    GaussianPosterior<float> pf({4, 1, 1, 1, 1}, {0, 1, 2, 3}, {0, 0, 0, 0});
    CHECK(sample_weights(pf, a) == sample_weights(pf, b));
}

TEST_CASE("glorot_posterior limits and initial stddev") {
    Rng rng(3);
    const auto cfg = layer(4, 6, ConvGeometry::planar(3));
    const auto p = glorot_posterior<float>(cfg, rng);
    const double limit = std::sqrt(6.0 / ((4 + 6) * 9.0));
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(std::abs(p.mean[i]) <= limit);
        CHECK(p.stddev(i) == doctest::Approx(kInitialPosteriorStddev).epsilon(1e-4));
    }
}

TEST_CASE("conv_forward matches the direct oracle") {
    std::mt19937_64 rng(11);
    for (auto g : {ConvGeometry::planar(3, 1, 1), ConvGeometry::planar(5, 2, 2), ConvGeometry::cubic(3, 2, 1),
                   ConvGeometry::cubic(3, 1, 1)}) {
        const auto cfg = layer(3, 4, g);
        const auto x = oracle::random_volume<double>(3, g.kernel[0] == 1 ? 1 : 5, 7, 9, rng);
        std::vector<double> w(cfg.weight_count()), b(4);
        std::uniform_real_distribution<double> u(-1, 1);
        for (auto& v : w) v = u(rng);
        for (auto& v : b) v = u(rng);
        const auto got = conv_forward<double>(x, w, b, cfg);
        const auto want = oracle::conv3d(x, w, b, 4, g);
        REQUIRE(got.same_shape(want));
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv_variational degenerate, identity and mean_only contracts") {
    std::mt19937_64 rng(2);
    auto cfg = layer(3, 3, ConvGeometry::planar(1));
    GaussianPosterior<double> id({3, 3, 1, 1, 1}, std::vector<double>(9, 0.0), std::vector<double>(9, -800.0));
    for (int i = 0; i < 3; ++i) id.mean[i * 3 + i] = 1.0;
    const auto x = oracle::random_volume<double>(3, 1, 5, 6, rng);
    Rng r(4);
    CHECK(conv_variational<double>(x, id, {}, cfg, r).values() == x.values());

    cfg = layer(3, 2, ConvGeometry::planar(3, 1, 1));
    Rng init(8);
    auto post = glorot_posterior<double>(cfg, init);
    std::fill(post.raw_scale.begin(), post.raw_scale.end(), -800.0);
    const auto det = conv_forward<double>(x, post.mean, {}, cfg);
    for (auto pert : {Perturbation::kNaiveReparam, Perturbation::kFlipout}) {
        cfg.perturbation = pert;
        CHECK(conv_variational<double>(x, post, {}, cfg, r).values() == det.values());
    }

    cfg.sampling = SamplingMode::kMeanOnly;
    std::fill(post.raw_scale.begin(), post.raw_scale.end(), 0.0);
    CHECK(conv_variational<double>(x, post, {}, cfg, r).values() == conv_variational<double>(x, post, {}, cfg, r).values());
    cfg.sampling = SamplingMode::kStochastic;
    CHECK(conv_variational<double>(x, post, {}, cfg, r).values() != conv_variational<double>(x, post, {}, cfg, r).values());
}

TEST_CASE("conv_variational rejects mismatched shapes naming the layer") {
    auto cfg = layer(3, 2, ConvGeometry::planar(3, 1, 1), "feature.stem");
    Rng init(8);
    const auto post = glorot_posterior<float>(cfg, init);
    Volume<float> bad(2, 1, 5, 5);
    try {
        conv_variational<float>(bad, post, {}, cfg, init);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("feature.stem") != std::string::npos);
    }
}

TEST_CASE("flipout and naive reparameterization agree in output mean") {
    std::mt19937_64 rng(21);
    auto cfg = layer(2, 2, ConvGeometry::planar(3, 1, 1));
    Rng init(5);
    auto post = glorot_posterior<double>(cfg, init);
    std::fill(post.raw_scale.begin(), post.raw_scale.end(), inverse_softplus(0.3));
    const auto x = oracle::random_volume<double>(2, 1, 4, 4, rng);
    const int n = 2000;
    std::vector<double> sum[2], sum2[2];
    Rng r(6);
    for (int k = 0; k < 2; ++k) {
        cfg.perturbation = k == 0 ? Perturbation::kNaiveReparam : Perturbation::kFlipout;
        sum[k].assign(x.size(), 0.0);
        sum2[k].assign(x.size(), 0.0);
        for (int t = 0; t < n; ++t) {
            const auto y = conv_variational<double>(x, post, {}, cfg, r);
            for (std::size_t i = 0; i < y.size(); ++i) {
                sum[k][i] += y.values()[i];
                sum2[k][i] += y.values()[i] * y.values()[i];
            }
        }
    }
    int outside = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double m[2], se2 = 0;
        for (int k = 0; k < 2; ++k) {
            m[k] = sum[k][i] / n;
            se2 += (sum2[k][i] / n - m[k] * m[k]) / n;
        }
        if (std::abs(m[0] - m[1]) > 3.0 * std::sqrt(se2)) ++outside;
    }
    // 3-sigma bound: allow the occasional excursion among 32 outputs.
    CHECK(outside <= 2);
}

TEST_CASE("flipout batch shares the base perturbation up to sign") {
    auto cfg = layer(1, 1, ConvGeometry::planar(1));
    cfg.perturbation = Perturbation::kFlipout;
    GaussianPosterior<double> p({1, 1, 1, 1, 1}, {0.0}, {inverse_softplus(1.0)});
    std::vector<Volume<double>> batch(6, Volume<double>(1, 1, 1, 1, 1.0));
    Rng r(3);
    const auto out = conv_variational<double>(std::span<const Volume<double>>(batch), p, {}, cfg, r);
    for (const auto& y : out) CHECK(std::abs(y.values()[0]) == doctest::Approx(std::abs(out[0].values()[0])));
}

TEST_CASE("transposed convolution shapes and oracle") {
    std::mt19937_64 rng(4);
    auto cfg = layer(1, 1, ConvGeometry::cubic(1));
    const auto x = oracle::random_volume<double>(1, 3, 3, 3, rng);
    std::vector<double> one{1.0};
    CHECK(conv_transposed_deterministic<double>(x, one, {}, cfg).values() == x.values());

    cfg = layer(2, 3, ConvGeometry::cubic(3, 2, 1, 1));
    const auto x4 = oracle::random_volume<double>(2, 4, 4, 4, rng);
    std::vector<double> w(cfg.weight_count()), b{0.5, -0.25, 1.0};
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& v : w) v = u(rng);
    const auto y = conv_transposed_deterministic<double>(x4, w, b, cfg);
    CHECK(y.shape() == std::array<int, 4>{3, 8, 8, 8});
    const auto want = oracle::conv3d_transposed(x4, w, b, 3, cfg.geometry);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));

    std::vector<double> zeros(cfg.weight_count(), 0.0);
    const auto z = conv_transposed_deterministic<double>(x4, zeros, b, cfg);
    for (int o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < z.spatial_size(); ++i) CHECK(z.channel(o)[i] == b[o]);

    Volume<double> wrong(5, 4, 4, 4);
    CHECK_THROWS_AS(conv_transposed_deterministic<double>(wrong, w, b, cfg), ShapeError);
}

TEST_CASE("layer backward matches finite differences") {
    std::mt19937_64 rng(9);
    for (bool transposed : {false, true}) {
        auto cfg = layer(2, 3, transposed ? ConvGeometry::cubic(3, 2, 1, 1) : ConvGeometry::cubic(3, 2, 1));
        Rng init(1);
        const auto x = oracle::random_volume<double>(2, 3, 4, 5, rng);
        std::vector<ParamRef<double>> params;
        VariationalConv<double> vc;
        TransposedConv<double> tc;
        if (transposed) {
            tc = TransposedConv<double>(cfg, init);
            tc.append_params(params);
        } else {
            vc = VariationalConv<double>(cfg, init, 0.2);
            vc.append_params(params);
        }
        // Loss = sum(y * g) for a fixed random g; the noise stream is replayed per evaluation.
        std::vector<double> g;
        auto run = [&](const Volume<double>& in) {
            Rng r(77);
            auto y = transposed ? tc.forward(in) : vc.forward(in, SamplingMode::kStochastic, r);
            if (g.empty()) {
                std::uniform_real_distribution<double> u(-1, 1);
                for (std::size_t i = 0; i < y.size(); ++i) g.push_back(u(rng));
            }
            double l = 0;
            for (std::size_t i = 0; i < y.size(); ++i) l += y.values()[i] * g[i];
            return std::make_pair(l, y);
        };
        auto [l0, y0] = run(x);
        Volume<double> gy(y0.channels(), y0.depth(), y0.height(), y0.width());
        gy.values() = g;
        const auto dx = transposed ? tc.backward(gy) : vc.backward(gy);
        const double h = 1e-6;
        for (std::size_t i = 0; i < x.size(); i += 7) {
            auto xp = x, xm = x;
            xp.values()[i] += h;
            xm.values()[i] -= h;
            CHECK(dx.values()[i] == doctest::Approx((run(xp).first - run(xm).first) / (2 * h)).epsilon(1e-6));
        }
        for (auto& p : params) {
            for (std::size_t i = 0; i < p.value.size(); i += 5) {
                const double keep = p.value[i];
                p.value[i] = keep + h;
                const double up = run(x).first;
                p.value[i] = keep - h;
                const double dn = run(x).first;
                p.value[i] = keep;
                CHECK(p.grad[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
            }
        }
    }
}

}  // TEST_SUITE
