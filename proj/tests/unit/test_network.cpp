#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pgcnet/network.hpp"
#include "pgcnet/synth.hpp"

using namespace pgcnet;

namespace {

NetworkConfig desk_config() {
    NetworkConfig c;
    c.max_disparity = 16;
    return c;
}

Volume<double> volume_from(int d, std::initializer_list<double> costs) {
    Volume<double> v(1, d, 1, 1);
    int k = 0;
    for (double c : costs) v(0, k++, 0, 0) = c;
    return v;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("soft_argmin examples") {
    Volume<double> flat(1, 4, 3, 2, 0.7);
    const auto flat_d = soft_argmin(flat);
    for (double d : flat_d.values()) CHECK(d == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(std::abs(soft_argmin(volume_from(4, {0, -1000, 0, 0}))[0] - 1.0) < 1e-6);
    CHECK(std::abs(soft_argmin(volume_from(4, {10, -10, 10, 10}))[0] - 1.0) < 1e-3);
    CHECK(soft_argmin(volume_from(4, {10, -10, 10, 10}))[0] ==
          doctest::Approx(oracle::soft_argmin_pixel({10, -10, 10, 10})).epsilon(1e-12));
}

TEST_CASE("soft_argmin backward matches finite differences") {
    std::mt19937_64 rng(1);
    auto cost = oracle::random_volume<double>(1, 5, 2, 3, rng);
    Grid<double> g(2, 3);
    for (auto& v : g.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto grad = soft_argmin_backward(cost, g);
    auto f = [&](const Volume<double>& c) {
        const auto d = soft_argmin(c);
        double s = 0;
        for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * g[i];
        return s;
    };
    for (std::size_t i = 0; i < cost.size(); ++i) {
        auto p = cost, m = cost;
        p.values()[i] += 1e-6;
        m.values()[i] -= 1e-6;
        CHECK(grad.values()[i] == doctest::Approx((f(p) - f(m)) / 2e-6).epsilon(1e-6));
    }
}

TEST_CASE("aleatoric_map examples") {
    Volume<double> c(1, 3, 2, 2, -0.4);
    const auto flat_s = aleatoric_map(c);
    for (double s : flat_s.values()) CHECK(s == doctest::Approx(-0.4));
    auto two = volume_from(2, {0.0, std::log(4.0)});
    CHECK(aleatoric_map(two)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(aleatoric_map(volume_from(1, {2.5}))[0] == 2.5);
}

TEST_CASE("build_cost_volume layout") {
    std::mt19937_64 rng(3);
    const auto lf = oracle::random_volume<float>(3, 1, 4, 6, rng);
    const auto rf = oracle::random_volume<float>(3, 1, 4, 6, rng);
    const auto cv = build_cost_volume(lf, rf, 4);
    CHECK(cv.shape() == std::array<int, 4>{6, 4, 4, 6});
    for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 4; ++d)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 6; ++x) {
                    CHECK(cv(c, d, y, x) == lf(c, 0, y, x));
                    CHECK(cv(3 + c, d, y, x) == (x < d ? 0.0f : rf(c, 0, y, x - d)));
                }
    const auto same = build_cost_volume(lf, lf, 2);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 6; ++x) CHECK(same(c, 0, y, x) == same(3 + c, 0, y, x));
    CHECK_THROWS_AS(build_cost_volume(lf, rf, 7), ShapeError);
}

TEST_CASE("feature extraction shapes, sharing and stochasticity") {
    Network<float> net(desk_config(), 1);
    std::mt19937_64 rng(2);
    const auto img = oracle::random_volume<float>(1, 1, 32, 64, rng);
    Volume<float> stacked(1, 2, 32, 64);
    std::copy(img.values().begin(), img.values().end(), stacked.values().begin());
    std::copy(img.values().begin(), img.values().end(), stacked.values().begin() + img.size());
    Rng r(5);
    const auto f = net.extract_pair_features(stacked, SamplingMode::kMeanOnly, r);
    CHECK(f.shape() == std::array<int, 4>{16, 2, 16, 32});
    const std::size_t plane = static_cast<std::size_t>(16) * 32;
    // The two branches land in different GEMM column panels, so agreement is to rounding.
    for (int c = 0; c < 16; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            CHECK(f.channel(c)[i] == doctest::Approx(f.channel(c)[plane + i]).epsilon(1e-5));
    CHECK(net.extract_features(img, SamplingMode::kMeanOnly, r).values() ==
          net.extract_features(img, SamplingMode::kMeanOnly, r).values());

    Rng a(1), b(2);
    const auto fa = net.extract_features(img, SamplingMode::kStochastic, a);
    const auto fb = net.extract_features(img, SamplingMode::kStochastic, b);
    CHECK(fa.shape() == std::array<int, 4>{16, 1, 16, 32});
    CHECK(fa.values() != fb.values());

    const auto odd = oracle::random_volume<float>(1, 1, 31, 64, rng);
    try {
        net.extract_features(odd, SamplingMode::kMeanOnly, r);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("pad by") != std::string::npos);
    }
}

TEST_CASE("mutating feature weights changes both branches identically") {
    Network<float> net(desk_config(), 1);
    std::mt19937_64 rng(4);
    const auto img = oracle::random_volume<float>(1, 1, 32, 64, rng);
    Volume<float> stacked(1, 2, 32, 64);
    std::copy(img.values().begin(), img.values().end(), stacked.values().begin());
    std::copy(img.values().begin(), img.values().end(), stacked.values().begin() + img.size());
    Rng r(1);
    const auto before = net.extract_pair_features(stacked, SamplingMode::kMeanOnly, r);
    net.variational_layers().front()->posterior().mean[0] += 0.5f;
    const auto after = net.extract_pair_features(stacked, SamplingMode::kMeanOnly, r);
    CHECK(before.values() != after.values());
    const std::size_t plane = before.spatial_size() / 2;
    for (int c = 0; c < after.channels(); ++c)
        for (std::size_t i = 0; i < plane; ++i)
            CHECK(after.channel(c)[i] == doctest::Approx(after.channel(c)[plane + i]).epsilon(1e-5));
}

TEST_CASE("regularize_volume shapes, determinism and zero weights") {
    Network<float> net(desk_config(), 2);
    std::mt19937_64 rng(6);
    const auto cv = oracle::random_volume<float>(32, 8, 16, 32, rng);
    Rng r(1);
    const auto a = net.regularize_volume(cv, SamplingMode::kMeanOnly, r);
    CHECK(a.cost.shape() == std::array<int, 4>{1, 16, 32, 64});
    CHECK(a.log_variance.shape() == std::array<int, 4>{1, 16, 32, 64});
    const auto b = net.regularize_volume(cv, SamplingMode::kMeanOnly, r);
    CHECK(a.cost.values() == b.cost.values());
    CHECK(a.log_variance.values() == b.log_variance.values());

    for (auto& p : net.parameters()) std::fill(p.value.begin(), p.value.end(), 0.0f);
    net.set_posterior_stddev(0.0);
    const auto z = net.regularize_volume(cv, SamplingMode::kStochastic, r);
    for (float v : z.cost.values()) CHECK(v == 0.0f);
    for (float v : z.log_variance.values()) CHECK(v == 0.0f);
}

TEST_CASE("forward contracts") {
    Network<float> net(desk_config(), 3);
    Rng gen(9);
    const auto s = synth_stereogram(SynthParams{}, gen);
    Rng r(1);
    const auto m1 = net.forward(s, SamplingMode::kMeanOnly, r);
    const auto m2 = net.forward(s, SamplingMode::kMeanOnly, r);
    CHECK(m1.disparity == m2.disparity);
    CHECK(m1.log_variance == m2.log_variance);
    CHECK(m1.disparity.height() == 32);
    CHECK(m1.disparity.width() == 64);
    CHECK(m1.log_variance.height() == 32);

    // Per-pixel variance across stochastic passes at the initial stddev: nonzero, below 1 px on average.
    const int passes = 8;
    std::vector<double> s1(s.gt_disparity.size(), 0.0), s2(s.gt_disparity.size(), 0.0);
    for (int t = 0; t < passes; ++t) {
        const auto o = net.forward(s, SamplingMode::kStochastic, r);
        for (std::size_t i = 0; i < s1.size(); ++i) {
            s1[i] += o.disparity[i];
            s2[i] += static_cast<double>(o.disparity[i]) * o.disparity[i];
        }
    }
    double mean_var = 0;
    for (std::size_t i = 0; i < s1.size(); ++i) mean_var += std::max(0.0, s2[i] / passes - std::pow(s1[i] / passes, 2));
    mean_var /= static_cast<double>(s1.size());
    CHECK(mean_var > 0.0);
    CHECK(mean_var < 1.0);
}

TEST_CASE("log-variance floor clamps s and blocks its gradient") {
    auto run = [](std::optional<double> floor, float& s_out, double& grad_norm) {
        auto cfg = gradcheck::tiny_config();
        cfg.log_variance_floor = floor;
        Network<double> net(cfg, 5);
        for (auto& p : net.parameters()) std::fill(p.value.begin(), p.value.end(), 0.0);
        net.set_posterior_stddev(1e-30);
        const auto sample = fixtures::random_sample(8, 8, 3.0, 13);
        Rng r(1);
        const auto out = net.forward(sample, SamplingMode::kMeanOnly, r);
        s_out = static_cast<float>(out.log_variance(3, 3));
        net.zero_grad();
        net.backward(Grid<double>(8, 8, 0.0), Grid<double>(8, 8, 1.0));
        grad_norm = 0;
        for (const auto& p : net.parameters())
            for (double g : p.grad) grad_norm += std::abs(g);
    };
    float s = 0;
    double g = 0;
    run(std::nullopt, s, g);  // zero weights: mean log-variance is exactly 0
    CHECK(s == 0.0f);
    CHECK(g > 0.0);
    run(-1.0, s, g);  // floor below the value: no effect
    CHECK(s == 0.0f);
    CHECK(g > 0.0);
    run(0.5, s, g);  // floor above the value: clamped, no gradient
    CHECK(s == 0.5f);
    CHECK(g == 0.0);
}

TEST_CASE("deterministic network reports no KL and no raw scales") {
    auto cfg = desk_config();
    cfg.probabilistic = false;
    Network<float> net(cfg, 1);
    CHECK(net.kl_total() == 0.0);
    for (const auto& p : net.parameters()) CHECK_FALSE(p.is_raw_scale);
}

TEST_CASE("network config validation") {
    auto cfg = desk_config();
    cfg.feature_stride = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = desk_config();
    cfg.max_disparity = 15;
    CHECK_THROWS_AS(Network<float>(cfg, 1), ConfigError);
}

TEST_CASE("full-model gradient check in double precision") {
    Network<double> net(gradcheck::tiny_config(), 4);
    net.set_posterior_stddev(0.05);
    CHECK(net.parameter_count() <= 5000);
    const auto sample = fixtures::random_sample(8, 8, 3.0, 12);
    const auto res = gradcheck::check(net, sample, 1e-3, 77);
    INFO("worst relative error " << res.worst << ", passed " << res.passed << "/" << res.checked);
    CHECK(res.fraction() >= 0.99);
}

TEST_CASE("flipout network gradient check") {
    auto cfg = gradcheck::tiny_config();
    cfg.perturbation = Perturbation::kFlipout;
    Network<double> net(cfg, 5);
    net.set_posterior_stddev(0.05);
    const auto sample = fixtures::random_sample(8, 8, 3.0, 13);
    const auto res = gradcheck::check(net, sample, 1e-2, 78);
    INFO("worst relative error " << res.worst);
    CHECK(res.fraction() >= 0.99);
}

}  // TEST_SUITE
