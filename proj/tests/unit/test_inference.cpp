#include <cmath>

#include "doctest.h"
#include "pgcnet/inference.hpp"
#include "pgcnet/synth.hpp"

using namespace pgcnet;

namespace {

NetworkConfig desk_config() {
    NetworkConfig c;
    c.max_disparity = 16;
    return c;
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("aggregation worked example") {
    std::vector<Grid<double>> d{Grid<double>(1, 1, 4.0), Grid<double>(1, 1, 6.0)};
    std::vector<Grid<double>> s{Grid<double>(1, 1, std::log(1.0)), Grid<double>(1, 1, std::log(3.0))};
    const auto u = aggregate_passes<double>(d, s);
    CHECK(u.mean_disparity[0] == doctest::Approx(5.0));
    CHECK(u.epistemic_var[0] == doctest::Approx(1.0));
    CHECK(u.aleatoric_var[0] == doctest::Approx(2.0));
    CHECK(u.combined_var[0] == doctest::Approx(3.0));
    CHECK(u.samples == 2);
}

TEST_CASE("aggregation against brute force") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int trial = 0; trial < 10; ++trial) {
        const int T = 1 + static_cast<int>(rng() % 7);
        std::vector<Grid<float>> d(T, Grid<float>(2, 3)), s(T, Grid<float>(2, 3));
        for (int t = 0; t < T; ++t)
            for (std::size_t i = 0; i < 6; ++i) {
                d[t][i] = static_cast<float>(u(rng) + 5);
                s[t][i] = static_cast<float>(u(rng));
            }
        const auto agg = aggregate_passes<float>(d, s);
        for (std::size_t i = 0; i < 6; ++i) {
            long double m = 0, a = 0;
            for (int t = 0; t < T; ++t) {
                m += d[t][i];
                a += std::exp(static_cast<long double>(s[t][i]));
            }
            m /= T;
            long double v = 0;
            for (int t = 0; t < T; ++t) v += (d[t][i] - m) * (d[t][i] - m);
            v /= T;
            CHECK(std::abs(agg.mean_disparity[i] - static_cast<double>(m)) < 1e-9);
            CHECK(std::abs(agg.epistemic_var[i] - static_cast<double>(v)) < 1e-9);
            CHECK(std::abs(agg.aleatoric_var[i] - static_cast<double>(a / T)) < 1e-9);
            CHECK(agg.combined_var[i] == agg.epistemic_var[i] + agg.aleatoric_var[i]);
        }
    }
}

TEST_CASE("stddev maps") {
    UncertainDisparity u;
    u.aleatoric_var = Grid<double>(1, 1, 4.0);
    u.epistemic_var = Grid<double>(1, 1, 0.0);
    u.combined_var = Grid<double>(1, 1, 9.0);
    const auto sd = uncertainty_stddev_maps(u);
    CHECK(sd.aleatoric[0] == 2.0);
    CHECK(sd.epistemic[0] == 0.0);
    CHECK(sd.combined[0] == 3.0);
    u.aleatoric_var[0] = 4.41;
    CHECK(uncertainty_stddev_maps(u).aleatoric[0] == doctest::Approx(2.10));
}

TEST_CASE("mc_predict contracts") {
    Network<float> net(desk_config(), 1);
    Rng gen(2);
    const auto s = synth_stereogram(SynthParams{}, gen);
    CHECK_THROWS_AS(mc_predict(net, s, 0, 1), ParameterError);

    const auto one = mc_predict(net, s, 1, 5);
    for (double v : one.epistemic_var.values()) CHECK(v == 0.0);
    CHECK(one.combined_var == one.aleatoric_var);

    const auto a = mc_predict(net, s, 3, 9), b = mc_predict(net, s, 3, 9);
    CHECK(a.mean_disparity == b.mean_disparity);
    CHECK(a.combined_var == b.combined_var);

    net.set_posterior_stddev(0.0);
    const auto z = mc_predict(net, s, 50, 3);
    for (double v : z.epistemic_var.values()) CHECK(v <= 1e-10);
}

TEST_CASE("convergence analysis") {
    auto cfg = desk_config();
    cfg.probabilistic = false;
    Network<float> det(cfg, 1);
    Rng gen(4);
    std::vector<StereoSample> samples{synth_stereogram(SynthParams{}, gen)};
    const std::vector<int> ts{1, 4};
    for (const auto& row : convergence_analysis<float>(det, samples, ts, 3, 1)) CHECK(row.mean_stddev == 0.0);
    CHECK_THROWS_AS(convergence_analysis<float>(det, samples, std::span<const int>(), 3, 1), ParameterError);

    Network<float> net(desk_config(), 2);
    const std::vector<int> t3{1, 10, 50};
    const auto rows = convergence_analysis<float>(net, samples, t3, 4, 11);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].mean_stddev <= rows[i - 1].mean_stddev + 2 * (rows[i].standard_error + rows[i - 1].standard_error));
    }
}

TEST_CASE("two independent T=50 means agree better than single passes") {
    Network<float> net(desk_config(), 6);
    Rng gen(5);
    const auto s = synth_stereogram(SynthParams{}, gen);
    const auto a = mc_predict(net, s, 50, 1), b = mc_predict(net, s, 50, 2);
    const auto p = mc_predict(net, s, 1, 3), q = mc_predict(net, s, 1, 4);
    double mean_gap = 0, single_gap = 0;
    for (std::size_t i = 0; i < a.mean_disparity.size(); ++i) {
        mean_gap += std::abs(a.mean_disparity[i] - b.mean_disparity[i]);
        single_gap += std::abs(p.mean_disparity[i] - q.mean_disparity[i]);
    }
    CHECK(mean_gap / single_gap < 0.5);
}

}  // TEST_SUITE
