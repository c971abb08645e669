#pragma once

#include <random>
#include <string>

#include "pgcnet/network.hpp"

namespace fixtures {

// Random pair with a random ground truth in [0, max_disp) and a full mask.
inline pgcnet::StereoSample random_sample(int h, int w, double max_disp, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    pgcnet::StereoSample s;
    s.left = pgcnet::Volume<float>(1, 1, h, w);
    s.right = pgcnet::Volume<float>(1, 1, h, w);
    for (auto& v : s.left.values()) v = static_cast<float>(u(rng));
    for (auto& v : s.right.values()) v = static_cast<float>(u(rng));
    s.gt_disparity = pgcnet::Grid<float>(h, w);
    for (auto& v : s.gt_disparity.values()) v = static_cast<float>(u(rng) * max_disp);
    s.valid_mask = pgcnet::Mask(h, w, 1);
    s.name = "random_" + std::to_string(seed);
    return s;
}

}  // namespace fixtures
