#pragma once

#include "pgcnet/network.hpp"
#include "pgcnet/random.hpp"

namespace pgcnet {

enum class DomainShift { kNone, kInvertContrast, kAddNoise, kTextureSwap };

/// Random-dot stereogram generator settings. Disparities are integers in
/// [min_disparity, max_disparity).
struct SynthParams {
    int width = 64;
    int height = 32;
    int min_disparity = 0;
    int max_disparity = 16;
    double dot_density = 0.25;
    int min_shapes = 1;
    int max_shapes = 4;
    bool rectangles = true;
    bool ellipses = true;
    double noise_stddev = 0.0;
    DomainShift domain_shift = DomainShift::kNone;
    /// Stddev of the extra noise added by DomainShift::kAddNoise.
    double shift_noise_stddev = 0.2;
    /// Lattice spacing (px) of the smooth texture used by DomainShift::kTextureSwap.
    int texture_swap_scale = 8;

    void validate() const;
    friend bool operator==(const SynthParams&, const SynthParams&) = default;
};

/// Layered random-dot pair: background plus shapes at distinct integer disparities, the right
/// view rendered from the same per-layer textures. Left pixels not visible in the right view
/// (left border, occlusions) are invalid. Intensities are quantized to 8 bits.
StereoSample synth_stereogram(const SynthParams& params, Rng& rng);

}  // namespace pgcnet
