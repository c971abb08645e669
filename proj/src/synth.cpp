#include "pgcnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pgcnet {

namespace {

struct Layer {
    int disparity = 0;
    bool ellipse = false;
    bool full = false;  // background
    double cx = 0, cy = 0, rx = 0, ry = 0;
    Grid<float> texture;  // indexed by (y, left-image x + max_disparity)

    bool covers(double x, double y) const {
        if (full) return true;
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        return ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
    }
};

float quantize(double v) {
    return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0);
}

Grid<float> dot_texture(int h, int w, double density, Rng& rng) {
    std::bernoulli_distribution on(density);
    Grid<float> t(h, w);
    for (auto& v : t.values()) v = on(rng) ? 1.0f : 0.0f;
    return t;
}

// Smooth band-limited texture: coarse random lattice, bilinear interpolation.
Grid<float> smooth_texture(int h, int w, int step, Rng& rng) {
    const int gh = h / step + 2, gw = w / step + 2;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Grid<double> lattice(gh, gw);
    for (auto& v : lattice.values()) v = u(rng);
    Grid<float> t(h, w);
    for (int y = 0; y < h; ++y) {
        const double fy = static_cast<double>(y) / step;
        const int y0 = static_cast<int>(fy);
        const double ay = fy - y0;
        for (int x = 0; x < w; ++x) {
            const double fx = static_cast<double>(x) / step;
            const int x0 = static_cast<int>(fx);
            const double ax = fx - x0;
            const double top = lattice(y0, x0) * (1 - ax) + lattice(y0, x0 + 1) * ax;
            const double bot = lattice(y0 + 1, x0) * (1 - ax) + lattice(y0 + 1, x0 + 1) * ax;
            t(y, x) = quantize(top * (1 - ay) + bot * ay);
        }
    }
    return t;
}

}  // namespace

void SynthParams::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("synth params: " + m); };
    if (width < 1 || height < 1) fail("width and height must be positive");
    if (min_disparity < 0 || max_disparity <= min_disparity) fail("need 0 <= min_disparity < max_disparity");
    if (max_disparity >= width) fail("max_disparity must be smaller than width");
    if (!(dot_density > 0.0 && dot_density <= 1.0)) fail("dot_density must lie in (0, 1]");
    if (min_shapes < 0 || max_shapes < min_shapes) fail("need 0 <= min_shapes <= max_shapes");
    if (max_shapes >= max_disparity - min_disparity) fail("too many shapes for distinct disparities");
    if (max_shapes > 0 && !rectangles && !ellipses) fail("enable rectangles or ellipses");
    if (noise_stddev < 0 || shift_noise_stddev < 0) fail("noise stddev must be >= 0");
    if (texture_swap_scale < 1) fail("texture_swap_scale must be >= 1");
}

StereoSample synth_stereogram(const SynthParams& p, Rng& rng) {
    p.validate();
    const int w = p.width, h = p.height;
    const int tex_w = w + p.max_disparity;

    std::uniform_int_distribution<int> shape_count(p.min_shapes, p.max_shapes);
    const int n_shapes = shape_count(rng);
    std::vector<int> disparities(p.max_disparity - p.min_disparity);
    std::iota(disparities.begin(), disparities.end(), p.min_disparity);
    std::shuffle(disparities.begin(), disparities.end(), rng);
    // The background takes the smallest drawn disparity so no shape hides behind it.
    std::sort(disparities.begin(), disparities.begin() + n_shapes + 1);

    const bool swap = p.domain_shift == DomainShift::kTextureSwap;
    auto make_texture = [&]() {
        return swap ? smooth_texture(h, tex_w, p.texture_swap_scale, rng) : dot_texture(h, tex_w, p.dot_density, rng);
    };

    std::vector<Layer> layers;
    Layer bg;
    bg.full = true;
    bg.disparity = disparities[0];
    bg.texture = make_texture();
    layers.push_back(std::move(bg));
    std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h);
    std::uniform_real_distribution<double> urx(w / 12.0, w / 4.0), ury(h / 8.0, h / 3.0);
    std::bernoulli_distribution pick_ellipse(0.5);
    for (int s = 0; s < n_shapes; ++s) {
        Layer l;
        l.disparity = disparities[s + 1];
        l.ellipse = p.rectangles && p.ellipses ? pick_ellipse(rng) : p.ellipses;
        l.cx = ux(rng);
        l.cy = uy(rng);
        l.rx = urx(rng);
        l.ry = ury(rng);
        l.texture = make_texture();
        layers.push_back(std::move(l));
    }
    // Nearer (larger disparity) layers occlude farther ones.
    std::stable_sort(layers.begin(), layers.end(),
                     [](const Layer& a, const Layer& b) { return a.disparity > b.disparity; });

    // Visible layer at left coordinate (x, y); shape footprints are defined in left coordinates.
    auto visible_left = [&](int x, int y) -> int {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].covers(x + 0.5, y + 0.5)) return static_cast<int>(i);
        }
        return static_cast<int>(layers.size()) - 1;
    };
    // Visible layer at right coordinate xr: layer i appears at xr when its left footprint
    // contains xr + d_i.
    auto visible_right = [&](int xr, int y) -> int {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].covers(xr + layers[i].disparity + 0.5, y + 0.5)) return static_cast<int>(i);
        }
        return static_cast<int>(layers.size()) - 1;
    };

    StereoSample out;
    out.left = Volume<float>(1, 1, h, w);
    out.right = Volume<float>(1, 1, h, w);
    out.gt_disparity = Grid<float>(h, w);
    out.valid_mask = Mask(h, w, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int li = visible_left(x, y);
            const Layer& l = layers[li];
            out.left(0, 0, y, x) = l.texture(y, x);
            out.gt_disparity(y, x) = static_cast<float>(l.disparity);
            const int xr = x - l.disparity;
            out.valid_mask(y, x) = (xr >= 0 && visible_right(xr, y) == li) ? 1 : 0;

            const int ri = visible_right(x, y);
            out.right(0, 0, y, x) = layers[ri].texture(y, x + layers[ri].disparity);
        }
    }

    auto add_noise = [&](double sd) {
        if (sd <= 0) return;
        std::normal_distribution<double> n(0.0, sd);
        for (auto* img : {&out.left, &out.right}) {
            for (auto& v : img->values()) v = quantize(v + n(rng));
        }
    };
    add_noise(p.noise_stddev);
    switch (p.domain_shift) {
        case DomainShift::kInvertContrast:
            for (auto* img : {&out.left, &out.right}) {
                for (auto& v : img->values()) v = quantize(1.0 - v);
            }
            break;
        case DomainShift::kAddNoise:
            add_noise(p.shift_noise_stddev);
            break;
        case DomainShift::kNone:
        case DomainShift::kTextureSwap:
            break;
    }
    return out;
}

}  // namespace pgcnet
