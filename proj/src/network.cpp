#include "pgcnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pgcnet {

namespace {

template <typename T>
void relu_inplace(Volume<T>& v) {
    for (auto& x : v.values()) x = x > T(0) ? x : T(0);
}

// grad *= (activation > 0)
template <typename T>
void relu_mask(Volume<T>& grad, const Volume<T>& activation) {
    assert(grad.size() == activation.size());
    T* g = grad.data();
    const T* a = activation.data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(a[i] > T(0))) g[i] = T(0);
    }
}

template <typename T>
void add_inplace(Volume<T>& dst, const Volume<T>& src) {
    assert(dst.same_shape(src));
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// Selects one depth slice of a C x D x H x W volume as C x 1 x H x W.
template <typename T>
Volume<T> depth_slice(const Volume<T>& v, int d) {
    Volume<T> out(v.channels(), 1, v.height(), v.width());
    const std::size_t plane = static_cast<std::size_t>(v.height()) * v.width();
    for (int c = 0; c < v.channels(); ++c) {
        std::copy_n(v.channel(c) + d * plane, plane, out.channel(c));
    }
    return out;
}

LayerConfig planar_layer(std::string name, int in, int out, int k, int stride, int pad,
                         Perturbation p) {
    LayerConfig cfg;
    cfg.name = std::move(name);
    cfg.in_channels = in;
    cfg.out_channels = out;
    cfg.geometry = ConvGeometry::planar(k, stride, pad);
    cfg.perturbation = p;
    return cfg;
}

LayerConfig cubic_layer(std::string name, int in, int out, int k, int stride, int pad,
                        int output_pad, Perturbation p) {
    LayerConfig cfg;
    cfg.name = std::move(name);
    cfg.in_channels = in;
    cfg.out_channels = out;
    cfg.geometry = ConvGeometry::cubic(k, stride, pad, output_pad);
    cfg.perturbation = p;
    return cfg;
}

}  // namespace

void StereoSample::validate() const {
    if (left.channels() != right.channels() || left.height() != right.height() ||
        left.width() != right.width() || left.depth() != 1 || right.depth() != 1) {
        throw ShapeError("stereo sample '" + name + "': left " + left.shape_string() +
                         " and right " + right.shape_string() + " differ");
    }
    if (!gt_disparity.empty() &&
        (gt_disparity.height() != left.height() || gt_disparity.width() != left.width())) {
        throw ShapeError("stereo sample '" + name + "': ground truth size differs from images");
    }
    if (!valid_mask.empty() &&
        (valid_mask.height() != left.height() || valid_mask.width() != left.width())) {
        throw ShapeError("stereo sample '" + name + "': mask size differs from images");
    }
}

void NetworkConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("network config: " + m); };
    if (in_channels < 1) fail("in_channels must be >= 1");
    if (feature_stride < 1) fail("feature_stride must be >= 1");
    if (max_disparity < 2) fail("max_disparity must be >= 2");
    if (max_disparity % feature_stride != 0) fail("max_disparity must be a multiple of feature_stride");
    if (feature_channels < 1 || volume_channels < 1) fail("channel widths must be >= 1");
    if (residual_blocks < 0 || encoder_depth < 0) fail("block counts must be >= 0");
    if (disparity_levels() % (1 << encoder_depth) != 0) {
        fail("max_disparity / feature_stride must be divisible by 2^encoder_depth");
    }
    if (!(initial_stddev > 0)) fail("initial_stddev must be > 0");
    if (!(prior.stddev > 0)) fail("prior stddev must be > 0");
    if (log_variance_floor && !std::isfinite(*log_variance_floor)) fail("log_variance_floor must be finite");
}

// ---------------------------------------------------------------------------------------------

template <typename T>
Volume<T> standardize_image(const Volume<float>& image) {
    Volume<T> out(image.channels(), image.depth(), image.height(), image.width());
    double sum = 0.0, sq = 0.0;
    for (float v : image.values()) sum += v;
    const double n = static_cast<double>(image.size());
    const double mean = n > 0 ? sum / n : 0.0;
    for (float v : image.values()) sq += (v - mean) * (v - mean);
    const double sd = n > 0 ? std::sqrt(sq / n) : 0.0;
    const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
        out.values()[i] = static_cast<T>((image.values()[i] - mean) * inv);
    }
    return out;
}

template <typename T>
Volume<T> build_cost_volume(const Volume<T>& left_features, const Volume<T>& right_features,
                            int levels) {
    if (!left_features.same_shape(right_features) || left_features.depth() != 1) {
        throw ShapeError("cost volume: left/right feature maps must share a C x 1 x H x W shape");
    }
    const int c = left_features.channels(), h = left_features.height(), w = left_features.width();
    if (levels < 1) throw ParameterError("cost volume: disparity levels must be >= 1");
    if (levels > w) {
        throw ShapeError("cost volume: " + std::to_string(levels) +
                         " disparity levels exceed feature width " + std::to_string(w));
    }
    Volume<T> cv(2 * c, levels, h, w);
    for (int ch = 0; ch < c; ++ch) {
        for (int d = 0; d < levels; ++d) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    cv(ch, d, y, x) = left_features(ch, 0, y, x);
                    cv(c + ch, d, y, x) = x >= d ? right_features(ch, 0, y, x - d) : T(0);
                }
            }
        }
    }
    return cv;
}

template <typename T>
Grid<T> soft_argmin(const Volume<T>& cost) {
    const int levels = cost.depth(), h = cost.height(), w = cost.width();
    Grid<T> out(h, w);
    std::vector<double> p(levels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double lo = std::numeric_limits<double>::infinity();
            for (int d = 0; d < levels; ++d) lo = std::min(lo, static_cast<double>(cost(0, d, y, x)));
            double z = 0.0, e = 0.0;
            for (int d = 0; d < levels; ++d) {
                p[d] = std::exp(lo - static_cast<double>(cost(0, d, y, x)));
                z += p[d];
                e += d * p[d];
            }
            out(y, x) = static_cast<T>(e / z);
        }
    }
    return out;
}

template <typename T>
Volume<T> soft_argmin_backward(const Volume<T>& cost, const Grid<T>& grad_disparity) {
    const int levels = cost.depth(), h = cost.height(), w = cost.width();
    Volume<T> grad(1, levels, h, w);
    std::vector<double> p(levels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double lo = std::numeric_limits<double>::infinity();
            for (int d = 0; d < levels; ++d) lo = std::min(lo, static_cast<double>(cost(0, d, y, x)));
            double z = 0.0, e = 0.0;
            for (int d = 0; d < levels; ++d) {
                p[d] = std::exp(lo - static_cast<double>(cost(0, d, y, x)));
                z += p[d];
            }
            for (int d = 0; d < levels; ++d) {
                p[d] /= z;
                e += d * p[d];
            }
            const double g = grad_disparity(y, x);
            // d(d_hat)/d(cost_k) = -p_k (k - d_hat)
            for (int d = 0; d < levels; ++d) grad(0, d, y, x) = static_cast<T>(-g * p[d] * (d - e));
        }
    }
    return grad;
}

template <typename T>
Grid<T> aleatoric_map(const Volume<T>& log_variance) {
    const int levels = log_variance.depth(), h = log_variance.height(), w = log_variance.width();
    Grid<T> out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int d = 0; d < levels; ++d) s += log_variance(0, d, y, x);
            out(y, x) = static_cast<T>(s / levels);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------

template <typename T>
Network<T>::Network(const NetworkConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed);
    const auto p = cfg_.perturbation;
    const double s0 = cfg_.initial_stddev;
    const int fc = cfg_.feature_channels;
    const int fs = cfg_.feature_stride;

    stem_ = VariationalConv<T>(planar_layer("feature.stem", cfg_.in_channels, fc, 2 * fs + 1, fs, fs, p),
                               rng, s0);
    for (int b = 0; b < cfg_.residual_blocks; ++b) {
        const std::string base = "feature.block" + std::to_string(b);
        blocks_.push_back({VariationalConv<T>(planar_layer(base + ".a", fc, fc, 3, 1, 1, p), rng, s0),
                           VariationalConv<T>(planar_layer(base + ".b", fc, fc, 3, 1, 1, p), rng, s0)});
    }
    feature_out_ = VariationalConv<T>(planar_layer("feature.out", fc, fc, 3, 1, 1, p), rng, s0);

    const int vc = cfg_.volume_channels;
    volume_in_a_ = VariationalConv<T>(cubic_layer("volume.in_a", 2 * fc, vc, 3, 1, 1, 0, p), rng, s0);
    volume_in_b_ = VariationalConv<T>(cubic_layer("volume.in_b", vc, vc, 3, 1, 1, 0, p), rng, s0);
    for (int l = 1; l <= cfg_.encoder_depth; ++l) {
        const std::string base = "volume.down" + std::to_string(l);
        down_.emplace_back(cubic_layer(base, level_channels(l - 1), level_channels(l), 3, 2, 1, 0, p),
                           rng, s0);
        down_conv_.emplace_back(
            cubic_layer(base + ".conv", level_channels(l), level_channels(l), 3, 1, 1, 0, p), rng, s0);
    }
    for (int l = 1; l <= cfg_.encoder_depth; ++l) {
        up_.emplace_back(cubic_layer("volume.up" + std::to_string(l), level_channels(l),
                                     level_channels(l - 1), 3, 2, 1, 1, p),
                         rng);
    }
    // Full-resolution head: stride s needs kernel 2s-1, pad s-1, output pad s-1 (stride 1: 3/1/0).
    const int hk = fs == 1 ? 3 : 2 * fs - 1;
    const int hp = fs == 1 ? 1 : fs - 1;
    const int hop = fs == 1 ? 0 : fs - 1;
    head_ = TransposedConv<T>(cubic_layer("volume.head", vc, 2, hk, fs, hp, hop, p), rng);

    if (!cfg_.probabilistic) set_posterior_stddev(0.0);
}

template <typename T>
int Network<T>::level_channels(int level) const {
    return level == 0 ? cfg_.volume_channels : 2 * cfg_.volume_channels;
}

template <typename T>
void Network<T>::check_image_dims(int h, int w) const {
    const int m = cfg_.size_multiple();
    if (h % m != 0 || w % m != 0) {
        const int ph = (m - h % m) % m, pw = (m - w % m) % m;
        throw ShapeError("image " + std::to_string(w) + "x" + std::to_string(h) +
                         " is not a multiple of " + std::to_string(m) + "; pad by " +
                         std::to_string(pw) + " columns and " + std::to_string(ph) + " rows");
    }
    if (w / cfg_.feature_stride < cfg_.disparity_levels()) {
        throw ShapeError("image width " + std::to_string(w) + " is smaller than max_disparity " +
                         std::to_string(cfg_.max_disparity));
    }
}

template <typename T>
Volume<T> Network<T>::extract_features(const Volume<T>& image, SamplingMode mode, Rng& rng) {
    const int fs = cfg_.feature_stride;
    if (image.height() % fs != 0 || image.width() % fs != 0) {
        const int ph = (fs - image.height() % fs) % fs, pw = (fs - image.width() % fs) % fs;
        throw ShapeError("image " + std::to_string(image.width()) + "x" +
                         std::to_string(image.height()) + " not divisible by feature stride " +
                         std::to_string(fs) + "; pad by " + std::to_string(pw) + " columns and " +
                         std::to_string(ph) + " rows");
    }
    if (!cfg_.probabilistic) mode = SamplingMode::kMeanOnly;
    feature_relu_.clear();
    Volume<T> a = stem_.forward(image, mode, rng);
    relu_inplace(a);
    feature_relu_.push_back(a);
    for (auto& block : blocks_) {
        Volume<T> h = block.first.forward(a, mode, rng);
        relu_inplace(h);
        feature_relu_.push_back(h);
        Volume<T> z = block.second.forward(h, mode, rng);
        add_inplace(z, a);
        relu_inplace(z);
        feature_relu_.push_back(z);
        a = std::move(z);
    }
    feature_channels_cached_ = cfg_.feature_channels;
    return feature_out_.forward(a, mode, rng);
}

template <typename T>
Volume<T> Network<T>::extract_pair_features(const Volume<T>& stacked, SamplingMode mode, Rng& rng) {
    if (stacked.depth() != 2) throw ShapeError("stacked pair must have depth 2 (left, right)");
    return extract_features(stacked, mode, rng);
}

template <typename T>
DualVolume<T> Network<T>::regularize_volume(const Volume<T>& cost_volume, SamplingMode mode, Rng& rng) {
    if (!cfg_.probabilistic) mode = SamplingMode::kMeanOnly;
    const int div = 1 << cfg_.encoder_depth;
    if (cost_volume.depth() % div || cost_volume.height() % div || cost_volume.width() % div) {
        throw ShapeError("cost volume " + cost_volume.shape_string() +
                         " extents must be divisible by 2^encoder_depth = " + std::to_string(div));
    }
    volume_relu_.clear();
    up_relu_.clear();
    Volume<T> v = volume_in_a_.forward(cost_volume, mode, rng);
    relu_inplace(v);
    volume_relu_.push_back(v);
    Volume<T> x = volume_in_b_.forward(v, mode, rng);
    relu_inplace(x);
    volume_relu_.push_back(x);
    for (int l = 0; l < cfg_.encoder_depth; ++l) {
        Volume<T> e = down_[l].forward(x, mode, rng);
        relu_inplace(e);
        volume_relu_.push_back(e);
        x = down_conv_[l].forward(e, mode, rng);
        relu_inplace(x);
        volume_relu_.push_back(x);
    }
    up_relu_.resize(cfg_.encoder_depth);
    for (int l = cfg_.encoder_depth; l >= 1; --l) {
        Volume<T> u = up_[l - 1].forward(x);
        relu_inplace(u);
        up_relu_[l - 1] = u;
        add_inplace(u, volume_relu_[2 * (l - 1) + 1]);
        x = std::move(u);
    }
    Volume<T> out = head_.forward(x);
    const int d = out.depth(), h = out.height(), w = out.width();
    DualVolume<T> dual{Volume<T>(1, d, h, w), Volume<T>(1, d, h, w)};
    std::copy_n(out.channel(0), out.spatial_size(), dual.cost.data());
    std::copy_n(out.channel(1), out.spatial_size(), dual.log_variance.data());
    return dual;
}

template <typename T>
ForwardOutput<T> Network<T>::forward(const StereoSample& sample, SamplingMode mode, Rng& rng) {
    sample.validate();
    if (sample.left.channels() != cfg_.in_channels) {
        throw ShapeError("network expects " + std::to_string(cfg_.in_channels) +
                         " image channels, got " + std::to_string(sample.left.channels()));
    }
    const int h = sample.height(), w = sample.width();
    check_image_dims(h, w);

    const Volume<T> left = standardize_image<T>(sample.left);
    const Volume<T> right = standardize_image<T>(sample.right);
    Volume<T> stacked(cfg_.in_channels, 2, h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < cfg_.in_channels; ++c) {
        std::copy_n(left.channel(c), plane, stacked.channel(c));
        std::copy_n(right.channel(c), plane, stacked.channel(c) + plane);
    }
    const Volume<T> features = extract_pair_features(stacked, mode, rng);
    const Volume<T> cv = build_cost_volume(depth_slice(features, 0), depth_slice(features, 1),
                                           cfg_.disparity_levels());
    cached_levels_ = cfg_.disparity_levels();
    DualVolume<T> dual = regularize_volume(cv, mode, rng);
    if (dual.cost.depth() != cfg_.max_disparity || dual.cost.height() != h || dual.cost.width() != w) {
        throw ShapeError("decoder output " + dual.cost.shape_string() + " does not match D x H x W");
    }
    ForwardOutput<T> out{soft_argmin(dual.cost), aleatoric_map(dual.log_variance)};
    floor_active_ = Mask(h, w, 0);
    if (cfg_.log_variance_floor) {
        const T floor = static_cast<T>(*cfg_.log_variance_floor);
        for (std::size_t i = 0; i < out.log_variance.size(); ++i) {
            if (out.log_variance[i] < floor) {
                out.log_variance[i] = floor;
                floor_active_[i] = 1;
            }
        }
    }
    head_cost_ = std::move(dual.cost);
    return out;
}

template <typename T>
void Network<T>::backward(const Grid<T>& grad_disparity, const Grid<T>& grad_log_variance) {
    const int d = head_cost_.depth(), h = head_cost_.height(), w = head_cost_.width();
    const Volume<T> g_cost = soft_argmin_backward(head_cost_, grad_disparity);
    Volume<T> g_head(2, d, h, w);
    std::copy_n(g_cost.data(), g_cost.size(), g_head.channel(0));
    T* g_lv = g_head.channel(1);
    for (int l = 0; l < d; ++l)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                g_lv[(static_cast<std::size_t>(l) * h + y) * w + x] =
                    floor_active_(y, x) ? T(0) : grad_log_variance(y, x) / T(d);

    // Decoder
    const int depth = cfg_.encoder_depth;
    std::vector<Volume<T>> g_skip(depth + 1);
    auto add_skip = [&](int level, const Volume<T>& g) {
        if (g_skip[level].size() == 0) g_skip[level] = g;
        else add_inplace(g_skip[level], g);
    };
    Volume<T> g = head_.backward(g_head);
    for (int l = 1; l <= depth; ++l) {
        add_skip(l - 1, g);
        relu_mask(g, up_relu_[l - 1]);
        g = up_[l - 1].backward(g);
    }
    add_skip(depth, g);

    // Encoder
    g = g_skip[depth];
    for (int l = depth; l >= 1; --l) {
        relu_mask(g, volume_relu_[2 * l + 1]);
        g = down_conv_[l - 1].backward(g);
        relu_mask(g, volume_relu_[2 * l]);
        g = down_[l - 1].backward(g);
        add_inplace(g, g_skip[l - 1]);
    }
    if (depth == 0) g = g_skip[0];
    relu_mask(g, volume_relu_[1]);
    g = volume_in_b_.backward(g);
    relu_mask(g, volume_relu_[0]);
    const Volume<T> g_cv = volume_in_a_.backward(g);

    // Cost volume -> stacked pair features
    const int c = feature_channels_cached_;
    const int levels = g_cv.depth(), fh = g_cv.height(), fw = g_cv.width();
    Volume<T> g_feat(c, 2, fh, fw);
    for (int ch = 0; ch < c; ++ch)
        for (int l = 0; l < levels; ++l)
            for (int y = 0; y < fh; ++y)
                for (int x = 0; x < fw; ++x) {
                    g_feat(ch, 0, y, x) += g_cv(ch, l, y, x);
                    if (x >= l) g_feat(ch, 1, y, x - l) += g_cv(c + ch, l, y, x);
                }

    // Feature tower
    g = feature_out_.backward(g_feat);
    for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
        relu_mask(g, feature_relu_[2 * b + 2]);
        Volume<T> gh = blocks_[b].second.backward(g);
        relu_mask(gh, feature_relu_[2 * b + 1]);
        add_inplace(g, blocks_[b].first.backward(gh));
    }
    relu_mask(g, feature_relu_[0]);
    stem_.backward(g);
}

template <typename T>
std::vector<VariationalConv<T>*> Network<T>::variational_layers() {
    std::vector<VariationalConv<T>*> out{&stem_};
    for (auto& b : blocks_) {
        out.push_back(&b.first);
        out.push_back(&b.second);
    }
    out.push_back(&feature_out_);
    out.push_back(&volume_in_a_);
    out.push_back(&volume_in_b_);
    for (std::size_t l = 0; l < down_.size(); ++l) {
        out.push_back(&down_[l]);
        out.push_back(&down_conv_[l]);
    }
    return out;
}

template <typename T>
std::vector<TransposedConv<T>*> Network<T>::transposed_layers() {
    std::vector<TransposedConv<T>*> out;
    for (auto& u : up_) out.push_back(&u);
    out.push_back(&head_);
    return out;
}

template <typename T>
void Network<T>::zero_grad() {
    for (auto* l : variational_layers()) l->zero_grad();
    for (auto* l : transposed_layers()) l->zero_grad();
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
    std::vector<ParamRef<T>> out;
    for (auto* l : variational_layers()) {
        const std::size_t before = out.size();
        l->append_params(out);
        if (!cfg_.probabilistic) {
            out.erase(std::remove_if(out.begin() + static_cast<std::ptrdiff_t>(before), out.end(),
                                     [](const ParamRef<T>& p) { return p.is_raw_scale; }),
                      out.end());
        }
    }
    for (auto* l : transposed_layers()) l->append_params(out);
    return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.value.size();
    return n;
}

template <typename T>
double Network<T>::kl_total() const {
    if (!cfg_.probabilistic) return 0.0;
    auto* self = const_cast<Network<T>*>(this);
    double total = 0.0;
    for (auto* l : self->variational_layers()) total += l->kl(cfg_.prior);
    return total;
}

template <typename T>
void Network<T>::accumulate_kl_grad(double scale) {
    if (!cfg_.probabilistic || scale == 0.0) return;
    for (auto* l : variational_layers()) l->accumulate_kl_grad(cfg_.prior, scale);
}

template <typename T>
void Network<T>::set_posterior_stddev(double stddev) {
    // softplus^-1(0) is -inf; clamp to a scale whose softplus underflows far below weight ulp.
    const double raw = stddev > 0 ? inverse_softplus(stddev) : -80.0;
    for (auto* l : variational_layers()) {
        std::fill(l->posterior().raw_scale.begin(), l->posterior().raw_scale.end(), static_cast<T>(raw));
    }
}

#define PGCNET_INSTANTIATE(T)                                                                 \
    template Volume<T> standardize_image<T>(const Volume<float>&);                            \
    template Volume<T> build_cost_volume<T>(const Volume<T>&, const Volume<T>&, int);         \
    template Grid<T> soft_argmin<T>(const Volume<T>&);                                        \
    template Volume<T> soft_argmin_backward<T>(const Volume<T>&, const Grid<T>&);             \
    template Grid<T> aleatoric_map<T>(const Volume<T>&);                                      \
    template class Network<T>;

PGCNET_INSTANTIATE(float)
PGCNET_INSTANTIATE(double)

#undef PGCNET_INSTANTIATE

}  // namespace pgcnet
