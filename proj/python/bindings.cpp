// Python bindings over the core library. Arrays cross the boundary as C-contiguous numpy copies.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>

#include "pgcnet/checkpoint.hpp"
#include "pgcnet/config.hpp"
#include "pgcnet/data_io.hpp"
#include "pgcnet/evaluation.hpp"
#include "pgcnet/inference.hpp"
#include "pgcnet/network.hpp"
#include "pgcnet/objective.hpp"
#include "pgcnet/synth.hpp"

namespace py = pybind11;
using namespace pgcnet;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T, typename Src>
Grid<T> to_grid(const Array<Src>& a, const char* what) {
    if (a.ndim() != 2) throw ShapeError(std::string(what) + " must be a 2-D array");
    Grid<T> g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    const Src* p = a.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<T>(p[i]);
    return g;
}

template <typename T>
py::array_t<T> to_array(const Grid<T>& g) {
    py::array_t<T> a({g.height(), g.width()});
    std::copy(g.values().begin(), g.values().end(), a.mutable_data());
    return a;
}

py::array_t<bool> mask_array(const Mask& m) {
    py::array_t<bool> a({m.height(), m.width()});
    bool* p = a.mutable_data();
    for (std::size_t i = 0; i < m.size(); ++i) p[i] = m[i] != 0;
    return a;
}

Mask mask_or_all(const std::optional<Array<bool>>& m, int h, int w) {
    if (!m) return Mask(h, w, 1);
    return to_grid<unsigned char, bool>(*m, "mask");
}

Volume<float> image_volume(const Array<float>& a) {
    if (a.ndim() == 2) {
        Volume<float> v(1, 1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
        std::copy_n(a.data(), v.size(), v.data());
        return v;
    }
    if (a.ndim() == 3) {  // C x H x W
        Volume<float> v(static_cast<int>(a.shape(0)), 1, static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
        std::copy_n(a.data(), v.size(), v.data());
        return v;
    }
    throw ShapeError("image must be H x W or C x H x W");
}

py::array_t<float> image_array(const Volume<float>& v) {
    if (v.channels() == 1) {
        py::array_t<float> a({v.height(), v.width()});
        std::copy_n(v.data(), v.size(), a.mutable_data());
        return a;
    }
    py::array_t<float> a({v.channels(), v.height(), v.width()});
    std::copy_n(v.data(), v.size(), a.mutable_data());
    return a;
}

py::dict uncertainty_dict(const UncertainDisparity& u) {
    const UncertaintyStddev sd = uncertainty_stddev_maps(u);
    py::dict d;
    d["disparity"] = to_array(u.mean_disparity);
    d["epistemic_var"] = to_array(u.epistemic_var);
    d["aleatoric_var"] = to_array(u.aleatoric_var);
    d["combined_var"] = to_array(u.combined_var);
    d["epistemic"] = to_array(sd.epistemic);
    d["aleatoric"] = to_array(sd.aleatoric);
    d["combined"] = to_array(sd.combined);
    d["passes"] = u.samples;
    return d;
}

double kl_gaussian(const Array<double>& mean, const Array<double>& stddev, double prior_mean, double prior_stddev) {
    if (mean.size() != stddev.size()) throw ShapeError("mean and stddev sizes differ");
    std::vector<double> mu(mean.data(), mean.data() + mean.size());
    std::vector<double> raw(stddev.size());
    for (py::ssize_t i = 0; i < stddev.size(); ++i) {
        if (!(stddev.data()[i] > 0)) throw ParameterError("stddev must be > 0");
        raw[i] = inverse_softplus(stddev.data()[i]);
    }
    const int n = static_cast<int>(mu.size());
    const GaussianPosterior<double> q({n}, std::move(mu), std::move(raw));
    return kl_to_prior(q, PriorSpec{prior_mean, prior_stddev});
}

py::array_t<double> soft_argmin_py(const Array<double>& cost) {
    if (cost.ndim() != 3) throw ShapeError("cost must be D x H x W");
    Volume<double> v(1, static_cast<int>(cost.shape(0)), static_cast<int>(cost.shape(1)),
                     static_cast<int>(cost.shape(2)));
    std::copy_n(cost.data(), v.size(), v.data());
    return to_array(soft_argmin(v));
}

py::dict aggregate_py(const Array<double>& disparities, const Array<double>& log_variances) {
    if (disparities.ndim() != 3 || log_variances.ndim() != 3) throw ShapeError("expected T x H x W stacks");
    const int t = static_cast<int>(disparities.shape(0)), h = static_cast<int>(disparities.shape(1)),
              w = static_cast<int>(disparities.shape(2));
    if (log_variances.shape(0) != t || log_variances.shape(1) != h || log_variances.shape(2) != w)
        throw ShapeError("disparity and log-variance stacks differ in shape");
    std::vector<Grid<double>> d(t, Grid<double>(h, w)), s(t, Grid<double>(h, w));
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < t; ++i) {
        std::copy_n(disparities.data() + i * plane, plane, d[i].data());
        std::copy_n(log_variances.data() + i * plane, plane, s[i].data());
    }
    return uncertainty_dict(aggregate_passes<double>(d, s));
}

double regression_loss_py(const Array<float>& gt, const Array<double>& d_hat, const Array<double>& s,
                          const std::optional<Array<bool>>& mask) {
    const Grid<float> g = to_grid<float, float>(gt, "gt");
    return regression_loss<double>(g, to_grid<double, double>(d_hat, "d_hat"), to_grid<double, double>(s, "s"),
                                   mask_or_all(mask, g.height(), g.width()));
}

py::dict synth_py(const py::dict& params, std::uint64_t seed) {
    Json j = Json(SynthParams{});
    for (const auto& [k, v] : params) {
        const std::string key = py::str(k);
        apply_override(j, key + "=" + py::str(py::module_::import("json").attr("dumps")(v)).cast<std::string>());
    }
    const SynthParams p = j.get<SynthParams>();
    p.validate();
    Rng rng(seed);
    const StereoSample s = synth_stereogram(p, rng);
    py::dict d;
    d["left"] = image_array(s.left);
    d["right"] = image_array(s.right);
    d["disparity"] = to_array(s.gt_disparity);
    d["valid"] = mask_array(s.valid_mask);
    return d;
}

py::dict sparsification_py(const Array<double>& abs_error, const Array<double>& uncertainty, int steps) {
    const Grid<double> e = to_grid<double, double>(abs_error, "abs_error");
    const SparsificationCurve c =
        sparsification(e, to_grid<double, double>(uncertainty, "uncertainty"), Mask(e.height(), e.width(), 1), steps);
    py::dict d;
    d["densities"] = c.densities;
    d["mae"] = c.mae_at_density;
    d["oracle_mae"] = c.oracle_mae;
    d["ause"] = c.ause;
    return d;
}

py::dict metrics_py(const Array<double>& d_hat, const Array<float>& gt, const std::optional<Array<bool>>& mask) {
    const Grid<float> g = to_grid<float, float>(gt, "gt");
    const MetricsReport r =
        accuracy_metrics(to_grid<double, double>(d_hat, "d_hat"), g, mask_or_all(mask, g.height(), g.width()));
    py::dict d;
    d["bad1"] = r.bad1;
    d["bad3"] = r.bad3;
    d["bad5"] = r.bad5;
    d["mae"] = r.mae;
    d["rmse"] = r.rmse;
    d["n_valid"] = r.n_valid;
    return d;
}

class Predictor {
public:
    explicit Predictor(const std::string& path)
        : ckpt_(load_checkpoint(path)), net_(network_from_checkpoint(ckpt_)), digest_(file_digest(path)) {}

    py::dict predict(const Array<float>& left, const Array<float>& right, int passes, std::uint64_t seed) {
        if (passes < 1) throw ParameterError("passes must be >= 1");
        StereoSample s;
        s.left = image_volume(left);
        s.right = image_volume(right);
        s.validate();
        const int h = s.left.height(), w = s.left.width();
        const StereoSample padded = reflect_pad(s, net_.config().size_multiple());
        UncertainDisparity u;
        {
            py::gil_scoped_release release;
            u = mc_predict(net_, padded, passes, seed);
        }
        auto crop = [h, w](const Grid<double>& g) {
            Grid<double> out(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out(y, x) = g(y, x);
            return out;
        };
        u.mean_disparity = crop(u.mean_disparity);
        u.epistemic_var = crop(u.epistemic_var);
        u.aleatoric_var = crop(u.aleatoric_var);
        u.combined_var = crop(u.combined_var);
        return uncertainty_dict(u);
    }

    std::string network_json() const { return Json(ckpt_.network).dump(); }
    std::string digest() const { return digest_; }
    std::size_t parameter_count() { return net_.parameter_count(); }

private:
    Checkpoint ckpt_;
    Network<float> net_;
    std::string digest_;
};

}  // namespace

PYBIND11_MODULE(_pgcnet, m) {
    m.doc() = "Probabilistic stereo matching core";
    m.attr("__version__") = PGCNET_VERSION;

    static py::exception<Error> base(m, "PgcnetError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(base.ptr(), e.what());
        }
    });

    m.def("build_info", [] { return build_info().dump(); }, "Build metadata as a JSON string.");
    m.def("kl_gaussian", &kl_gaussian, py::arg("mean"), py::arg("stddev"), py::arg("prior_mean") = 0.0,
          py::arg("prior_stddev") = 1.0, "KL(q || p) summed over independent Gaussian weights.");
    m.def("soft_argmin", &soft_argmin_py, py::arg("cost"), "Expected disparity under softmax(-cost), cost D x H x W.");
    m.def("aggregate_passes", &aggregate_py, py::arg("disparities"), py::arg("log_variances"),
          "Mean disparity and variance decomposition of T stacked passes.");
    m.def("regression_loss", &regression_loss_py, py::arg("gt"), py::arg("d_hat"), py::arg("s"),
          py::arg("mask") = py::none());
    m.def("accuracy_metrics", &metrics_py, py::arg("d_hat"), py::arg("gt"), py::arg("mask") = py::none());
    m.def("sparsification", &sparsification_py, py::arg("abs_error"), py::arg("uncertainty"), py::arg("steps") = 100);
    m.def("synth_stereogram", &synth_py, py::arg("params") = py::dict(), py::arg("seed") = 0);
    m.def(
        "read_pfm", [](const std::string& path) { return to_array(read_pfm(path).plane()); }, py::arg("path"));
    m.def(
        "write_pfm",
        [](const std::string& path, const Array<float>& values) {
            write_pfm(path, to_grid<float, float>(values, "values"));
        },
        py::arg("path"), py::arg("values"));
    m.def(
        "decode_kitti",
        [](const Array<std::uint16_t>& raw) {
            const DisparityMap d = decode_kitti_disparity(to_grid<std::uint16_t, std::uint16_t>(raw, "raw"));
            return py::make_tuple(to_array(d.disparity), mask_array(d.valid));
        },
        py::arg("raw"), "KITTI 16-bit encoding: disparity = raw / 256, raw 0 invalid.");

    py::class_<Predictor>(m, "Predictor")
        .def(py::init<const std::string&>(), py::arg("checkpoint"))
        .def("predict", &Predictor::predict, py::arg("left"), py::arg("right"), py::arg("passes") = 50,
             py::arg("seed") = 0)
        .def_property_readonly("network_json", &Predictor::network_json)
        .def_property_readonly("digest", &Predictor::digest)
        .def_property_readonly("parameter_count", &Predictor::parameter_count);
}
