#include "pgcnet/dataset.hpp"

#include <algorithm>

#include "pgcnet/data_io.hpp"

namespace pgcnet {

namespace {

const char* split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    return "train";
}

std::vector<std::string> stems_in(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw DataError("missing dataset directory '" + dir.string() + "'");
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().stem().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::uint64_t split_tag(Split split) {
    return 0x5EED0000ull + static_cast<std::uint64_t>(split);
}

Dataset::Dataset(DatasetSpec spec) : spec_(std::move(spec)) {
    if (spec_.kind == DatasetKind::kSynthetic) {
        spec_.synth.validate();
        if (spec_.count < 0) throw ConfigError("synthetic dataset count must be >= 0");
        for (int i = 0; i < spec_.count; ++i) stems_.push_back("synth_" + std::to_string(i));
        return;
    }
    if (!fs::exists(spec_.root)) throw DataError("dataset root '" + spec_.root + "' does not exist");
    dir_ = fs::path(spec_.root);
    if (fs::is_directory(dir_ / split_name(spec_.split))) dir_ /= split_name(spec_.split);
    if (spec_.kind == DatasetKind::kSceneflowPfm) {
        stems_ = stems_in(dir_ / "left", ".png");
    } else {
        stems_ = stems_in(dir_ / "image_2", ".png");
    }
    if (spec_.count > 0 && static_cast<std::size_t>(spec_.count) < stems_.size()) stems_.resize(spec_.count);
}

StereoSample Dataset::load(std::size_t i) const {
    StereoSample s;
    if (spec_.kind == DatasetKind::kSynthetic) {
        Rng rng = derive_stream(spec_.seed ^ split_tag(spec_.split), i);
        s = synth_stereogram(spec_.synth, rng);
        if (spec_.channels != 1) {
            // Replicate the gray plane.
            auto widen = [&](const Volume<float>& v) {
                Volume<float> out(spec_.channels, 1, v.height(), v.width());
                for (int c = 0; c < spec_.channels; ++c) std::copy_n(v.data(), v.size(), out.channel(c));
                return out;
            };
            s.left = widen(s.left);
            s.right = widen(s.right);
        }
    } else if (spec_.kind == DatasetKind::kSceneflowPfm) {
        const std::string& st = stems_.at(i);
        s.left = read_image(dir_ / "left" / (st + ".png"), spec_.channels);
        s.right = read_image(dir_ / "right" / (st + ".png"), spec_.channels);
        const fs::path gt = dir_ / "disparity" / (st + ".pfm");
        if (fs::exists(gt)) {
            DisparityMap d = load_pfm_disparity(gt);
            s.gt_disparity = std::move(d.disparity);
            s.valid_mask = std::move(d.valid);
        }
    } else {
        const std::string& st = stems_.at(i);
        s.left = read_image(dir_ / "image_2" / (st + ".png"), spec_.channels);
        s.right = read_image(dir_ / "image_3" / (st + ".png"), spec_.channels);
        const fs::path gt = dir_ / "disp_occ_0" / (st + ".png");
        if (fs::exists(gt)) {
            DisparityMap d = load_kitti_disparity(gt);
            s.gt_disparity = std::move(d.disparity);
            s.valid_mask = std::move(d.valid);
        }
    }
    s.name = stems_.at(i);
    s.validate();
    if (spec_.downsample > 1) s = downsample(s, spec_.downsample);
    return s;
}

}  // namespace pgcnet
