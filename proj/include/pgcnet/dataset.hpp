#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pgcnet/network.hpp"
#include "pgcnet/synth.hpp"

namespace pgcnet {

enum class DatasetKind { kSceneflowPfm, kKittiPng, kSynthetic };
enum class Split { kTrain, kVal, kTest };

/// On-disk layouts:
///  sceneflow_pfm: <root>[/<split>]/{left,right}/<stem>.png + disparity/<stem>.pfm
///  kitti_png:     <root>[/<split>]/{image_2,image_3}/<stem>.png + disp_occ_0/<stem>.png
/// The split subdirectory is used when it exists. `synthetic` generates `count` pairs in memory,
/// pair i drawn from a stream derived from (seed, split, i).
struct DatasetSpec {
    DatasetKind kind = DatasetKind::kSynthetic;
    std::string root;
    Split split = Split::kTrain;
    SynthParams synth;
    int count = 0;
    std::uint64_t seed = 0;
    int channels = 1;
    /// Integer downsampling applied after loading (1 = none).
    int downsample = 1;

    friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

class Dataset {
public:
    explicit Dataset(DatasetSpec spec);

    const DatasetSpec& spec() const { return spec_; }
    std::size_t size() const { return stems_.size(); }
    const std::string& stem(std::size_t i) const { return stems_.at(i); }
    StereoSample load(std::size_t i) const;

private:
    DatasetSpec spec_;
    std::filesystem::path dir_;
    std::vector<std::string> stems_;
};

std::uint64_t split_tag(Split split);

}  // namespace pgcnet
