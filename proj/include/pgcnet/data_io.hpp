#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pgcnet/network.hpp"
#include "pgcnet/random.hpp"

namespace pgcnet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------------------------
// PFM

/// Decoded PFM raster, top row first.
struct PfmImage {
    int channels = 1;          // 1 for "Pf", 3 for "PF"
    double scale = 1.0;        // absolute value of the header scale
    bool little_endian = true; // negative header scale
    Volume<float> data;        // channels x 1 x H x W

    Grid<float> plane(int c = 0) const;
};

PfmImage read_pfm(const fs::path& path);
PfmImage parse_pfm(const std::string& bytes);
/// Writes a single-channel "Pf" file, bottom row first.
void write_pfm(const fs::path& path, const Grid<float>& values, bool little_endian = true,
               double scale = 1.0);
std::string encode_pfm(const Grid<float>& values, bool little_endian = true, double scale = 1.0);

struct DisparityMap {
    Grid<float> disparity;  // invalid pixels hold 0
    Mask valid;
};

/// First PFM channel as disparity; NaN/Inf entries become invalid.
DisparityMap load_pfm_disparity(const fs::path& path);
/// Stores invalid pixels as +Inf.
void save_pfm_disparity(const fs::path& path, const Grid<float>& disparity, const Mask& valid);

// ---------------------------------------------------------------------------------------------
// PNG

Grid<std::uint16_t> read_png16(const fs::path& path);
void write_png16(const fs::path& path, const Grid<std::uint16_t>& values);

/// KITTI convention: disparity = raw / 256, raw 0 marks missing ground truth.
DisparityMap load_kitti_disparity(const fs::path& path);
DisparityMap decode_kitti_disparity(const Grid<std::uint16_t>& raw);
Grid<std::uint16_t> encode_kitti_disparity(const Grid<float>& disparity, const Mask& valid);

/// 8- or 16-bit PNG to `channels` (1 or 3) planes scaled to [0, 1]; RGB to gray uses BT.601 luma.
Volume<float> read_image(const fs::path& path, int channels = 1);
/// Values clamped to [0, 1] and quantized to 8 bits.
void write_image(const fs::path& path, const Volume<float>& image);

// ---------------------------------------------------------------------------------------------
// Samples

/// Identical window applied to both images, ground truth and mask.
StereoSample crop(const StereoSample& sample, int x0, int y0, int width, int height);
StereoSample random_crop(const StereoSample& sample, int width, int height, Rng& rng);

/// Reflection-pads images (and ground truth/mask, padding marked invalid) on the right and
/// bottom so both extents become multiples of `multiple`.
StereoSample reflect_pad(const StereoSample& sample, int multiple);

/// Nearest-neighbour 1/factor downsampling for disparity (values divided by factor) and
/// box-filtered images; used for reduced-resolution evaluation.
StereoSample downsample(const StereoSample& sample, int factor);

/// Version string of the linked libpng.
std::string png_library_version();

}  // namespace pgcnet
