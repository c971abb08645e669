#include "pgcnet/data_io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

namespace pgcnet {

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// Header tokens are separated by whitespace; exactly one whitespace byte precedes the raster.
class HeaderReader {
public:
    explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

    std::string token() {
        while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
        const std::size_t start = pos_;
        last_start_ = start;
        while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
        if (start == pos_) throw FormatError("PFM: unexpected end of header", static_cast<long>(pos_));
        return bytes_.substr(start, pos_ - start);
    }

    std::size_t end_of_header() {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            throw FormatError("PFM: missing separator before raster", static_cast<long>(pos_));
        }
        return pos_ + 1;
    }

    /// Offset of the first byte of the most recent token.
    std::size_t last_start() const { return last_start_; }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
    std::size_t last_start_ = 0;
};

std::uint32_t bswap32(std::uint32_t v) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

float decode_float(const char* p, bool little) {
    std::uint32_t bits;
    std::memcpy(&bits, p, 4);
    if ((std::endian::native == std::endian::little) != little) bits = bswap32(bits);
    return std::bit_cast<float>(bits);
}

void encode_float(float v, bool little, char* p) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    if ((std::endian::native == std::endian::little) != little) bits = bswap32(bits);
    std::memcpy(p, &bits, 4);
}

struct PngReadHandle {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadHandle() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteHandle {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteHandle() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

struct RawPng {
    int width = 0, height = 0, channels = 0, bit_depth = 0;
    std::vector<std::uint16_t> samples;  // row-major, interleaved
};

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw FormatError(std::string("PNG: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

RawPng read_png_raw(const fs::path& path) {
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open '" + path.string() + "'");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw FormatError("'" + path.string() + "' is not a PNG file", 0);
    }
    PngReadHandle h;
    h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    if (!h.png) throw IoError("libpng initialization failed");
    h.info = png_create_info_struct(h.png);
    png_init_io(h.png, file.get());
    png_set_sig_bytes(h.png, 8);
    png_read_info(h.png, h.info);

    RawPng out;
    out.width = static_cast<int>(png_get_image_width(h.png, h.info));
    out.height = static_cast<int>(png_get_image_height(h.png, h.info));
    out.bit_depth = png_get_bit_depth(h.png, h.info);
    const int color = png_get_color_type(h.png, h.info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(h.png);
    if (color == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(h.png);
        out.bit_depth = 8;
    }
    if (out.bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(h.png);
    png_read_update_info(h.png, h.info);
    out.channels = png_get_channels(h.png, h.info);
    out.bit_depth = png_get_bit_depth(h.png, h.info);

    const std::size_t rowbytes = png_get_rowbytes(h.png, h.info);
    std::vector<unsigned char> buffer(rowbytes * out.height);
    std::vector<png_bytep> rows(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(h.png, rows.data());
    png_read_end(h.png, nullptr);

    const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
    out.samples.resize(n);
    if (out.bit_depth == 16) {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t v;
            std::memcpy(&v, buffer.data() + 2 * i, 2);
            out.samples[i] = v;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) out.samples[i] = buffer[i];
    }
    return out;
}

void write_png_raw(const fs::path& path, int width, int height, int channels, int bit_depth,
                   const std::vector<std::uint16_t>& samples) {
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot write '" + path.string() + "'");
    PngWriteHandle h;
    h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    if (!h.png) throw IoError("libpng initialization failed");
    h.info = png_create_info_struct(h.png);
    png_init_io(h.png, file.get());
    const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(h.png, h.info, width, height, bit_depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(h.png, h.info);
    const int bytes = bit_depth / 8;
    std::vector<unsigned char> row(static_cast<std::size_t>(width) * channels * bytes);
    for (int y = 0; y < height; ++y) {
        for (int i = 0; i < width * channels; ++i) {
            const std::uint16_t v = samples[static_cast<std::size_t>(y) * width * channels + i];
            if (bytes == 2) {
                row[2 * i] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
                row[2 * i + 1] = static_cast<unsigned char>(v & 0xFF);
            } else {
                row[i] = static_cast<unsigned char>(v);
            }
        }
        png_write_row(h.png, row.data());
    }
    png_write_end(h.png, nullptr);
}

}  // namespace

// ---------------------------------------------------------------------------------------------

Grid<float> PfmImage::plane(int c) const {
    Grid<float> out(data.height(), data.width());
    std::copy_n(data.channel(c), out.size(), out.data());
    return out;
}

PfmImage parse_pfm(const std::string& bytes) {
    HeaderReader header(bytes);
    PfmImage img;
    const std::string magic = header.token();
    if (magic == "Pf") img.channels = 1;
    else if (magic == "PF") img.channels = 3;
    else throw FormatError("PFM: bad magic '" + magic + "'", 0);

    auto parse_int = [&](const char* what) {
        const std::string tok = header.token();
        const std::size_t at = header.last_start();
        char* end = nullptr;
        const long v = std::strtol(tok.c_str(), &end, 10);
        if (*end != '\0' || v <= 0 || v > (1 << 20)) {
            throw FormatError(std::string("PFM: invalid ") + what + " '" + tok + "'", static_cast<long>(at));
        }
        return static_cast<int>(v);
    };
    const int w = parse_int("width");
    const int h = parse_int("height");
    const std::string scale_tok = header.token();
    const std::size_t scale_at = header.last_start();
    char* end = nullptr;
    const double scale = std::strtod(scale_tok.c_str(), &end);
    if (*end != '\0' || scale == 0.0 || !std::isfinite(scale)) {
        throw FormatError("PFM: invalid scale '" + scale_tok + "'", static_cast<long>(scale_at));
    }
    img.little_endian = scale < 0;
    img.scale = std::abs(scale);
    const std::size_t offset = header.end_of_header();
    const std::size_t need = static_cast<std::size_t>(w) * h * img.channels * 4;
    if (bytes.size() - offset < need) {
        throw FormatError("PFM: truncated raster, expected " + std::to_string(need) + " bytes, found " +
                              std::to_string(bytes.size() - offset),
                          static_cast<long>(bytes.size()));
    }
    img.data = Volume<float>(img.channels, 1, h, w);
    const char* p = bytes.data() + offset;
    for (int row = 0; row < h; ++row) {
        const int y = h - 1 - row;  // bottom-up storage
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < img.channels; ++c, p += 4) {
                img.data(c, 0, y, x) = decode_float(p, img.little_endian);
            }
        }
    }
    return img;
}

PfmImage read_pfm(const fs::path& path) { return parse_pfm(read_file(path)); }

std::string encode_pfm(const Grid<float>& values, bool little_endian, double scale) {
    std::ostringstream header;
    header << "Pf\n" << values.width() << " " << values.height() << "\n"
           << (little_endian ? -std::abs(scale) : std::abs(scale)) << "\n";
    std::string bytes = header.str();
    const std::size_t offset = bytes.size();
    bytes.resize(offset + values.size() * 4);
    char* p = bytes.data() + offset;
    for (int row = 0; row < values.height(); ++row) {
        const int y = values.height() - 1 - row;
        for (int x = 0; x < values.width(); ++x, p += 4) encode_float(values(y, x), little_endian, p);
    }
    return bytes;
}

void write_pfm(const fs::path& path, const Grid<float>& values, bool little_endian, double scale) {
    write_file(path, encode_pfm(values, little_endian, scale));
}

DisparityMap load_pfm_disparity(const fs::path& path) {
    const PfmImage img = read_pfm(path);
    DisparityMap out{img.plane(0), Mask(img.data.height(), img.data.width(), 1)};
    for (std::size_t i = 0; i < out.disparity.size(); ++i) {
        if (!std::isfinite(out.disparity[i])) {
            out.disparity[i] = 0.0f;
            out.valid[i] = 0;
        }
    }
    return out;
}

void save_pfm_disparity(const fs::path& path, const Grid<float>& disparity, const Mask& valid) {
    Grid<float> out = disparity;
    if (!valid.empty()) {
        if (!valid.same_shape(disparity)) throw ShapeError("mask and disparity differ in size");
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (!valid[i]) out[i] = std::numeric_limits<float>::infinity();
        }
    }
    write_pfm(path, out);
}

// ---------------------------------------------------------------------------------------------

Grid<std::uint16_t> read_png16(const fs::path& path) {
    const RawPng raw = read_png_raw(path);
    if (raw.bit_depth != 16 || raw.channels != 1) {
        throw FormatError("'" + path.string() + "': expected a 16-bit single-channel PNG, got " +
                          std::to_string(raw.bit_depth) + "-bit with " + std::to_string(raw.channels) +
                          " channel(s)");
    }
    Grid<std::uint16_t> out(raw.height, raw.width);
    std::copy(raw.samples.begin(), raw.samples.end(), out.values().begin());
    return out;
}

void write_png16(const fs::path& path, const Grid<std::uint16_t>& values) {
    write_png_raw(path, values.width(), values.height(), 1, 16, values.values());
}

DisparityMap decode_kitti_disparity(const Grid<std::uint16_t>& raw) {
    DisparityMap out{Grid<float>(raw.height(), raw.width(), 0.0f), Mask(raw.height(), raw.width(), 0)};
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == 0) continue;
        out.disparity[i] = static_cast<float>(raw[i] / 256.0);
        out.valid[i] = 1;
    }
    return out;
}

DisparityMap load_kitti_disparity(const fs::path& path) {
    return decode_kitti_disparity(read_png16(path));
}

Grid<std::uint16_t> encode_kitti_disparity(const Grid<float>& disparity, const Mask& valid) {
    Grid<std::uint16_t> out(disparity.height(), disparity.width(), 0);
    for (std::size_t i = 0; i < disparity.size(); ++i) {
        if (!valid.empty() && !valid[i]) continue;
        const double raw = std::round(static_cast<double>(disparity[i]) * 256.0);
        out[i] = static_cast<std::uint16_t>(std::clamp(raw, 1.0, 65535.0));
    }
    return out;
}

Volume<float> read_image(const fs::path& path, int channels) {
    if (channels != 1 && channels != 3) throw ParameterError("image channels must be 1 or 3");
    const RawPng raw = read_png_raw(path);
    const double maxv = raw.bit_depth == 16 ? 65535.0 : 255.0;
    const int src_color = raw.channels >= 3 ? 3 : 1;  // alpha ignored
    Volume<float> out(channels, 1, raw.height, raw.width);
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * raw.width + x) * raw.channels;
            double rgb[3];
            for (int c = 0; c < 3; ++c) rgb[c] = raw.samples[base + (src_color == 3 ? c : 0)] / maxv;
            if (channels == 1) {
                out(0, 0, y, x) = static_cast<float>(src_color == 3
                                                         ? 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
                                                         : rgb[0]);
            } else {
                for (int c = 0; c < 3; ++c) out(c, 0, y, x) = static_cast<float>(rgb[c]);
            }
        }
    }
    return out;
}

void write_image(const fs::path& path, const Volume<float>& image) {
    if (image.channels() != 1 && image.channels() != 3) throw ParameterError("image channels must be 1 or 3");
    const int h = image.height(), w = image.width(), c = image.channels();
    std::vector<std::uint16_t> samples(static_cast<std::size_t>(h) * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                const double v = std::clamp(static_cast<double>(image(ch, 0, y, x)), 0.0, 1.0);
                samples[(static_cast<std::size_t>(y) * w + x) * c + ch] =
                    static_cast<std::uint16_t>(std::lround(v * 255.0));
            }
    write_png_raw(path, w, h, c, 8, samples);
}

// ---------------------------------------------------------------------------------------------

StereoSample crop(const StereoSample& sample, int x0, int y0, int width, int height) {
    sample.validate();
    if (x0 < 0 || y0 < 0 || x0 + width > sample.width() || y0 + height > sample.height()) {
        throw DataError("crop window exceeds sample '" + sample.name + "'");
    }
    auto crop_volume = [&](const Volume<float>& v) {
        Volume<float> out(v.channels(), 1, height, width);
        for (int c = 0; c < v.channels(); ++c)
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) out(c, 0, y, x) = v(c, 0, y0 + y, x0 + x);
        return out;
    };
    auto crop_grid = [&](const auto& g) {
        std::remove_cvref_t<decltype(g)> out(height, width);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) out(y, x) = g(y0 + y, x0 + x);
        return out;
    };
    StereoSample out;
    out.name = sample.name;
    out.left = crop_volume(sample.left);
    out.right = crop_volume(sample.right);
    if (!sample.gt_disparity.empty()) out.gt_disparity = crop_grid(sample.gt_disparity);
    if (!sample.valid_mask.empty()) out.valid_mask = crop_grid(sample.valid_mask);
    return out;
}

StereoSample random_crop(const StereoSample& sample, int width, int height, Rng& rng) {
    if (width < 1 || height < 1) throw ParameterError("crop size must be positive");
    if (sample.width() < width || sample.height() < height) {
        throw DataError("sample '" + sample.name + "' (" + std::to_string(sample.width()) + "x" +
                        std::to_string(sample.height()) + ") is smaller than the crop " +
                        std::to_string(width) + "x" + std::to_string(height) +
                        "; pad the images or use a smaller crop");
    }
    std::uniform_int_distribution<int> ux(0, sample.width() - width);
    std::uniform_int_distribution<int> uy(0, sample.height() - height);
    const int x0 = ux(rng);
    const int y0 = uy(rng);
    return crop(sample, x0, y0, width, height);
}

StereoSample reflect_pad(const StereoSample& sample, int multiple) {
    sample.validate();
    if (multiple < 1) throw ParameterError("padding multiple must be >= 1");
    const int h = sample.height(), w = sample.width();
    const int ph = (h + multiple - 1) / multiple * multiple;
    const int pw = (w + multiple - 1) / multiple * multiple;
    if (ph == h && pw == w) return sample;
    if (ph - h >= h || pw - w >= w) throw DataError("image too small for reflection padding");
    auto reflect = [](int i, int n) { return i < n ? i : 2 * (n - 1) - i; };
    auto pad_volume = [&](const Volume<float>& v) {
        Volume<float> out(v.channels(), 1, ph, pw);
        for (int c = 0; c < v.channels(); ++c)
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x) out(c, 0, y, x) = v(c, 0, reflect(y, h), reflect(x, w));
        return out;
    };
    StereoSample out;
    out.name = sample.name;
    out.left = pad_volume(sample.left);
    out.right = pad_volume(sample.right);
    if (!sample.gt_disparity.empty()) {
        out.gt_disparity = Grid<float>(ph, pw, 0.0f);
        out.valid_mask = Mask(ph, pw, 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                out.gt_disparity(y, x) = sample.gt_disparity(y, x);
                out.valid_mask(y, x) = sample.valid_mask.empty() ? 1 : sample.valid_mask(y, x);
            }
    }
    return out;
}

StereoSample downsample(const StereoSample& sample, int factor) {
    sample.validate();
    if (factor < 1) throw ParameterError("downsampling factor must be >= 1");
    if (factor == 1) return sample;
    const int h = sample.height() / factor, w = sample.width() / factor;
    auto box = [&](const Volume<float>& v) {
        Volume<float> out(v.channels(), 1, h, w);
        const double inv = 1.0 / (factor * factor);
        for (int c = 0; c < v.channels(); ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double s = 0.0;
                    for (int a = 0; a < factor; ++a)
                        for (int b = 0; b < factor; ++b) s += v(c, 0, y * factor + a, x * factor + b);
                    out(c, 0, y, x) = static_cast<float>(s * inv);
                }
        return out;
    };
    StereoSample out;
    out.name = sample.name;
    out.left = box(sample.left);
    out.right = box(sample.right);
    if (!sample.gt_disparity.empty()) {
        out.gt_disparity = Grid<float>(h, w);
        out.valid_mask = Mask(h, w, 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = y * factor + factor / 2, sx = x * factor + factor / 2;
                out.gt_disparity(y, x) = sample.gt_disparity(sy, sx) / static_cast<float>(factor);
                if (!sample.valid_mask.empty()) out.valid_mask(y, x) = sample.valid_mask(sy, sx);
            }
    }
    return out;
}

std::string png_library_version() { return png_get_libpng_ver(nullptr); }

}  // namespace pgcnet
