#include "pgcnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pgcnet/config.hpp"

namespace pgcnet {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'P', 'G', 'C', 'N', 'C', 'K', 'P', 'T'};

class Writer {
public:
    template <typename V>
    void pod(V v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        out_.append(p, sizeof(V));
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        out_.append(s);
    }
    void floats(const std::vector<float>& v) {
        pod<std::uint64_t>(v.size());
        out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }
    void raw(const char* p, std::size_t n) { out_.append(p, n); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename V>
    V pod() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<float> floats() {
        const auto n = pod<std::uint64_t>();
        if (n > (bytes_.size() - pos_) / sizeof(float)) fail("array length exceeds file");
        std::vector<float> v(n);
        std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
        return v;
    }
    void expect_magic() {
        need(sizeof kMagic);
        if (std::memcmp(bytes_.data(), kMagic, sizeof kMagic) != 0) fail("not a checkpoint (bad magic)");
        pos_ += sizeof kMagic;
    }
    bool at_end() const { return pos_ == bytes_.size(); }
    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError("checkpoint: " + what, static_cast<long>(pos_));
    }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail("truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

Checkpoint capture_checkpoint(Network<float>& net, const RmsProp<float>* optimizer) {
    Checkpoint c;
    c.network = net.config();
    for (const auto& p : net.parameters()) {
        c.params.push_back({p.name, p.shape, std::vector<float>(p.value.begin(), p.value.end())});
    }
    if (optimizer) {
        c.optimizer = optimizer->config();
        c.optimizer_steps = optimizer->steps();
        c.optimizer_state = optimizer->state();
    }
    return c;
}

void restore_parameters(Network<float>& net, const Checkpoint& ckpt) {
    if (!(net.config() == ckpt.network)) {
        throw ConfigError("checkpoint network config " + Json(ckpt.network).dump() +
                          " does not match requested config " + Json(net.config()).dump());
    }
    auto params = net.parameters();
    if (params.size() != ckpt.params.size()) throw ShapeError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& src = ckpt.params[i];
        if (src.name != params[i].name || src.shape != params[i].shape ||
            src.values.size() != params[i].value.size()) {
            throw ShapeError("checkpoint parameter '" + src.name + "' does not match '" + params[i].name + "'");
        }
        std::copy(src.values.begin(), src.values.end(), params[i].value.begin());
    }
}

Network<float> network_from_checkpoint(const Checkpoint& ckpt) {
    Network<float> net(ckpt.network, 0);
    restore_parameters(net, ckpt);
    return net;
}

std::string encode_checkpoint(const Checkpoint& c) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.pod<std::uint32_t>(c.version);
    w.str(Json(c.network).dump());
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.params.size()));
    for (const auto& p : c.params) {
        w.str(p.name);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) w.pod<std::int32_t>(d);
        w.floats(p.values);
    }
    w.str(Json(c.optimizer).dump());
    w.pod<std::uint64_t>(c.optimizer_steps);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.optimizer_state.size()));
    for (const auto& s : c.optimizer_state) w.floats(s);
    w.str(c.weight_rng_state);
    w.str(c.crop_rng_state);
    w.pod<std::uint64_t>(c.epoch);
    w.pod<std::uint64_t>(c.step);
    return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    r.expect_magic();
    Checkpoint c;
    c.version = r.pod<std::uint32_t>();
    if (c.version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(c.version));
    try {
        c.network = Json::parse(r.str()).get<NetworkConfig>();
    } catch (const Json::exception& e) {
        r.fail(std::string("bad network config: ") + e.what());
    }
    const auto n = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
        NamedArray a;
        a.name = r.str();
        const auto rank = r.pod<std::uint32_t>();
        if (rank > 8) r.fail("implausible rank");
        for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(r.pod<std::int32_t>());
        a.values = r.floats();
        c.params.push_back(std::move(a));
    }
    try {
        c.optimizer = Json::parse(r.str()).get<RmsPropConfig>();
    } catch (const Json::exception& e) {
        r.fail(std::string("bad optimizer config: ") + e.what());
    }
    c.optimizer_steps = r.pod<std::uint64_t>();
    const auto m = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < m; ++i) c.optimizer_state.push_back(r.floats());
    c.weight_rng_state = r.str();
    c.crop_rng_state = r.str();
    c.epoch = r.pod<std::uint64_t>();
    c.step = r.pod<std::uint64_t>();
    if (!r.at_end()) r.fail("trailing bytes");
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::string bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in) {
        in.read(buf, sizeof buf);
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace pgcnet
