#include "pgcnet/config.hpp"

#include <Eigen/Core>
#include <fstream>
#include <set>

#include "pgcnet/data_io.hpp"

namespace pgcnet {

namespace {

void require_object(const Json& j, const char* what, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, _] : j.items()) {
        if (!allowed.count(k)) throw ConfigError(std::string(what) + ": unknown key '" + k + "'");
    }
}

template <typename V>
void read(const Json& j, const char* key, V& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("invalid value for '") + key + "': " + e.what());
    }
}

template <typename E>
struct EnumName {
    E value;
    const char* name;
};

template <typename E, std::size_t N>
std::string enum_to_string(E v, const EnumName<E> (&table)[N]) {
    for (const auto& e : table)
        if (e.value == v) return e.name;
    return "?";
}

template <typename E, std::size_t N>
E enum_parse(const std::string& s, const EnumName<E> (&table)[N], const char* what) {
    for (const auto& e : table)
        if (s == e.name) return e.value;
    std::string options;
    for (const auto& e : table) options += std::string(options.empty() ? "" : ", ") + e.name;
    throw ConfigError(std::string("unknown ") + what + " '" + s + "' (expected one of: " + options + ")");
}

constexpr EnumName<DomainShift> kShifts[] = {{DomainShift::kNone, "none"},
                                             {DomainShift::kInvertContrast, "invert_contrast"},
                                             {DomainShift::kAddNoise, "add_noise"},
                                             {DomainShift::kTextureSwap, "texture_swap"}};
constexpr EnumName<DatasetKind> kKinds[] = {{DatasetKind::kSceneflowPfm, "sceneflow_pfm"},
                                            {DatasetKind::kKittiPng, "kitti_png"},
                                            {DatasetKind::kSynthetic, "synthetic"}};
constexpr EnumName<Split> kSplits[] = {{Split::kTrain, "train"}, {Split::kVal, "val"}, {Split::kTest, "test"}};
constexpr EnumName<Perturbation> kPerturbations[] = {{Perturbation::kNaiveReparam, "naive_reparam"},
                                                     {Perturbation::kFlipout, "flipout"}};

}  // namespace

std::string to_string(DomainShift v) { return enum_to_string(v, kShifts); }
std::string to_string(DatasetKind v) { return enum_to_string(v, kKinds); }
std::string to_string(Split v) { return enum_to_string(v, kSplits); }
std::string to_string(Perturbation v) { return enum_to_string(v, kPerturbations); }
DomainShift parse_domain_shift(const std::string& s) { return enum_parse(s, kShifts, "domain shift"); }
DatasetKind parse_dataset_kind(const std::string& s) { return enum_parse(s, kKinds, "dataset kind"); }
Split parse_split(const std::string& s) { return enum_parse(s, kSplits, "split"); }
Perturbation parse_perturbation(const std::string& s) {
    return enum_parse(s, kPerturbations, "perturbation scheme");
}

void to_json(Json& j, const PriorSpec& v) { j = Json{{"mean", v.mean}, {"stddev", v.stddev}}; }

void from_json(const Json& j, PriorSpec& v) {
    require_object(j, "prior", {"mean", "stddev"});
    read(j, "mean", v.mean);
    read(j, "stddev", v.stddev);
}

void to_json(Json& j, const NetworkConfig& v) {
    j = Json{{"in_channels", v.in_channels},
             {"max_disparity", v.max_disparity},
             {"feature_stride", v.feature_stride},
             {"feature_channels", v.feature_channels},
             {"residual_blocks", v.residual_blocks},
             {"volume_channels", v.volume_channels},
             {"encoder_depth", v.encoder_depth},
             {"probabilistic", v.probabilistic},
             {"perturbation", to_string(v.perturbation)},
             {"initial_stddev", v.initial_stddev},
             {"prior", v.prior}};
    j["log_variance_floor"] = v.log_variance_floor ? Json(*v.log_variance_floor) : Json(nullptr);
}

void from_json(const Json& j, NetworkConfig& v) {
    require_object(j, "network",
                   {"in_channels", "max_disparity", "feature_stride", "feature_channels",
                    "residual_blocks", "volume_channels", "encoder_depth", "probabilistic",
                    "perturbation", "initial_stddev", "prior", "log_variance_floor"});
    read(j, "in_channels", v.in_channels);
    read(j, "max_disparity", v.max_disparity);
    read(j, "feature_stride", v.feature_stride);
    read(j, "feature_channels", v.feature_channels);
    read(j, "residual_blocks", v.residual_blocks);
    read(j, "volume_channels", v.volume_channels);
    read(j, "encoder_depth", v.encoder_depth);
    read(j, "probabilistic", v.probabilistic);
    if (j.contains("perturbation")) v.perturbation = parse_perturbation(j.at("perturbation").get<std::string>());
    read(j, "initial_stddev", v.initial_stddev);
    if (j.contains("prior")) v.prior = j.at("prior").get<PriorSpec>();
    if (j.contains("log_variance_floor")) {
        const Json& f = j.at("log_variance_floor");
        v.log_variance_floor = f.is_null() ? std::nullopt : std::optional<double>(f.get<double>());
    }
}

void to_json(Json& j, const SynthParams& v) {
    j = Json{{"width", v.width},
             {"height", v.height},
             {"min_disparity", v.min_disparity},
             {"max_disparity", v.max_disparity},
             {"dot_density", v.dot_density},
             {"min_shapes", v.min_shapes},
             {"max_shapes", v.max_shapes},
             {"rectangles", v.rectangles},
             {"ellipses", v.ellipses},
             {"noise_stddev", v.noise_stddev},
             {"domain_shift", to_string(v.domain_shift)},
             {"shift_noise_stddev", v.shift_noise_stddev},
             {"texture_swap_scale", v.texture_swap_scale}};
}

void from_json(const Json& j, SynthParams& v) {
    require_object(j, "synth",
                   {"width", "height", "min_disparity", "max_disparity", "dot_density", "min_shapes",
                    "max_shapes", "rectangles", "ellipses", "noise_stddev", "domain_shift",
                    "shift_noise_stddev", "texture_swap_scale"});
    read(j, "width", v.width);
    read(j, "height", v.height);
    read(j, "min_disparity", v.min_disparity);
    read(j, "max_disparity", v.max_disparity);
    read(j, "dot_density", v.dot_density);
    read(j, "min_shapes", v.min_shapes);
    read(j, "max_shapes", v.max_shapes);
    read(j, "rectangles", v.rectangles);
    read(j, "ellipses", v.ellipses);
    read(j, "noise_stddev", v.noise_stddev);
    if (j.contains("domain_shift")) v.domain_shift = parse_domain_shift(j.at("domain_shift").get<std::string>());
    read(j, "shift_noise_stddev", v.shift_noise_stddev);
    read(j, "texture_swap_scale", v.texture_swap_scale);
}

void to_json(Json& j, const DatasetSpec& v) {
    j = Json{{"kind", to_string(v.kind)}, {"root", v.root},   {"split", to_string(v.split)},
             {"synth", v.synth},          {"count", v.count}, {"seed", v.seed},
             {"channels", v.channels},    {"downsample", v.downsample}};
}

void from_json(const Json& j, DatasetSpec& v) {
    require_object(j, "dataset", {"kind", "root", "split", "synth", "count", "seed", "channels", "downsample"});
    if (j.contains("kind")) v.kind = parse_dataset_kind(j.at("kind").get<std::string>());
    read(j, "root", v.root);
    if (j.contains("split")) v.split = parse_split(j.at("split").get<std::string>());
    if (j.contains("synth")) v.synth = j.at("synth").get<SynthParams>();
    read(j, "count", v.count);
    read(j, "seed", v.seed);
    read(j, "channels", v.channels);
    read(j, "downsample", v.downsample);
}

void to_json(Json& j, const RmsPropConfig& v) {
    j = Json{{"learning_rate", v.learning_rate}, {"rho", v.rho}, {"epsilon", v.epsilon}};
}

void from_json(const Json& j, RmsPropConfig& v) {
    require_object(j, "optimizer", {"learning_rate", "rho", "epsilon"});
    read(j, "learning_rate", v.learning_rate);
    read(j, "rho", v.rho);
    read(j, "epsilon", v.epsilon);
}

void to_json(Json& j, const TrainConfig& v) {
    j = Json{{"dataset", v.dataset},
             {"epochs", v.epochs},
             {"batch_size", v.batch_size},
             {"optimizer", v.optimizer},
             {"network", v.network},
             {"seed", v.seed},
             {"crop_width", v.crop_width},
             {"crop_height", v.crop_height},
             {"residual_norm", v.residual_norm == ResidualNorm::kL1 ? "l1" : "l2"},
             {"freeze_posterior_stddev", v.freeze_posterior_stddev},
             {"mean_only", v.mean_only},
             {"max_steps", v.max_steps},
             {"time_budget_seconds", v.time_budget_seconds},
             {"checkpoint_every", v.checkpoint_every},
             {"validation_passes", v.validation_passes},
             {"validation_limit", v.validation_limit},
             {"output_dir", v.output_dir}};
    j["kl_weight"] = v.kl_weight ? Json(*v.kl_weight) : Json(nullptr);
    j["validation"] = v.validation ? Json(*v.validation) : Json(nullptr);
}

void from_json(const Json& j, TrainConfig& v) {
    require_object(j, "train",
                   {"dataset", "validation", "epochs", "batch_size", "optimizer", "kl_weight", "network",
                    "seed", "crop_width", "crop_height", "residual_norm", "freeze_posterior_stddev",
                    "mean_only", "max_steps", "time_budget_seconds", "checkpoint_every",
                    "validation_passes", "validation_limit", "output_dir"});
    if (j.contains("dataset")) v.dataset = j.at("dataset").get<DatasetSpec>();
    if (j.contains("validation") && !j.at("validation").is_null()) v.validation = j.at("validation").get<DatasetSpec>();
    read(j, "epochs", v.epochs);
    read(j, "batch_size", v.batch_size);
    if (j.contains("optimizer")) v.optimizer = j.at("optimizer").get<RmsPropConfig>();
    if (j.contains("kl_weight") && !j.at("kl_weight").is_null()) v.kl_weight = j.at("kl_weight").get<double>();
    if (j.contains("network")) v.network = j.at("network").get<NetworkConfig>();
    read(j, "seed", v.seed);
    read(j, "crop_width", v.crop_width);
    read(j, "crop_height", v.crop_height);
    if (j.contains("residual_norm")) {
        const auto s = j.at("residual_norm").get<std::string>();
        if (s == "l1") v.residual_norm = ResidualNorm::kL1;
        else if (s == "l2") v.residual_norm = ResidualNorm::kL2;
        else throw ConfigError("residual_norm must be 'l1' or 'l2'");
    }
    read(j, "freeze_posterior_stddev", v.freeze_posterior_stddev);
    read(j, "mean_only", v.mean_only);
    read(j, "max_steps", v.max_steps);
    read(j, "time_budget_seconds", v.time_budget_seconds);
    read(j, "checkpoint_every", v.checkpoint_every);
    read(j, "validation_passes", v.validation_passes);
    read(j, "validation_limit", v.validation_limit);
    read(j, "output_dir", v.output_dir);
}

double TrainConfig::effective_kl_weight(std::size_t pairs_per_epoch) const {
    if (kl_weight) return *kl_weight;
    return pairs_per_epoch > 0 ? 1.0 / static_cast<double>(pairs_per_epoch) : 0.0;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(optimizer.learning_rate > 0)) throw ConfigError("learning rate must be > 0");
    if (!(optimizer.rho >= 0 && optimizer.rho < 1)) throw ConfigError("rho must lie in [0, 1)");
    if (kl_weight && *kl_weight < 0) throw ConfigError("kl_weight must be >= 0");
    if (crop_width < 1 || crop_height < 1) throw ConfigError("crop size must be positive");
    if (validation_passes < 1) throw ConfigError("validation_passes must be >= 1");
    network.validate();
}

void apply_override(Json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(raw);
    } catch (const Json::exception&) {
        value = raw;
    }
    Json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        if (!node->contains(part) || (*node)[part].is_null()) (*node)[part] = Json::object();
        node = &(*node)[part];
        start = dot + 1;
    }
}

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
}

Json build_info() {
    return Json{{"pgcnet", PGCNET_VERSION},
                {"compiler", __VERSION__},
                {"cxx_standard", __cplusplus},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"libpng", png_library_version()},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

}  // namespace pgcnet
