#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "pgcnet/dataset.hpp"
#include "pgcnet/network.hpp"
#include "pgcnet/objective.hpp"
#include "pgcnet/optimizer.hpp"
#include "pgcnet/synth.hpp"

namespace pgcnet {

using Json = nlohmann::json;

struct TrainConfig {
    DatasetSpec dataset;
    std::optional<DatasetSpec> validation;
    int epochs = 12;
    int batch_size = 1;
    RmsPropConfig optimizer;
    /// Defaults to 1 / (training pairs per epoch) when unset.
    std::optional<double> kl_weight;
    NetworkConfig network;
    std::uint64_t seed = 0;
    int crop_width = 256;
    int crop_height = 128;
    ResidualNorm residual_norm = ResidualNorm::kL1;
    /// Keeps every posterior raw scale at its initial value.
    bool freeze_posterior_stddev = false;
    /// Trains with posterior means only (deterministic baseline).
    bool mean_only = false;
    /// Stop after this many optimizer steps (0 = full schedule).
    std::uint64_t max_steps = 0;
    /// Stop starting new epochs once this wall time (seconds) is exceeded (0 = unlimited).
    double time_budget_seconds = 0.0;
    /// Checkpoint every N epochs (0 = only at the end).
    int checkpoint_every = 1;
    /// Passes T used for the validation report.
    int validation_passes = 10;
    /// Validation pairs used (0 = all).
    int validation_limit = 0;
    std::string output_dir;

    double effective_kl_weight(std::size_t pairs_per_epoch) const;
    void validate() const;
};

// JSON conversions; readers reject unknown keys.
void to_json(Json& j, const PriorSpec& v);
void from_json(const Json& j, PriorSpec& v);
void to_json(Json& j, const NetworkConfig& v);
void from_json(const Json& j, NetworkConfig& v);
void to_json(Json& j, const SynthParams& v);
void from_json(const Json& j, SynthParams& v);
void to_json(Json& j, const DatasetSpec& v);
void from_json(const Json& j, DatasetSpec& v);
void to_json(Json& j, const RmsPropConfig& v);
void from_json(const Json& j, RmsPropConfig& v);
void to_json(Json& j, const TrainConfig& v);
void from_json(const Json& j, TrainConfig& v);

std::string to_string(DomainShift v);
std::string to_string(DatasetKind v);
std::string to_string(Split v);
std::string to_string(Perturbation v);
DomainShift parse_domain_shift(const std::string& s);
DatasetKind parse_dataset_kind(const std::string& s);
Split parse_split(const std::string& s);
Perturbation parse_perturbation(const std::string& s);

/// Applies "a.b.c=value" overrides; the value is parsed as JSON, falling back to a string.
void apply_override(Json& config, const std::string& assignment);

Json read_json_file(const std::string& path);

/// Library, compiler and dependency versions for run records.
Json build_info();

}  // namespace pgcnet
