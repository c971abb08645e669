#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pgcnet/checkpoint.hpp"
#include "pgcnet/config.hpp"
#include "pgcnet/evaluation.hpp"

namespace pgcnet {

struct StepRecord {
    std::uint64_t step = 0;
    int epoch = 0;
    std::string sample;
    LossBreakdown loss;
    double crop_mae = 0.0;  // px, single training pass vs ground truth
    double mean_log_variance = 0.0;  // s over the crop
    double min_log_variance = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> log;
    std::optional<MetricsReport> validation;
    std::uint64_t steps = 0;
    int epochs_completed = 0;
    double seconds = 0.0;
};

/// Owns the network, optimizer and random streams of one training run. Each step takes one
/// crop per batch element, draws one weight set, and applies one RMSProp update.
class TrainSession {
public:
    explicit TrainSession(TrainConfig cfg);
    /// Continues from a checkpoint written by this class; the network config must match.
    TrainSession(TrainConfig cfg, const Checkpoint& resume);

    const TrainConfig& config() const { return cfg_; }
    Network<float>& network() { return net_; }
    RmsProp<float>& optimizer() { return opt_; }
    std::uint64_t steps_done() const { return step_; }
    int epoch() const { return epoch_; }

    StepRecord train_step(std::span<const StereoSample> batch, double kl_weight);
    TrainResult run(const std::function<void(const StepRecord&)>& on_step = {});

    Checkpoint checkpoint();

private:
    TrainConfig cfg_;
    Network<float> net_;
    RmsProp<float> opt_;
    Rng weight_rng_;
    Rng crop_rng_;
    std::uint64_t step_ = 0;
    int epoch_ = 0;
};

/// Dataset-level report from T-pass Monte-Carlo predictions (counts merged across images).
MetricsReport evaluate_dataset(Network<float>& net, const Dataset& data, int passes,
                               std::uint64_t seed, int limit = 0);

}  // namespace pgcnet
