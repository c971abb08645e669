#include "pgcnet/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "pgcnet/data_io.hpp"
#include "pgcnet/inference.hpp"

namespace pgcnet {

namespace {

constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kWeightStream = 1;
constexpr std::uint64_t kCropStream = 2;
constexpr std::uint64_t kShuffleStream = 1000;

double masked_mae(const Grid<float>& d_hat, const StereoSample& s) {
    const Mask valid = effective_mask(s.gt_disparity, s.valid_mask);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < valid.size(); ++i) {
        if (!valid[i]) continue;
        sum += std::abs(static_cast<double>(d_hat[i]) - s.gt_disparity[i]);
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

void dump_nonfinite(const TrainConfig& cfg, const StepRecord& rec) {
    Json j{{"step", rec.step},
           {"epoch", rec.epoch},
           {"sample", rec.sample},
           {"regression", std::isfinite(rec.loss.regression) ? Json(rec.loss.regression) : Json("non-finite")},
           {"kl", std::isfinite(rec.loss.kl) ? Json(rec.loss.kl) : Json("non-finite")},
           {"kl_weight", rec.loss.kl_weight}};
    std::string where;
    if (!cfg.output_dir.empty()) {
        const auto path = std::filesystem::path(cfg.output_dir) / ("nonfinite_step_" + std::to_string(rec.step) + ".json");
        std::ofstream(path) << j.dump(2) << "\n";
        where = " (diagnostics in " + path.string() + ")";
    }
    throw NumericalError("non-finite loss at step " + std::to_string(rec.step) + ": " + j.dump() + where);
}

}  // namespace

TrainSession::TrainSession(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      net_((cfg_.validate(), cfg_.network), derive_seed(cfg_.seed, kInitStream)),
      opt_(cfg_.optimizer),
      weight_rng_(derive_stream(cfg_.seed, kWeightStream)),
      crop_rng_(derive_stream(cfg_.seed, kCropStream)) {}

TrainSession::TrainSession(TrainConfig cfg, const Checkpoint& resume) : TrainSession(std::move(cfg)) {
    restore_parameters(net_, resume);
    opt_ = RmsProp<float>(cfg_.optimizer);
    opt_.state() = resume.optimizer_state;
    opt_.set_steps(resume.optimizer_steps);
    if (!resume.weight_rng_state.empty()) weight_rng_ = deserialize_rng(resume.weight_rng_state);
    if (!resume.crop_rng_state.empty()) crop_rng_ = deserialize_rng(resume.crop_rng_state);
    step_ = resume.step;
    epoch_ = static_cast<int>(resume.epoch);
}

StepRecord TrainSession::train_step(std::span<const StereoSample> batch, double kl_weight) {
    if (batch.empty()) throw ParameterError("empty training batch");
    const SamplingMode mode = cfg_.mean_only ? SamplingMode::kMeanOnly : SamplingMode::kStochastic;
    net_.zero_grad();
    StepRecord rec;
    rec.step = step_;
    rec.epoch = epoch_;
    rec.sample = batch.front().name;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& sample : batch) {
        ForwardOutput<float> fwd;
        // Each element contributes regression/B; the KL term is added once per step.
        const LossBreakdown l = loss_and_gradients(net_, sample, mode, weight_rng_, kl_weight * inv_b,
                                                   cfg_.residual_norm, &fwd);
        rec.loss.regression += l.regression * inv_b;
        rec.crop_mae += masked_mae(fwd.disparity, sample) * inv_b;
        double sum_s = 0.0;
        double min_s = std::numeric_limits<double>::infinity();
        for (float v : fwd.log_variance.values()) {
            sum_s += v;
            min_s = std::min(min_s, static_cast<double>(v));
        }
        rec.mean_log_variance += sum_s / static_cast<double>(fwd.log_variance.size()) * inv_b;
        rec.min_log_variance = &sample == &batch.front() ? min_s : std::min(rec.min_log_variance, min_s);
    }
    rec.loss.kl = net_.kl_total();
    rec.loss.kl_weight = kl_weight;
    rec.loss.total = rec.loss.regression + kl_weight * rec.loss.kl;
    if (!std::isfinite(rec.loss.total)) dump_nonfinite(cfg_, rec);
    if (batch.size() > 1) {
        for (auto& p : net_.parameters()) {
            for (auto& g : p.grad) g = static_cast<float>(g * inv_b);
        }
        // KL gradients were scaled by kl_weight / B per element and summed: B * (w / B) / B.
        net_.accumulate_kl_grad(kl_weight * (1.0 - inv_b));
    }
    auto params = net_.parameters();
    opt_.step(params, cfg_.freeze_posterior_stddev);
    ++step_;
    return rec;
}

TrainResult TrainSession::run(const std::function<void(const StepRecord&)>& on_step) {
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const Dataset data(cfg_.dataset);
    if (data.size() == 0) throw DataError("training dataset is empty");
    const double kl_weight = cfg_.effective_kl_weight(data.size());
    TrainResult result;
    auto save = [&] {
        if (cfg_.output_dir.empty()) return;
        std::filesystem::create_directories(cfg_.output_dir);
        save_checkpoint(std::filesystem::path(cfg_.output_dir) / "checkpoint.bin", checkpoint());
    };
    bool stop = false;
    for (; epoch_ < cfg_.epochs && !stop; ++epoch_) {
        if (cfg_.time_budget_seconds > 0 && elapsed() > cfg_.time_budget_seconds) break;
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = derive_stream(cfg_.seed, kShuffleStream + static_cast<std::uint64_t>(epoch_));
        std::shuffle(order.begin(), order.end(), shuffle);
        for (std::size_t i = 0; i < order.size() && !stop; i += cfg_.batch_size) {
            std::vector<StereoSample> batch;
            for (std::size_t k = i; k < std::min(order.size(), i + cfg_.batch_size); ++k) {
                batch.push_back(random_crop(data.load(order[k]), cfg_.crop_width, cfg_.crop_height, crop_rng_));
            }
            StepRecord rec = train_step(batch, kl_weight);
            if (on_step) on_step(rec);
            result.log.push_back(std::move(rec));
            if (cfg_.max_steps > 0 && step_ >= cfg_.max_steps) stop = true;
        }
        if (!stop) {
            result.epochs_completed = epoch_ + 1;
            if (cfg_.checkpoint_every > 0 && (epoch_ + 1) % cfg_.checkpoint_every == 0) {
                ++epoch_;
                save();
                --epoch_;
            }
        }
    }
    save();
    if (cfg_.validation) {
        const Dataset val(*cfg_.validation);
        if (val.size() > 0) {
            result.validation = evaluate_dataset(net_, val, cfg_.validation_passes,
                                                 derive_seed(cfg_.seed, 7), cfg_.validation_limit);
        }
    }
    result.steps = step_;
    result.seconds = elapsed();
    return result;
}

Checkpoint TrainSession::checkpoint() {
    Checkpoint c = capture_checkpoint(net_, &opt_);
    c.weight_rng_state = serialize_rng(weight_rng_);
    c.crop_rng_state = serialize_rng(crop_rng_);
    c.epoch = static_cast<std::uint64_t>(epoch_);
    c.step = step_;
    return c;
}

MetricsReport evaluate_dataset(Network<float>& net, const Dataset& data, int passes, std::uint64_t seed,
                               int limit) {
    MetricsAccumulator acc;
    const std::size_t n = limit > 0 ? std::min<std::size_t>(limit, data.size()) : data.size();
    for (std::size_t i = 0; i < n; ++i) {
        const StereoSample s = data.load(i);
        if (!s.has_ground_truth()) continue;
        const UncertainDisparity u = mc_predict(net, s, passes, derive_seed(seed, i));
        acc.merge(accumulate_metrics(u.mean_disparity, s.gt_disparity, s.valid_mask, &u));
    }
    return acc.report();
}

}  // namespace pgcnet
