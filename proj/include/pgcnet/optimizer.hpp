#pragma once

#include <string>
#include <vector>

#include "pgcnet/variational.hpp"

namespace pgcnet {

struct RmsPropConfig {
    double learning_rate = 1e-3;
    double rho = 0.9;
    double epsilon = 1e-7;
    friend bool operator==(const RmsPropConfig&, const RmsPropConfig&) = default;
};

/// v <- rho v + (1 - rho) g^2;  p <- p - lr g / (sqrt(v) + eps). State is allocated lazily to
/// match the parameter list on the first step.
template <typename T>
class RmsProp {
public:
    explicit RmsProp(RmsPropConfig cfg = {}) : cfg_(cfg) {}

    const RmsPropConfig& config() const { return cfg_; }
    /// Parameters whose ParamRef::is_raw_scale is set are skipped when `freeze_raw_scale`.
    void step(std::vector<ParamRef<T>>& params, bool freeze_raw_scale = false);

    std::vector<std::vector<T>>& state() { return mean_square_; }
    const std::vector<std::vector<T>>& state() const { return mean_square_; }
    std::uint64_t steps() const { return steps_; }
    void set_steps(std::uint64_t s) { steps_ = s; }

private:
    RmsPropConfig cfg_;
    std::vector<std::vector<T>> mean_square_;
    std::uint64_t steps_ = 0;
};

}  // namespace pgcnet
