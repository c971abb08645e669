#include "pgcnet/optimizer.hpp"

#include <cmath>

namespace pgcnet {

template <typename T>
void RmsProp<T>::step(std::vector<ParamRef<T>>& params, bool freeze_raw_scale) {
    if (mean_square_.empty()) {
        for (const auto& p : params) mean_square_.emplace_back(p.value.size(), T(0));
    }
    if (mean_square_.size() != params.size()) throw ShapeError("optimizer state does not match parameters");
    const T rho = static_cast<T>(cfg_.rho);
    const T lr = static_cast<T>(cfg_.learning_rate);
    const T eps = static_cast<T>(cfg_.epsilon);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        auto& v = mean_square_[k];
        if (v.size() != p.value.size()) throw ShapeError("optimizer state size mismatch for " + p.name);
        if (freeze_raw_scale && p.is_raw_scale) continue;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const T g = p.grad[i];
            v[i] = rho * v[i] + (T(1) - rho) * g * g;
            p.value[i] -= lr * g / (std::sqrt(v[i]) + eps);
        }
    }
    ++steps_;
}

template class RmsProp<float>;
template class RmsProp<double>;

}  // namespace pgcnet
