#include "mmret/optim.hpp"

#include <cmath>

namespace mmret {

void adam_step(std::vector<double>& param, const std::vector<double>& grad, AdamState& state, double lr) {
    if (param.size() != grad.size())
        throw DimensionError("adam_step: param size " + std::to_string(param.size()) +
                             " vs grad size " + std::to_string(grad.size()));
    if (state.m.empty()) state.m.assign(param.size(), 0.0);
    if (state.v.empty()) state.v.assign(param.size(), 0.0);
    if (state.m.size() != param.size() || state.v.size() != param.size())
        throw DimensionError("adam_step: moment buffers do not mirror the parameter shape");
    for (double g : grad)
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in adam_step");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < param.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

Adam::Adam(std::vector<NamedParam> params, double beta1, double beta2, double eps)
    : params_(std::move(params)) {
    states_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        states_[i].beta1 = beta1;
        states_[i].beta2 = beta2;
        states_[i].eps = eps;
        params_[i].tensor.ensure_grad();
    }
}

void Adam::zero_grad() {
    for (NamedParam& p : params_) p.tensor.zero_grad();
}

void Adam::step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
        try {
            adam_step(*params_[i].tensor.data, *params_[i].tensor.grad, states_[i], lr);
        } catch (const NumericError&) {
            throw NumericError("non-finite gradient in parameter '" + params_[i].name + "'");
        }
    }
}

double lr_at_step(const LrSchedule& sched, int64_t t) {
    if (t < 0) throw ConfigError("negative step in lr_at_step");
    const double drops = static_cast<double>(t / sched.decay_interval);
    const double factor = std::max(0.0, 1.0 - sched.decay_fraction * drops);
    return sched.base_lr * factor;
}

}  // namespace mmret
