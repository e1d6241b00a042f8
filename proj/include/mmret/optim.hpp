#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmret/tensor.hpp"

namespace mmret {

/// Per-parameter Adam moments. step counts completed updates.
struct AdamState {
    int64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update on a single flat parameter buffer.
/// Throws NumericError on a non-finite gradient.
void adam_step(std::vector<double>& param, const std::vector<double>& grad, AdamState& state, double lr);

struct NamedParam {
    std::string name;
    Tensor tensor;
};

/// Adam over a fixed list of named parameters (shared storage: the tensors
/// here alias the model's).
class Adam {
public:
    explicit Adam(std::vector<NamedParam> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void zero_grad();
    /// Applies one update per parameter from its accumulated gradient.
    void step(double lr);

    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<AdamState>& states() { return states_; }

private:
    std::vector<NamedParam> params_;
    std::vector<AdamState> states_;
};

/// Piecewise-constant decay on the initial rate: every decay_interval steps
/// the multiplier drops by decay_fraction, clamped at zero.
struct LrSchedule {
    double base_lr;
    double decay_fraction = 0.001;
    int decay_interval = 1000;
};

double lr_at_step(const LrSchedule& sched, int64_t t);

}  // namespace mmret
