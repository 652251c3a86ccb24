#pragma once

#include <cstdint>
#include <vector>

#include "tdlm/autodiff.hpp"

namespace tdlm {

struct AdamWConfig {
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Per-parameter moments and the shared step counter.
struct AdamWState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t t = 0;
};

/// One AdamW update over params using their installed gradients (missing
/// gradients count as zero). Weight decay is decoupled and applied before
/// the bias-corrected adaptive step.
void adamw_step(std::vector<Tensor>& params, AdamWState& state, const AdamWConfig& config);

/// Clears the gradients of every tensor in params.
void zero_grad(std::vector<Tensor>& params);

/// Convenience owner of a parameter list and its AdamW state.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {}

    void step() { adamw_step(params_, state_, config_); }
    void zero_grad() { tdlm::zero_grad(params_); }
    const AdamWState& state() const { return state_; }
    AdamWConfig& config() { return config_; }

private:
    std::vector<Tensor> params_;
    AdamWConfig config_;
    AdamWState state_;
};

} // namespace tdlm
