#include "tdlm/optim.hpp"

#include <cmath>

namespace tdlm {

void adamw_step(std::vector<Tensor>& params, AdamWState& state, const AdamWConfig& config)
{
    if (!(config.lr > 0.0)) throw ParameterError("adamw: learning rate must be positive");
    if (state.t < 0) throw StateError("adamw: negative step counter");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0);
            state.v[i].assign(params[i].size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw DimensionError("adamw: state/parameter count mismatch");

    state.t += 1;
    const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].mutable_values();
        auto grad = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != values.size()) throw DimensionError("adamw: moment shape mismatch");
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            values[j] -= config.lr * config.weight_decay * values[j];
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            values[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
        }
    }
}

void zero_grad(std::vector<Tensor>& params)
{
    for (auto& p : params) p.zero_grad();
}

} // namespace tdlm
