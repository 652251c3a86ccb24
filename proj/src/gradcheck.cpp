#include "tdlm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tdlm {

double grad_check(const ScalarFunction& f, std::vector<Tensor> inputs, double h)
{
    std::vector<bool> previous(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        previous[i] = inputs[i].requires_grad();
        inputs[i].set_requires_grad(true);
        inputs[i].zero_grad();
    }
    {
        Tape tape;
        Tensor loss = f(tape);
        tape.backward(loss);
    }

    double worst = 0.0;
    for (auto& input : inputs) {
        std::vector<double> analytic(input.size(), 0.0);
        if (input.has_grad()) std::copy(input.grad().begin(), input.grad().end(), analytic.begin());
        auto values = input.mutable_values();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + h;
            const double up = f(inference_tape()).item();
            values[j] = saved - h;
            const double down = f(inference_tape()).item();
            values[j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic[j] - numeric) / denom);
        }
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        inputs[i].zero_grad();
        inputs[i].set_requires_grad(previous[i]);
    }
    return worst;
}

} // namespace tdlm
