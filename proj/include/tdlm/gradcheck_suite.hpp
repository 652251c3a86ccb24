#pragma once

#include <string>
#include <vector>

namespace tdlm {

struct GradCheckCase {
    std::string name;
    double error = 0.0;
};

/// Gradient checks for every differentiable op plus a two-layer toy
/// transformer. Inputs are fixed draws, so results are reproducible.
std::vector<GradCheckCase> run_gradcheck_suite(double h = 1e-6);

} // namespace tdlm
