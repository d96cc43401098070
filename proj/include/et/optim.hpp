#pragma once

#include "et/tensor.hpp"

#include <map>
#include <string>

namespace et::optim {

// Standard bias-corrected Adam over a named parameter group.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step = 0;
    std::map<std::string, std::vector<double>> m; // first moments, keyed like params
    std::map<std::string, std::vector<double>> v; // second moments
};

// One update over every parameter in the group. Parameters without a
// populated gradient are treated as zero-gradient (moments still decay).
// Throws TrainError on a NaN gradient. Gradients are cleared afterwards.
void adam_step(std::map<std::string, Tensor>& params, AdamState& state, double lr);

// Global-norm gradient clipping; returns the pre-clip norm.
double clip_grad_norm(std::map<std::string, Tensor>& params, double max_norm);

} // namespace et::optim
