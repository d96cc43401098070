#include "et/optim.hpp"

#include <cmath>

namespace et::optim {

void adam_step(std::map<std::string, Tensor>& params, AdamState& state, double lr) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
    for (auto& [name, p] : params) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != p.size()) m.assign(p.size(), 0.0);
        if (v.size() != p.size()) v.assign(p.size(), 0.0);
        const bool has_g = p.has_grad();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = has_g ? p.grad()[i] : 0.0;
            if (std::isnan(g)) throw TrainError("NaN gradient in parameter " + name);
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            p.data()[i] -= lr * mh / (std::sqrt(vh) + state.epsilon);
        }
        p.zero_grad();
    }
}

double clip_grad_norm(std::map<std::string, Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            auto pi = p.impl();
            for (auto& g : pi->grad) g *= s;
        }
    }
    return norm;
}

} // namespace et::optim
