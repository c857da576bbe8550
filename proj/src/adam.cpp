#include "fedprog/adam.hpp"

#include <cmath>

namespace fedprog {

AdamState AdamState::for_model(const ModelParams& model, const AdamConfig& cfg) {
    return {0, ModelParams::zeros(model.meta), ModelParams::zeros(model.meta), cfg};
}

void adam_step(AdamState& state, ModelParams& model, const Gradients& grads,
               std::size_t first_trainable_layer) {
    if (!(state.m.meta == model.meta) || !(grads.meta == model.meta)) {
        throw ShapeError("adam_step: optimizer state / gradients do not match model shape");
    }
    ++state.step;
    const auto& c = state.cfg;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);

    auto p = parameter_blocks(model);
    auto g = parameter_blocks(grads);
    auto m = parameter_blocks(state.m);
    auto v = parameter_blocks(state.v);
    for (std::size_t b = 0; b < kBlockCount; ++b) {
        if (kBlockLayer[b] < first_trainable_layer) continue;
        if (p[b].size() != g[b].size()) throw ShapeError("adam_step: block size mismatch");
        for (std::size_t i = 0; i < p[b].size(); ++i) {
            const double gi = g[b][i];
            m[b][i] = c.beta1 * m[b][i] + (1.0 - c.beta1) * gi;
            v[b][i] = c.beta2 * v[b][i] + (1.0 - c.beta2) * gi * gi;
            const double m_hat = m[b][i] / bc1;
            const double v_hat = v[b][i] / bc2;
            p[b][i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    }
}

}  // namespace fedprog
