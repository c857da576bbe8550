#pragma once

#include <cstddef>

#include "fedprog/nn.hpp"

namespace fedprog {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// First/second moment estimates mirroring a ModelParams layout.
struct AdamState {
    std::size_t step = 0;
    Gradients m;
    Gradients v;
    AdamConfig cfg;

    static AdamState for_model(const ModelParams& model, const AdamConfig& cfg = {});

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update of every block whose layer index is >= first_trainable_layer.
/// Moments of frozen blocks are left untouched; the step counter always advances.
void adam_step(AdamState& state, ModelParams& model, const Gradients& grads,
               std::size_t first_trainable_layer = 0);

}  // namespace fedprog
