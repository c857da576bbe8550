#pragma once

// One-layer LSTM regressor: parameter containers, forward pass, BPTT and loss.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "fedprog/tensor.hpp"

namespace fedprog {

/// Training diverged (NaN/Inf loss or gradient).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Gate blocks along the 4L axis of every LSTM parameter, in storage order.
enum class Gate : std::size_t { input = 0, forget = 1, cell = 2, output = 3 };
inline constexpr std::size_t kGateCount = 4;
inline constexpr std::array<std::string_view, kGateCount> kGateOrder = {"input", "forget", "cell",
                                                                       "output"};

/// LSTM layer followed by a dense head.
inline constexpr std::size_t kLayerCount = 2;

struct LstmLayerParams {
    Tensor2D w_ih;             // (4L, D_in)
    Tensor2D w_hh;             // (4L, L)
    std::vector<double> b_ih;  // 4L
    std::vector<double> b_hh;  // 4L

    static LstmLayerParams zeros(std::size_t d_in, std::size_t hidden);

    std::size_t hidden() const noexcept { return w_hh.cols(); }
    std::size_t input_size() const noexcept { return w_ih.cols(); }

    /// Throws ShapeError unless all four blocks agree on L and D_in.
    void validate() const;

    friend bool operator==(const LstmLayerParams&, const LstmLayerParams&) = default;
};

struct DenseLayerParams {
    Tensor2D w;             // (1, L)
    std::vector<double> b;  // 1

    static DenseLayerParams zeros(std::size_t hidden);

    friend bool operator==(const DenseLayerParams&, const DenseLayerParams&) = default;
};

struct ModelMeta {
    std::size_t d_in = 0;
    std::size_t hidden = 0;
    std::size_t seq_len = 0;

    friend bool operator==(const ModelMeta&, const ModelMeta&) = default;
};

struct ModelParams {
    LstmLayerParams lstm;
    DenseLayerParams dense;
    ModelMeta meta;

    static ModelParams zeros(const ModelMeta& meta);

    void validate() const;
    std::size_t parameter_count() const noexcept;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Gradients share the parameter layout.
using Gradients = ModelParams;

/// Number of flat parameter blocks: w_ih, w_hh, b_ih, b_hh, dense.w, dense.b.
inline constexpr std::size_t kBlockCount = 6;
/// Layer index (0 = LSTM, 1 = dense) owning each flat block.
inline constexpr std::array<std::size_t, kBlockCount> kBlockLayer = {0, 0, 0, 0, 1, 1};

std::array<std::span<double>, kBlockCount> parameter_blocks(ModelParams& m);
std::array<std::span<const double>, kBlockCount> parameter_blocks(const ModelParams& m);

/// Weights ~ U[-1/sqrt(hidden), 1/sqrt(hidden)], biases zero except the forget gate
/// bias which is set to `forget_bias` in b_ih.
ModelParams init_model(std::size_t d_in, std::size_t hidden, std::size_t seq_len,
                       std::uint64_t seed, double forget_bias = 0.0);

/// Activations recorded by a forward pass; row t holds step t (0-based).
struct LstmTrace {
    Tensor2D gates;  // (T, 4L) post-activation [input, forget, cell, output]
    Tensor2D cell;   // (T, L)
    Tensor2D hidden; // (T, L)

    std::span<const double> final_hidden() const { return hidden.row(hidden.rows() - 1); }
};

/// h_0 = z_0 = 0. Throws DataQualityError on non-finite input.
LstmTrace lstm_forward(const LstmLayerParams& params, const Tensor2D& x);

/// Final hidden state only; cheaper than a full trace.
std::vector<double> lstm_final_hidden(const LstmLayerParams& params, const Tensor2D& x);

double dense_forward(const DenseLayerParams& dense, std::span<const double> h);

/// Identity-activated dense head on the final hidden state.
double predict(const ModelParams& model, const Tensor2D& x);

double mse_loss(std::span<const double> preds, std::span<const double> labels);

/// One regression example; `x` must outlive the call that consumes it.
struct Example {
    const Tensor2D* x = nullptr;
    double target = 0.0;
};

struct BackwardResult {
    double loss = 0.0;  // mean squared error over the batch
    Gradients grads;
};

/// Gradients of the mean batch MSE. With `lstm_grads == false` only the dense head is
/// differentiated and the LSTM gradient blocks are left zero.
BackwardResult backward(const ModelParams& model, std::span<const Example> batch,
                        bool lstm_grads = true);

/// Dense-head gradients given precomputed final hidden states (frozen LSTM).
BackwardResult backward_dense(const DenseLayerParams& dense, const ModelMeta& meta,
                              std::span<const std::vector<double>* const> features,
                              std::span<const double> targets);

/// Rescales gradients of layers >= first_layer so their joint L2 norm is <= max_norm.
/// max_norm <= 0 disables clipping. Returns the pre-clip norm.
double clip_global_norm(Gradients& grads, double max_norm, std::size_t first_layer = 0);

}  // namespace fedprog
