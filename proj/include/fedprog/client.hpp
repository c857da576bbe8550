#pragma once

// Client-side training and evaluation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "fedprog/adam.hpp"
#include "fedprog/data.hpp"
#include "fedprog/nn.hpp"

namespace fedprog {

/// Fixed affine map between raw labels (Ah, cycles) and regression targets. Shared by
/// every client of an experiment so the federated output has one meaning.
struct LabelScaling {
    double offset = 0.0;
    double scale = 1.0;

    double to_target(double label) const noexcept { return (label - offset) / scale; }
    double to_label(double target) const noexcept { return target * scale + offset; }
};

struct TrainConfig {
    std::size_t batch_size = 32;
    double clip_norm = 5.0;
    double validation_fraction = 0.1;
    AdamConfig adam;
};

struct ClientState {
    int client_id = 0;
    ModelParams model;
    AdamState optimizer;
    SequenceDataset train;
    SequenceDataset validation;  // chronological tail of the training windows
    LabelScaling labels;
    std::uint64_t rng_seed = 0;  // base_seed + client_id
    std::mt19937_64 rng;

    /// Splits off the last `validation_fraction` of `train_windows` for early stopping.
    static ClientState create(int client_id, ModelParams model, SequenceDataset train_windows,
                              LabelScaling labels, std::uint64_t base_seed,
                              const TrainConfig& cfg = {});

    /// Replace the local model (e.g. with a broadcast federated model) and reset Adam.
    void adopt(ModelParams next);
};

struct TrainReport {
    std::vector<double> train_loss;       // mean batch loss per epoch
    std::vector<double> validation_loss;  // per epoch; training loss when no validation split
    std::size_t best_epoch = 0;           // 1-based, 0 when no epoch ran
};

/// Index batches for one epoch: a shuffle drawn from `rng`, chunked by batch_size.
std::vector<std::vector<std::size_t>> shuffled_batches(std::mt19937_64& rng, std::size_t n,
                                                       std::size_t batch_size);

/// Up to `epochs` passes with early stopping after `patience` epochs without validation
/// improvement. The client keeps the best-validation snapshot.
TrainReport train_local(ClientState& state, std::size_t epochs, std::size_t patience,
                        const TrainConfig& cfg = {});

/// As train_local, but the first `frozen_layer_count` layers are never updated.
/// Throws std::invalid_argument when every layer would be frozen.
TrainReport retrain_frozen_prefix(ClientState& state, std::size_t frozen_layer_count,
                                  std::size_t epochs, std::size_t patience,
                                  const TrainConfig& cfg = {});

/// Root mean squared error on the raw label scale.
double evaluate_rmse(const ModelParams& model, const SequenceDataset& test,
                     const LabelScaling& labels);

std::vector<double> predict_labels(const ModelParams& model, const SequenceDataset& data,
                                   const LabelScaling& labels);

/// Final hidden state of each window restricted to `neurons` (rows: windows).
Tensor2D dump_feature_extractors(const ModelParams& model, std::span<const Window> windows,
                                 std::span<const std::size_t> neurons);

/// CSV with header window_index,neuron_<i>...
void write_feature_csv(const std::filesystem::path& path, const Tensor2D& activations,
                       std::span<const std::size_t> neurons);

}  // namespace fedprog
