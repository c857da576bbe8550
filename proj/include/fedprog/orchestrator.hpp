#pragma once

// Multi-round experiment driver: local-only and central baselines, FedAvg, and FedMA with
// layer-wise matching of the LSTM layer followed by dense-head retraining.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedprog/client.hpp"
#include "fedprog/config.hpp"
#include "fedprog/matching.hpp"

namespace fedprog {

struct ExperimentData {
    std::vector<ClientData> clients;
    std::size_t d_in = 0;
    std::size_t seq_len = 0;
};

/// Reads cfg.data_dir when set (cyclic: client_<j>.csv; noncyclic: train_client_<j>.csv,
/// test.csv, test_rul.txt), otherwise synthesizes the same data in memory.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

struct SynthSummary {
    std::vector<std::string> files;
    std::vector<std::string> client_lines;  // one human-readable line per client
};

/// Writes the synthetic dataset described by cfg into `dir` in the on-disk layout above.
SynthSummary write_synthetic_data(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Runs fn(j) for j in [0, n) on up to `threads` threads; the first exception is rethrown.
void for_each_client(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Client j starts from init_model(seed_j) where seed_j is shared (FedAvg) or per client.
std::vector<ClientState> make_clients(const ExperimentData& data, const ExperimentConfig& cfg,
                                      bool shared_init);

struct RoundRecord {
    std::size_t round = 0;
    Algo algo = Algo::fedma;
    std::vector<double> client_rmse;  // each client's own model after this round's training
    std::vector<double> fed_rmse;     // federated model on each client's test set
    std::size_t hidden_size = 0;      // L' of the federated model
    std::vector<double> imp;          // (baseline - fed) / baseline per client; empty without baseline
    double seconds = 0.0;

    double mean_fed_rmse() const;
    double mean_imp() const;
};

struct ExperimentResult {
    std::vector<RoundRecord> rounds;
    std::vector<double> baseline_rmse;  // local-only RMSE per client
    std::size_t best_round = 0;         // index into rounds, argmin of mean fed RMSE
    ModelParams best_model;             // federated (or central) model of the best round
    std::vector<ModelParams> client_models;  // local-only models

    const RoundRecord& best() const { return rounds.at(best_round); }
};

/// (baseline - value) / baseline.
double improvement(double baseline, double value);

ExperimentResult run_local_only(const ExperimentData& data, const ExperimentConfig& cfg);
ExperimentResult run_central(const ExperimentData& data, const ExperimentConfig& cfg,
                             std::span<const double> baseline = {});
ExperimentResult run_fedavg(const ExperimentData& data, const ExperimentConfig& cfg,
                            std::span<const double> baseline = {});

struct FedmaRoundOutput {
    ModelParams federated;
    RoundRecord record;
    MatchResult match;
};

/// One FedMA round on already-trained clients: match and fuse the LSTM layers, broadcast,
/// retrain the dense heads with the LSTM frozen (cfg.frozen_epochs), average the heads and
/// broadcast the result. Every client ends holding the federated model.
FedmaRoundOutput run_fedma_round(std::vector<ClientState>& clients, std::span<const SequenceDataset> tests,
                                 const ExperimentConfig& cfg, std::size_t round,
                                 std::span<const double> baseline = {});

/// Round 1 trains every client locally for cfg.local_epochs; later rounds first retrain the
/// full model from the federated weights for cfg.retrain_epochs. Without a supplied baseline,
/// the round-1 local RMSEs serve as the local-only baseline.
ExperimentResult run_fedma(const ExperimentData& data, const ExperimentConfig& cfg,
                           std::span<const double> baseline = {});

/// Dispatches on cfg.algo and writes metrics.csv, checkpoint.json (checkpoint_client_<j>.json
/// for local-only) and config.ini into cfg.out_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

void write_metrics_csv(const std::filesystem::path& path, std::span<const RoundRecord> rounds, bool timing);

}  // namespace fedprog
