#pragma once

// Experiment configuration shared by the orchestrator and the command-line front end.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedprog/client.hpp"
#include "fedprog/matching.hpp"

namespace fedprog {

enum class Task { cyclic, noncyclic };
enum class Algo { local_only, central, fedavg, fedma };

Task parse_task(const std::string& s);
Algo parse_algo(const std::string& s);
AverageMode parse_avg_mode(const std::string& s);
PartitionMode parse_partition(const std::string& s);
std::string to_string(Task t);
std::string to_string(Algo a);
std::string to_string(AverageMode m);
std::string to_string(PartitionMode m);

struct ExperimentConfig {
    Task task = Task::cyclic;
    Algo algo = Algo::fedma;
    std::uint64_t seed = 0;

    std::size_t rounds = 20;
    std::size_t local_epochs = 100;    // local-only, central, and the first FedMA round
    std::size_t patience = 10;         // early stopping; 0 disables it
    std::size_t fedavg_epochs = 2;     // E
    std::size_t retrain_epochs = 120;  // full retraining before each later FedMA round
    std::size_t frozen_epochs = 20;    // dense retraining with the fused LSTM frozen

    std::size_t hidden = 128;
    std::size_t batch_size = 32;
    double lr = 0.001;
    double clip_norm = 5.0;
    double validation_fraction = 0.1;
    double forget_bias = 0.0;

    std::size_t seq_len = 0;  // 0: shortest cycle (cyclic) or 50 (noncyclic)
    double train_fraction = 0.7;
    // Labels enter the network as (label - offset) / scale. A scale of 0 selects the
    // task default (cyclic 2.0 / 0.5, noncyclic 0 / rul_cap).
    double label_offset = 0.0;
    double label_scale = 0.0;
    std::size_t rul_cap = kDefaultRulCap;

    MatchConfig match;

    // Data: read from data_dir when set, otherwise synthesized in memory.
    std::filesystem::path data_dir;
    std::size_t clients = 3;
    std::size_t cycles_per_client = 80;
    double heterogeneity = 0.6;
    std::size_t engines = 60;
    std::size_t test_engines = 30;
    PartitionMode partition = PartitionMode::heterogeneous;
    std::vector<std::size_t> boundaries = {200, 350};

    std::filesystem::path out_dir = "out";
    std::size_t threads = 1;
    bool timing = false;  // record wall-clock seconds in the metrics CSV

    /// Throws std::invalid_argument naming the offending key.
    void validate() const;
    std::size_t effective_seq_len(std::size_t shortest_cycle) const;
    LabelScaling labels() const;
    TrainConfig train_config() const;
};

/// key = value lines, one per field, readable back as a config file.
void write_config(std::ostream& out, const ExperimentConfig& cfg);

}  // namespace fedprog
