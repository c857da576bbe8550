#include "fedprog/config.hpp"

#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace fedprog {

Task parse_task(const std::string& s) {
    if (s == "cyclic") return Task::cyclic;
    if (s == "noncyclic") return Task::noncyclic;
    throw std::invalid_argument("unknown task '" + s + "' (expected cyclic|noncyclic)");
}

Algo parse_algo(const std::string& s) {
    if (s == "local" || s == "local_only") return Algo::local_only;
    if (s == "central") return Algo::central;
    if (s == "fedavg") return Algo::fedavg;
    if (s == "fedma") return Algo::fedma;
    throw std::invalid_argument("unknown algo '" + s + "' (expected local|central|fedavg|fedma)");
}

AverageMode parse_avg_mode(const std::string& s) {
    if (s == "per_match") return AverageMode::per_match;
    if (s == "uniform_j") return AverageMode::uniform_j;
    throw std::invalid_argument("unknown avg_mode '" + s + "' (expected per_match|uniform_j)");
}

PartitionMode parse_partition(const std::string& s) {
    if (s == "heterogeneous") return PartitionMode::heterogeneous;
    if (s == "homogeneous") return PartitionMode::homogeneous;
    throw std::invalid_argument("unknown partition '" + s + "' (expected heterogeneous|homogeneous)");
}

std::string to_string(Task t) { return t == Task::cyclic ? "cyclic" : "noncyclic"; }

std::string to_string(Algo a) {
    switch (a) {
        case Algo::local_only: return "local";
        case Algo::central: return "central";
        case Algo::fedavg: return "fedavg";
        case Algo::fedma: return "fedma";
    }
    return "?";
}

std::string to_string(AverageMode m) { return m == AverageMode::per_match ? "per_match" : "uniform_j"; }

std::string to_string(PartitionMode m) {
    return m == PartitionMode::heterogeneous ? "heterogeneous" : "homogeneous";
}

void ExperimentConfig::validate() const {
    auto require = [](bool ok, const char* key, const char* what) {
        if (!ok) throw std::invalid_argument(std::string(key) + ": " + what);
    };
    require(rounds >= 1, "rounds", "must be >= 1");
    require(local_epochs >= 1, "local_epochs", "must be >= 1");
    require(fedavg_epochs >= 1, "fedavg_epochs", "must be >= 1");
    require(hidden >= 1, "hidden", "must be >= 1");
    require(batch_size >= 1, "batch_size", "must be >= 1");
    require(lr > 0.0, "lr", "must be positive");
    require(validation_fraction >= 0.0 && validation_fraction < 1.0, "validation_fraction", "must be in [0, 1)");
    require(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction", "must be in (0, 1)");
    require(label_scale >= 0.0, "label_scale", "must be >= 0");
    require(rul_cap >= 1, "rul_cap", "must be >= 1");
    require(clients >= 1, "clients", "must be >= 1");
    require(cycles_per_client >= 4, "cycles_per_client", "must be >= 4");
    require(engines >= clients, "engines", "must be >= clients");
    require(test_engines >= 1, "test_engines", "must be >= 1");
    require(threads >= 1, "threads", "must be >= 1");
    match.validate();
}

std::size_t ExperimentConfig::effective_seq_len(std::size_t shortest_cycle) const {
    if (seq_len > 0) return seq_len;
    return task == Task::cyclic ? shortest_cycle : 50;
}

LabelScaling ExperimentConfig::labels() const {
    if (label_scale > 0.0) return {label_offset, label_scale};
    if (task == Task::cyclic) return {2.0, 0.5};
    return {0.0, static_cast<double>(rul_cap)};
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig t;
    t.batch_size = batch_size;
    t.clip_norm = clip_norm;
    t.validation_fraction = validation_fraction;
    t.adam.lr = lr;
    return t;
}

void write_config(std::ostream& out, const ExperimentConfig& c) {
    out << std::setprecision(17);
    out << "task = " << to_string(c.task) << '\n'
        << "algo = " << to_string(c.algo) << '\n'
        << "seed = " << c.seed << '\n'
        << "rounds = " << c.rounds << '\n'
        << "local_epochs = " << c.local_epochs << '\n'
        << "patience = " << c.patience << '\n'
        << "fedavg_epochs = " << c.fedavg_epochs << '\n'
        << "retrain_epochs = " << c.retrain_epochs << '\n'
        << "frozen_epochs = " << c.frozen_epochs << '\n'
        << "hidden = " << c.hidden << '\n'
        << "batch_size = " << c.batch_size << '\n'
        << "lr = " << c.lr << '\n'
        << "clip_norm = " << c.clip_norm << '\n'
        << "validation_fraction = " << c.validation_fraction << '\n'
        << "forget_bias = " << c.forget_bias << '\n'
        << "seq_len = " << c.seq_len << '\n'
        << "train_fraction = " << c.train_fraction << '\n'
        << "label_offset = " << c.label_offset << '\n'
        << "label_scale = " << c.label_scale << '\n'
        << "rul_cap = " << c.rul_cap << '\n'
        << "sigma_sq = " << c.match.sigma_sq << '\n'
        << "sigma0_sq = " << c.match.sigma0_sq << '\n'
        << "eps_scale = " << c.match.eps_scale << '\n'
        << "penalty_kappa = " << c.match.penalty_kappa << '\n'
        << "passes = " << c.match.passes << '\n'
        << "avg_mode = " << to_string(c.match.avg_mode) << '\n'
        << "data_dir = " << c.data_dir.string() << '\n'
        << "clients = " << c.clients << '\n'
        << "cycles_per_client = " << c.cycles_per_client << '\n'
        << "heterogeneity = " << c.heterogeneity << '\n'
        << "engines = " << c.engines << '\n'
        << "test_engines = " << c.test_engines << '\n'
        << "partition = " << to_string(c.partition) << '\n'
        << "boundaries = ";
    for (std::size_t i = 0; i < c.boundaries.size(); ++i) out << (i ? "," : "") << c.boundaries[i];
    out << '\n' << "threads = " << c.threads << '\n' << "timing = " << (c.timing ? "true" : "false") << '\n';
}

}  // namespace fedprog
