#include "fedprog/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "fedprog/checkpoint.hpp"
#include "fedprog/synthetic.hpp"

namespace fedprog {

namespace {

// splitmix64 finalizer; decorrelates seeds derived from one base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::filesystem::path client_file(const std::filesystem::path& dir, const char* prefix, std::size_t j) {
    return dir / (std::string(prefix) + std::to_string(j) + ".csv");
}

SyntheticCyclicConfig cyclic_config(const ExperimentConfig& cfg) {
    SyntheticCyclicConfig s;
    s.n_clients = cfg.clients;
    s.cycles_per_client = cfg.cycles_per_client;
    s.seed = cfg.seed;
    s.heterogeneity = cfg.heterogeneity;
    return s;
}

struct SyntheticFleet {
    std::vector<std::vector<RawEngine>> train;  // per client
    std::vector<RawEngine> test;
    std::vector<double> test_rul;
};

// Train and test engines come from one generator call so they share the fleet-wide
// sensor model; the last test_engines engines are truncated for testing.
SyntheticFleet synthesize_fleet(const ExperimentConfig& cfg, std::size_t window) {
    SyntheticEngineConfig s;
    s.n_engines = cfg.engines + cfg.test_engines;
    s.seed = cfg.seed;
    auto all = gen_synthetic_noncyclic(s);
    std::vector<SyntheticEngine> test(all.begin() + static_cast<std::ptrdiff_t>(cfg.engines), all.end());
    all.resize(cfg.engines);

    SyntheticFleet fleet;
    fleet.test_rul = truncate_for_test(test, window, cfg.seed);
    for (auto& e : test) fleet.test.push_back(std::move(e.raw));

    std::vector<EngineRecord> records;
    std::map<int, const RawEngine*> by_id;
    for (const auto& e : all) {
        records.push_back(engine_from_raw(e.raw, cfg.rul_cap));
        by_id[e.raw.engine_id] = &e.raw;
    }
    auto parts = partition_clients(std::move(records), cfg.partition, cfg.boundaries, cfg.clients, cfg.seed);
    for (const auto& part : parts) {
        auto& raw = fleet.train.emplace_back();
        for (const auto& rec : part) raw.push_back(*by_id.at(rec.engine_id));
    }
    return fleet;
}

std::size_t shortest_cycle(const std::vector<std::vector<CyclicRecord>>& per_client) {
    std::size_t shortest = std::numeric_limits<std::size_t>::max();
    for (const auto& c : per_client) {
        for (const auto& r : c) shortest = std::min(shortest, r.length());
    }
    return shortest;
}

ExperimentData assemble_cyclic(const std::vector<std::vector<CyclicRecord>>& per_client,
                               const ExperimentConfig& cfg) {
    ExperimentData data;
    data.seq_len = cfg.effective_seq_len(shortest_cycle(per_client));
    for (const auto& cycles : per_client) {
        data.clients.push_back(prepare_cyclic_client(cycles, data.seq_len, cfg.train_fraction));
    }
    data.d_in = data.clients.front().train.feature_count();
    return data;
}

ExperimentData assemble_engines(const std::vector<std::vector<EngineRecord>>& train,
                                const std::vector<EngineRecord>& test, std::size_t window) {
    ExperimentData data;
    data.seq_len = window;
    for (const auto& engines : train) {
        data.clients.push_back(prepare_engine_client(engines, test, window));
        if (data.clients.back().test.empty()) {
            throw InsufficientLengthError("no test engine is at least " + std::to_string(window) + " cycles long");
        }
    }
    data.d_in = data.clients.front().train.feature_count();
    return data;
}

std::vector<EngineRecord> to_records(std::span<const RawEngine> raw, std::size_t cap) {
    std::vector<EngineRecord> out;
    for (const auto& r : raw) out.push_back(engine_from_raw(r, cap));
    return out;
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto& dir = cfg.data_dir;
    if (cfg.task == Task::cyclic) {
        std::vector<std::vector<CyclicRecord>> per_client;
        if (dir.empty()) {
            per_client = gen_synthetic_cyclic(cyclic_config(cfg));
        } else {
            for (std::size_t j = 0; std::filesystem::exists(client_file(dir, "client_", j)); ++j) {
                per_client.push_back(load_cyclic_csv(client_file(dir, "client_", j)));
            }
            if (per_client.empty()) throw std::runtime_error("no client_0.csv in " + dir.string());
        }
        return assemble_cyclic(per_client, cfg);
    }

    const std::size_t window = cfg.effective_seq_len(0);
    std::vector<std::vector<EngineRecord>> train;
    std::vector<EngineRecord> test;
    if (dir.empty()) {
        auto fleet = synthesize_fleet(cfg, window);
        for (const auto& c : fleet.train) train.push_back(to_records(c, cfg.rul_cap));
        test = to_records(fleet.test, cfg.rul_cap);
        attach_test_rul(test, fleet.test_rul, cfg.rul_cap);
    } else {
        for (std::size_t j = 0; std::filesystem::exists(client_file(dir, "train_client_", j)); ++j) {
            train.push_back(load_engine_csv(client_file(dir, "train_client_", j), cfg.rul_cap));
        }
        if (train.empty()) throw std::runtime_error("no train_client_0.csv in " + dir.string());
        test = load_engine_csv(dir / "test.csv", cfg.rul_cap);
        attach_test_rul(test, load_rul_file(dir / "test_rul.txt"), cfg.rul_cap);
    }
    return assemble_engines(train, test, window);
}

SynthSummary write_synthetic_data(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    cfg.validate();
    std::filesystem::create_directories(dir);
    SynthSummary summary;
    std::ostringstream line;
    line << std::fixed << std::setprecision(3);
    if (cfg.task == Task::cyclic) {
        const auto per_client = gen_synthetic_cyclic(cyclic_config(cfg));
        for (std::size_t j = 0; j < per_client.size(); ++j) {
            const auto path = client_file(dir, "client_", j);
            write_cyclic_csv(path, per_client[j]);
            summary.files.push_back(path.string());
            const auto& c = per_client[j];
            std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
            for (const auto& r : c) {
                lo = std::min(lo, r.length());
                hi = std::max(hi, r.length());
            }
            line.str("");
            line << "client " << j << ": " << c.size() << " cycles, length " << lo << "-" << hi
                 << ", capacity " << c.front().capacity << " -> " << c.back().capacity << " Ah";
            summary.client_lines.push_back(line.str());
        }
        return summary;
    }

    const auto fleet = synthesize_fleet(cfg, cfg.effective_seq_len(0));
    for (std::size_t j = 0; j < fleet.train.size(); ++j) {
        const auto path = client_file(dir, "train_client_", j);
        write_engine_csv(path, fleet.train[j]);
        summary.files.push_back(path.string());
        std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
        for (const auto& e : fleet.train[j]) {
            lo = std::min(lo, e.readings.rows());
            hi = std::max(hi, e.readings.rows());
        }
        line.str("");
        line << "client " << j << ": " << fleet.train[j].size() << " engines, lifespan " << lo << "-" << hi;
        summary.client_lines.push_back(line.str());
    }
    write_engine_csv(dir / "test.csv", fleet.test);
    write_rul_file(dir / "test_rul.txt", fleet.test_rul);
    summary.files.push_back((dir / "test.csv").string());
    summary.files.push_back((dir / "test_rul.txt").string());
    return summary;
}

void for_each_client(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::min(std::max<std::size_t>(threads, 1), n);
    if (threads <= 1) {
        for (std::size_t j = 0; j < n; ++j) fn(j);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t j = next++; j < n; j = next++) {
                try {
                    fn(j);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

std::vector<ClientState> make_clients(const ExperimentData& data, const ExperimentConfig& cfg,
                                      bool shared_init) {
    std::vector<ClientState> clients;
    const auto tc = cfg.train_config();
    for (std::size_t j = 0; j < data.clients.size(); ++j) {
        const auto init_seed = mix_seed(cfg.seed, shared_init ? 0 : j + 1);
        auto model = init_model(data.d_in, cfg.hidden, data.seq_len, init_seed, cfg.forget_bias);
        clients.push_back(ClientState::create(static_cast<int>(j), std::move(model), data.clients[j].train,
                                              cfg.labels(), cfg.seed, tc));
    }
    return clients;
}

double RoundRecord::mean_fed_rmse() const {
    if (fed_rmse.empty()) return 0.0;
    return std::accumulate(fed_rmse.begin(), fed_rmse.end(), 0.0) / static_cast<double>(fed_rmse.size());
}

double RoundRecord::mean_imp() const {
    if (imp.empty()) return 0.0;
    return std::accumulate(imp.begin(), imp.end(), 0.0) / static_cast<double>(imp.size());
}

double improvement(double baseline, double value) {
    if (!(baseline > 0.0)) throw std::invalid_argument("improvement: baseline RMSE must be positive");
    return (baseline - value) / baseline;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> evaluate_all(const ModelParams& model, const ExperimentData& data, const LabelScaling& labels) {
    std::vector<double> out;
    for (const auto& c : data.clients) out.push_back(evaluate_rmse(model, c.test, labels));
    return out;
}

void fill_imp(RoundRecord& rec, std::span<const double> baseline) {
    rec.imp.clear();
    if (baseline.empty()) return;
    if (baseline.size() != rec.fed_rmse.size()) {
        throw std::invalid_argument("baseline has " + std::to_string(baseline.size()) + " clients, round has " +
                                    std::to_string(rec.fed_rmse.size()));
    }
    for (std::size_t j = 0; j < baseline.size(); ++j) rec.imp.push_back(improvement(baseline[j], rec.fed_rmse[j]));
}

// Tracks the argmin of the mean federated RMSE; earliest round wins ties.
void record_round(ExperimentResult& res, RoundRecord rec, const ModelParams& model) {
    if (res.rounds.empty() || rec.mean_fed_rmse() < res.best().mean_fed_rmse()) {
        res.best_round = res.rounds.size();
        res.best_model = model;
    }
    res.rounds.push_back(std::move(rec));
}

std::vector<SequenceDataset> test_sets(const ExperimentData& data) {
    std::vector<SequenceDataset> t;
    for (const auto& c : data.clients) t.push_back(c.test);
    return t;
}

}  // namespace

ExperimentResult run_local_only(const ExperimentData& data, const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = Clock::now();
    auto clients = make_clients(data, cfg, false);
    const auto tc = cfg.train_config();
    for_each_client(clients.size(), cfg.threads,
                    [&](std::size_t j) { train_local(clients[j], cfg.local_epochs, cfg.patience, tc); });

    ExperimentResult res;
    RoundRecord rec;
    rec.round = 1;
    rec.algo = Algo::local_only;
    rec.hidden_size = cfg.hidden;
    for (std::size_t j = 0; j < clients.size(); ++j) {
        rec.client_rmse.push_back(evaluate_rmse(clients[j].model, data.clients[j].test, clients[j].labels));
        res.client_models.push_back(clients[j].model);
    }
    rec.fed_rmse = rec.client_rmse;
    res.baseline_rmse = rec.client_rmse;
    fill_imp(rec, res.baseline_rmse);
    rec.seconds = seconds_since(t0);
    res.best_model = res.client_models.front();
    res.rounds.push_back(std::move(rec));
    return res;
}

ExperimentResult run_central(const ExperimentData& data, const ExperimentConfig& cfg,
                             std::span<const double> baseline) {
    cfg.validate();
    const auto t0 = Clock::now();
    const auto tc = cfg.train_config();
    // Split each client into train/validation first so the pooled validation set covers
    // every client rather than the tail of the last one.
    auto parts = make_clients(data, cfg, true);
    ClientState central = std::move(parts.front());
    central.client_id = 0;
    for (std::size_t j = 1; j < parts.size(); ++j) {
        auto& p = parts[j];
        std::move(p.train.windows.begin(), p.train.windows.end(), std::back_inserter(central.train.windows));
        std::move(p.validation.windows.begin(), p.validation.windows.end(),
                  std::back_inserter(central.validation.windows));
    }
    train_local(central, cfg.local_epochs, cfg.patience, tc);

    ExperimentResult res;
    RoundRecord rec;
    rec.round = 1;
    rec.algo = Algo::central;
    rec.hidden_size = cfg.hidden;
    rec.fed_rmse = evaluate_all(central.model, data, central.labels);
    rec.client_rmse = rec.fed_rmse;
    res.baseline_rmse.assign(baseline.begin(), baseline.end());
    fill_imp(rec, baseline);
    rec.seconds = seconds_since(t0);
    record_round(res, std::move(rec), central.model);
    return res;
}

ExperimentResult run_fedavg(const ExperimentData& data, const ExperimentConfig& cfg,
                            std::span<const double> baseline) {
    cfg.validate();
    auto clients = make_clients(data, cfg, true);
    const auto tc = cfg.train_config();
    const std::size_t J = clients.size();

    std::vector<double> fractions(J);
    double total = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
        fractions[j] = static_cast<double>(clients[j].train.size() + clients[j].validation.size());
        total += fractions[j];
    }
    for (double& p : fractions) p /= total;

    ExperimentResult res;
    res.baseline_rmse.assign(baseline.begin(), baseline.end());
    ModelParams federated = clients.front().model;
    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
        const auto t0 = Clock::now();
        for_each_client(J, cfg.threads, [&](std::size_t j) {
            clients[j].adopt(federated);
            train_local(clients[j], cfg.fedavg_epochs, cfg.patience, tc);
        });
        RoundRecord rec;
        rec.round = r;
        rec.algo = Algo::fedavg;
        rec.hidden_size = cfg.hidden;
        std::vector<ModelParams> models;
        for (std::size_t j = 0; j < J; ++j) {
            rec.client_rmse.push_back(evaluate_rmse(clients[j].model, data.clients[j].test, clients[j].labels));
            models.push_back(clients[j].model);
        }
        federated = fedavg_aggregate(models, fractions);
        rec.fed_rmse = evaluate_all(federated, data, cfg.labels());
        fill_imp(rec, baseline);
        rec.seconds = seconds_since(t0);
        record_round(res, std::move(rec), federated);
    }
    return res;
}

FedmaRoundOutput run_fedma_round(std::vector<ClientState>& clients, std::span<const SequenceDataset> tests,
                                 const ExperimentConfig& cfg, std::size_t round,
                                 std::span<const double> baseline) {
    const auto t0 = Clock::now();
    const std::size_t J = clients.size();
    if (J == 0) throw std::invalid_argument("run_fedma_round: no clients");
    if (tests.size() != J) throw std::invalid_argument("run_fedma_round: one test set per client required");
    const auto tc = cfg.train_config();

    FedmaRoundOutput out;
    out.record.round = round;
    out.record.algo = Algo::fedma;
    std::vector<LstmLayerParams> layers;
    std::vector<DenseLayerParams> heads;
    for (std::size_t j = 0; j < J; ++j) {
        out.record.client_rmse.push_back(evaluate_rmse(clients[j].model, tests[j], clients[j].labels));
        layers.push_back(clients[j].model.lstm);
        heads.push_back(clients[j].model.dense);
    }

    // Layer 1: the LSTM.
    MatchConfig mc = cfg.match;
    mc.seed = mix_seed(cfg.seed ^ cfg.match.seed, round);
    auto fused = match_and_fuse_lstm(layers, mc);
    out.match = std::move(fused.match);
    ModelMeta meta = clients.front().model.meta;
    meta.hidden = fused.layer.hidden();
    for (std::size_t j = 0; j < J; ++j) {
        ModelParams m{fused.layer, permute_output_layer(heads[j], out.match.assignments[j]), meta};
        clients[j].adopt(std::move(m));
    }

    // Last layer: the dense head.
    DenseLayerParams dense;
    if (cfg.frozen_epochs > 0) {
        for_each_client(J, cfg.threads, [&](std::size_t j) {
            retrain_frozen_prefix(clients[j], 1, cfg.frozen_epochs, cfg.patience, tc);
        });
        // After retraining every client holds a weight for every global neuron.
        std::vector<DenseLayerParams> retrained;
        std::vector<AssignmentMatrix> full;
        for (std::size_t j = 0; j < J; ++j) {
            retrained.push_back(clients[j].model.dense);
            full.push_back(AssignmentMatrix::identity(meta.hidden, static_cast<int>(j)));
        }
        dense = average_output_layer(retrained, full, cfg.match.avg_mode);
    } else {
        dense = average_output_layer(heads, out.match.assignments, cfg.match.avg_mode);
    }

    out.federated = ModelParams{std::move(fused.layer), std::move(dense), meta};
    out.federated.validate();
    for (auto& c : clients) {
        c.adopt(out.federated);
        if (c.model.meta != out.federated.meta || c.model.lstm != out.federated.lstm) {
            throw std::logic_error("run_fedma_round: broadcast left clients inconsistent");
        }
    }
    out.record.hidden_size = meta.hidden;
    for (std::size_t j = 0; j < J; ++j) {
        out.record.fed_rmse.push_back(evaluate_rmse(out.federated, tests[j], clients[j].labels));
    }
    fill_imp(out.record, baseline);
    out.record.seconds = seconds_since(t0);
    return out;
}

ExperimentResult run_fedma(const ExperimentData& data, const ExperimentConfig& cfg,
                           std::span<const double> baseline) {
    cfg.validate();
    auto clients = make_clients(data, cfg, false);
    const auto tests = test_sets(data);
    const auto tc = cfg.train_config();
    const std::size_t J = clients.size();

    ExperimentResult res;
    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
        const auto t0 = Clock::now();
        const std::size_t epochs = r == 1 ? cfg.local_epochs : cfg.retrain_epochs;
        for_each_client(J, cfg.threads, [&](std::size_t j) { train_local(clients[j], epochs, cfg.patience, tc); });
        if (r == 1) {
            // Round-1 clients are exactly the local-only models.
            if (baseline.empty()) {
                for (std::size_t j = 0; j < J; ++j) {
                    res.baseline_rmse.push_back(evaluate_rmse(clients[j].model, tests[j], clients[j].labels));
                }
            } else {
                res.baseline_rmse.assign(baseline.begin(), baseline.end());
            }
        }
        auto out = run_fedma_round(clients, tests, cfg, r, res.baseline_rmse);
        out.record.seconds = seconds_since(t0);
        record_round(res, std::move(out.record), out.federated);
    }
    return res;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const RoundRecord> rounds, bool timing) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "round,algo,client_id,client_rmse,fed_rmse,hidden_size,imp,seconds\n" << std::setprecision(10);
    for (const auto& r : rounds) {
        for (std::size_t j = 0; j < r.fed_rmse.size(); ++j) {
            out << r.round << ',' << to_string(r.algo) << ',' << j << ',' << r.client_rmse[j] << ','
                << r.fed_rmse[j] << ',' << r.hidden_size << ',';
            if (!r.imp.empty()) out << r.imp[j];
            out << ',' << (timing ? r.seconds : 0.0) << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec || !std::filesystem::is_directory(cfg.out_dir)) {
        throw std::runtime_error("cannot create output directory " + cfg.out_dir.string() +
                                 (ec ? ": " + ec.message() : ""));
    }
    const auto data = load_experiment_data(cfg);

    ExperimentResult res;
    switch (cfg.algo) {
        case Algo::local_only: res = run_local_only(data, cfg); break;
        case Algo::central: res = run_central(data, cfg, run_local_only(data, cfg).baseline_rmse); break;
        case Algo::fedavg: res = run_fedavg(data, cfg, run_local_only(data, cfg).baseline_rmse); break;
        case Algo::fedma: res = run_fedma(data, cfg); break;
    }

    write_metrics_csv(cfg.out_dir / "metrics.csv", res.rounds, cfg.timing);
    CheckpointInfo info{to_string(cfg.task), res.best().round, cfg.seed, cfg.labels()};
    if (cfg.algo == Algo::local_only) {
        for (std::size_t j = 0; j < res.client_models.size(); ++j) {
            save_checkpoint(res.client_models[j], info,
                            cfg.out_dir / ("checkpoint_client_" + std::to_string(j) + ".json"));
        }
    } else {
        save_checkpoint(res.best_model, info, cfg.out_dir / "checkpoint.json");
    }
    std::ofstream echo(cfg.out_dir / "config.ini", std::ios::binary);
    write_config(echo, cfg);
    if (!echo) throw std::runtime_error("cannot write " + (cfg.out_dir / "config.ini").string());
    return res;
}

}  // namespace fedprog
