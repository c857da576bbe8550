#include "cli.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fedprog/checkpoint.hpp"
#include "fedprog/config.hpp"
#include "fedprog/orchestrator.hpp"

namespace fedprog::cli {

std::vector<std::size_t> parse_neuron_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string part;
    auto number = [&](const std::string& s) -> std::size_t {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
            throw std::invalid_argument("bad neuron list '" + text + "'");
        }
        return std::stoull(s);
    };
    while (std::getline(ss, part, ',')) {
        const auto dash = part.find('-');
        if (dash == std::string::npos) {
            out.push_back(number(part));
            continue;
        }
        const auto lo = number(part.substr(0, dash));
        const auto hi = number(part.substr(dash + 1));
        if (hi < lo) throw std::invalid_argument("bad neuron range '" + part + "'");
        for (std::size_t i = lo; i <= hi; ++i) out.push_back(i);
    }
    if (out.empty()) throw std::invalid_argument("empty neuron list");
    return out;
}

std::map<std::size_t, double> read_baseline_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read baseline " + path.string());
    std::string line;
    std::getline(in, line);
    if (line.rfind("round,algo,client_id,client_rmse,fed_rmse", 0) != 0) {
        throw std::runtime_error(path.string() + ": not a metrics CSV");
    }
    std::map<std::size_t, double> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        if (cols.size() < 5) throw std::runtime_error(path.string() + ": short row '" + line + "'");
        out[std::stoull(cols[2])] = std::stod(cols[4]);
    }
    return out;
}

namespace {

struct Options {
    ExperimentConfig cfg;
    std::string task = "cyclic";
    std::string algo = "fedma";
    std::string avg_mode = "per_match";
    std::string partition = "heterogeneous";
    std::string data_dir;
    std::string out_dir = "out";

    // eval / dump-features
    std::string checkpoint;
    std::string baseline;
    std::string neurons;
    std::size_t client = 0;
    std::string split = "test";
    std::string output;

    void finalize() {
        cfg.task = parse_task(task);
        cfg.algo = parse_algo(algo);
        cfg.match.avg_mode = parse_avg_mode(avg_mode);
        cfg.partition = parse_partition(partition);
        cfg.data_dir = data_dir;
        cfg.out_dir = out_dir;
        cfg.validate();
    }
};

void add_experiment_options(CLI::App& app, Options& o) {
    auto& c = o.cfg;
    app.add_option("--task", o.task, "cyclic (battery) or noncyclic (engine) data")
        ->check(CLI::IsMember({"cyclic", "noncyclic"}));
    app.add_option("--algo", o.algo, "local, central, fedavg or fedma")
        ->check(CLI::IsMember({"local", "local_only", "central", "fedavg", "fedma"}));
    app.add_option("--rounds", c.rounds, "communication rounds")->check(CLI::PositiveNumber);
    app.add_option("--local_epochs", c.local_epochs, "epochs of local-only, central and first-round training")
        ->check(CLI::PositiveNumber);
    app.add_option("--patience", c.patience, "early-stopping patience in epochs (0 disables)");
    app.add_option("--fedavg_epochs", c.fedavg_epochs, "FedAvg local epochs per round")->check(CLI::PositiveNumber);
    app.add_option("--retrain_epochs", c.retrain_epochs, "FedMA full retraining epochs in later rounds");
    app.add_option("--frozen_epochs", c.frozen_epochs, "FedMA dense retraining epochs with the LSTM frozen");
    app.add_option("--hidden", c.hidden, "LSTM hidden size")->check(CLI::PositiveNumber);
    app.add_option("--batch_size", c.batch_size, "minibatch size")->check(CLI::PositiveNumber);
    app.add_option("--lr", c.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    app.add_option("--clip_norm", c.clip_norm, "global gradient-norm clip (<= 0 disables)");
    app.add_option("--validation_fraction", c.validation_fraction, "chronological validation tail")
        ->check(CLI::Range(0.0, 0.99));
    app.add_option("--forget_bias", c.forget_bias, "initial forget-gate bias");
    app.add_option("--seq_len", c.seq_len, "window length (0: shortest cycle / 50)");
    app.add_option("--train_fraction", c.train_fraction, "fraction of cycles used for training")
        ->check(CLI::Range(0.01, 0.99));
    app.add_option("--label_offset", c.label_offset, "label offset (used when label_scale > 0)");
    app.add_option("--label_scale", c.label_scale, "label scale (0: task default)")->check(CLI::NonNegativeNumber);
    app.add_option("--rul_cap", c.rul_cap, "piecewise RUL cap")->check(CLI::PositiveNumber);
    app.add_option("--sigma_sq", c.match.sigma_sq, "matching noise variance")->check(CLI::PositiveNumber);
    app.add_option("--sigma0_sq", c.match.sigma0_sq, "matching prior variance")->check(CLI::PositiveNumber);
    app.add_option("--eps_scale", c.match.eps_scale, "new-neuron threshold in median-cost units")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--penalty_kappa", c.match.penalty_kappa, "growth penalty slope")->check(CLI::NonNegativeNumber);
    app.add_option("--passes", c.match.passes, "matching sweeps")->check(CLI::PositiveNumber);
    app.add_option("--avg_mode", o.avg_mode, "per_match or uniform_j")
        ->check(CLI::IsMember({"per_match", "uniform_j"}));
    app.add_option("--data_dir", o.data_dir, "dataset directory (empty: synthesize in memory)");
    app.add_option("--clients", c.clients, "synthetic client count")->check(CLI::PositiveNumber);
    app.add_option("--cycles_per_client", c.cycles_per_client, "synthetic cycles per battery")
        ->check(CLI::Range(std::size_t{4}, std::size_t{100000}));
    app.add_option("--heterogeneity", c.heterogeneity, "spread of synthetic fade rates")->check(CLI::NonNegativeNumber);
    app.add_option("--engines", c.engines, "synthetic training engines")->check(CLI::PositiveNumber);
    app.add_option("--test_engines", c.test_engines, "synthetic test engines")->check(CLI::PositiveNumber);
    app.add_option("--partition", o.partition, "heterogeneous or homogeneous engine split")
        ->check(CLI::IsMember({"heterogeneous", "homogeneous"}));
    app.add_option("--boundaries", c.boundaries, "lifespan bucket boundaries")->delimiter(',');
    app.add_flag("--timing", c.timing, "record wall-clock seconds in metrics.csv");
}

ExperimentConfig eval_config(Options& o, const Checkpoint& ck) {
    auto cfg = o.cfg;
    cfg.seq_len = ck.model.meta.seq_len;
    cfg.label_offset = ck.info.labels.offset;
    cfg.label_scale = ck.info.labels.scale;
    if (ck.info.task != to_string(cfg.task)) {
        throw std::invalid_argument("checkpoint task '" + ck.info.task + "' does not match --task " +
                                    to_string(cfg.task));
    }
    return cfg;
}

int cmd_synth(Options& o, std::ostream& out) {
    const auto summary = write_synthetic_data(o.cfg, o.cfg.out_dir);
    for (const auto& l : summary.client_lines) out << l << '\n';
    for (const auto& f : summary.files) out << "wrote " << f << '\n';
    return 0;
}

int cmd_run(Options& o, std::ostream& out) {
    const auto res = run_experiment(o.cfg);
    out << std::fixed << std::setprecision(5);
    out << "round  algo     hidden  mean_fed_rmse  mean_imp\n";
    for (const auto& r : res.rounds) {
        out << std::setw(5) << r.round << "  " << std::setw(7) << std::left << to_string(r.algo) << std::right
            << std::setw(8) << r.hidden_size << std::setw(15) << r.mean_fed_rmse() << std::setw(10)
            << r.mean_imp() << '\n';
    }
    const auto& b = res.best();
    out << "best round " << b.round << ": mean RMSE " << b.mean_fed_rmse();
    if (!b.imp.empty()) out << ", IMP " << std::setprecision(1) << 100.0 * b.mean_imp() << "%";
    out << "\nartifacts in " << o.cfg.out_dir.string() << '\n';
    return 0;
}

int cmd_eval(Options& o, std::ostream& out) {
    const auto ck = load_checkpoint(o.checkpoint);
    const auto cfg = eval_config(o, ck);
    const auto data = load_experiment_data(cfg);
    std::map<std::size_t, double> baseline;
    if (!o.baseline.empty()) baseline = read_baseline_csv(o.baseline);
    out << std::fixed << std::setprecision(5) << "client  rmse" << (baseline.empty() ? "" : "      baseline  imp") << '\n';
    for (std::size_t j = 0; j < data.clients.size(); ++j) {
        const double rmse = evaluate_rmse(ck.model, data.clients[j].test, ck.info.labels);
        out << std::setw(6) << j << "  " << rmse;
        if (!baseline.empty()) {
            const auto it = baseline.find(j);
            if (it == baseline.end()) throw std::runtime_error("baseline has no client " + std::to_string(j));
            out << "  " << it->second << "   " << std::setprecision(1) << 100.0 * improvement(it->second, rmse)
                << "%" << std::setprecision(5);
        }
        out << '\n';
    }
    return 0;
}

int cmd_dump_features(Options& o, std::ostream& out) {
    const auto ck = load_checkpoint(o.checkpoint);
    const auto cfg = eval_config(o, ck);
    const auto data = load_experiment_data(cfg);
    if (o.client >= data.clients.size()) {
        throw std::out_of_range("client " + std::to_string(o.client) + " of " + std::to_string(data.clients.size()));
    }
    const auto& ds = o.split == "train" ? data.clients[o.client].train : data.clients[o.client].test;
    std::vector<std::size_t> neurons;
    if (o.neurons.empty()) {
        for (std::size_t i = 0; i < std::min<std::size_t>(10, ck.model.meta.hidden); ++i) neurons.push_back(i);
    } else {
        neurons = parse_neuron_list(o.neurons);
    }
    const auto acts = dump_feature_extractors(ck.model, ds.windows, neurons);
    std::filesystem::path path = o.output.empty() ? cfg.out_dir / "features.csv" : std::filesystem::path(o.output);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_feature_csv(path, acts, neurons);
    out << "wrote " << acts.rows() << " windows x " << neurons.size() << " neurons to " << path.string() << '\n';
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Federated LSTM prognostics: FedAvg and matched averaging (FedMA) simulations", "fedprog"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.allow_config_extras(CLI::config_extras_mode::error);

    Options o;
    app.set_config("--config", "", "key = value configuration file; command-line flags win");
    app.add_option("--seed", o.cfg.seed, "seed for every random stream");
    app.add_option("--out", o.out_dir, "output directory");
    app.add_option("--threads", o.cfg.threads, "worker threads for client training")->check(CLI::PositiveNumber);
    add_experiment_options(app, o);

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset to --out");
    auto* run_cmd = app.add_subcommand("run", "run an experiment; writes metrics.csv, checkpoint and config echo");
    auto* eval = app.add_subcommand("eval", "per-client test RMSE of a checkpoint");
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint JSON")->required()->check(CLI::ExistingFile);
    eval->add_option("--baseline", o.baseline, "metrics CSV whose last round is the IMP baseline")
        ->check(CLI::ExistingFile);
    auto* dump = app.add_subcommand("dump-features", "final hidden activations of selected neurons as CSV");
    dump->add_option("--checkpoint", o.checkpoint, "checkpoint JSON")->required()->check(CLI::ExistingFile);
    dump->add_option("--neurons", o.neurons, "neuron list such as 0-9 or 1,4,7 (default: first 10)");
    dump->add_option("--client", o.client, "client whose windows are dumped");
    dump->add_option("--split", o.split, "train or test windows")->check(CLI::IsMember({"train", "test"}));
    dump->add_option("--output", o.output, "CSV path (default: <out>/features.csv)");
    for (auto* sc : {synth, run_cmd, eval, dump}) sc->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        o.finalize();
        if (*synth) return cmd_synth(o, out);
        if (*run_cmd) return cmd_run(o, out);
        if (*eval) return cmd_eval(o, out);
        return cmd_dump_features(o, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace fedprog::cli
