#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedprog/checkpoint.hpp"
#include "fedprog/orchestrator.hpp"
#include "support.hpp"

using namespace fedprog;
using namespace testing;

namespace {

ExperimentConfig tiny_config(const std::string& name) {
    ExperimentConfig cfg;
    cfg.hidden = 4;
    cfg.rounds = 2;
    cfg.local_epochs = 3;
    cfg.retrain_epochs = 2;
    cfg.frozen_epochs = 2;
    cfg.fedavg_epochs = 1;
    cfg.batch_size = 8;
    cfg.cycles_per_client = 20;
    cfg.out_dir = scratch_dir(name);
    return cfg;
}

std::vector<ClientState> identical_clients(std::size_t J, const SequenceDataset& ds, const ModelParams& m) {
    std::vector<ClientState> clients;
    for (std::size_t j = 0; j < J; ++j) clients.push_back(ClientState::create(static_cast<int>(j), m, ds, {}, 0));
    return clients;
}

}  // namespace

TEST_CASE("improvement is relative to the baseline") {
    CHECK(improvement(0.04979, 0.04381) == doctest::Approx(0.1201).epsilon(1e-3));
    CHECK(improvement(2.0, 3.0) == doctest::Approx(-0.5));
}

TEST_CASE("checkpoint round trip is bitwise") {
    const auto m = random_model(1, 3, 5, 7);
    CheckpointInfo info{"noncyclic", 4, 123, {0.5, 130.0}};
    const auto dir = scratch_dir("ckpt");
    save_checkpoint(m, info, dir / "c.json");
    const auto back = load_checkpoint(dir / "c.json");
    CHECK(back.model == m);
    CHECK(back.info.task == "noncyclic");
    CHECK(back.info.round == 4);
    CHECK(back.info.seed == 123);
    CHECK(back.info.labels.offset == 0.5);
    CHECK(back.info.labels.scale == 130.0);

    // Nothing beyond model metadata and parameters is stored.
    const auto text = slurp(dir / "c.json");
    CHECK(text.find("window") == std::string::npos);
    CHECK(text.find("feat") == std::string::npos);
}

TEST_CASE("checkpoint errors") {
    const auto dir = scratch_dir("ckpt_err");
    const auto text = checkpoint_to_json(random_model(2, 2, 3, 4), {});
    std::ofstream(dir / "cut.json") << text.substr(0, text.size() / 2);
    try {
        load_checkpoint(dir / "cut.json");
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
    std::string v2 = text;
    v2.replace(v2.find("\"version\": 1"), 12, "\"version\": 2");
    std::ofstream(dir / "v2.json") << v2;
    try {
        load_checkpoint(dir / "v2.json");
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("version 2") != std::string::npos);
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), CheckpointError);
}

TEST_CASE("a round on identical clients is a fixed point") {
    const auto ds = toy_dataset(3, 30, 4, 2);
    const auto test = toy_dataset(4, 10, 4, 2);
    const auto m = random_model(5, 2, 6, 4);
    for (std::size_t J : {1u, 3u}) {
        auto clients = identical_clients(J, ds, m);
        const std::vector<SequenceDataset> tests(J, test);
        auto cfg = tiny_config("fixed_point");
        cfg.frozen_epochs = 0;
        const auto out = run_fedma_round(clients, tests, cfg, 1);
        CHECK(out.federated.meta.hidden == 6);
        const double before = evaluate_rmse(m, test, {});
        for (std::size_t j = 0; j < J; ++j) {
            CHECK(std::abs(out.record.fed_rmse[j] - before) < 1e-9);
            CHECK(std::abs(out.record.client_rmse[j] - before) < 1e-9);
            CHECK(clients[j].model == out.federated);
        }
    }
}

TEST_CASE("thread count does not change results") {
    auto cfg = tiny_config("threads");
    const auto data = load_experiment_data(cfg);
    const auto one = run_fedma(data, cfg);
    cfg.threads = 2;
    const auto two = run_fedma(data, cfg);
    REQUIRE(one.rounds.size() == two.rounds.size());
    for (std::size_t r = 0; r < one.rounds.size(); ++r) {
        CHECK(one.rounds[r].fed_rmse == two.rounds[r].fed_rmse);
        CHECK(one.rounds[r].client_rmse == two.rounds[r].client_rmse);
    }
    CHECK(one.best_model == two.best_model);

    std::atomic<int> calls{0};
    CHECK_THROWS_AS(for_each_client(4, 3,
                                    [&](std::size_t j) {
                                        ++calls;
                                        if (j == 2) throw std::runtime_error("boom");
                                    }),
                    std::runtime_error);
}

TEST_CASE("FedMA run records every round and uses the round-1 models as baseline") {
    auto cfg = tiny_config("fedma_rounds");
    cfg.rounds = 3;
    const auto data = load_experiment_data(cfg);
    const auto res = run_fedma(data, cfg);
    REQUIRE(res.rounds.size() == 3);
    CHECK(res.baseline_rmse == res.rounds[0].client_rmse);
    for (const auto& r : res.rounds) {
        CHECK(r.fed_rmse.size() == 3);
        CHECK(r.imp.size() == 3);
        CHECK(r.hidden_size >= cfg.hidden);
        CHECK(r.hidden_size <= 3 * cfg.hidden);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(r.imp[j] == doctest::Approx(improvement(res.baseline_rmse[j], r.fed_rmse[j])));
        }
    }
    CHECK(res.best_model.meta.hidden == res.best().hidden_size);
    for (const auto& r : res.rounds) CHECK(res.best().mean_fed_rmse() <= r.mean_fed_rmse());
}

TEST_CASE("experiment writes metrics, checkpoint and config") {
    auto cfg = tiny_config("experiment");
    cfg.algo = Algo::fedavg;
    cfg.rounds = 3;
    const auto res = run_experiment(cfg);
    const auto metrics = slurp(cfg.out_dir / "metrics.csv");
    CHECK(metrics.rfind("round,algo,client_id,client_rmse,fed_rmse,hidden_size,imp,seconds\n", 0) == 0);
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 1 + 3 * 3);
    CHECK(metrics.find("\n1,fedavg,0,") != std::string::npos);
    const auto ck = load_checkpoint(cfg.out_dir / "checkpoint.json");
    CHECK(ck.model == res.best_model);
    CHECK(ck.info.round == res.best().round);
    CHECK(std::filesystem::exists(cfg.out_dir / "config.ini"));

    cfg.algo = Algo::local_only;
    cfg.out_dir = scratch_dir("experiment_local");
    run_experiment(cfg);
    for (int j = 0; j < 3; ++j) {
        CHECK(std::filesystem::exists(cfg.out_dir / ("checkpoint_client_" + std::to_string(j) + ".json")));
    }
}

TEST_CASE("noncyclic data assembly") {
    auto cfg = tiny_config("noncyclic");
    cfg.task = Task::noncyclic;
    cfg.engines = 40;
    cfg.test_engines = 6;
    cfg.partition = PartitionMode::homogeneous;
    const auto data = load_experiment_data(cfg);
    CHECK(data.d_in == 14);
    CHECK(data.seq_len == 50);
    REQUIRE(data.clients.size() == 3);
    // Every client is scored on the same test engines.
    CHECK(data.clients[0].test.size() == data.clients[1].test.size());
    CHECK(data.clients[0].test.windows[0].label == data.clients[2].test.windows[0].label);

    // Written to disk and read back, the data is the same.
    const auto dir = scratch_dir("noncyclic_files");
    write_synthetic_data(cfg, dir);
    auto from_disk = cfg;
    from_disk.data_dir = dir;
    const auto loaded = load_experiment_data(from_disk);
    REQUIRE(loaded.clients.size() == 3);
    CHECK(loaded.clients[1].train.size() == data.clients[1].train.size());
    CHECK(loaded.clients[1].train.windows[5].label == data.clients[1].train.windows[5].label);
}

TEST_CASE("cyclic files written to disk reload to the same windows") {
    auto cfg = tiny_config("cyclic_files");
    const auto dir = cfg.out_dir / "data";
    const auto summary = write_synthetic_data(cfg, dir);
    CHECK(summary.files.size() == 3);
    auto from_disk = cfg;
    from_disk.data_dir = dir;
    const auto a = load_experiment_data(cfg);
    const auto b = load_experiment_data(from_disk);
    REQUIRE(a.clients.size() == b.clients.size());
    CHECK(a.seq_len == b.seq_len);
    for (std::size_t j = 0; j < a.clients.size(); ++j) {
        REQUIRE(a.clients[j].train.size() == b.clients[j].train.size());
        CHECK(a.clients[j].train.windows[0].x == b.clients[j].train.windows[0].x);
    }
}

TEST_CASE("config validation names the bad key") {
    ExperimentConfig cfg;
    cfg.clients = 0;
    try {
        cfg.validate();
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("clients") != std::string::npos);
    }
    CHECK(parse_algo("local") == Algo::local_only);
    CHECK_THROWS(parse_algo("bogus"));
}
