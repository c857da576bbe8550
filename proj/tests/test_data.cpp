#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedprog/data.hpp"
#include "fedprog/synthetic.hpp"
#include "support.hpp"

using namespace fedprog;
using namespace testing;

namespace {

CyclicRecord make_cycle(int cycle, std::size_t len, double cap, double start = 0.0) {
    CyclicRecord r;
    r.client_id = 0;
    r.cycle = cycle;
    r.capacity = cap;
    r.features = Tensor2D(len, 2);
    for (std::size_t t = 0; t < len; ++t) {
        r.timestamps.push_back(static_cast<double>(t));
        r.features(t, 0) = start + static_cast<double>(t);
        r.features(t, 1) = -static_cast<double>(t) * 0.5;
    }
    return r;
}

EngineRecord make_engine(int id, std::size_t life, std::size_t cap = kDefaultRulCap) {
    EngineRecord e;
    e.engine_id = id;
    e.features = Tensor2D(life, 14);
    for (std::size_t t = 0; t < life; ++t) {
        for (std::size_t k = 0; k < 14; ++k) e.features(t, k) = static_cast<double>(t * 14 + k);
    }
    e.rul_labels = piecewise_rul_labels(life, cap);
    return e;
}

}  // namespace

TEST_CASE("standardization uses the population stddev") {
    const std::vector<Tensor2D> blocks{Tensor2D(1, 1, std::vector<double>{1.0}),
                                       Tensor2D(1, 1, std::vector<double>{3.0})};
    const auto st = standardize_fit(blocks);
    CHECK(st.mean[0] == 2.0);
    CHECK(st.stddev[0] == 1.0);
    const auto z = standardize_apply(st, blocks[0]);
    CHECK(z(0, 0) == -1.0);
}

TEST_CASE("zero-variance features are reported by index") {
    Tensor2D a(3, 3);
    for (std::size_t r = 0; r < 3; ++r) {
        a(r, 0) = static_cast<double>(r);
        a(r, 1) = 4.0;
        a(r, 2) = static_cast<double>(r * r);
    }
    const std::vector<Tensor2D> blocks{a};
    try {
        standardize_fit(blocks);
        FAIL("expected ZeroVarianceError");
    } catch (const ZeroVarianceError& e) {
        CHECK(e.feature() == 1);
    }
}

TEST_CASE("standardize round trip") {
    std::mt19937_64 rng(3);
    const std::vector<Tensor2D> blocks{random_tensor(rng, 20, 4, 10.0), random_tensor(rng, 7, 4, 3.0)};
    const auto st = standardize_fit(blocks);
    const auto back = standardize_unapply(st, standardize_apply(st, blocks[1]));
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(std::abs(back.values()[i] - blocks[1].values()[i]) < 1e-12);
    }
    CHECK_THROWS_AS(standardize_apply(st, Tensor2D(2, 3)), ShapeError);
}

TEST_CASE("segment_cycles keeps the final steps of each cycle") {
    const std::vector<CyclicRecord> cycles{make_cycle(1, 7, 1.9, 100.0), make_cycle(2, 5, 1.8)};
    const auto ds = segment_cycles(cycles);
    CHECK(ds.seq_len == 5);
    REQUIRE(ds.size() == 2);
    CHECK(ds.windows[0].x(0, 0) == 102.0);
    CHECK(ds.windows[0].x(4, 0) == 106.0);
    CHECK(ds.windows[0].label == 1.9);
    CHECK(ds.windows[1].x(0, 0) == 0.0);

    const auto three = segment_cycles(cycles, 3);
    CHECK(three.windows[1].x(0, 0) == 2.0);
    CHECK_THROWS_AS(segment_cycles(cycles, 6), InsufficientLengthError);
}

TEST_CASE("sliding window counts and labels") {
    const auto e52 = make_engine(1, 52);
    const auto ds = sliding_windows(e52, 50);
    CHECK(ds.size() == 3);
    CHECK(ds.windows[0].x(0, 0) == 0.0);
    CHECK(ds.windows[2].x(0, 0) == 2.0 * 14);
    CHECK(ds.windows[0].label == e52.rul_labels[49]);
    CHECK(ds.windows[2].label == 0.0);

    CHECK(sliding_windows(make_engine(2, 50), 50).size() == 1);
    CHECK(sliding_windows(make_engine(3, 60), 50, 5).size() == 3);
    CHECK_THROWS_AS(sliding_windows(make_engine(4, 49), 50), InsufficientLengthError);
}

TEST_CASE("piecewise RUL matches min(cap, life - t)") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> life_d(1, 600), cap_d(1, 300);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t life = life_d(rng), cap = cap_d(rng);
        const auto labels = piecewise_rul_labels(life, cap);
        REQUIRE(labels.size() == life);
        for (std::size_t t = 1; t <= life; ++t) {
            CHECK(labels[t - 1] == static_cast<double>(std::min(cap, life - t)));
        }
    }
    const auto small = piecewise_rul_labels(5, 3);
    CHECK(small == std::vector<double>{3, 3, 2, 1, 0});
}

TEST_CASE("test-set RUL continues from the ground truth at the last cycle") {
    std::vector<EngineRecord> engines{make_engine(1, 4), make_engine(2, 3)};
    const std::vector<double> truth{10.0, 200.0};
    attach_test_rul(engines, truth, 130);
    CHECK(engines[0].rul_labels == std::vector<double>{13, 12, 11, 10});
    CHECK(engines[1].rul_labels == std::vector<double>{130, 130, 130});
    const std::vector<double> short_truth{1.0};
    CHECK_THROWS_AS(attach_test_rul(engines, short_truth), ShapeError);
}

TEST_CASE("heterogeneous partition by lifespan bucket") {
    const std::vector<std::size_t> bounds{200, 350};
    CHECK(lifespan_bucket(199, bounds) == 0);
    CHECK(lifespan_bucket(200, bounds) == 1);
    CHECK(lifespan_bucket(350, bounds) == 1);
    CHECK(lifespan_bucket(351, bounds) == 2);

    // 82 short, 25 medium (including both boundary values), 142 long.
    std::vector<EngineRecord> engines;
    int id = 1;
    for (int i = 0; i < 82; ++i) engines.push_back(make_engine(id++, 128 + static_cast<std::size_t>(i % 72)));
    engines.push_back(make_engine(id++, 200));
    engines.push_back(make_engine(id++, 350));
    for (int i = 0; i < 23; ++i) engines.push_back(make_engine(id++, 250 + static_cast<std::size_t>(i)));
    for (int i = 0; i < 142; ++i) engines.push_back(make_engine(id++, 351 + static_cast<std::size_t>(i)));
    const auto parts = partition_clients(engines, PartitionMode::heterogeneous, bounds);
    REQUIRE(parts.size() == 3);
    CHECK(parts[0].size() == 82);
    CHECK(parts[1].size() == 25);
    CHECK(parts[2].size() == 142);

    const auto homo = partition_clients(engines, PartitionMode::homogeneous, bounds, 3, 5);
    for (const auto& p : homo) CHECK(p.size() == 83);
    const auto homo2 = partition_clients(engines, PartitionMode::homogeneous, bounds, 3, 5);
    CHECK(homo2[0].front().engine_id == homo[0].front().engine_id);

    const std::vector<std::size_t> bad{350, 200};
    CHECK_THROWS_AS(partition_clients(engines, PartitionMode::heterogeneous, bad), std::invalid_argument);
}

TEST_CASE("cyclic CSV round trip") {
    const auto dir = scratch_dir("data_cyclic");
    SyntheticCyclicConfig cfg;
    cfg.n_clients = 1;
    cfg.cycles_per_client = 6;
    const auto gen = gen_synthetic_cyclic(cfg);
    write_cyclic_csv(dir / "c.csv", gen[0]);
    const auto back = load_cyclic_csv(dir / "c.csv");
    REQUIRE(back.size() == gen[0].size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].cycle == gen[0][i].cycle);
        CHECK(back[i].capacity == gen[0][i].capacity);
        CHECK(back[i].features == gen[0][i].features);
        CHECK(back[i].timestamps == gen[0][i].timestamps);
    }
}

TEST_CASE("parse errors carry line numbers") {
    const auto dir = scratch_dir("data_parse");
    {
        std::ofstream(dir / "bad_header.csv") << "client,cycle,t,feat_1,label\n0,1,0,1.0,2.0\n";
        std::ofstream(dir / "bad_value.csv") << "client_id,cycle,t,feat_1,label\n0,1,0,1.0,2.0\n0,1,1,abc,2.0\n";
        std::ofstream(dir / "bad_count.csv") << "client_id,cycle,t,feat_1,label\n0,1,0,1.0,2.0\n\n0,1,1,2.0\n";
        std::ofstream(dir / "rul.txt") << "12\n7\n-3\n";
    }
    auto line_of = [](auto&& fn) -> std::size_t {
        try {
            fn();
        } catch (const ParseError& e) {
            return e.line();
        }
        return 999;
    };
    CHECK(line_of([&] { load_cyclic_csv(dir / "bad_header.csv"); }) == 1);
    CHECK(line_of([&] { load_cyclic_csv(dir / "bad_value.csv"); }) == 3);
    CHECK(line_of([&] { load_cyclic_csv(dir / "bad_count.csv"); }) == 4);
    CHECK(line_of([&] { load_rul_file(dir / "rul.txt"); }) == 3);
    CHECK_THROWS(load_cyclic_csv(dir / "missing.csv"));
}

TEST_CASE("engine CSV round trip drops the unused channels") {
    const auto dir = scratch_dir("data_engine");
    SyntheticEngineConfig cfg;
    cfg.n_engines = 4;
    const auto gen = gen_synthetic_noncyclic(cfg);
    std::vector<RawEngine> raws;
    for (const auto& g : gen) raws.push_back(g.raw);
    write_engine_csv(dir / "e.csv", raws);
    const auto back = load_engine_csv(dir / "e.csv");
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto direct = engine_from_raw(raws[i]);
        CHECK(back[i].engine_id == raws[i].engine_id);
        CHECK(back[i].features.cols() == 14);
        CHECK(back[i].features == direct.features);
        CHECK(back[i].rul_labels == direct.rul_labels);
    }
    // Sensor 2 is the first kept channel: column 3 settings + index 1.
    CHECK(back[0].features(0, 0) == raws[0].readings(0, kEngineSettingCount + 1));
}

TEST_CASE("synthetic generators are pure functions of their config") {
    SyntheticCyclicConfig c;
    c.cycles_per_client = 10;
    const auto a = gen_synthetic_cyclic(c), b = gen_synthetic_cyclic(c);
    REQUIRE(a.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t i = 0; i < a[j].size(); ++i) CHECK(a[j][i].features == b[j][i].features);
    }
    c.seed = 8;
    CHECK_FALSE(gen_synthetic_cyclic(c)[0][0].features == a[0][0].features);

    SyntheticEngineConfig e;
    e.n_engines = 5;
    auto x = gen_synthetic_noncyclic(e), y = gen_synthetic_noncyclic(e);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(x[i].raw.readings == y[i].raw.readings);
        CHECK(x[i].raw.readings.rows() >= e.lifespan_min);
        CHECK(x[i].raw.readings.rows() <= e.lifespan_max);
    }
    const auto lives = [&] {
        std::vector<std::size_t> v;
        for (const auto& g : x) v.push_back(g.raw.readings.rows());
        return v;
    }();
    const auto rul = truncate_for_test(x, 50, 3);
    REQUIRE(rul.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(x[i].raw.readings.rows() >= 50);
        CHECK(rul[i] == static_cast<double>(lives[i] - x[i].raw.readings.rows()));
    }
}

TEST_CASE("prepare_cyclic_client fits stats on training cycles only") {
    std::vector<CyclicRecord> cycles;
    for (int i = 0; i < 10; ++i) cycles.push_back(make_cycle(i + 1, 6, 2.0 - 0.01 * i, 10.0 * i));
    const auto cd = prepare_cyclic_client(cycles, 4, 0.7);
    CHECK(cd.train.size() == 7);
    CHECK(cd.test.size() == 3);
    CHECK(cd.train.seq_len == 4);
    std::vector<Tensor2D> blocks;
    for (int i = 0; i < 7; ++i) blocks.push_back(cycles[static_cast<std::size_t>(i)].features);
    CHECK(cd.test.stats == standardize_fit(blocks));
    CHECK(cd.test.windows[0].label == cycles[7].capacity);
}

TEST_CASE("prepare_engine_client skips engines shorter than the window") {
    std::vector<EngineRecord> train{make_engine(1, 60), make_engine(2, 30), make_engine(3, 55)};
    std::vector<EngineRecord> test{make_engine(10, 52), make_engine(11, 20)};
    std::vector<int> skipped;
    const auto cd = prepare_engine_client(train, test, 50, &skipped);
    CHECK(cd.train.size() == 11 + 6);
    CHECK(cd.test.size() == 1);
    CHECK(cd.test.windows[0].label == test[0].rul_labels.back());
    CHECK(skipped == std::vector<int>{2, 11});
    const std::vector<EngineRecord> too_short{make_engine(1, 10)};
    CHECK_THROWS_AS(prepare_engine_client(too_short, test, 50), InsufficientLengthError);
}
