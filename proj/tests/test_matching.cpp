#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedprog/matching.hpp"
#include "support.hpp"

using namespace fedprog;
using namespace testing;

namespace {

ModelParams filled(ModelMeta meta, double v) {
    ModelParams m = ModelParams::zeros(meta);
    for (auto block : parameter_blocks(m)) std::fill(block.begin(), block.end(), v);
    return m;
}

LstmLayerParams noisy_copy(const LstmLayerParams& layer, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    LstmLayerParams out = layer;
    for (double& v : out.w_ih.values()) v += u(rng);
    for (double& v : out.w_hh.values()) v += u(rng);
    for (double& v : out.b_ih) v += u(rng);
    return out;
}

/// Full FedMA-style fusion of whole models, used for invariance checks.
ModelParams fuse_models(const std::vector<ModelParams>& models, const MatchConfig& cfg) {
    std::vector<LstmLayerParams> layers;
    for (const auto& m : models) layers.push_back(m.lstm);
    const auto fused = match_and_fuse_lstm(layers, cfg);
    std::vector<DenseLayerParams> heads;
    for (const auto& m : models) heads.push_back(m.dense);
    ModelParams out;
    out.lstm = fused.layer;
    out.dense = average_output_layer(heads, fused.match.assignments, cfg.avg_mode);
    out.meta = {models[0].meta.d_in, fused.layer.hidden(), models[0].meta.seq_len};
    return out;
}

}  // namespace

TEST_CASE("fedavg examples") {
    const ModelMeta meta{1, 2, 3};
    const std::vector<ModelParams> two{filled(meta, 2.0), filled(meta, 4.0)};
    const std::vector<double> half{0.5, 0.5};
    const auto avg = fedavg_aggregate(two, half);
    for (double v : avg.lstm.w_hh.values()) CHECK(v == 3.0);

    const std::vector<ModelParams> skew{filled(meta, 0.0), filled(meta, 4.0)};
    const std::vector<double> p{0.25, 0.75};
    const auto weighted = fedavg_aggregate(skew, p);
    for (double v : weighted.dense.w.values()) CHECK(v == 3.0);

    const std::vector<double> bad{0.5, 0.6};
    CHECK_THROWS_AS(fedavg_aggregate(two, bad), std::invalid_argument);
    const std::vector<ModelParams> mixed{filled(meta, 1.0), filled({1, 3, 3}, 1.0)};
    CHECK_THROWS_AS(fedavg_aggregate(mixed, half), ShapeError);
}

TEST_CASE("neuron vectors hold gate rows then combined biases") {
    const auto m = random_model(1, 2, 3, 4);
    const auto vecs = extract_neuron_vectors(m.lstm, 5);
    REQUIRE(vecs.size() == 3);
    CHECK(neuron_vector_length(2) == 12);
    for (std::size_t l = 0; l < 3; ++l) {
        REQUIRE(vecs[l].values.size() == 12);
        CHECK(vecs[l].client_id == 5);
        CHECK(vecs[l].neuron == l);
        for (std::size_t g = 0; g < 4; ++g) {
            for (std::size_t d = 0; d < 2; ++d) CHECK(vecs[l].values[g * 2 + d] == m.lstm.w_ih(g * 3 + l, d));
            CHECK(vecs[l].values[8 + g] == m.lstm.b_ih[g * 3 + l] + m.lstm.b_hh[g * 3 + l]);
        }
    }
}

TEST_CASE("cost matrix against hand computation") {
    // Two pool neurons seen once each, two client neurons at squared distances {0, 4; 4, 0}.
    GlobalNeuronPool pool;
    std::vector<double> zero(8, 0.0), two(8, 0.0);
    two[0] = 2.0;
    pool.thetas = {zero, two};
    pool.counts = {1, 1};
    const std::vector<NeuronVector> client{{0, 0, zero}, {0, 1, two}};
    MatchConfig cfg;
    cfg.sigma_sq = 1.0;
    cfg.sigma0_sq = 1.0;
    const auto c = assignment_cost_matrix(client, pool, cfg);
    REQUIRE(c.rows() == 2);
    REQUIRE(c.cols() == 4);
    // Denominator 1 + 1 / (1 + 1) = 1.5.
    CHECK(c(0, 0) == 0.0);
    CHECK(c(0, 1) == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
    CHECK(c(1, 0) == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
    CHECK(c(1, 1) == 0.0);
    // eps = median{0, 8/3, 8/3, 0} = 4/3; new columns have global indices 3 and 4.
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(std::abs(c(l, 2) - 2.431945622001443) < 1e-14);
        CHECK(std::abs(c(l, 3) - 2.719627694453224) < 1e-14);
    }

    // Empty pool: only new columns, eps = 0.
    const auto fresh = assignment_cost_matrix(client, GlobalNeuronPool{}, cfg);
    CHECK(fresh.cols() == 2);
    CHECK(fresh(0, 0) == 0.0);
    CHECK(fresh(1, 1) == doctest::Approx(std::log(2.0)));

    cfg.sigma_sq = 0.0;
    CHECK_THROWS_AS(assignment_cost_matrix(client, pool, cfg), std::invalid_argument);
}

TEST_CASE("assignment matrices") {
    const auto id = AssignmentMatrix::identity(3, 2);
    CHECK(id.mapping == std::vector<std::size_t>{0, 1, 2});
    CHECK(id.global_size == 3);
    id.validate();
    const AssignmentMatrix dup{0, {1, 1}, 3};
    CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
    const AssignmentMatrix out_of_range{0, {0, 3}, 3};
    CHECK_THROWS_AS(out_of_range.validate(), std::invalid_argument);
    const AssignmentMatrix partial{0, {2, 0}, 4};
    CHECK(partial.owned() == std::vector<bool>{true, false, true, false});
}

TEST_CASE("hidden-to-hidden permutation is Pi H Pi^T per gate block") {
    // L = 2, gate block g holds [[a, b], [c, d]] + 10 g.
    Tensor2D h(8, 2);
    for (std::size_t g = 0; g < 4; ++g) {
        h(2 * g, 0) = 1 + 10.0 * g;
        h(2 * g, 1) = 2 + 10.0 * g;
        h(2 * g + 1, 0) = 3 + 10.0 * g;
        h(2 * g + 1, 1) = 4 + 10.0 * g;
    }
    const AssignmentMatrix swap{0, {1, 0}, 2};
    const auto p = permute_hidden_hidden(h, swap);
    for (std::size_t g = 0; g < 4; ++g) {
        CHECK(p(2 * g, 0) == 4 + 10.0 * g);
        CHECK(p(2 * g, 1) == 3 + 10.0 * g);
        CHECK(p(2 * g + 1, 0) == 2 + 10.0 * g);
        CHECK(p(2 * g + 1, 1) == 1 + 10.0 * g);
    }

    // Growth: local neurons land on global 0 and 2 of 3; row and column 1 stay zero.
    const AssignmentMatrix grow{0, {0, 2}, 3};
    const auto q = permute_hidden_hidden(h, grow);
    REQUIRE(q.rows() == 12);
    REQUIRE(q.cols() == 3);
    for (std::size_t g = 0; g < 4; ++g) {
        for (std::size_t k = 0; k < 3; ++k) CHECK(q(3 * g + 1, k) == 0.0);
        CHECK(q(3 * g, 1) == 0.0);
        CHECK(q(3 * g + 2, 2) == 4 + 10.0 * g);
    }
}

TEST_CASE("input-hidden permutation scatters gate rows and biases") {
    const auto m = random_model(2, 3, 2, 4);
    const AssignmentMatrix grow{0, {2, 0}, 3};
    const auto p = permute_input_hidden(m.lstm, grow);
    CHECK(p.w_hh.size() == 0);
    for (std::size_t g = 0; g < 4; ++g) {
        for (std::size_t d = 0; d < 3; ++d) {
            CHECK(p.w_ih(g * 3 + 2, d) == m.lstm.w_ih(g * 2, d));
            CHECK(p.w_ih(g * 3 + 0, d) == m.lstm.w_ih(g * 2 + 1, d));
            CHECK(p.w_ih(g * 3 + 1, d) == 0.0);
        }
        CHECK(p.b_ih[g * 3 + 2] == m.lstm.b_ih[g * 2]);
        CHECK(p.b_hh[g * 3 + 0] == m.lstm.b_hh[g * 2 + 1]);
        CHECK(p.b_ih[g * 3 + 1] == 0.0);
    }
}

TEST_CASE("matched averaging examples") {
    const ModelMeta meta{1, 1, 1};
    const std::vector<LstmLayerParams> layers{filled(meta, 2.0).lstm, filled(meta, 4.0).lstm};
    const std::vector<AssignmentMatrix> same{AssignmentMatrix::identity(1, 0), AssignmentMatrix::identity(1, 1)};
    const auto avg = fuse_lstm_with(layers, same);
    for (double v : avg.w_ih.values()) CHECK(v == 3.0);
    for (double v : avg.w_hh.values()) CHECK(v == 3.0);

    // Disjoint neurons: the union of both layers, nothing averaged.
    const std::vector<AssignmentMatrix> disjoint{{0, {0}, 2}, {1, {1}, 2}};
    const auto cat = fuse_lstm_with(layers, disjoint);
    REQUIRE(cat.hidden() == 2);
    for (std::size_t g = 0; g < 4; ++g) {
        CHECK(cat.w_ih(g * 2, 0) == 2.0);
        CHECK(cat.w_ih(g * 2 + 1, 0) == 4.0);
        CHECK(cat.w_hh(g * 2, 0) == 2.0);
        CHECK(cat.w_hh(g * 2 + 1, 1) == 4.0);
        // No client owns both neurons, so cross entries stay zero.
        CHECK(cat.w_hh(g * 2, 1) == 0.0);
    }
    const auto uni = fuse_lstm_with(layers, disjoint, AverageMode::uniform_j);
    CHECK(uni.w_ih(0, 0) == 1.0);
    CHECK(uni.w_ih(1, 0) == 2.0);

    const auto scattered = permute_output_layer(filled(meta, 4.0).dense, disjoint[1]);
    CHECK(scattered.w(0, 0) == 0.0);
    CHECK(scattered.w(0, 1) == 4.0);
    const std::vector<DenseLayerParams> heads{filled(meta, 2.0).dense, filled(meta, 4.0).dense};
    const auto head = average_output_layer(heads, disjoint);
    CHECK(head.w(0, 0) == 2.0);
    CHECK(head.w(0, 1) == 4.0);
    CHECK(head.b[0] == 3.0);
}

TEST_CASE("identical clients fuse to themselves") {
    for (std::size_t J : {2u, 3u}) {
        const auto base = random_model(10 + J, 2, 6, 4);
        const std::vector<ModelParams> models(J, base);
        const auto fused = fuse_models(models, MatchConfig{});
        REQUIRE(fused.meta.hidden == 6);
        // The global order may differ from the local one, so compare as functions.
        std::mt19937_64 rng(J);
        for (int k = 0; k < 20; ++k) {
            const auto x = random_tensor(rng, 4, 2);
            CHECK(std::abs(predict(fused, x) - predict(base, x)) < 1e-12);
        }
    }
}

TEST_CASE("identity assignments reproduce FedAvg with equal weights bitwise") {
    const std::size_t J = 3;
    std::vector<ModelParams> models;
    std::vector<LstmLayerParams> layers;
    std::vector<AssignmentMatrix> ids;
    for (std::size_t j = 0; j < J; ++j) {
        models.push_back(random_model(20 + j, 2, 4, 3));
        layers.push_back(models.back().lstm);
        ids.push_back(AssignmentMatrix::identity(4, static_cast<int>(j)));
    }
    const std::vector<double> p(J, 1.0 / static_cast<double>(J));
    const auto avg = fedavg_aggregate(models, p);
    for (auto mode : {AverageMode::per_match, AverageMode::uniform_j}) {
        const auto fused = fuse_lstm_with(layers, ids, mode);
        CHECK(fused == avg.lstm);
    }
}

TEST_CASE("matching recovers a hidden permutation") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto base = random_model(seed, 3, 8, 4, 1.0).lstm;
        std::mt19937_64 rng(seed + 50);
        const auto perm = random_permutation(rng, 8);
        const std::vector<LstmLayerParams> layers{base, noisy_copy(permute_neurons(base, perm), seed, 1e-3)};
        MatchConfig cfg;
        cfg.seed = seed;
        const auto res = bbp_map_match(layers, cfg);
        REQUIRE(res.pool.size() == 8);
        // Local neuron l of client 1 is base neuron perm[l].
        for (std::size_t l = 0; l < 8; ++l) {
            CHECK(res.assignments[1].mapping[l] == res.assignments[0].mapping[perm[l]]);
        }
    }
}

TEST_CASE("growth is controlled by the new-neuron threshold") {
    std::vector<LstmLayerParams> layers;
    for (std::uint64_t j = 0; j < 3; ++j) layers.push_back(random_model(30 + j, 2, 4, 3).lstm);
    MatchConfig cfg;
    cfg.eps_scale = 0.0;
    cfg.penalty_kappa = 0.0;
    const auto all_new = bbp_map_match(layers, cfg);
    CHECK(all_new.pool.size() == 12);
    for (const auto& a : all_new.assignments) CHECK(a.global_size == 12);

    cfg.eps_scale = 1e6;
    cfg.penalty_kappa = 1.0;
    const auto none_new = bbp_map_match(layers, cfg);
    CHECK(none_new.pool.size() == 4);

    MatchConfig def;
    const auto mid = bbp_map_match(layers, def);
    CHECK(mid.pool.size() >= 4);
    CHECK(mid.pool.size() <= 12);
    for (const auto& a : mid.assignments) a.validate();
}

TEST_CASE("fused model does not depend on how clients label their neurons") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::vector<ModelParams> models;
        for (std::uint64_t j = 0; j < 3; ++j) models.push_back(random_model(seed * 10 + j, 2, 5, 4));
        auto relabeled = models;
        std::mt19937_64 rng(seed);
        for (auto& m : relabeled) m = permute_model(m, random_permutation(rng, 5));
        MatchConfig cfg;
        cfg.seed = seed;
        const auto a = fuse_models(models, cfg);
        const auto b = fuse_models(relabeled, cfg);
        REQUIRE(a.meta.hidden == b.meta.hidden);
        for (int k = 0; k < 20; ++k) {
            const auto x = random_tensor(rng, 4, 2);
            CHECK(std::abs(predict(a, x) - predict(b, x)) < 1e-10);
        }
    }
}

TEST_CASE("matching is deterministic for a fixed seed") {
    std::vector<LstmLayerParams> layers;
    for (std::uint64_t j = 0; j < 3; ++j) layers.push_back(random_model(40 + j, 2, 6, 3).lstm);
    MatchConfig cfg;
    cfg.seed = 9;
    const auto a = match_and_fuse_lstm(layers, cfg);
    const auto b = match_and_fuse_lstm(layers, cfg);
    CHECK(a.layer == b.layer);
    for (std::size_t j = 0; j < 3; ++j) CHECK(a.match.assignments[j] == b.match.assignments[j]);
    CHECK(a.match.sweeps >= 1);
    CHECK(a.match.sweeps <= cfg.passes);
}
