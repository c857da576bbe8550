#pragma once

// Shared helpers and independent oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedprog/client.hpp"
#include "fedprog/data.hpp"
#include "fedprog/matching.hpp"
#include "fedprog/nn.hpp"

namespace testing {

using namespace fedprog;

inline Tensor2D random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Tensor2D t(r, c);
    for (double& v : t.values()) v = u(rng);
    return t;
}

/// Random weights and biases everywhere (init_model leaves biases at zero).
inline ModelParams random_model(std::uint64_t seed, std::size_t d_in, std::size_t hidden, std::size_t seq_len,
                                double scale = 0.5) {
    std::mt19937_64 rng(seed);
    ModelParams m = ModelParams::zeros({d_in, hidden, seq_len});
    for (auto block : parameter_blocks(m)) {
        std::uniform_real_distribution<double> u(-scale, scale);
        for (double& v : block) v = u(rng);
    }
    return m;
}

/// Straight transcription of the LSTM equations, one scalar at a time.
inline double reference_predict(const ModelParams& m, const Tensor2D& x) {
    const std::size_t L = m.meta.hidden, D = m.meta.d_in;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> h(L, 0.0), z(L, 0.0);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        std::vector<double> pre(4 * L);
        for (std::size_t r = 0; r < 4 * L; ++r) {
            double s = m.lstm.b_ih[r] + m.lstm.b_hh[r];
            for (std::size_t d = 0; d < D; ++d) s += m.lstm.w_ih(r, d) * x(t, d);
            for (std::size_t k = 0; k < L; ++k) s += m.lstm.w_hh(r, k) * h[k];
            pre[r] = s;
        }
        for (std::size_t l = 0; l < L; ++l) {
            const double i = sig(pre[l]), f = sig(pre[L + l]), g = std::tanh(pre[2 * L + l]),
                         o = sig(pre[3 * L + l]);
            z[l] = f * z[l] + i * g;
            h[l] = o * std::tanh(z[l]);
        }
    }
    double y = m.dense.b[0];
    for (std::size_t l = 0; l < L; ++l) y += m.dense.w(0, l) * h[l];
    return y;
}

inline double batch_loss(const ModelParams& m, const std::vector<Tensor2D>& xs, const std::vector<double>& ys) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = reference_predict(m, xs[i]) - ys[i];
        s += r * r;
    }
    return s / static_cast<double>(xs.size());
}

/// Minimum total cost over all injective row->column maps, by exhaustive depth-first
/// enumeration. Partial sums accumulate in row order, like the solver's total.
inline double brute_force_assignment(const Tensor2D& c) {
    double best = std::numeric_limits<double>::infinity();
    std::vector<char> used(c.cols(), 0);
    auto dfs = [&](auto& self, std::size_t r, double partial) -> void {
        if (r == c.rows()) {
            best = std::min(best, partial);
            return;
        }
        for (std::size_t col = 0; col < c.cols(); ++col) {
            if (used[col]) continue;
            used[col] = 1;
            self(self, r + 1, partial + c(r, col));
            used[col] = 0;
        }
    };
    dfs(dfs, 0, 0.0);
    return best;
}

/// Layer whose neuron l is neuron perm[l] of `layer` (rows of every gate block, both
/// biases, and w_hh rows and columns).
inline LstmLayerParams permute_neurons(const LstmLayerParams& layer, const std::vector<std::size_t>& perm) {
    const std::size_t L = layer.hidden(), D = layer.input_size();
    LstmLayerParams out = LstmLayerParams::zeros(D, L);
    for (std::size_t g = 0; g < kGateCount; ++g) {
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t src = g * L + perm[l], dst = g * L + l;
            for (std::size_t d = 0; d < D; ++d) out.w_ih(dst, d) = layer.w_ih(src, d);
            for (std::size_t k = 0; k < L; ++k) out.w_hh(dst, k) = layer.w_hh(src, perm[k]);
            out.b_ih[dst] = layer.b_ih[src];
            out.b_hh[dst] = layer.b_hh[src];
        }
    }
    return out;
}

inline ModelParams permute_model(const ModelParams& m, const std::vector<std::size_t>& perm) {
    ModelParams out = m;
    out.lstm = permute_neurons(m.lstm, perm);
    for (std::size_t l = 0; l < perm.size(); ++l) out.dense.w(0, l) = m.dense.w(0, perm[l]);
    return out;
}

inline std::vector<std::size_t> random_permutation(std::mt19937_64& rng, std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

/// Toy regression windows: label is a smooth function of the window contents.
inline SequenceDataset toy_dataset(std::uint64_t seed, std::size_t n, std::size_t seq_len, std::size_t d_in) {
    std::mt19937_64 rng(seed);
    SequenceDataset ds;
    ds.seq_len = seq_len;
    for (std::size_t i = 0; i < n; ++i) {
        Window w{random_tensor(rng, seq_len, d_in), 0.0};
        double s = 0.0;
        for (double v : w.x.values()) s += v;
        w.label = std::tanh(s / static_cast<double>(seq_len));
        ds.windows.push_back(std::move(w));
    }
    return ds;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fedprog_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
