#include "fedprog/matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace fedprog {

ModelParams fedavg_aggregate(std::span<const ModelParams> params, std::span<const double> fractions) {
    if (params.empty()) throw std::invalid_argument("fedavg_aggregate: no client parameters");
    if (fractions.size() != params.size()) {
        throw std::invalid_argument("fedavg_aggregate: " + std::to_string(fractions.size()) +
                                    " fractions for " + std::to_string(params.size()) + " clients");
    }
    double total = 0.0;
    for (double p : fractions) {
        if (!(p >= 0.0)) throw std::invalid_argument("fedavg_aggregate: negative or NaN fraction");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("fedavg_aggregate: fractions sum to " + std::to_string(total));
    }
    for (const auto& p : params) {
        p.validate();
        if (p.meta != params[0].meta) {
            throw ShapeError("fedavg_aggregate: client models differ in shape (hidden " +
                             std::to_string(p.meta.hidden) + " vs " +
                             std::to_string(params[0].meta.hidden) + ")");
        }
    }
    ModelParams out = ModelParams::zeros(params[0].meta);
    auto dst = parameter_blocks(out);
    for (std::size_t j = 0; j < params.size(); ++j) {
        auto src = parameter_blocks(params[j]);
        for (std::size_t b = 0; b < kBlockCount; ++b) {
            for (std::size_t k = 0; k < dst[b].size(); ++k) dst[b][k] += fractions[j] * src[b][k];
        }
    }
    return out;
}

std::vector<NeuronVector> extract_neuron_vectors(const LstmLayerParams& layer, int client_id) {
    layer.validate();
    const std::size_t L = layer.hidden();
    const std::size_t d = layer.input_size();
    std::vector<NeuronVector> out(L);
    for (std::size_t l = 0; l < L; ++l) {
        auto& nv = out[l];
        nv.client_id = client_id;
        nv.neuron = l;
        nv.values.reserve(neuron_vector_length(d));
        for (std::size_t g = 0; g < kGateCount; ++g) {
            auto r = layer.w_ih.row(g * L + l);
            nv.values.insert(nv.values.end(), r.begin(), r.end());
        }
        for (std::size_t g = 0; g < kGateCount; ++g) {
            nv.values.push_back(layer.b_ih[g * L + l] + layer.b_hh[g * L + l]);
        }
    }
    return out;
}

AssignmentMatrix AssignmentMatrix::identity(std::size_t n, int client_id) {
    AssignmentMatrix a;
    a.client_id = client_id;
    a.mapping.resize(n);
    std::iota(a.mapping.begin(), a.mapping.end(), std::size_t{0});
    a.global_size = n;
    return a;
}

void AssignmentMatrix::validate() const {
    std::vector<bool> seen(global_size, false);
    for (std::size_t l = 0; l < mapping.size(); ++l) {
        const std::size_t i = mapping[l];
        if (i >= global_size) {
            throw std::invalid_argument("assignment of client " + std::to_string(client_id) + ": neuron " +
                                        std::to_string(l) + " maps to " + std::to_string(i) +
                                        " >= global size " + std::to_string(global_size));
        }
        if (seen[i]) {
            throw std::invalid_argument("assignment of client " + std::to_string(client_id) +
                                        ": global neuron " + std::to_string(i) + " matched twice");
        }
        seen[i] = true;
    }
}

std::vector<bool> AssignmentMatrix::owned() const {
    std::vector<bool> own(global_size, false);
    for (std::size_t i : mapping) own.at(i) = true;
    return own;
}

void MatchConfig::validate() const {
    if (!(sigma_sq > 0.0) || !(sigma0_sq > 0.0)) {
        throw std::invalid_argument("matching variances must be positive");
    }
    if (!(eps_scale >= 0.0) || !(penalty_kappa >= 0.0)) {
        throw std::invalid_argument("eps_scale and penalty_kappa must be non-negative");
    }
    if (passes == 0) throw std::invalid_argument("matching needs at least one pass");
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

// Pool implied by the current assignments: theta_i is the mean of the vectors matched to i.
GlobalNeuronPool build_pool(const std::vector<std::vector<NeuronVector>>& vectors,
                            const std::vector<AssignmentMatrix>& assign, std::size_t global_size,
                            std::size_t width) {
    GlobalNeuronPool pool;
    pool.thetas.assign(global_size, std::vector<double>(width, 0.0));
    pool.counts.assign(global_size, 0);
    for (std::size_t j = 0; j < assign.size(); ++j) {
        for (std::size_t l = 0; l < assign[j].mapping.size(); ++l) {
            const std::size_t i = assign[j].mapping[l];
            auto& th = pool.thetas[i];
            for (std::size_t k = 0; k < width; ++k) th[k] += vectors[j][l].values[k];
            ++pool.counts[i];
        }
    }
    for (std::size_t i = 0; i < global_size; ++i) {
        if (pool.counts[i] == 0) continue;
        const double inv = 1.0 / static_cast<double>(pool.counts[i]);
        for (double& x : pool.thetas[i]) x *= inv;
    }
    return pool;
}

// Drops global neurons nobody owns and renumbers the rest, preserving order.
std::size_t compact(std::vector<AssignmentMatrix>& assign, std::size_t global_size) {
    std::vector<bool> used(global_size, false);
    for (const auto& a : assign) {
        for (std::size_t i : a.mapping) used[i] = true;
    }
    std::vector<std::size_t> remap(global_size, 0);
    std::size_t next = 0;
    for (std::size_t i = 0; i < global_size; ++i) {
        if (used[i]) remap[i] = next++;
    }
    for (auto& a : assign) {
        for (auto& i : a.mapping) i = remap[i];
    }
    return next;
}

}  // namespace

Tensor2D assignment_cost_matrix(std::span<const NeuronVector> client, const GlobalNeuronPool& pool,
                                const MatchConfig& cfg) {
    cfg.validate();
    const std::size_t n = client.size();
    const std::size_t g = pool.size();
    if (pool.counts.size() != g) throw ShapeError("assignment_cost_matrix: pool counts/thetas mismatch");
    if (n == 0 && g == 0) throw std::invalid_argument("assignment_cost_matrix: empty pool and empty client");
    Tensor2D cost(n, g + n);
    std::vector<double> existing;
    existing.reserve(n * g);
    for (std::size_t i = 0; i < g; ++i) {
        const double n_i = static_cast<double>(pool.counts[i]);
        const double denom = cfg.sigma_sq + cfg.sigma0_sq / (1.0 + n_i * cfg.sigma0_sq / cfg.sigma_sq);
        for (std::size_t l = 0; l < n; ++l) {
            if (client[l].values.size() != pool.thetas[i].size()) {
                throw ShapeError("assignment_cost_matrix: neuron vector length " +
                                 std::to_string(client[l].values.size()) + " vs pool " +
                                 std::to_string(pool.thetas[i].size()));
            }
            cost(l, i) = squared_distance(client[l].values, pool.thetas[i]) / denom;
        }
    }
    for (std::size_t l = 0; l < n; ++l) {
        for (std::size_t i = 0; i < g; ++i) existing.push_back(cost(l, i));
    }
    const double eps = cfg.eps_scale * median(std::move(existing));
    for (std::size_t c = 0; c < n; ++c) {
        const double penalty = eps + cfg.penalty_kappa * std::log(static_cast<double>(g + c + 1));
        for (std::size_t l = 0; l < n; ++l) cost(l, g + c) = penalty;
    }
    if (!cost.all_finite()) throw DataQualityError("assignment_cost_matrix: non-finite cost");
    return cost;
}

MatchResult bbp_map_match(std::span<const LstmLayerParams> client_layers, const MatchConfig& cfg) {
    cfg.validate();
    if (client_layers.empty()) throw std::invalid_argument("bbp_map_match: no clients");
    const std::size_t J = client_layers.size();
    const std::size_t d_in = client_layers[0].input_size();
    const std::size_t width = neuron_vector_length(d_in);

    std::vector<std::vector<NeuronVector>> vectors(J);
    for (std::size_t j = 0; j < J; ++j) {
        if (client_layers[j].input_size() != d_in) {
            throw ShapeError("bbp_map_match: client " + std::to_string(j) + " has input size " +
                             std::to_string(client_layers[j].input_size()) + ", expected " +
                             std::to_string(d_in));
        }
        vectors[j] = extract_neuron_vectors(client_layers[j], static_cast<int>(j));
    }

    std::vector<AssignmentMatrix> assign(J);
    for (std::size_t j = 0; j < J; ++j) assign[j].client_id = static_cast<int>(j);
    std::size_t global_size = 0;
    std::vector<std::size_t> order(J);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed);

    MatchResult res;
    for (std::size_t sweep = 0; sweep < cfg.passes; ++sweep) {
        const auto before = assign;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t j : order) {
            assign[j].mapping.clear();
            global_size = compact(assign, global_size);
            const auto pool = build_pool(vectors, assign, global_size, width);
            const std::size_t n = vectors[j].size();
            std::vector<std::size_t> chosen(n);
            if (global_size == 0) {
                // Every neuron must be created; any order is optimal, keep the local one.
                std::iota(chosen.begin(), chosen.end(), std::size_t{0});
            } else {
                chosen = hungarian_solve(assignment_cost_matrix(vectors[j], pool, cfg)).row_to_col;
            }
            // New columns are appended in column order.
            std::vector<std::size_t> fresh;
            for (std::size_t c : chosen) {
                if (c >= global_size) fresh.push_back(c);
            }
            std::sort(fresh.begin(), fresh.end());
            auto& m = assign[j].mapping;
            m.resize(n);
            for (std::size_t l = 0; l < n; ++l) {
                const std::size_t c = chosen[l];
                if (c < global_size) {
                    m[l] = c;
                } else {
                    const auto rank = static_cast<std::size_t>(
                        std::lower_bound(fresh.begin(), fresh.end(), c) - fresh.begin());
                    m[l] = global_size + rank;
                }
            }
            global_size += fresh.size();
        }
        global_size = compact(assign, global_size);
        res.sweeps = sweep + 1;
        bool unchanged = true;
        for (std::size_t j = 0; j < J; ++j) {
            if (before[j].mapping != assign[j].mapping) unchanged = false;
        }
        if (unchanged) break;
    }
    for (auto& a : assign) a.global_size = global_size;
    res.pool = build_pool(vectors, assign, global_size, width);
    res.assignments = std::move(assign);
    return res;
}

LstmLayerParams permute_input_hidden(const LstmLayerParams& layer, const AssignmentMatrix& pi) {
    layer.validate();
    pi.validate();
    const std::size_t L = layer.hidden();
    const std::size_t G = pi.global_size;
    if (pi.mapping.size() != L) {
        throw ShapeError("permute_input_hidden: assignment has " + std::to_string(pi.mapping.size()) +
                         " neurons, layer has " + std::to_string(L));
    }
    const std::size_t d = layer.input_size();
    LstmLayerParams out;
    out.w_ih = Tensor2D(kGateCount * G, d);
    out.b_ih.assign(kGateCount * G, 0.0);
    out.b_hh.assign(kGateCount * G, 0.0);
    for (std::size_t g = 0; g < kGateCount; ++g) {
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t src = g * L + l;
            const std::size_t dst = g * G + pi.mapping[l];
            std::copy_n(layer.w_ih.row(src).begin(), d, out.w_ih.row(dst).begin());
            out.b_ih[dst] = layer.b_ih[src];
            out.b_hh[dst] = layer.b_hh[src];
        }
    }
    return out;
}

Tensor2D permute_hidden_hidden(const Tensor2D& w_hh, const AssignmentMatrix& pi) {
    pi.validate();
    const std::size_t L = w_hh.cols();
    const std::size_t G = pi.global_size;
    if (w_hh.rows() != kGateCount * L || pi.mapping.size() != L) {
        throw ShapeError("permute_hidden_hidden: w_hh is " + std::to_string(w_hh.rows()) + "x" +
                         std::to_string(L) + " with " + std::to_string(pi.mapping.size()) +
                         " mapped neurons");
    }
    Tensor2D out(kGateCount * G, G);
    for (std::size_t g = 0; g < kGateCount; ++g) {
        for (std::size_t l = 0; l < L; ++l) {
            for (std::size_t k = 0; k < L; ++k) {
                out(g * G + pi.mapping[l], pi.mapping[k]) = w_hh(g * L + l, k);
            }
        }
    }
    return out;
}

LstmLayerParams permute_layer(const LstmLayerParams& layer, const AssignmentMatrix& pi) {
    auto out = permute_input_hidden(layer, pi);
    out.w_hh = permute_hidden_hidden(layer.w_hh, pi);
    return out;
}

namespace {

void check_assignments(std::size_t n_layers, std::span<const AssignmentMatrix> assignments) {
    if (n_layers == 0) throw std::invalid_argument("no client layers to average");
    if (assignments.size() != n_layers) {
        throw std::invalid_argument(std::to_string(assignments.size()) + " assignments for " +
                                    std::to_string(n_layers) + " client layers");
    }
    for (const auto& a : assignments) {
        a.validate();
        if (a.global_size != assignments[0].global_size) {
            throw ShapeError("assignments disagree on the global size");
        }
    }
}

std::vector<std::size_t> owner_counts(const std::vector<std::vector<bool>>& owned, std::size_t G) {
    std::vector<std::size_t> n(G, 0);
    for (const auto& o : owned) {
        for (std::size_t i = 0; i < G; ++i) n[i] += o[i] ? 1 : 0;
    }
    for (std::size_t i = 0; i < G; ++i) {
        if (n[i] == 0) throw std::logic_error("global neuron " + std::to_string(i) + " has no owner");
    }
    return n;
}

}  // namespace

LstmLayerParams matched_average_layer(std::span<const LstmLayerParams> permuted,
                                      std::span<const AssignmentMatrix> assignments,
                                      AverageMode mode) {
    check_assignments(permuted.size(), assignments);
    const std::size_t J = permuted.size();
    const std::size_t G = assignments[0].global_size;
    const std::size_t d = permuted[0].input_size();
    for (const auto& p : permuted) {
        p.validate();
        if (p.hidden() != G || p.input_size() != d) {
            throw ShapeError("matched_average_layer: permuted layer is " + std::to_string(p.hidden()) +
                             " wide, expected " + std::to_string(G));
        }
    }
    std::vector<std::vector<bool>> owned(J);
    for (std::size_t j = 0; j < J; ++j) owned[j] = assignments[j].owned();
    const auto n_i = owner_counts(owned, G);
    const double uniform = 1.0 / static_cast<double>(J);

    LstmLayerParams out = LstmLayerParams::zeros(d, G);
    for (std::size_t g = 0; g < kGateCount; ++g) {
        for (std::size_t i = 0; i < G; ++i) {
            const std::size_t r = g * G + i;
            const double w_i = mode == AverageMode::uniform_j ? uniform : 1.0 / static_cast<double>(n_i[i]);
            for (std::size_t j = 0; j < J; ++j) {
                if (!owned[j][i]) continue;
                const auto src = permuted[j].w_ih.row(r);
                auto dst = out.w_ih.row(r);
                for (std::size_t c = 0; c < d; ++c) dst[c] += w_i * src[c];
                out.b_ih[r] += w_i * permuted[j].b_ih[r];
                out.b_hh[r] += w_i * permuted[j].b_hh[r];
            }
            for (std::size_t k = 0; k < G; ++k) {
                std::size_t both = 0;
                for (std::size_t j = 0; j < J; ++j) both += (owned[j][i] && owned[j][k]) ? 1 : 0;
                const double w_ik = mode == AverageMode::uniform_j
                                        ? uniform
                                        : 1.0 / static_cast<double>(std::max<std::size_t>(1, both));
                double acc = 0.0;
                for (std::size_t j = 0; j < J; ++j) {
                    if (owned[j][i] && owned[j][k]) acc += w_ik * permuted[j].w_hh(r, k);
                }
                out.w_hh(r, k) = acc;
            }
        }
    }
    return out;
}

DenseLayerParams permute_output_layer(const DenseLayerParams& dense, const AssignmentMatrix& pi) {
    pi.validate();
    if (dense.w.rows() != 1 || dense.w.cols() != pi.mapping.size() || dense.b.size() != 1) {
        throw ShapeError("permute_output_layer: dense layer has " + std::to_string(dense.w.cols()) +
                         " inputs, assignment maps " + std::to_string(pi.mapping.size()));
    }
    DenseLayerParams out = DenseLayerParams::zeros(pi.global_size);
    for (std::size_t l = 0; l < pi.mapping.size(); ++l) out.w(0, pi.mapping[l]) = dense.w(0, l);
    out.b = dense.b;
    return out;
}

DenseLayerParams average_output_layer(std::span<const DenseLayerParams> dense,
                                      std::span<const AssignmentMatrix> assignments,
                                      AverageMode mode) {
    check_assignments(dense.size(), assignments);
    const std::size_t J = dense.size();
    const std::size_t G = assignments[0].global_size;
    std::vector<DenseLayerParams> scattered;
    std::vector<std::vector<bool>> owned(J);
    scattered.reserve(J);
    for (std::size_t j = 0; j < J; ++j) {
        scattered.push_back(permute_output_layer(dense[j], assignments[j]));
        owned[j] = assignments[j].owned();
    }
    const auto n_i = owner_counts(owned, G);
    const double uniform = 1.0 / static_cast<double>(J);
    DenseLayerParams out = DenseLayerParams::zeros(G);
    for (std::size_t i = 0; i < G; ++i) {
        const double w_i = mode == AverageMode::uniform_j ? uniform : 1.0 / static_cast<double>(n_i[i]);
        for (std::size_t j = 0; j < J; ++j) {
            if (owned[j][i]) out.w(0, i) += w_i * scattered[j].w(0, i);
        }
    }
    for (std::size_t j = 0; j < J; ++j) out.b[0] += uniform * scattered[j].b[0];
    return out;
}

LstmLayerParams fuse_lstm_with(std::span<const LstmLayerParams> client_layers,
                               std::span<const AssignmentMatrix> assignments, AverageMode mode) {
    check_assignments(client_layers.size(), assignments);
    std::vector<LstmLayerParams> permuted;
    permuted.reserve(client_layers.size());
    for (std::size_t j = 0; j < client_layers.size(); ++j) {
        permuted.push_back(permute_layer(client_layers[j], assignments[j]));
    }
    return matched_average_layer(permuted, assignments, mode);
}

FusedLstm match_and_fuse_lstm(std::span<const LstmLayerParams> client_layers, const MatchConfig& cfg) {
    FusedLstm f;
    f.match = bbp_map_match(client_layers, cfg);
    f.layer = fuse_lstm_with(client_layers, f.match.assignments, cfg.avg_mode);
    return f;
}

}  // namespace fedprog
