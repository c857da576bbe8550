#pragma once

// Parameter aggregation: coordinate-wise FedAvg and layer-wise matched averaging (FedMA)
// of the LSTM layer with model growth.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedprog/hungarian.hpp"
#include "fedprog/nn.hpp"

namespace fedprog {

/// sum_j p_j * W_j per coordinate. Requires identical shapes and sum(p) = 1 within 1e-9.
ModelParams fedavg_aggregate(std::span<const ModelParams> params, std::span<const double> fractions);

/// Input-to-hidden weights and combined biases of one hidden neuron:
/// [w_ih row l of gate 0..3 (4 * D_in values), b_ih + b_hh of gate 0..3 (4 values)].
struct NeuronVector {
    int client_id = 0;
    std::size_t neuron = 0;
    std::vector<double> values;
};

inline constexpr std::size_t neuron_vector_length(std::size_t d_in) noexcept {
    return kGateCount * d_in + kGateCount;
}

std::vector<NeuronVector> extract_neuron_vectors(const LstmLayerParams& layer, int client_id = 0);

/// Compact form of a client's permutation matrix: mapping[l] is the global neuron that
/// local neuron l was matched to.
struct AssignmentMatrix {
    int client_id = 0;
    std::vector<std::size_t> mapping;
    std::size_t global_size = 0;

    static AssignmentMatrix identity(std::size_t n, int client_id = 0);

    /// Throws std::invalid_argument unless mapping is injective into [0, global_size).
    void validate() const;
    /// Ownership mask over global neurons.
    std::vector<bool> owned() const;

    friend bool operator==(const AssignmentMatrix&, const AssignmentMatrix&) = default;
};

struct GlobalNeuronPool {
    std::vector<std::vector<double>> thetas;  // running means of matched neuron vectors
    std::vector<std::size_t> counts;          // matches per global neuron

    std::size_t size() const noexcept { return thetas.size(); }
};

enum class AverageMode {
    per_match,  // divide each global neuron by the number of clients that matched it
    uniform_j,  // divide everything by the client count J
};

struct MatchConfig {
    double sigma_sq = 1.0;       // client noise variance
    double sigma0_sq = 10.0;     // prior variance of global neurons
    double eps_scale = 1.0;      // new-neuron threshold, in units of the median match cost
    double penalty_kappa = 1.0;  // growth penalty f(i) = kappa * ln(i)
    std::size_t passes = 2;      // matching sweeps over all clients
    std::uint64_t seed = 0;      // client visiting order
    AverageMode avg_mode = AverageMode::per_match;

    void validate() const;
};

/// Rows: client neurons. Columns 0..L-1: existing global neurons with cost
/// |w - theta_i|^2 / (sigma^2 + sigma0^2 / (1 + n_i sigma0^2 / sigma^2)). Columns L..L+L_j-1:
/// new neurons at eps + kappa * ln(i) (i the 1-based global index), eps = eps_scale times the
/// median existing-column cost.
Tensor2D assignment_cost_matrix(std::span<const NeuronVector> client, const GlobalNeuronPool& pool,
                                const MatchConfig& cfg);

struct MatchResult {
    std::vector<AssignmentMatrix> assignments;  // one per client, all sharing global_size
    GlobalNeuronPool pool;
    std::size_t sweeps = 0;  // sweeps actually run
};

/// Iterative Hungarian matching of every client's LSTM neurons against the pool formed by
/// the other clients. Clients are visited in a seeded random order each sweep.
MatchResult bbp_map_match(std::span<const LstmLayerParams> client_layers, const MatchConfig& cfg);

/// Scatters w_ih rows and both biases of every gate block from local row l to global row
/// mapping[l] of a zero-initialised (4 L') block. w_hh is left empty.
LstmLayerParams permute_input_hidden(const LstmLayerParams& layer, const AssignmentMatrix& pi);

/// Pi H Pi^T per gate block: entry (l, m) of gate block g moves to (mapping[l], mapping[m]).
Tensor2D permute_hidden_hidden(const Tensor2D& w_hh, const AssignmentMatrix& pi);

/// Both of the above.
LstmLayerParams permute_layer(const LstmLayerParams& layer, const AssignmentMatrix& pi);

/// Average of client layers already permuted to the common size. Input-to-hidden rows and
/// biases of neuron i are averaged over its owners; w_hh entry (i, k) over the clients owning
/// both i and k (max(1, count)). uniform_j divides by J instead.
LstmLayerParams matched_average_layer(std::span<const LstmLayerParams> permuted,
                                      std::span<const AssignmentMatrix> assignments,
                                      AverageMode mode = AverageMode::per_match);

/// Scatters dense columns to global indices; unowned columns are zero.
DenseLayerParams permute_output_layer(const DenseLayerParams& dense, const AssignmentMatrix& pi);

/// Takes the clients' local (unpermuted) heads and scatters them with permute_output_layer.
/// Column i is averaged over its owners (or J); the bias over all J clients.
DenseLayerParams average_output_layer(std::span<const DenseLayerParams> dense,
                                      std::span<const AssignmentMatrix> assignments,
                                      AverageMode mode = AverageMode::per_match);

struct FusedLstm {
    LstmLayerParams layer;
    MatchResult match;
};

/// bbp_map_match followed by permutation and matched averaging of the LSTM layer.
FusedLstm match_and_fuse_lstm(std::span<const LstmLayerParams> client_layers, const MatchConfig& cfg);

/// Permutes and averages with caller-supplied assignments (no matching).
LstmLayerParams fuse_lstm_with(std::span<const LstmLayerParams> client_layers,
                               std::span<const AssignmentMatrix> assignments,
                               AverageMode mode = AverageMode::per_match);

}  // namespace fedprog
