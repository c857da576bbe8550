#pragma once

// Seeded stand-ins for the battery and turbofan datasets. Every generator is a pure
// function of its config.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedprog/data.hpp"

namespace fedprog {

struct SyntheticCyclicConfig {
    std::size_t n_clients = 3;
    std::size_t cycles_per_client = 80;
    std::uint64_t seed = 7;
    /// Relative spread of per-client fade rates; 0 puts every client on the same rate law.
    double heterogeneity = 0.6;
    double rated_capacity = 2.0;      // Ah
    double initial_capacity = 1.86;   // Ah, before per-client jitter
    double fade_per_cycle = 0.0045;   // Ah / cycle at heterogeneity 0
    std::size_t nominal_cycle_length = 40;  // steps for a cell at rated capacity
};

/// Per client, chronologically ordered cycles with M = 2 features (terminal voltage,
/// cell temperature). Capacity fades monotonically with periodic regeneration bumps.
std::vector<std::vector<CyclicRecord>> gen_synthetic_cyclic(const SyntheticCyclicConfig& cfg);

struct SyntheticEngineConfig {
    std::size_t n_engines = 60;
    std::size_t lifespan_min = 128;
    std::size_t lifespan_max = 543;
    /// Degradation onset as a fraction of lifespan, jittered per engine by +-20%.
    double knee_fraction = 0.6;
    std::uint64_t seed = 7;
    /// First engine id emitted.
    int first_id = 1;
};

struct SyntheticEngine {
    RawEngine raw;
    std::size_t knee = 0;  // first cycle index (0-based) with non-zero degradation
};

std::vector<SyntheticEngine> gen_synthetic_noncyclic(const SyntheticEngineConfig& cfg);

/// Truncated copies for testing: each engine is cut at a seeded point leaving at least
/// `min_observed` cycles. Returns the true RUL at the cut for every engine.
std::vector<double> truncate_for_test(std::vector<SyntheticEngine>& engines,
                                      std::size_t min_observed, std::uint64_t seed);

}  // namespace fedprog
