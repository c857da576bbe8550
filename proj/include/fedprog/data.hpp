#pragma once

// Ingestion, standardization and windowing of cyclic (battery) and run-to-failure
// (engine) degradation data.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedprog/tensor.hpp"

namespace fedprog {

/// Malformed input file. `line` is 1-based, 0 when the error is not tied to a line.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
          line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ZeroVarianceError : public DataQualityError {
public:
    explicit ZeroVarianceError(std::size_t feature)
        : DataQualityError("feature " + std::to_string(feature) + " has zero variance"),
          feature_(feature) {}
    std::size_t feature() const noexcept { return feature_; }

private:
    std::size_t feature_;
};

/// A record is shorter than the requested window.
class InsufficientLengthError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// One discharge cycle. Features are time-major: row t holds the M measurements at step t.
struct CyclicRecord {
    int client_id = 0;
    int cycle = 0;
    std::vector<double> timestamps;
    Tensor2D features;  // (T_s, M)
    double capacity = 0.0;

    std::size_t length() const noexcept { return features.rows(); }
};

/// One engine trajectory, time-major (lifespan rows, M sensor columns).
struct EngineRecord {
    int engine_id = 0;
    Tensor2D features;
    std::vector<double> rul_labels;

    std::size_t lifespan() const noexcept { return features.rows(); }
};

struct StandardizationStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    friend bool operator==(const StandardizationStats&, const StandardizationStats&) = default;
};

struct Window {
    Tensor2D x;  // (seq_len, M)
    double label = 0.0;
};

struct SequenceDataset {
    std::vector<Window> windows;
    std::size_t seq_len = 0;
    StandardizationStats stats;

    std::size_t size() const noexcept { return windows.size(); }
    bool empty() const noexcept { return windows.empty(); }
    std::size_t feature_count() const noexcept {
        return windows.empty() ? 0 : windows.front().x.cols();
    }
};

/// Population mean/stddev per column, pooled over every row of every block.
StandardizationStats standardize_fit(std::span<const Tensor2D> blocks);
Tensor2D standardize_apply(const StandardizationStats& stats, const Tensor2D& features);
Tensor2D standardize_unapply(const StandardizationStats& stats, const Tensor2D& features);

/// One window per cycle holding its last `seq_len` steps (default: shortest cycle).
SequenceDataset segment_cycles(std::span<const CyclicRecord> records,
                               std::optional<std::size_t> seq_len = std::nullopt);

/// Windows rows [tau, tau+window) labelled with rul_labels[tau+window-1].
/// Throws InsufficientLengthError when the engine is shorter than `window`.
SequenceDataset sliding_windows(const EngineRecord& record, std::size_t window,
                                std::size_t stride = 1);

/// label(t) = min(cap, lifespan - t) for t = 1..lifespan.
std::vector<double> piecewise_rul_labels(std::size_t lifespan, std::size_t cap);

/// Sensors (1-based) ignored for engine data; leaves 14 features.
inline constexpr std::array<int, 7> kDroppedSensors = {1, 5, 6, 10, 16, 18, 19};
inline constexpr std::size_t kEngineSensorCount = 21;
inline constexpr std::size_t kEngineSettingCount = 3;
inline constexpr std::size_t kDefaultRulCap = 130;

std::vector<CyclicRecord> load_cyclic_csv(const std::filesystem::path& path);

/// Train-style engine file; labels are piecewise RUL with the given cap.
std::vector<EngineRecord> load_engine_csv(const std::filesystem::path& path,
                                          std::size_t rul_cap = kDefaultRulCap);

/// Ground-truth file: one integer RUL per engine, in order of first appearance.
std::vector<double> load_rul_file(const std::filesystem::path& path);

/// Relabels truncated test engines given the true RUL at their last observed cycle.
void attach_test_rul(std::vector<EngineRecord>& engines, std::span<const double> final_rul,
                     std::size_t rul_cap = kDefaultRulCap);

/// Unfiltered engine readings: per row the 3 operating settings followed by 21 sensors.
struct RawEngine {
    int engine_id = 0;
    Tensor2D readings;  // (lifespan, 24)
};

/// Drops the unused sensors and settings and attaches piecewise RUL labels.
EngineRecord engine_from_raw(const RawEngine& raw, std::size_t rul_cap = kDefaultRulCap);

void write_cyclic_csv(const std::filesystem::path& path, std::span<const CyclicRecord> records);
void write_engine_csv(const std::filesystem::path& path, std::span<const RawEngine> engines);
void write_rul_file(const std::filesystem::path& path, std::span<const double> final_rul);

enum class PartitionMode { heterogeneous, homogeneous };

/// Heterogeneous: one client per lifespan bucket (see lifespan_bucket). Homogeneous: seeded
/// shuffle into `n_clients` near-equal parts.
std::vector<std::vector<EngineRecord>> partition_clients(std::vector<EngineRecord> engines,
                                                         PartitionMode mode,
                                                         std::span<const std::size_t> boundaries,
                                                         std::size_t n_clients = 3,
                                                         std::uint64_t seed = 0);

/// [lifespan >= b0] + sum over k >= 1 of [lifespan > bk]; boundaries (200, 350) give
/// <200 / 200-350 / >350.
std::size_t lifespan_bucket(std::size_t lifespan, std::span<const std::size_t> boundaries);

/// Standardized train/test windows for one client.
struct ClientData {
    SequenceDataset train;
    SequenceDataset test;
};

/// First `train_fraction` of cycles train, the rest test. Stats are fit on train cycles only.
ClientData prepare_cyclic_client(std::span<const CyclicRecord> cycles, std::size_t seq_len,
                                 double train_fraction = 0.7);

/// Sliding windows over train engines; each test engine contributes its final window.
/// Engines shorter than the window are skipped (reported through `skipped`).
ClientData prepare_engine_client(std::span<const EngineRecord> train_engines,
                                 std::span<const EngineRecord> test_engines, std::size_t window,
                                 std::vector<int>* skipped = nullptr);

}  // namespace fedprog
