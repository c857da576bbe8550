#pragma once

// JSON model checkpoints. Doubles are written in shortest round-trip form so a save/load
// round trip is bitwise exact.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "fedprog/client.hpp"
#include "fedprog/nn.hpp"

namespace fedprog {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointInfo {
    std::string task = "cyclic";
    std::size_t round = 0;
    std::uint64_t seed = 0;
    LabelScaling labels;
};

struct Checkpoint {
    ModelParams model;
    CheckpointInfo info;
};

std::string checkpoint_to_json(const ModelParams& model, const CheckpointInfo& info);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const ModelParams& model, const CheckpointInfo& info,
                     const std::filesystem::path& path);
/// Throws CheckpointError on unreadable, malformed (byte offset reported), or
/// version-mismatched files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedprog
