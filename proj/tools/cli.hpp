#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace fedprog::cli {

/// "0-4", "1,3,7" or "0-2,9" -> neuron indices in the order given.
std::vector<std::size_t> parse_neuron_list(const std::string& text);

/// client_id -> fed_rmse of the last round listed in a metrics CSV.
std::map<std::size_t, double> read_baseline_csv(const std::filesystem::path& path);

/// Entry point; returns the process exit code. Usage errors exit nonzero via CLI11.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fedprog::cli
