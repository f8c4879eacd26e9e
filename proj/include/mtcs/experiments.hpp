#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace mtcs {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::json;

// Throws std::invalid_argument on unreadable or unparsable files.
Json load_config_file(const std::string& path);

// One diagnostic per problem, each prefixed with the offending key. Empty
// means the config is runnable.
std::vector<std::string> validate_config(const Json& config);

struct ExperimentOutputs {
  std::vector<std::string> files;  // primary csv first, manifest last
};

// Dispatches on config["kind"], writes the result CSV(s) next to
// out_csv_path plus a manifest echoing the config. Data files are written
// with %.17g floats through atomic renames, so a rerun with the same config
// reproduces them byte for byte (the manifest carries the wall time and is
// exempt). Throws std::invalid_argument for config problems and
// NumericalError when an iteration diverges.
ExperimentOutputs run_experiment(const Json& config, const std::string& out_csv_path);

}  // namespace mtcs
