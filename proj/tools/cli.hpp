// Batch driver: `clustat <mock|angcorr|kl|sys> --config file --seed n --out dir`.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace clustat::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfigError = 2,
  kIoError = 3,
  kDataError = 4,
  kNumericError = 5,
};

// Every accepted key with its default value.
nlohmann::json default_config();

// Defaults overlaid with the user document; unknown keys are rejected.
nlohmann::json resolve_config(const nlohmann::json& user);

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clustat::cli
