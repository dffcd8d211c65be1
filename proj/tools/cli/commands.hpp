#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "config.hpp"

namespace ecgx::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Parses `args` (without the program name), runs the subcommand and maps
/// failures to exit codes: 2 for configuration errors, 3 for runtime ones.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const EnvLookup& env = process_env());

struct LoadedData {
  std::vector<EcgRecord> records;
  std::vector<std::size_t> folds;  // one per record, k = train.folds
};

/// Manifest records or the synthetic set, with stratified folds.
LoadedData load_data(const RunConfig& config);

}  // namespace ecgx::cli
