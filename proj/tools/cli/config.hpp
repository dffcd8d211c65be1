#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ecgx/data.hpp"
#include "ecgx/model.hpp"
#include "ecgx/train.hpp"

namespace ecgx::cli {

/// One `key = value` line as written, with where it came from.
struct RawValue {
  std::string text;
  std::string source;  // "config", "profile:quick", ...
  std::size_t line = 0;

  std::string where() const { return source + ":" + std::to_string(line); }
};

/// Named sections of key=value pairs. '#' and ';' start comments.
class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text, const std::string& source = "config");
  static ConfigFile load(const std::filesystem::path& path);

  /// Later layers win key by key.
  void merge(const ConfigFile& over);
  void set(const std::string& section, const std::string& key, RawValue value);
  const RawValue* find(const std::string& section, const std::string& key) const;

  const std::map<std::string, std::map<std::string, RawValue>>& sections() const { return sections_; }

 private:
  std::map<std::string, std::map<std::string, RawValue>> sections_;
};

/// Reads ECGX_<SECTION>_<KEY>; swapped out by tests.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

struct TrainSettings {
  TrainConfig config;
  bool pretrain = false;
  PretrainSchedule schedule;
  std::size_t folds = 8;
  std::optional<std::size_t> holdout_fold = 0;
  std::size_t workers = 1;
  std::filesystem::path resume;
};

struct DataSettings {
  std::filesystem::path manifest;  // empty: synthetic
  SyntheticConfig synthetic;
  LoadOptions load;
  std::uint64_t fold_seed = 0;
};

struct RunConfig {
  ModelSpec model;
  TrainSettings train;
  DataSettings data;
  std::filesystem::path out = "ecgx-out";
};

/// Every key is checked; unknown keys, bad values and invalid combinations
/// throw ConfigError prefixed with the line they came from.
RunConfig resolve(const ConfigFile& file, const EnvLookup& env = process_env());

/// The resolved configuration as a config file that resolves back to itself.
std::string render(const RunConfig& config);

/// Built-in base layers: "paper" (the defaults) and "quick" (desk-scale synthetic).
ConfigFile profile(std::string_view name);

}  // namespace ecgx::cli
