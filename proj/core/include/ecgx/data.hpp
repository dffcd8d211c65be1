#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgx/tensor.hpp"

namespace ecgx {

enum class Rhythm : std::uint8_t { af = 0, normal = 1, other = 2, noisy = 3 };
inline constexpr std::size_t kNumClasses = 4;
inline constexpr double kDefaultSampleRate = 300.0;
inline constexpr double kMaxSeconds = 61.0;

/// "AF", "N", "O", "~".
std::string_view rhythm_name(Rhythm r);
/// Accepts AF/A, N, O, ~/Noisy (case-insensitive). Throws FormatError.
Rhythm parse_rhythm(std::string_view token);

struct EcgRecord {
  std::string id;
  std::vector<float> samples;
  double sample_rate = kDefaultSampleRate;
  std::optional<Rhythm> label;
  /// Sample indices of annotated events (premature beats in synthetic data).
  std::vector<std::size_t> events;

  std::size_t true_length() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct LoadOptions {
  double sample_rate = kDefaultSampleRate;  // CSV only; binary files carry their own
  double max_seconds = kMaxSeconds;
};

/// Samples separated by commas, whitespace or newlines; '#' starts a comment.
EcgRecord parse_csv_record(std::string_view text, std::string id, const LoadOptions& options = {});
void write_csv_record(std::ostream& out, const EcgRecord& record);

// Binary record: "ECG1" | version u32 | sample_rate f32 | label u8 (255 = none) |
//                length u32 | f32[length], little-endian.
inline constexpr std::uint32_t kRecordVersion = 1;
EcgRecord read_binary_record(std::istream& in, std::string id, const LoadOptions& options = {});
void write_binary_record(std::ostream& out, const EcgRecord& record);

/// Detects the binary magic, otherwise parses CSV. The id is the file stem.
/// Records longer than max_seconds are truncated with a warning.
EcgRecord load_record(const std::filesystem::path& path, const LoadOptions& options = {});
void save_record(const std::filesystem::path& path, const EcgRecord& record);

struct PaddedBatch {
  Tensor signals;                    // [B,Lpad,1]
  std::vector<std::size_t> lengths;  // true lengths
};

PaddedBatch pad_batch(std::span<const EcgRecord* const> records, std::size_t padded_length);
PaddedBatch pad_batch(std::span<const EcgRecord> records, std::size_t padded_length);

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  std::optional<Rhythm> label;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  /// Empty until folds are assigned; otherwise one fold index per entry.
  std::vector<std::size_t> folds;
  std::size_t fold_count = 0;

  std::array<std::size_t, kNumClasses> histogram() const;
  std::vector<std::size_t> fold_members(std::size_t fold) const;
};

/// UTF-8 CSV with header `id,path,label` and an optional `fold` column.
/// Relative paths resolve against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Per-class round-robin over a seeded shuffle. Fold sizes differ by at most
/// one and every fold's class histogram is within one record of the global
/// proportion.
std::vector<std::size_t> stratified_fold_assignment(std::span<const Rhythm> labels, std::size_t k, std::uint64_t seed);
DatasetManifest stratified_folds(DatasetManifest manifest, std::size_t k, std::uint64_t seed);

struct ClassKnobs {
  double rr_jitter = 0.02;     // relative RR spread
  double p_amplitude = 0.15;   // 0 removes P waves
  std::size_t premature_beats = 0;
  double prematurity = 0.28;   // fraction of RR by which a premature beat comes early
  double noise_std = 0.02;
  double f_wave_amplitude = 0.0;
  double baseline_wander = 0.05;
};

std::array<ClassKnobs, kNumClasses> default_class_knobs();

struct SyntheticConfig {
  std::array<std::size_t, kNumClasses> counts{100, 100, 100, 100};
  double min_seconds = 10.0;
  double max_seconds = 10.0;
  double sample_rate = 100.0;
  double min_bpm = 60.0;
  double max_bpm = 90.0;
  std::array<ClassKnobs, kNumClasses> knobs = default_class_knobs();
  std::uint64_t seed = 0;
  std::string id_prefix = "syn";
};

struct SyntheticRecord {
  EcgRecord record;
  std::vector<double> beat_times;      // R peaks in seconds
  std::vector<std::size_t> premature;  // indices into beat_times
  double p_amplitude = 0.0;
};

/// Parameterised P-QRS-T bump trains with class-specific knobs. Record i is
/// generated from its own seed so the output depends only on (config, i).
SyntheticRecord synthesize_record(Rhythm rhythm, std::size_t index, const SyntheticConfig& config);
std::vector<SyntheticRecord> generate_synthetic(const SyntheticConfig& config);

}  // namespace ecgx
