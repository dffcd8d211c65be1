#include "ecgx/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "ecgx/errors.hpp"

namespace ecgx {

std::string_view rhythm_name(Rhythm r) {
  switch (r) {
    case Rhythm::af: return "AF";
    case Rhythm::normal: return "N";
    case Rhythm::other: return "O";
    case Rhythm::noisy: return "~";
  }
  return "?";
}

Rhythm parse_rhythm(std::string_view token) {
  std::string t(token);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (t == "AF" || t == "A") return Rhythm::af;
  if (t == "N" || t == "NORMAL") return Rhythm::normal;
  if (t == "O" || t == "OTHER") return Rhythm::other;
  if (t == "~" || t == "NOISY") return Rhythm::noisy;
  throw FormatError("unknown label token '" + std::string(token) + "' (expected AF, N, O or ~)");
}

namespace {

std::size_t max_samples(double rate, const LoadOptions& options) {
  return static_cast<std::size_t>(std::llround(options.max_seconds * rate));
}

void clip(EcgRecord& r, const LoadOptions& options) {
  const std::size_t limit = max_samples(r.sample_rate, options);
  if (r.samples.size() > limit) {
    warn("record '" + r.id + "' is " + std::to_string(r.samples.size()) + " samples long; truncated to " +
         std::to_string(limit));
    r.samples.resize(limit);
    std::erase_if(r.events, [limit](std::size_t e) { return e >= limit; });
  }
}

template <class T>
void put_le(std::ostream& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(std::istream& in, const std::string& id) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("record '" + id + "': truncated binary file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

EcgRecord parse_csv_record(std::string_view text, std::string id, const LoadOptions& options) {
  EcgRecord r;
  r.id = std::move(id);
  r.sample_rate = options.sample_rate;
  if (!(r.sample_rate > 0.0)) throw FormatError("record '" + r.id + "': sample rate must be positive");
  std::size_t line = 1;
  std::size_t i = 0;
  while (i < text.size()) {
    const char ch = text[i];
    if (ch == '\n') {
      ++line;
      ++i;
    } else if (ch == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
    } else if (ch == ',' || ch == ';' || std::isspace(static_cast<unsigned char>(ch))) {
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && text[j] != ',' && text[j] != ';' && text[j] != '#' &&
             !std::isspace(static_cast<unsigned char>(text[j]))) {
        ++j;
      }
      const std::string token(text.substr(i, j - i));
      char* end = nullptr;
      const double v = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size() || !std::isfinite(v)) {
        throw FormatError("record '" + r.id + "' line " + std::to_string(line) + ": bad sample '" + token + "'");
      }
      r.samples.push_back(static_cast<float>(v));
      i = j;
    }
  }
  if (r.samples.empty()) throw FormatError("record '" + r.id + "': no samples");
  clip(r, options);
  return r;
}

void write_csv_record(std::ostream& out, const EcgRecord& record) {
  out.precision(9);
  for (float v : record.samples) out << v << '\n';
}

EcgRecord read_binary_record(std::istream& in, std::string id, const LoadOptions& options) {
  EcgRecord r;
  r.id = std::move(id);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ECG1", 4) != 0) throw FormatError("record '" + r.id + "': bad magic (expected ECG1)");
  const auto version = get_le<std::uint32_t>(in, r.id);
  if (version != kRecordVersion) {
    throw FormatError("record '" + r.id + "': unsupported version " + std::to_string(version));
  }
  r.sample_rate = std::bit_cast<float>(get_le<std::uint32_t>(in, r.id));
  if (!(r.sample_rate > 0.0) || !std::isfinite(r.sample_rate)) {
    throw FormatError("record '" + r.id + "': sample rate must be positive");
  }
  const auto label = get_le<std::uint8_t>(in, r.id);
  if (label < kNumClasses) {
    r.label = static_cast<Rhythm>(label);
  } else if (label != 255) {
    throw FormatError("record '" + r.id + "': unknown label code " + std::to_string(label));
  }
  const auto n = get_le<std::uint32_t>(in, r.id);
  if (n == 0) throw FormatError("record '" + r.id + "': no samples");
  r.samples.resize(n);
  for (auto& v : r.samples) {
    v = std::bit_cast<float>(get_le<std::uint32_t>(in, r.id));
    if (!std::isfinite(v)) throw FormatError("record '" + r.id + "': non-finite sample");
  }
  clip(r, options);
  return r;
}

void write_binary_record(std::ostream& out, const EcgRecord& record) {
  out.write("ECG1", 4);
  put_le<std::uint32_t>(out, kRecordVersion);
  put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(record.sample_rate)));
  put_le<std::uint8_t>(out, record.label ? static_cast<std::uint8_t>(*record.label) : std::uint8_t{255});
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(record.samples.size()));
  for (float v : record.samples) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw FormatError("record '" + record.id + "': write failed");
}

EcgRecord load_record(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open record " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  const bool binary = in.gcount() == 4 && std::memcmp(magic, "ECG1", 4) == 0;
  in.clear();
  in.seekg(0);
  if (binary) return read_binary_record(in, path.stem().string(), options);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv_record(ss.str(), path.stem().string(), options);
}

void save_record(const std::filesystem::path& path, const EcgRecord& record) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  if (path.extension() == ".csv") {
    write_csv_record(out, record);
  } else {
    write_binary_record(out, record);
  }
}

PaddedBatch pad_batch(std::span<const EcgRecord* const> records, std::size_t padded_length) {
  if (records.empty()) throw ShapeError("pad_batch: empty batch");
  const std::size_t B = records.size();
  std::vector<double> v(B * padded_length, 0.0);
  PaddedBatch out;
  out.lengths.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    const EcgRecord& r = *records[b];
    if (r.samples.size() > padded_length) {
      throw ShapeError("pad_batch: record '" + r.id + "' has " + std::to_string(r.samples.size()) +
                       " samples, more than the padded length " + std::to_string(padded_length));
    }
    if (r.samples.empty()) throw ShapeError("pad_batch: record '" + r.id + "' is empty");
    std::copy(r.samples.begin(), r.samples.end(), v.begin() + static_cast<std::ptrdiff_t>(b * padded_length));
    out.lengths[b] = r.samples.size();
  }
  out.signals = Tensor(Shape{B, padded_length, 1}, std::move(v));
  return out;
}

PaddedBatch pad_batch(std::span<const EcgRecord> records, std::size_t padded_length) {
  std::vector<const EcgRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return pad_batch(std::span<const EcgRecord* const>(ptrs), padded_length);
}

std::array<std::size_t, kNumClasses> DatasetManifest::histogram() const {
  std::array<std::size_t, kNumClasses> h{};
  for (const auto& e : entries) {
    if (e.label) ++h[static_cast<std::size_t>(*e.label)];
  }
  return h;
}

std::vector<std::size_t> DatasetManifest::fold_members(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (folds[i] == fold) out.push_back(i);
  }
  return out;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  bool has_fold = false;
  std::size_t max_fold = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (lineno == 1) {
      if (cells.size() < 3 || cells[0] != "id" || cells[1] != "path" || cells[2] != "label") {
        throw FormatError(where + "manifest header must start with id,path,label");
      }
      has_fold = cells.size() > 3 && cells[3] == "fold";
      continue;
    }
    if (cells.size() < 3) throw FormatError(where + "expected id,path,label");
    ManifestEntry e;
    e.id = cells[0];
    e.path = cells[1];
    if (e.path.is_relative()) e.path = base / e.path;
    if (!cells[2].empty()) {
      try {
        e.label = parse_rhythm(cells[2]);
      } catch (const FormatError& err) {
        throw FormatError(where + err.what());
      }
    }
    if (has_fold) {
      if (cells.size() < 4 || cells[3].empty()) throw FormatError(where + "missing fold index");
      std::size_t f = 0;
      const auto res = std::from_chars(cells[3].data(), cells[3].data() + cells[3].size(), f);
      if (res.ec != std::errc() || res.ptr != cells[3].data() + cells[3].size()) {
        throw FormatError(where + "bad fold index '" + cells[3] + "'");
      }
      m.folds.push_back(f);
      max_fold = std::max(max_fold, f);
    }
    m.entries.push_back(std::move(e));
  }
  if (lineno == 0) throw FormatError(path.string() + ": empty manifest");
  if (has_fold && !m.entries.empty()) m.fold_count = max_fold + 1;
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  const bool folds = manifest.folds.size() == manifest.entries.size() && !manifest.folds.empty();
  out << "id,path,label" << (folds ? ",fold" : "") << '\n';
  const auto base = path.parent_path();
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    std::filesystem::path p = e.path;
    if (p.is_absolute() && !base.empty()) {
      auto rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    out << e.id << ',' << p.generic_string() << ',' << (e.label ? rhythm_name(*e.label) : "");
    if (folds) out << ',' << manifest.folds[i];
    out << '\n';
  }
}

std::vector<std::size_t> stratified_fold_assignment(std::span<const Rhythm> labels, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("stratified_folds: k must be at least 1");
  if (k > labels.size()) {
    throw ConfigError("stratified_folds: k = " + std::to_string(k) + " exceeds the " +
                      std::to_string(labels.size()) + " records");
  }
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> folds(labels.size(), 0);
  std::size_t next = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t idx : members) {
      folds[idx] = next;
      next = (next + 1) % k;
    }
  }
  return folds;
}

DatasetManifest stratified_folds(DatasetManifest manifest, std::size_t k, std::uint64_t seed) {
  std::vector<Rhythm> labels;
  labels.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    if (!e.label) throw ConfigError("stratified_folds: record '" + e.id + "' has no label");
    labels.push_back(*e.label);
  }
  manifest.folds = stratified_fold_assignment(labels, k, seed);
  manifest.fold_count = k;
  return manifest;
}

std::array<ClassKnobs, kNumClasses> default_class_knobs() {
  std::array<ClassKnobs, kNumClasses> k{};
  k[static_cast<std::size_t>(Rhythm::af)] = {0.4, 0.0, 0, 0.28, 0.02, 0.06, 0.05};
  k[static_cast<std::size_t>(Rhythm::normal)] = {0.02, 0.15, 0, 0.28, 0.02, 0.0, 0.05};
  k[static_cast<std::size_t>(Rhythm::other)] = {0.02, 0.15, 1, 0.28, 0.02, 0.0, 0.05};
  k[static_cast<std::size_t>(Rhythm::noisy)] = {0.05, 0.15, 0, 0.28, 0.5, 0.0, 0.3};
  return k;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void add_bump(std::vector<double>& x, double rate, double center, double amplitude, double width) {
  const long lo = std::max(0L, static_cast<long>(std::floor((center - 4 * width) * rate)));
  const long hi = std::min(static_cast<long>(x.size()) - 1, static_cast<long>(std::ceil((center + 4 * width) * rate)));
  for (long n = lo; n <= hi; ++n) {
    const double d = (static_cast<double>(n) / rate - center) / width;
    x[static_cast<std::size_t>(n)] += amplitude * std::exp(-0.5 * d * d);
  }
}

}  // namespace

SyntheticRecord synthesize_record(Rhythm rhythm, std::size_t index, const SyntheticConfig& config) {
  if (!(config.sample_rate > 0.0)) throw ConfigError("synthetic: sample rate must be positive");
  if (!(config.min_seconds > 0.0) || config.max_seconds < config.min_seconds) {
    throw ConfigError("synthetic: invalid record length range");
  }
  if (!(config.min_bpm > 0.0) || config.max_bpm < config.min_bpm) throw ConfigError("synthetic: invalid bpm range");
  const ClassKnobs& k = config.knobs[static_cast<std::size_t>(rhythm)];
  std::mt19937_64 rng(splitmix(config.seed ^ splitmix(index + 1)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double seconds = config.min_seconds + (config.max_seconds - config.min_seconds) * unit(rng);
  const double rate = config.sample_rate;
  const std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(seconds * rate)));
  const double duration = static_cast<double>(n) / rate;
  const double bpm = config.min_bpm + (config.max_bpm - config.min_bpm) * unit(rng);
  const double rr = 60.0 / bpm;
  const double gain = 0.8 + 0.4 * unit(rng);

  SyntheticRecord out;
  out.p_amplitude = k.p_amplitude;
  auto next_rr = [&] {
    if (rhythm == Rhythm::af) return rr * (1.0 + k.rr_jitter * (2.0 * unit(rng) - 1.0));
    return rr * std::max(0.5, 1.0 + k.rr_jitter * gauss(rng));
  };
  double t = 0.25 + (rr - 0.25) * unit(rng);
  while (t < duration - 0.3) {
    out.beat_times.push_back(t);
    t += next_rr();
  }

  // Premature beats: keep them away from the record edges so the compensatory
  // pause fits.
  if (k.premature_beats > 0 && out.beat_times.size() >= 6) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 2; i + 2 < out.beat_times.size(); ++i) candidates.push_back(i);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    std::vector<std::size_t> chosen;
    for (std::size_t c : candidates) {
      if (chosen.size() == k.premature_beats) break;
      const bool near = std::any_of(chosen.begin(), chosen.end(), [c](std::size_t o) { return o + 2 > c && c + 2 > o; });
      if (!near) chosen.push_back(c);
    }
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t c : chosen) {
      const double prev = out.beat_times[c - 1];
      const double normal_gap = out.beat_times[c] - prev;
      const double early = prev + (1.0 - k.prematurity) * normal_gap;
      // The following beat keeps its original slot (compensatory pause).
      out.beat_times[c] = early;
      out.premature.push_back(c);
    }
  }

  std::vector<double> x(n, 0.0);
  for (std::size_t b = 0; b < out.beat_times.size(); ++b) {
    const double r = out.beat_times[b];
    const bool pvc = std::find(out.premature.begin(), out.premature.end(), b) != out.premature.end();
    const double amp = gain * (1.0 + 0.05 * gauss(rng));
    if (pvc) {
      add_bump(x, rate, r - 0.04, -0.25 * amp, 0.025);
      add_bump(x, rate, r, 1.2 * amp, 0.035);
      add_bump(x, rate, r + 0.06, -0.45 * amp, 0.03);
      add_bump(x, rate, r + 0.3, -0.35 * amp, 0.07);
    } else {
      if (k.p_amplitude > 0.0) add_bump(x, rate, r - 0.16, k.p_amplitude * amp, 0.025);
      add_bump(x, rate, r - 0.025, -0.1 * amp, 0.01);
      add_bump(x, rate, r, 1.0 * amp, 0.012);
      add_bump(x, rate, r + 0.025, -0.2 * amp, 0.01);
      add_bump(x, rate, r + 0.25, 0.3 * amp, 0.05);
    }
  }
  const double wander_f = 0.15 + 0.2 * unit(rng);
  const double wander_phase = 2.0 * M_PI * unit(rng);
  const double f_freq = 5.0 + 2.0 * unit(rng);
  const double f_phase = 2.0 * M_PI * unit(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double ts = static_cast<double>(i) / rate;
    x[i] += k.baseline_wander * std::sin(2.0 * M_PI * wander_f * ts + wander_phase);
    if (k.f_wave_amplitude > 0.0) {
      x[i] += k.f_wave_amplitude * std::sin(2.0 * M_PI * f_freq * ts + f_phase) *
              (0.7 + 0.3 * std::sin(2.0 * M_PI * 0.5 * ts));
    }
    x[i] += k.noise_std * gauss(rng);
  }

  EcgRecord& rec = out.record;
  char id[32];
  std::snprintf(id, sizeof id, "%05zu", index);
  rec.id = config.id_prefix + id;
  rec.sample_rate = rate;
  rec.label = rhythm;
  rec.samples.assign(x.begin(), x.end());
  for (std::size_t p : out.premature) {
    rec.events.push_back(std::min(n - 1, static_cast<std::size_t>(std::llround(out.beat_times[p] * rate))));
  }
  return out;
}

std::vector<SyntheticRecord> generate_synthetic(const SyntheticConfig& config) {
  std::vector<Rhythm> order;
  for (std::size_t c = 0; c < kNumClasses; ++c) order.insert(order.end(), config.counts[c], static_cast<Rhythm>(c));
  std::mt19937_64 rng(splitmix(config.seed));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<SyntheticRecord> out;
  out.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out.push_back(synthesize_record(order[i], i, config));
  return out;
}

}  // namespace ecgx
