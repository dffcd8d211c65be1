#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "ecgx/errors.hpp"

namespace ecgx::cli {
namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

bool valid_name(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return o.str();
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Tracks which keys were read so leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const ConfigFile& file, const EnvLookup& env) : file_(file), env_(env) {}

  std::optional<RawValue> raw(const std::string& section, const std::string& key) {
    used_.insert({section, key});
    const std::string var = "ECGX_" + upper(section) + "_" + upper(key);
    if (env_) {
      if (auto v = env_(var)) return RawValue{*v, "env " + var, 0};
    }
    if (const RawValue* v = file_.find(section, key)) return *v;
    return std::nullopt;
  }

  template <class T, class Parse>
  T get(const std::string& section, const std::string& key, T fallback, Parse parse) {
    auto v = raw(section, key);
    if (!v) return fallback;
    try {
      return parse(v->text);
    } catch (const std::exception& e) {
      throw ConfigError(location(*v) + section + "." + key + ": " + e.what());
    }
  }

  std::size_t size(const std::string& s, const std::string& k, std::size_t d) { return get(s, k, d, parse_size); }
  double real(const std::string& s, const std::string& k, double d) { return get(s, k, d, parse_real); }
  bool flag(const std::string& s, const std::string& k, bool d) { return get(s, k, d, parse_bool); }
  std::string text(const std::string& s, const std::string& k, std::string d) {
    return get(s, k, std::move(d), [](const std::string& t) { return t; });
  }

  void reject_unknown() const {
    for (const auto& [section, keys] : file_.sections()) {
      for (const auto& [key, value] : keys) {
        if (!used_.count({section, key})) {
          throw ConfigError(location(value) + "unknown key '" + key + "' in section [" + section + "]");
        }
      }
    }
  }

  static std::string location(const RawValue& v) { return v.line ? v.where() + ": " : v.source + ": "; }

  static std::size_t parse_size(const std::string& t) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError("expected a non-negative integer, got '" + t + "'");
    return v;
  }
  static double parse_real(const std::string& t) {
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v)) throw ConfigError("expected a number, got '" + t + "'");
    return v;
  }
  static bool parse_bool(const std::string& t) {
    const std::string l = lower(t);
    if (l == "true" || l == "yes" || l == "on" || l == "1") return true;
    if (l == "false" || l == "no" || l == "off" || l == "0") return false;
    throw ConfigError("expected true or false, got '" + t + "'");
  }
  static std::vector<std::size_t> parse_list(const std::string& t) {
    std::vector<std::size_t> out;
    if (trim(t).empty() || lower(trim(t)) == "none") return out;
    std::stringstream ss(t);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_size(trim(item)));
    return out;
  }

 private:
  const ConfigFile& file_;
  const EnvLookup& env_;
  std::set<std::pair<std::string, std::string>> used_;
};

// Re-throws validation failures of a whole section with the section named.
template <class F>
void checked(const std::string& section, F f) {
  try {
    f();
  } catch (const ConfigError& e) {
    throw ConfigError("config: [" + section + "]: " + e.what());
  } catch (const ShapeError& e) {
    throw ConfigError("config: [" + section + "]: " + e.what());
  }
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text, const std::string& source) {
  ConfigFile f;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    const std::size_t hash = line.find_first_of("#;");
    const std::string body = trim(hash == std::string_view::npos ? line : line.substr(0, hash));
    const std::string at = source + ":" + std::to_string(line_no) + ": ";
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(at + "unterminated section header '" + body + "'");
      section = lower(trim(std::string_view(body).substr(1, body.size() - 2)));
      if (!valid_name(section)) throw ConfigError(at + "invalid section name '" + section + "'");
      f.sections_[section];
      continue;
    }
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(at + "expected 'key = value', got '" + body + "'");
    if (section.empty()) throw ConfigError(at + "key outside any [section]");
    const std::string key = lower(trim(std::string_view(body).substr(0, eq)));
    if (!valid_name(key)) throw ConfigError(at + "invalid key '" + key + "'");
    auto& keys = f.sections_[section];
    if (keys.count(key)) {
      throw ConfigError(at + "duplicate key '" + key + "' (first set on line " + std::to_string(keys[key].line) + ")");
    }
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    keys[key] = RawValue{value, source, line_no};
  }
  return f;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  auto f = parse(ss.str(), "config");
  // Relative data paths resolve against the config file's directory.
  if (auto it = f.sections_.find("data"); it != f.sections_.end()) {
    if (auto m = it->second.find("manifest"); m != it->second.end() && !m->second.text.empty()) {
      std::filesystem::path p(m->second.text);
      if (p.is_relative()) m->second.text = (path.parent_path() / p).lexically_normal().string();
    }
  }
  return f;
}

void ConfigFile::merge(const ConfigFile& over) {
  for (const auto& [section, keys] : over.sections_)
    for (const auto& [key, value] : keys) sections_[section][key] = value;
}

void ConfigFile::set(const std::string& section, const std::string& key, RawValue value) {
  sections_[section][key] = std::move(value);
}

const RawValue* ConfigFile::find(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

RunConfig resolve(const ConfigFile& file, const EnvLookup& env) {
  static const std::set<std::string> known{"model", "train", "data", "output"};
  for (const auto& [section, keys] : file.sections()) {
    if (!known.count(section)) {
      const std::string at = keys.empty() ? "config: " : Reader::location(keys.begin()->second);
      throw ConfigError(at + "unknown section [" + section + "]");
    }
  }
  Reader r(file, env);
  RunConfig c;

  // [model]
  ModelSpec& m = c.model;
  const std::string backbone = r.get("model", "backbone", std::string("cnn7"), [](const std::string& t) {
    backbone_preset(t);
    return t;
  });
  std::optional<std::vector<LayerSpec>> layers =
      r.get("model", "layers", std::optional<std::vector<LayerSpec>>{}, [](const std::string& t) {
        return std::optional<std::vector<LayerSpec>>(parse_layers(t));
      });
  m.backbone = backbone_preset(backbone);
  if (layers) m.backbone.layers = *layers;
  m.aggregator = r.get("model", "aggregator", Aggregator::pooling, [](const std::string& t) { return parse_aggregator(t); });
  m.head.pooling = r.get("model", "pooling", PoolKind::max, [](const std::string& t) { return parse_pool_kind(t); });
  m.head.taps = r.get("model", "taps", std::vector<std::size_t>{}, Reader::parse_list);
  m.head.fusion = r.get("model", "fusion", Fusion::single, [](const std::string& t) { return parse_fusion(t); });
  m.head.classes = r.size("model", "classes", m.head.classes);
  m.head.masked = r.flag("model", "masked", m.head.masked);
  m.input_length = r.size("model", "input_length", m.input_length);
  m.recurrent.cell = r.get("model", "cell", m.recurrent.cell, [](const std::string& t) { return parse_cell_kind(t); });
  m.recurrent.layers = r.size("model", "rnn_layers", m.recurrent.layers);
  m.recurrent.hidden = r.size("model", "hidden", m.recurrent.hidden);
  m.recurrent.bidirectional = r.flag("model", "bidirectional", m.recurrent.bidirectional);
  m.recurrent.readout = r.get("model", "readout", m.recurrent.readout, [](const std::string& t) { return parse_readout(t); });
  m.recurrent.masked = r.flag("model", "rnn_masked", m.recurrent.masked);
  m.attention.tap = r.size("model", "attention_tap", m.attention.tap);
  m.attention.dim = r.size("model", "attention_dim", m.attention.dim);

  // [train]
  TrainSettings& t = c.train;
  t.config.epochs = r.size("train", "epochs", t.config.epochs);
  t.config.batch = r.size("train", "batch", t.config.batch);
  t.config.lr = r.real("train", "lr", t.config.lr);
  t.config.decay = r.real("train", "decay", t.config.decay);
  t.config.seed = r.size("train", "seed", t.config.seed);
  t.config.shuffle = r.flag("train", "shuffle", t.config.shuffle);
  t.pretrain = r.flag("train", "pretrain", t.pretrain);
  t.schedule.pretrain_epochs = r.size("train", "pretrain_epochs", t.schedule.pretrain_epochs);
  t.schedule.joint_epochs = r.size("train", "joint_epochs", t.schedule.joint_epochs);
  t.schedule.pretrain_lr = r.real("train", "pretrain_lr", t.schedule.pretrain_lr);
  t.schedule.backbone_lr = r.real("train", "backbone_lr", t.schedule.backbone_lr);
  t.schedule.head_lr = r.real("train", "head_lr", t.schedule.head_lr);
  t.folds = r.size("train", "folds", t.folds);
  t.holdout_fold = r.get("train", "holdout_fold", t.holdout_fold, [](const std::string& s) -> std::optional<std::size_t> {
    if (lower(s) == "none") return std::nullopt;
    return Reader::parse_size(s);
  });
  t.workers = r.size("train", "workers", t.workers);
  t.resume = r.text("train", "resume", "");
  m.recurrent.pretrained_backbone = t.pretrain;

  // [data]
  DataSettings& d = c.data;
  d.manifest = r.text("data", "manifest", "");
  auto& s = d.synthetic;
  s.counts = r.get("data", "counts", s.counts, [](const std::string& text) {
    auto v = Reader::parse_list(text);
    if (v.size() != kNumClasses) throw ConfigError("expected four per-class counts (AF,N,O,~)");
    return std::array<std::size_t, kNumClasses>{v[0], v[1], v[2], v[3]};
  });
  s.min_seconds = r.real("data", "min_seconds", s.min_seconds);
  s.max_seconds = r.real("data", "max_seconds", s.max_seconds);
  s.sample_rate = r.real("data", "sample_rate", s.sample_rate);
  s.min_bpm = r.real("data", "min_bpm", s.min_bpm);
  s.max_bpm = r.real("data", "max_bpm", s.max_bpm);
  s.seed = r.size("data", "seed", s.seed);
  s.id_prefix = r.text("data", "id_prefix", s.id_prefix);
  d.load.sample_rate = r.real("data", "csv_rate", d.load.sample_rate);
  d.load.max_seconds = r.real("data", "max_record_seconds", d.load.max_seconds);
  d.fold_seed = r.size("data", "fold_seed", d.fold_seed);

  // [output]
  c.out = r.text("output", "dir", c.out.string());

  r.reject_unknown();

  checked("model", [&] {
    if (layers) validate(m.backbone);
    validate(m);
    layer_table(m.backbone, m.input_length);
  });
  checked("train", [&] {
    if (t.config.batch == 0) throw ConfigError("batch must be at least 1");
    if (!(t.config.lr > 0.0) || !(t.schedule.pretrain_lr > 0.0) || !(t.schedule.backbone_lr > 0.0) ||
        !(t.schedule.head_lr > 0.0)) {
      throw ConfigError("learning rates must be positive");
    }
    if (!(t.config.decay > 0.0)) throw ConfigError("decay must be positive");
    if (t.folds < 2) throw ConfigError("folds must be at least 2");
    if (t.holdout_fold && *t.holdout_fold >= t.folds) throw ConfigError("holdout_fold must be below folds");
    if (t.workers == 0) throw ConfigError("workers must be at least 1");
    if (t.pretrain && m.aggregator != Aggregator::recurrent) throw ConfigError("pretrain needs aggregator = recurrent");
    if (t.pretrain && !t.resume.empty()) throw ConfigError("resume is not supported together with pretrain");
  });
  checked("data", [&] {
    if (!(s.sample_rate > 0.0) || !(d.load.sample_rate > 0.0)) throw ConfigError("sample rates must be positive");
    if (!(s.min_seconds > 0.0) || s.max_seconds < s.min_seconds) throw ConfigError("invalid record length range");
    if (!(s.min_bpm > 0.0) || s.max_bpm < s.min_bpm) throw ConfigError("invalid bpm range");
  });
  return c;
}

std::string render(const RunConfig& c) {
  std::ostringstream o;
  const auto& m = c.model;
  o << "[model]\n";
  o << "backbone = " << m.backbone.name << "\n";
  bool preset = false;
  for (const auto& n : backbone_preset_names()) preset = preset || n == m.backbone.name;
  if (!preset || backbone_preset(m.backbone.name).layers != m.backbone.layers) {
    o << "layers = " << format_layers(m.backbone) << "\n";
  }
  o << "aggregator = " << aggregator_name(m.aggregator) << "\n";
  o << "pooling = " << pool_kind_name(m.head.pooling) << "\n";
  o << "taps = " << (m.head.taps.empty() ? "none" : join(m.head.taps)) << "\n";
  o << "fusion = " << fusion_name(m.head.fusion) << "\n";
  o << "classes = " << m.head.classes << "\n";
  o << "masked = " << (m.head.masked ? "true" : "false") << "\n";
  o << "input_length = " << m.input_length << "\n";
  o << "cell = " << cell_kind_name(m.recurrent.cell) << "\n";
  o << "rnn_layers = " << m.recurrent.layers << "\n";
  o << "hidden = " << m.recurrent.hidden << "\n";
  o << "bidirectional = " << (m.recurrent.bidirectional ? "true" : "false") << "\n";
  o << "readout = " << readout_name(m.recurrent.readout) << "\n";
  o << "rnn_masked = " << (m.recurrent.masked ? "true" : "false") << "\n";
  o << "attention_tap = " << m.attention.tap << "\n";
  o << "attention_dim = " << m.attention.dim << "\n";

  const auto& t = c.train;
  o << "\n[train]\n";
  o << "epochs = " << t.config.epochs << "\n";
  o << "batch = " << t.config.batch << "\n";
  o << "lr = " << fmt(t.config.lr) << "\n";
  o << "decay = " << fmt(t.config.decay) << "\n";
  o << "seed = " << t.config.seed << "\n";
  o << "shuffle = " << (t.config.shuffle ? "true" : "false") << "\n";
  o << "pretrain = " << (t.pretrain ? "true" : "false") << "\n";
  o << "pretrain_epochs = " << t.schedule.pretrain_epochs << "\n";
  o << "joint_epochs = " << t.schedule.joint_epochs << "\n";
  o << "pretrain_lr = " << fmt(t.schedule.pretrain_lr) << "\n";
  o << "backbone_lr = " << fmt(t.schedule.backbone_lr) << "\n";
  o << "head_lr = " << fmt(t.schedule.head_lr) << "\n";
  o << "folds = " << t.folds << "\n";
  o << "holdout_fold = " << (t.holdout_fold ? std::to_string(*t.holdout_fold) : "none") << "\n";
  o << "workers = " << t.workers << "\n";
  if (!t.resume.empty()) o << "resume = " << t.resume.string() << "\n";

  const auto& d = c.data;
  const auto& s = d.synthetic;
  o << "\n[data]\n";
  if (!d.manifest.empty()) o << "manifest = " << d.manifest.string() << "\n";
  o << "counts = " << join({s.counts.begin(), s.counts.end()}) << "\n";
  o << "min_seconds = " << fmt(s.min_seconds) << "\n";
  o << "max_seconds = " << fmt(s.max_seconds) << "\n";
  o << "sample_rate = " << fmt(s.sample_rate) << "\n";
  o << "min_bpm = " << fmt(s.min_bpm) << "\n";
  o << "max_bpm = " << fmt(s.max_bpm) << "\n";
  o << "seed = " << s.seed << "\n";
  o << "id_prefix = " << s.id_prefix << "\n";
  o << "csv_rate = " << fmt(d.load.sample_rate) << "\n";
  o << "max_record_seconds = " << fmt(d.load.max_seconds) << "\n";
  o << "fold_seed = " << d.fold_seed << "\n";

  o << "\n[output]\n";
  o << "dir = " << c.out.string() << "\n";
  return o.str();
}

ConfigFile profile(std::string_view name) {
  if (name == "paper") return ConfigFile::parse("", "profile:paper");
  if (name == "quick") {
    return ConfigFile::parse(
        "[model]\n"
        "backbone = desk7\n"
        "input_length = 1000\n"
        "hidden = 16\n"
        "[train]\n"
        "folds = 5\n"
        "pretrain_epochs = 25\n"
        "joint_epochs = 25\n"
        "[data]\n"
        "counts = 100,100,100,100\n"
        "seed = 7\n"
        "fold_seed = 1\n",
        "profile:quick");
  }
  throw ConfigError("unknown profile '" + std::string(name) + "' (expected paper or quick)");
}

}  // namespace ecgx::cli
