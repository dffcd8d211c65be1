#include "commands.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ecgx/cam.hpp"
#include "ecgx/checkpoint.hpp"
#include "ecgx/errors.hpp"
#include "ecgx/figures.hpp"
#include "ecgx/introspection.hpp"
#include "ecgx/saliency.hpp"
#include "ecgx/train.hpp"

namespace ecgx::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kClassNames{"AF", "N", "O", "~"};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw FormatError("failed writing '" + path.string() + "'");
}

template <class F>
std::string to_text(F&& emit) {
  std::ostringstream s;
  emit(s);
  return s.str();
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream o;
  o << "prediction";
  for (const auto& n : kClassNames) o << ',' << n;
  o << '\n';
  for (std::size_t p = 0; p < cm.classes(); ++p) {
    o << kClassNames[p];
    for (std::size_t t = 0; t < cm.classes(); ++t) o << ',' << cm.at(p, t);
    o << '\n';
  }
  return o.str();
}

EpochCallback progress(std::ostream& err, std::string prefix = "") {
  return [&err, prefix](const EpochStats& e) {
    err << prefix << "epoch " << e.epoch << " loss " << std::setprecision(6) << e.loss << " (" << std::fixed
        << std::setprecision(1) << e.seconds << " s)" << std::defaultfloat << '\n';
  };
}

// Options shared by every subcommand.
struct Common {
  std::string config;
  std::string profile = "paper";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  std::vector<std::pair<std::string, std::string>> model_flags;  // (key, value) from subcommand flags
};

ConfigFile layered(const Common& c) {
  ConfigFile f = profile(c.profile);
  if (!c.config.empty()) f.merge(ConfigFile::load(c.config));
  for (const auto& [key, value] : c.model_flags) f.set("model", key, RawValue{value, "flag --" + key, 0});
  return f;
}

RunConfig resolved(const Common& c, const EnvLookup& env) {
  RunConfig rc = resolve(layered(c), env);
  if (c.seed_opt->count()) rc.train.config.seed = c.seed;
  if (c.workers_opt->count()) {
    if (c.workers == 0) throw ConfigError("--workers must be at least 1");
    rc.train.workers = c.workers;
  }
  if (c.out_opt->count()) rc.out = c.out;
  return rc;
}

void echo_config(const RunConfig& rc, std::ostream& out) {
  const std::string text = render(rc);
  write_file(rc.out / "config.resolved", text);
  out << "# resolved configuration (also written to " << (rc.out / "config.resolved").string() << ")\n" << text << '\n';
}

std::vector<EcgRecord> subset(const LoadedData& d, const std::function<bool(std::size_t)>& keep) {
  std::vector<EcgRecord> out;
  for (std::size_t i = 0; i < d.records.size(); ++i)
    if (keep(d.folds[i])) out.push_back(d.records[i]);
  return out;
}

int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  echo_config(rc, out);
  const LoadedData data = load_data(rc);
  const auto& ts = rc.train;
  std::vector<EcgRecord> train_set, eval_set;
  if (ts.holdout_fold) {
    const std::size_t h = *ts.holdout_fold;
    train_set = subset(data, [h](std::size_t f) { return f != h; });
    eval_set = subset(data, [h](std::size_t f) { return f == h; });
  } else {
    train_set = eval_set = data.records;
  }

  Model model(rc.model, ts.config.seed);
  std::vector<EpochStats> history;
  std::optional<std::vector<CheckpointEntry>> trainer_state;
  if (ts.pretrain) {
    auto h = pretrain_then_joint(model, train_set, ts.schedule, ts.config, progress(err));
    history = h.pretrain;
    history.insert(history.end(), h.joint.begin(), h.joint.end());
  } else {
    Trainer trainer(model, ts.config);
    if (!ts.resume.empty()) {
      trainer.restore(load_checkpoint(ts.resume));
      err << "resumed from " << ts.resume.string() << " at epoch " << trainer.epoch() << '\n';
    }
    auto cb = progress(err);
    while (trainer.epoch() < ts.config.epochs) {
      history.push_back(trainer.run_epoch(train_set));
      cb(history.back());
    }
    trainer_state = trainer.checkpoint();
  }

  const auto state = model.state();
  save_checkpoint(rc.out / "model.ckpt", state);
  if (trainer_state) save_checkpoint(rc.out / "trainer.ckpt", *trainer_state);
  write_file(rc.out / "loss.csv", to_text([&](std::ostream& s) { write_loss_csv(s, history); }));

  const ConfusionMatrix cm = evaluate(model, eval_set);
  const F1Report report = make_report(std::vector<ConfusionMatrix>{cm});
  json j;
  j["model"] = rc.model.backbone.name + "+" + std::string(aggregator_name(rc.model.aggregator));
  j["evaluated_on"] = ts.holdout_fold ? "fold " + std::to_string(*ts.holdout_fold) : std::string("training set");
  j["train_records"] = train_set.size();
  j["eval_records"] = eval_set.size();
  j["epochs_run"] = history.size();
  j["final_loss"] = history.empty() ? 0.0 : history.back().loss;
  j["parameters"] = model.parameter_count();
  j["report"] = json::parse(report_json(report));
  write_file(rc.out / "metrics.json", j.dump(2) + "\n");

  out << report_table(report, j["model"].get<std::string>()) << '\n' << confusion_table(cm, kClassNames);
  out << "wrote model.ckpt, loss.csv, metrics.json to " << rc.out.string() << '\n';
  return kExitOk;
}

int cmd_cv(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  echo_config(rc, out);
  const LoadedData data = load_data(rc);
  const auto& ts = rc.train;
  const std::uint64_t seed = ts.config.seed;
  const ModelSpec spec = rc.model;
  ModelFactory factory = [spec, seed](std::size_t fold) { return Model(spec, seed + fold); };
  TrainFunction train;
  if (ts.pretrain) {
    train = [ts](Model& m, std::span<const EcgRecord> records, std::size_t fold) {
      TrainConfig c = ts.config;
      c.seed = ts.config.seed + fold;
      pretrain_then_joint(m, records, ts.schedule, c);
    };
  } else {
    train = plain_training(ts.config);
  }
  const auto start = std::chrono::steady_clock::now();
  auto result = cross_validate(factory, data.records, data.folds, ts.folds, train, ts.workers);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  for (std::size_t i = 0; i < result.completed.size(); ++i) {
    const fs::path dir = rc.out / ("fold_" + std::to_string(result.completed[i]));
    write_file(dir / "confusion.csv", confusion_csv(result.folds[i]));
    write_file(dir / "f1.json", json(result.report.fold_class_f1[i]).dump() + "\n");
  }
  json j = json::parse(report_json(result.report, rc.model.backbone.name));
  j["completed_folds"] = result.completed;
  j["failures"] = result.failures;
  write_file(rc.out / "cv_report.json", j.dump(2) + "\n");
  const std::string table = report_table(result.report, rc.model.backbone.name) + "\n" +
                            confusion_table(result.report.summed, kClassNames);
  write_file(rc.out / "report.txt", table);
  out << table;
  for (const auto& f : result.failures) err << "warning: " << f << '\n';
  out << result.completed.size() << "/" << ts.folds << " folds completed in " << std::fixed << std::setprecision(1)
      << seconds << " s" << std::defaultfloat << '\n';
  return kExitOk;
}

struct ExplainOptions {
  std::string checkpoint;
  std::string record;
  std::string method;
  std::string class_name;
  std::string flip_to = "N";
  std::size_t tap = 0;
  std::size_t layer = 0;
  bool reverse = false;
  double rate = 0.0;
  double lambda1 = 0.2, lambda2 = 0.1, beta = 1.0;
  std::size_t mask_epochs = 500;
  double mask_lr = 1e-4;
  std::uint64_t mask_seed = 0;
};

void require(bool ok, const std::string& method, const ModelSpec& spec, const std::string& needs) {
  if (!ok) {
    throw ConfigError("method '" + method + "' needs " + needs + "; this checkpoint uses aggregator '" +
                      std::string(aggregator_name(spec.aggregator)) + "'");
  }
}

int cmd_explain(const Common& common, const ExplainOptions& o, const EnvLookup& env, std::ostream& out) {
  Common c = common;
  if (c.config.empty()) {
    const fs::path beside = fs::path(o.checkpoint).parent_path() / "config.resolved";
    if (!fs::exists(beside)) {
      throw ConfigError("no --config given and no config.resolved next to '" + o.checkpoint + "'");
    }
    c.config = beside.string();
  }
  RunConfig rc = resolved(c, env);
  if (!c.out_opt->count()) rc.out = fs::path(o.checkpoint).parent_path() / "explain";

  Model model(rc.model, 0);
  model.load_state(load_checkpoint(o.checkpoint));
  LoadOptions lo = rc.data.load;
  if (o.rate > 0.0) lo.sample_rate = o.rate;
  const EcgRecord record = load_record(o.record, lo);
  const ModelSpec& spec = rc.model;
  const fs::path base = rc.out / (record.id + "_" + o.method);
  std::optional<std::size_t> cls;
  if (!o.class_name.empty()) cls = static_cast<std::size_t>(parse_rhythm(o.class_name));

  if (o.method == "cam") {
    require(spec.aggregator == Aggregator::pooling, "cam", spec, "a pooling head (class activation maps read its classifier)");
    const ClassActivationMap cam = o.tap ? intermediate_cam(model, record, o.tap, cls) : cam_for_prediction(model, record, cls);
    write_file(base.string() + ".csv", to_text([&](std::ostream& s) { write_cam_csv(s, record, cam); }));
    write_file(base.string() + ".svg", cam_svg(record, cam, record.id + " CAM class " + kClassNames[cam.class_index]));
    out << "cam for class " << kClassNames[cam.class_index] << " from conv" << cam.conv_index << '\n';
  } else if (o.method == "gate") {
    require(spec.aggregator == Aggregator::attention, "gate", spec, "an attention-gated model");
    const GatedAttentionMap map = gated_attention_map(model, record);
    write_file(base.string() + ".csv", to_text([&](std::ostream& s) { write_attention_csv(s, record, map); }));
    write_file(base.string() + ".svg", attention_svg(record, map, record.id + " attention at conv" + std::to_string(map.tap)));
    out << "attention coefficients over " << map.valid_steps << " valid steps\n";
  } else if (o.method == "decision") {
    require(spec.aggregator == Aggregator::recurrent, "decision", spec, "a recurrent aggregator");
    const DecisionTrace trace = decision_over_time(model, record);
    write_file(base.string() + ".csv", to_text([&](std::ostream& s) { write_decision_csv(s, trace, kClassNames); }));
    write_file(base.string() + ".svg", decision_svg(record, trace, kClassNames));
    out << "decision after " << trace.softmax.size() << " steps: " << kClassNames[trace.final_prediction] << '\n';
  } else if (o.method == "gatetrace") {
    require(spec.aggregator == Aggregator::recurrent, "gatetrace", spec, "a recurrent aggregator");
    const GateTrace trace = gate_trace(model, record, o.layer, o.reverse);
    write_file(base.string() + ".csv", to_text([&](std::ostream& s) { write_gate_trace_csv(s, trace); }));
    write_file(base.string() + ".svg", gate_trace_svg(trace));
    out << "gate trace of layer " << o.layer << (o.reverse ? " (backward)" : "") << ": " << trace.entries()
        << " steps x " << trace.units << " units\n";
  } else if (o.method == "perturb") {
    MaskConfig mc;
    mc.weights = {o.lambda1, o.lambda2, o.beta};
    mc.epochs = o.mask_epochs;
    mc.lr = o.mask_lr;
    mc.seed = o.mask_seed;
    mc.flip_to = static_cast<std::size_t>(parse_rhythm(o.flip_to));
    mc = time_matched(mc, record.sample_rate, record.true_length());
    const PerturbationResult r = optimize_mask(record, model, mc);
    write_file(base.string() + "_grid.csv", to_text([&](std::ostream& s) { write_shift_grid_csv(s, r); }));
    write_file(base.string() + "_scores.csv", to_text([&](std::ostream& s) { write_shift_scores_csv(s, r, kClassNames); }));
    write_file(base.string() + ".svg", perturbation_svg(record, r, kClassNames));
    const std::size_t at = r.max_shift_sample();
    out << kClassNames[r.original_class] << " -> " << kClassNames[r.final_class] << (r.flipped ? " (flipped)" : " (not flipped)")
        << "; largest shift at sample " << at << " (" << std::fixed << std::setprecision(2)
        << static_cast<double>(at) / record.sample_rate << " s)" << std::defaultfloat << '\n';
  } else {
    throw ConfigError("unknown explain method '" + o.method + "' (expected cam, gate, decision, perturb or gatetrace)");
  }
  out << "wrote " << base.string() << ".*\n";
  return kExitOk;
}

int cmd_generate(const RunConfig& rc, std::ostream& out) {
  echo_config(rc, out);
  const auto synthetic = generate_synthetic(rc.data.synthetic);
  DatasetManifest manifest;
  std::ostringstream events;
  events << "id,event_samples\n";
  for (const auto& s : synthetic) {
    const fs::path rel = fs::path("records") / (s.record.id + ".ecg");
    fs::create_directories(rc.out / "records");
    save_record(rc.out / rel, s.record);
    manifest.entries.push_back({s.record.id, rel, s.record.label});
    events << s.record.id << ',';
    for (std::size_t i = 0; i < s.record.events.size(); ++i) events << (i ? " " : "") << s.record.events[i];
    events << '\n';
  }
  manifest = stratified_folds(std::move(manifest), rc.train.folds, rc.data.fold_seed);
  write_manifest(rc.out / "manifest.csv", manifest);
  write_file(rc.out / "events.csv", events.str());
  const auto h = manifest.histogram();
  out << "generated " << synthetic.size() << " records (AF " << h[0] << ", N " << h[1] << ", O " << h[2] << ", ~ " << h[3]
      << ") in " << rc.train.folds << " folds under " << rc.out.string() << '\n';
  return kExitOk;
}

int cmd_inspect(const RunConfig& rc, std::ostream& out) {
  const auto& spec = rc.model;
  const auto rows = layer_table(spec.backbone, spec.input_length);
  out << spec.backbone.name << " on " << spec.input_length << " samples\n";
  out << std::left << std::setw(10) << "layer" << std::right << std::setw(10) << "length" << std::setw(10) << "channels"
      << std::setw(12) << "params" << '\n';
  std::size_t total = 0;
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << r.label << std::right << std::setw(10) << r.length << std::setw(10) << r.channels
        << std::setw(12) << r.params << '\n';
    total += r.params;
  }
  const FeatureGeometry g = feature_geometry(spec.backbone, spec.backbone.conv_count());
  out << "backbone parameters " << count_backbone_parameters(spec.backbone) << '\n';
  out << "model parameters (" << aggregator_name(spec.aggregator) << ") " << count_model_parameters(spec) << '\n';
  out << "feature steps " << output_length(spec.backbone, spec.input_length) << ", stride " << g.stride
      << ", receptive field " << g.receptive_field << '\n';
  if (total != count_backbone_parameters(spec.backbone)) throw std::logic_error("layer table and closed-form count disagree");
  return kExitOk;
}

}  // namespace

LoadedData load_data(const RunConfig& rc) {
  LoadedData d;
  std::vector<Rhythm> labels;
  std::vector<std::size_t> manifest_folds;
  if (!rc.data.manifest.empty()) {
    const DatasetManifest m = read_manifest(rc.data.manifest);
    for (const auto& e : m.entries) {
      EcgRecord r = load_record(e.path, rc.data.load);
      r.id = e.id;
      if (e.label) r.label = e.label;
      if (!r.label) throw FormatError("manifest entry '" + e.id + "' has no label");
      labels.push_back(*r.label);
      d.records.push_back(std::move(r));
    }
    if (m.fold_count == rc.train.folds) manifest_folds = m.folds;
  } else {
    for (auto& s : generate_synthetic(rc.data.synthetic)) {
      labels.push_back(*s.record.label);
      d.records.push_back(std::move(s.record));
    }
  }
  if (d.records.empty()) throw ConfigError("data: no records");
  d.folds = manifest_folds.empty() ? stratified_fold_assignment(labels, rc.train.folds, rc.data.fold_seed) : manifest_folds;
  return d;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
  CLI::App app{"ecgx: ECG rhythm classifiers, training and explanations"};
  app.name("ecgx");
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "config file with [model], [train], [data], [output] sections");
  app.add_option("--profile", common.profile, "base layer under the config: paper (default) or quick");
  common.seed_opt = app.add_option("--seed", common.seed, "training and model seed");
  common.workers_opt = app.add_option("--workers", common.workers, "parallel folds for cv (default 1)");
  common.out_opt = app.add_option("--out", common.out, "output directory");
  app.fallthrough();

  auto* train = app.add_subcommand("train", "train one model; writes checkpoint, loss curve and metrics");
  auto* cv = app.add_subcommand("cv", "k-fold cross-validation with per-fold artifacts");
  auto* explain = app.add_subcommand("explain", "explain one record with a trained checkpoint");
  auto* generate = app.add_subcommand("generate", "write a synthetic dataset and its manifest");
  auto* inspect = app.add_subcommand("inspect-arch", "print the layer table with lengths and parameter counts");
  for (auto* sub : {train, cv, explain, generate, inspect}) sub->fallthrough();

  ExplainOptions eo;
  explain->add_option("--checkpoint", eo.checkpoint, "model.ckpt written by train")->required();
  explain->add_option("--record", eo.record, "record file (CSV or binary)")->required();
  explain->add_option("--method", eo.method, "cam | gate | decision | perturb | gatetrace")->required();
  explain->add_option("--class", eo.class_name, "class to explain (default: the prediction)");
  explain->add_option("--tap", eo.tap, "cam: intermediate conv layer instead of the last");
  explain->add_option("--layer", eo.layer, "gatetrace: recurrent layer");
  explain->add_flag("--reverse", eo.reverse, "gatetrace: backward direction");
  explain->add_option("--rate", eo.rate, "sample rate of CSV records");
  explain->add_option("--flip-to", eo.flip_to, "perturb: target class (default N)");
  explain->add_option("--lambda1", eo.lambda1, "perturb: sparsity weight");
  explain->add_option("--lambda2", eo.lambda2, "perturb: smoothness weight");
  explain->add_option("--beta", eo.beta, "perturb: smoothness exponent");
  explain->add_option("--mask-epochs", eo.mask_epochs, "perturb: optimisation steps");
  explain->add_option("--mask-lr", eo.mask_lr, "perturb: step size at the 300 Hz reference");
  explain->add_option("--mask-seed", eo.mask_seed, "perturb: grid initialisation seed");

  std::string backbone_flag, input_flag;
  inspect->add_option("--backbone", backbone_flag, "preset name");
  inspect->add_option("--input-length", input_flag, "input samples");

  const WarningSink sink = [&err](std::string_view m) { err << "warning: " << m << '\n'; };
  set_warning_sink(sink);
  struct Restore {
    ~Restore() { set_warning_sink({}); }
  } restore;

  std::vector<std::string> argv_store{"ecgx"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (!backbone_flag.empty()) common.model_flags.emplace_back("backbone", backbone_flag);
    if (!input_flag.empty()) common.model_flags.emplace_back("input_length", input_flag);
    if (*explain) return cmd_explain(common, eo, env, out);
    const RunConfig rc = resolved(common, env);
    if (*train) return cmd_train(rc, out, err);
    if (*cv) return cmd_cv(rc, out, err);
    if (*generate) return cmd_generate(rc, out);
    if (*inspect) return cmd_inspect(rc, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace ecgx::cli
