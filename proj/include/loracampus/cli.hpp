#pragma once

// Batch front end: one subcommand per stage, each writing its outputs plus a
// run.json manifest into --out.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "loracampus/cli_config.hpp"
#include "loracampus/core_model.hpp"
#include "loracampus/error.hpp"
#include "loracampus/gaps.hpp"
#include "loracampus/impute.hpp"
#include "loracampus/ingest.hpp"
#include "loracampus/io.hpp"
#include "loracampus/metrics.hpp"
#include "loracampus/pipeline.hpp"
#include "loracampus/rng.hpp"
#include "loracampus/simnet.hpp"
#include "loracampus/text.hpp"

namespace loracampus::cli {

enum ExitCode : int { kOk = 0, kInvalid = 1, kFailed = 2 };

inline bool is_validation_error(Errc code) {
  return code == Errc::ConfigInvalid || code == Errc::UnknownSubcommand || code == Errc::InvalidConfig ||
         code == Errc::RatioInvalid;
}

struct Context {
  Settings& cfg;
  std::ostream& out;
  std::ostream& err;
  std::filesystem::path out_dir;
  std::string where;  // current stage, prefixed to errors
  nlohmann::json inputs = nlohmann::json::array();
  nlohmann::json outputs = nlohmann::json::array();
  nlohmann::json seeds = nlohmann::json::object();
  nlohmann::json warnings = nlohmann::json::array();
  nlohmann::json summary = nlohmann::json::object();  // choices made during the run

  std::string read_input(const std::string& path) {
    where = "reading " + path;
    auto content = io::read_file(path);
    inputs.push_back({{"path", path}, {"fnv1a", text::hex64(text::fnv1a(content))}});
    return content;
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = out_dir / name;
    where = "writing " + path.string();
    io::write_file_atomic(path, content);
    outputs.push_back(path.string());
    out << "wrote " << path.string() << '\n';
  }

  void warn(const std::vector<Warning>& list) {
    for (const auto& w : list) warnings.push_back({{"kind", w.kind}, {"message", w.message}});
  }
};

struct Command {
  std::string name;
  std::string summary;
  std::vector<KeySpec> keys;
  std::function<void(Context&)> body;
};

namespace keys {

inline KeySpec seed() { return {"seed", "42", "global random seed", ""}; }
inline KeySpec out() { return {"out", "out", "output directory", ""}; }
inline KeySpec in(std::string help) { return {"in", "", std::move(help), ""}; }
inline KeySpec cadence() { return {"gaps.cadence_minutes", "15", "reporting cadence of the slot grid", ""}; }

inline std::vector<KeySpec> knn() {
  return {{"knn.features", "", "companion measurements used as KNN features; empty uses every one the device reports", ""},
          {"knn.time_features", "true", "add sin/cos of time of day to the KNN features", ""},
          {"knn.standardize", "true", "z-score KNN features before measuring distance", ""},
          {"ksel.candidates", "1,3,5,9,13,21", "k values tried by knn:auto", ""},
          {"ksel.mask_fraction", "0.2", "share of present cells hidden while choosing k", ""}};
}

inline std::vector<KeySpec> concat(std::vector<std::vector<KeySpec>> parts) {
  std::vector<KeySpec> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace keys

namespace detail {

inline Millis cadence_of(Settings& s) { return Millis{s.integer("gaps.cadence_minutes", 1) * 60'000}; }

template <typename Record>
void check_header(const Parsed<Record>& parsed, const std::string& path) {
  if (parsed.report.missing_header) {
    throw Error(Errc::MissingHeader, path + ":1: header row missing or not the expected columns");
  }
}

inline std::vector<SensorReading> load_sensors(Context& ctx, const std::string& path) {
  std::istringstream in(ctx.read_input(path));
  auto parsed = parse_sensor_csv(in);
  check_header(parsed, path);
  for (const auto& r : parsed.report.rejections) {
    ctx.warnings.push_back({{"kind", "RejectedRow"}, {"message", path + ":" + std::to_string(r.line) + ": " + r.reason}});
  }
  return std::move(parsed.records);
}

inline std::vector<LoraPacketMeta> load_lora(Context& ctx, const std::string& path) {
  std::istringstream in(ctx.read_input(path));
  auto parsed = parse_lora_csv(in);
  check_header(parsed, path);
  for (const auto& r : parsed.report.rejections) {
    ctx.warnings.push_back({{"kind", "RejectedRow"}, {"message", path + ":" + std::to_string(r.line) + ": " + r.reason}});
  }
  return std::move(parsed.records);
}

struct KnnSettings {
  std::vector<Field> features;
  KnnConfig base;
  KSelectConfig ksel;
};

inline KnnSettings knn_settings(Settings& s) {
  KnnSettings k;
  k.features = s.fields("knn.features");
  k.base.time_features = s.flag("knn.time_features");
  k.base.standardize = s.flag("knn.standardize");
  k.ksel.candidates = s.counts("ksel.candidates");
  if (k.ksel.candidates.empty()) s.invalid("ksel.candidates", "needs at least one k");
  k.ksel.mask_fraction = s.real("ksel.mask_fraction");
  if (!(k.ksel.mask_fraction > 0.0 && k.ksel.mask_fraction < 1.0)) s.invalid("ksel.mask_fraction", "must lie in (0,1)");
  return k;
}

// One device's target series plus the companion measurements it reports, all
// on the same grid.
struct DeviceGrid {
  GriddedSeries target;
  std::vector<GriddedSeries> companions;
};

inline std::optional<DeviceGrid> device_grid(const std::vector<SensorReading>& readings, Field target,
                                             const std::vector<Field>& wanted, Millis cadence,
                                             std::vector<Warning>* warnings) {
  DeviceGrid g;
  g.target = align_to_grid(readings, target, cadence, warnings);
  if (g.target.missing() == g.target.size()) return std::nullopt;
  for (auto f : kAllFields) {
    if (f == target || f == Field::Battery) continue;
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), f) == wanted.end()) continue;
    auto c = align_to_grid(readings, f, cadence);
    if (c.missing() < c.size()) g.companions.push_back(std::move(c));
  }
  return g;
}

// Longest run of slots where the target and every companion are present.
inline std::pair<std::size_t, std::size_t> longest_complete_run(const DeviceGrid& g) {
  std::size_t best_begin = 0, best_len = 0, begin = 0;
  for (std::size_t i = 0; i <= g.target.size(); ++i) {
    bool ok = i < g.target.size() && g.target.values[i].has_value();
    for (const auto& c : g.companions) ok = ok && c.values[i].has_value();
    if (ok) continue;
    if (i - begin > best_len) {
      best_begin = begin;
      best_len = i - begin;
    }
    begin = i + 1;
  }
  return {best_begin, best_begin + best_len};
}

inline std::string csv_number(double v) { return text::format_double(v); }

// ---------------------------------------------------------------- synth

inline SimConfig sim_config(Settings& s) {
  SimConfig c;
  c.n_devices = s.count("sim.devices", 1);
  const auto mix = s.reals("sim.kind_mix");
  if (mix.size() != 3) s.invalid("sim.kind_mix", "expected three weights (co2,sound,moisture)");
  std::copy(mix.begin(), mix.end(), c.kind_mix.begin());
  c.start = s.timestamp("sim.start");
  c.end = s.timestamp("sim.end");
  c.cadence_minutes = s.integer("sim.cadence_minutes", 1);
  c.drop_prob = s.real("sim.drop_prob");
  c.occupancy_rooms = s.count("sim.occupancy_rooms");
  c.max_occupancy = static_cast<int>(s.integer("sim.max_occupancy", 1));
  c.co2_noise_sigma = s.real("sim.co2_noise_sigma");
  c.seed = s.seed();
  c.validate();
  return c;
}

inline void run_synth(Context& ctx) {
  const auto cfg = sim_config(ctx.cfg);
  ctx.seeds["seed"] = cfg.seed;
  ctx.where = "generating";
  const auto ds = generate(cfg);
  std::ostringstream lora, sensors;
  write_lora_csv(lora, ds.packets);
  write_sensor_csv(sensors, ds.readings);
  ctx.write("lora.csv", lora.str());
  ctx.write("sensors.csv", sensors.str());
  ctx.write("truth.json", truth_to_json(ds).dump(1) + "\n");
}

// ---------------------------------------------------------------- ingest

inline void run_ingest(Context& ctx) {
  auto& s = ctx.cfg;
  const auto path = s.required("in");
  enum class Kind { Auto, Lora, Sensors };
  auto kind = s.choice<Kind>("ingest.kind", {{"auto", Kind::Auto}, {"lora", Kind::Lora}, {"sensors", Kind::Sensors}});
  const bool outliers = s.flag("ingest.outliers");
  const double factor = s.real("ingest.iqr_factor");
  if (!(factor > 0.0)) s.invalid("ingest.iqr_factor", "must be positive");

  const auto content = ctx.read_input(path);
  if (kind == Kind::Auto) {
    const auto first = text::trim(std::string_view(content).substr(0, content.find('\n')));
    if (first == kLoraHeader) {
      kind = Kind::Lora;
    } else if (first == kSensorHeader) {
      kind = Kind::Sensors;
    } else {
      throw Error(Errc::MissingHeader, path + ":1: header matches neither the LoRa nor the sensor layout");
    }
  }
  ctx.where = "parsing " + path;
  std::istringstream in(content);
  nlohmann::json rep;
  auto report_json = [&](const ParseReport& r) {
    rep["rows_ok"] = r.rows_ok;
    rep["rows_rejected"] = r.rows_rejected;
    rep["missing_header"] = r.missing_header;
    auto rej = nlohmann::json::array();
    for (const auto& x : r.rejections) rej.push_back({{"line", x.line}, {"reason", x.reason}});
    rep["rejections"] = rej;
  };
  std::ostringstream cleaned;
  if (kind == Kind::Lora) {
    const auto parsed = parse_lora_csv(in);
    rep["kind"] = "lora";
    report_json(parsed.report);
    write_lora_csv(cleaned, parsed.records);
    ctx.write("ingest_report.json", rep.dump(1) + "\n");
    ctx.write("lora.csv", cleaned.str());
    return;
  }
  auto parsed = parse_sensor_csv(in);
  rep["kind"] = "sensors";
  report_json(parsed.report);
  auto& readings = parsed.records;
  nlohmann::json removed = nlohmann::json::object();
  if (outliers) {
    ctx.where = "removing outliers";
    std::map<DeviceId, std::vector<std::size_t>> by_device;
    for (std::size_t i = 0; i < readings.size(); ++i) by_device[readings[i].device].push_back(i);
    for (const auto& [dev, rows] : by_device) {
      for (auto f : kAllFields) {
        std::vector<std::size_t> at;
        std::vector<double> values;
        for (auto i : rows) {
          if (const auto v = readings[i].get(f)) {
            at.push_back(i);
            values.push_back(*v);
          }
        }
        if (values.size() < 4) continue;
        const auto res = remove_outliers(values, factor);
        if (res.report.removed_indices.empty()) continue;
        for (auto j : res.report.removed_indices) readings[at[j]].set(f, std::nullopt);
        removed[dev.str()][std::string(to_string(f))] = {{"removed", res.report.removed_indices.size()},
                                                         {"lower_fence", res.report.lower_fence},
                                                         {"upper_fence", res.report.upper_fence}};
      }
    }
    // A reading stripped of every value no longer says anything.
    const auto before = readings.size();
    std::erase_if(readings, [](const SensorReading& r) { return !r.has_any(); });
    rep["emptied_rows"] = before - readings.size();
  }
  rep["outliers"] = removed;
  write_sensor_csv(cleaned, readings);
  ctx.write("ingest_report.json", rep.dump(1) + "\n");
  ctx.write("sensors.csv", cleaned.str());
}

// ---------------------------------------------------------------- gaps

inline void run_gaps(Context& ctx) {
  auto& s = ctx.cfg;
  const auto path = s.required("in");
  const bool fcnt = s.choice<bool>("gaps.source", {{"fcnt", true}, {"cadence", false}});
  const auto cadence = cadence_of(s);
  const auto cap = s.integer("gaps.plausibility_cap", 1);

  std::vector<Gap> gaps;
  std::vector<Warning> warnings;
  if (fcnt) {
    const auto packets = load_lora(ctx, path);
    ctx.where = "detecting counter gaps in " + path;
    for (const auto& [dev, list] : group_packets(packets)) {
      auto g = detect_gaps_fcnt(list, cadence, &warnings, cap);
      gaps.insert(gaps.end(), g.begin(), g.end());
    }
  } else {
    const auto readings = load_sensors(ctx, path);
    ctx.where = "detecting cadence gaps in " + path;
    for (const auto& [dev, list] : group_readings(readings)) {
      // Presence-only copies: a slot counts as received if any value arrived.
      std::vector<SensorReading> marks;
      for (const auto& r : list) {
        SensorReading m{r.ts, r.device, {}};
        if (r.has_any()) m.set(Field::Co2, 1.0);
        marks.push_back(m);
      }
      auto g = detect_gaps_cadence(align_to_grid(marks, Field::Co2, cadence, &warnings));
      gaps.insert(gaps.end(), g.begin(), g.end());
    }
  }
  ctx.warn(warnings);
  std::ostringstream csv;
  write_gaps_csv(csv, gaps);
  ctx.write("gaps.csv", csv.str());
}

// ---------------------------------------------------------------- impute

inline void run_impute(Context& ctx) {
  auto& s = ctx.cfg;
  const auto path = s.required("in");
  const auto spec = [&] {
    try {
      return parse_strategy(s.required("impute.strategy"));
    } catch (const Error& e) {
      s.invalid("impute.strategy", e.what());
    }
  }();
  const auto field = s.field("impute.field");
  const auto device = s.text("impute.device");
  const auto cadence = cadence_of(s);
  const auto knn = knn_settings(s);
  const auto seed = s.seed();
  ctx.seeds["seed"] = seed;
  ctx.seeds["k_selection"] = derive_seed(seed, 3);

  const auto readings = load_sensors(ctx, path);
  std::ostringstream csv;
  csv << "deveui,slot,time,value,imputed\n";
  std::vector<Warning> warnings;
  nlohmann::json used = nlohmann::json::object();
  for (const auto& [dev, list] : group_readings(readings)) {
    if (!device.empty() && dev.str() != device) continue;
    ctx.where = "imputing " + dev.str() + " " + std::string(to_string(field));
    const auto grid = device_grid(list, field, knn.features, cadence, &warnings);
    if (!grid) continue;
    const auto [done, k] = impute_with(grid->target, spec, &grid->companions, knn.base, knn.ksel, derive_seed(seed, 3));
    if (k > 0) used[dev.str()] = k;
    // Map the (possibly excised) result back onto the original slots.
    for (std::size_t i = 0; i < done.size(); ++i) {
      const auto slot = done.slot_of(i);
      csv << dev.str() << ',' << slot << ',' << format_iso8601(done.slot_time(i)) << ',' << csv_number(*done.values[i])
          << ',' << (grid->target.values[slot] ? 0 : 1) << '\n';
    }
  }
  ctx.warn(warnings);
  if (!used.empty()) ctx.summary["k_used"] = used;
  ctx.write("imputed.csv", csv.str());
}

// ---------------------------------------------------------------- forecast-eval

inline ForecastConfig forecast_config(Settings& s) {
  ForecastConfig fc;
  fc.window = s.count("forecast.window", 1);
  fc.horizon = s.count("forecast.horizon", 1);
  fc.dims = s.counts("forecast.dims");
  fc.epochs = s.count("forecast.epochs", 1);
  fc.batch = s.count("forecast.batch", 1);
  fc.optimizer = s.choice<nn::OptKind>("forecast.optimizer", {{"rmsprop", nn::OptKind::RmsProp}, {"adam", nn::OptKind::Adam}});
  fc.opt.lr = s.real("forecast.lr");
  fc.normalization =
      s.choice<Normalization>("forecast.normalization", {{"zscore", Normalization::ZScore}, {"minmax", Normalization::MinMax}});
  fc.patience = s.count("forecast.patience");
  fc.val_fraction = s.real("forecast.val_fraction");
  fc.seed = s.seed();
  fc.validate();
  return fc;
}

inline void run_forecast_eval(Context& ctx) {
  auto& s = ctx.cfg;
  const auto path = s.required("in");
  const auto field = s.field("forecast.field");
  const auto device = s.text("forecast.device");
  std::vector<StrategySpec> strategies;
  for (const auto& name : s.list("forecast.strategies")) {
    try {
      strategies.push_back(parse_strategy(name));
    } catch (const Error& e) {
      s.invalid("forecast.strategies", e.what());
    }
  }
  if (strategies.empty()) s.invalid("forecast.strategies", "needs at least one strategy");
  const double mask_fraction = s.real("forecast.mask_fraction");
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) s.invalid("forecast.mask_fraction", "must lie in [0,1)");
  const auto fc = forecast_config(s);
  const auto knn = knn_settings(s);
  const auto cadence = cadence_of(s);
  const auto seed = fc.seed;
  ctx.seeds["seed"] = seed;
  ctx.seeds["mask"] = derive_seed(seed, 1);
  ctx.seeds["init"] = derive_seed(fc.seed, 2);
  ctx.seeds["k_selection"] = derive_seed(seed, 3);

  const auto readings = load_sensors(ctx, path);
  ctx.where = "choosing a series";
  std::optional<DeviceGrid> best;
  std::pair<std::size_t, std::size_t> run{0, 0};
  DeviceId chosen;
  for (const auto& [dev, list] : group_readings(readings)) {
    if (!device.empty() && dev.str() != device) continue;
    auto grid = device_grid(list, field, knn.features, cadence, nullptr);
    if (!grid) continue;
    const auto r = longest_complete_run(*grid);
    if (!best || r.second - r.first > run.second - run.first) {
      best = std::move(grid);
      run = r;
      chosen = dev;
    }
  }
  if (!best) throw Error(Errc::EmptyInput, path + ": no device reports " + std::string(to_string(field)));
  const auto clean = slice(best->target, run.first, run.second);
  std::vector<GriddedSeries> companions;
  for (const auto& c : best->companions) companions.push_back(slice(c, run.first, run.second));
  ctx.summary["series_slots"] = clean.size();
  ctx.out << "series " << chosen.str() << ' ' << to_string(field) << ": " << clean.size() << " slots from "
          << format_iso8601(clean.t0) << '\n';

  ctx.where = "evaluating " + chosen.str();
  const auto ev = evaluate_imputation(clean, strategies, mask_fraction, fc, seed, &companions, knn.base, knn.ksel);

  std::ostringstream rmse_csv, loss_csv, overlay_csv;
  rmse_csv << "strategy,rmse,k\n";
  loss_csv << "strategy,epoch,train_loss,val_loss\n";
  overlay_csv << "strategy,slot,time,truth,predicted\n";
  for (const auto& o : ev.outcomes) {
    rmse_csv << o.name << ',' << csv_number(o.rmse) << ',' << o.k_used << '\n';
    for (const auto& h : o.history) {
      loss_csv << o.name << ',' << h.epoch << ',' << csv_number(h.train_loss) << ',' << csv_number(h.val_loss) << '\n';
    }
    for (const auto& p : o.overlay) {
      overlay_csv << o.name << ',' << p.slot << ',' << format_iso8601(clean.slot_time(p.slot)) << ','
                  << csv_number(p.truth) << ',' << csv_number(p.predicted) << '\n';
    }
    ctx.out << o.name << " rmse " << csv_number(o.rmse) << '\n';
  }
  ctx.summary["device"] = chosen.str();
  ctx.write("rmse_by_strategy.csv", rmse_csv.str());
  ctx.write("loss_curves.csv", loss_csv.str());
  ctx.write("forecast_overlay.csv", overlay_csv.str());
}

// ---------------------------------------------------------------- count

inline CounterConfig counter_config(Settings& s) {
  CounterConfig c;
  c.hidden = s.counts("counter.hidden");
  c.classes = s.count("counter.classes", 2);
  c.epochs = s.count("counter.epochs", 1);
  c.batch = s.count("counter.batch", 1);
  c.optimizer = s.choice<nn::OptKind>("counter.optimizer", {{"rmsprop", nn::OptKind::RmsProp}, {"adam", nn::OptKind::Adam}});
  c.opt.lr = s.real("counter.lr");
  c.oversample = s.flag("counter.oversample");
  c.patience = s.count("counter.patience");
  c.ratios = {s.real("counter.train"), s.real("counter.val"), s.real("counter.test")};
  c.seed = s.seed();
  c.validate();
  return c;
}

inline void run_count(Context& ctx) {
  auto& s = ctx.cfg;
  const auto path = s.required("in");
  auto labels = s.text("count.labels");
  if (labels.empty()) labels = (std::filesystem::path(path).parent_path() / "truth.json").string();
  const auto cfg = counter_config(s);
  ctx.seeds["seed"] = cfg.seed;
  ctx.seeds["oversample"] = derive_seed(cfg.seed, 1);
  ctx.seeds["split"] = derive_seed(cfg.seed, 2);

  const auto readings = load_sensors(ctx, path);
  const auto truth_text = ctx.read_input(labels);
  ctx.where = "reading labels from " + labels;
  const auto truth = parse_truth(truth_text);
  ctx.where = "building the labelled set";
  const auto ds = occupancy_dataset(readings, truth.occupancy);
  ctx.summary["labelled_rows"] = ds.size();
  ctx.out << ds.size() << " labelled rows, " << ds.classes.size() << " classes\n";
  ctx.where = "training the counter";
  const auto res = train_counter(ds, cfg);

  auto rep = report_to_json(res.report);
  rep["rows"] = {{"labelled", ds.size()},
                 {"train", res.train_rows},
                 {"val", res.val_rows},
                 {"test", res.test_rows},
                 {"quarantined", res.quarantined}};
  rep["epochs_run"] = res.history.size();
  std::ostringstream confusion_csv, history_csv;
  write_confusion_csv(confusion_csv, res.confusion);
  history_csv << "epoch,train_loss,val_loss,train_acc,val_acc\n";
  for (const auto& h : res.history) {
    history_csv << h.epoch << ',' << csv_number(h.train_loss) << ',' << csv_number(h.val_loss) << ','
                << csv_number(h.train_acc) << ',' << csv_number(h.val_acc) << '\n';
  }
  const auto table = render_table(res.report);
  ctx.write("report.json", rep.dump(1) + "\n");
  ctx.write("confusion.csv", confusion_csv.str());
  ctx.write("history.csv", history_csv.str());
  ctx.write("table.txt", table);
  ctx.out << table;
}

// ---------------------------------------------------------------- report

inline ClassificationReport report_from_json(const std::string& content, const std::string& path) {
  ClassificationReport r;
  try {
    const auto j = nlohmann::json::parse(content);
    for (const auto& c : j.at("classes")) {
      r.classes.push_back({c.at("class").get<int>(), c.at("precision").get<double>(), c.at("recall").get<double>(),
                           c.at("f1").get<double>(), c.at("support").get<std::int64_t>(),
                           c.value("degenerate", false)});
    }
    r.accuracy = j.at("accuracy").get<double>();
    r.total = j.at("total").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, path + ": " + e.what());
  }
  return r;
}

inline void run_report(Context& ctx) {
  const auto path = ctx.cfg.required("in");
  const auto content = ctx.read_input(path);
  ctx.where = "rendering " + path;
  const auto table = render_table(report_from_json(content, path));
  ctx.write("table.txt", table);
  ctx.out << table;
}

}  // namespace detail

inline const std::vector<Command>& commands() {
  using keys::concat;
  static const std::vector<Command> all = {
      {"synth",
       "Generate a synthetic campus deployment: lora.csv, sensors.csv and truth.json",
       {keys::seed(),
        keys::out(),
        {"sim.devices", "10", "number of devices", "devices"},
        {"sim.kind_mix", "326,119,17", "relative share of co2,sound,moisture devices", ""},
        {"sim.start", "2020-02-01T00:00:00.000Z", "first slot (ISO-8601)", ""},
        {"sim.end", "2020-02-08T00:00:00.000Z", "end of the trace, exclusive (ISO-8601)", ""},
        {"sim.cadence_minutes", "15", "minutes between transmissions", ""},
        {"sim.drop_prob", "0", "probability that a transmission is lost", ""},
        {"sim.occupancy_rooms", "0", "co2 devices placed in rooms with planted head counts", "rooms"},
        {"sim.max_occupancy", "12", "head counts range over 0..max_occupancy-1", ""},
        {"sim.co2_noise_sigma", "10", "co2 noise in occupied rooms (ppm)", ""}},
       detail::run_synth},
      {"ingest",
       "Parse and validate a LoRa or sensor CSV; optionally remove outliers",
       {keys::in("input CSV"),
        keys::out(),
        {"ingest.kind", "auto", "auto|lora|sensors; auto reads the header", ""},
        {"ingest.outliers", "false", "blank sensor values outside the box-plot fences", "outliers"},
        {"ingest.iqr_factor", "1.5", "fence distance in interquartile ranges", ""}},
       detail::run_ingest},
      {"gaps",
       "Detect transmission gaps and write gaps.csv",
       {keys::in("lora.csv for fcnt, sensors.csv for cadence"),
        keys::out(),
        {"gaps.source", "fcnt", "fcnt (frame counters) or cadence (empty slots)", "source"},
        keys::cadence(),
        {"gaps.plausibility_cap", "4096", "larger counter jumps are treated as resets", ""}},
       detail::run_gaps},
      {"impute",
       "Fill missing grid cells of one measurement and write imputed.csv",
       concat({{keys::in("sensors.csv"),
                keys::out(),
                keys::seed(),
                {"impute.strategy", "linear", "drop|zero|linear|poly:2|poly:3|knn:K|knn:auto", "strategy"},
                {"impute.field", "co2", "measurement to impute", "field"},
                {"impute.device", "", "only this DevEUI; empty imputes every device", "device"},
                keys::cadence()},
               keys::knn()}),
       detail::run_impute},
      {"forecast-eval",
       "Score imputation strategies by LSTM forecast RMSE on a masked series",
       concat({{keys::in("sensors.csv"),
                keys::out(),
                keys::seed(),
                {"forecast.field", "co2", "measurement to forecast", "field"},
                {"forecast.device", "", "DevEUI to use; empty picks the longest complete stretch", "device"},
                {"forecast.strategies", "knn:auto,linear,zero", "comma-separated strategies to compare", "strategies"},
                {"forecast.mask_fraction", "0.2", "share of training slots hidden before imputation", ""},
                {"forecast.window", "96", "input window in slots", "window"},
                {"forecast.horizon", "1", "slots predicted per window", ""},
                {"forecast.dims", "128,64,64,32", "hidden sizes of the stacked LSTM", ""},
                {"forecast.epochs", "100", "maximum training epochs", "epochs"},
                {"forecast.batch", "32", "mini-batch size", ""},
                {"forecast.optimizer", "rmsprop", "rmsprop|adam", ""},
                {"forecast.lr", "0.001", "learning rate", ""},
                {"forecast.normalization", "zscore", "zscore|minmax", ""},
                {"forecast.patience", "20", "epochs without validation gain before stopping; 0 disables", ""},
                {"forecast.val_fraction", "0.1", "trailing share of training windows held out", ""},
                keys::cadence()},
               keys::knn()}),
       detail::run_forecast_eval},
      {"count",
       "Train the occupancy counter and report on its test split",
       {keys::in("sensors.csv"),
        keys::out(),
        keys::seed(),
        {"count.labels", "", "truth.json with head counts; empty uses truth.json next to --in", "labels"},
        {"counter.hidden", "512,256,128,64", "hidden layer sizes", ""},
        {"counter.classes", "12", "output classes (head counts 0..classes-1)", ""},
        {"counter.epochs", "200", "maximum training epochs", "epochs"},
        {"counter.batch", "32", "mini-batch size", ""},
        {"counter.optimizer", "adam", "rmsprop|adam", ""},
        {"counter.lr", "0.001", "learning rate", ""},
        {"counter.oversample", "true", "duplicate minority classes in the training data", ""},
        {"counter.patience", "20", "epochs without validation gain before stopping; 0 disables", ""},
        {"counter.train", "0.7", "train share", ""},
        {"counter.val", "0.15", "validation share", ""},
        {"counter.test", "0.15", "test share", ""}},
       detail::run_count},
      {"report",
       "Render a count report.json as a classification table",
       {keys::in("report.json written by count"), keys::out()},
       detail::run_report},
  };
  return all;
}

inline const Command* find_command(std::string_view name) {
  for (const auto& c : commands()) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

inline std::string usage() {
  std::string s = "Usage: loracampus <subcommand> [--config FILE] [--key value ...]\n\nSubcommands:\n";
  for (const auto& c : commands()) s += "  " + c.name + std::string(16 - c.name.size(), ' ') + c.summary + "\n";
  s += "\nRun 'loracampus <subcommand> --help' for its keys.\n";
  return s;
}

// Every key any subcommand understands; a config file may carry keys meant
// for other subcommands, but nothing outside this set.
inline bool known_anywhere(const std::string& key) {
  for (const auto& c : commands()) {
    for (const auto& k : c.keys) {
      if (k.name == key) return true;
    }
  }
  return false;
}

inline std::string help_text(const Command& cmd) {
  CLI::App app{cmd.summary, "loracampus " + cmd.name};
  std::string sink;
  app.add_option("--config", sink, "config file of key = value lines; [section] headers prefix keys");
  for (const auto& k : cmd.keys) {
    auto names = "--" + k.name + (k.alias.empty() ? "" : ",--" + k.alias);
    app.add_option(names, sink, k.help + " [" + (k.fallback.empty() ? "unset" : k.fallback) + "]");
  }
  app.footer("Config file keys are the option names without dashes. Precedence: defaults < file < flags.");
  return app.help();
}

/// Runs one subcommand; `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << usage();
    return kInvalid;
  }
  if (args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
    out << usage();
    return kOk;
  }
  const auto* cmd = find_command(args[0]);
  if (!cmd) {
    err << "loracampus: " << Error(Errc::UnknownSubcommand, "'" + args[0] + "'").what() << "\n" << usage();
    return kInvalid;
  }
  const std::string prefix = "loracampus " + cmd->name + ": ";

  Settings settings(cmd->keys);
  std::string config_path;
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> options;
  CLI::App app{cmd->summary, "loracampus " + cmd->name};
  app.add_option("--config", config_path);
  for (const auto& k : cmd->keys) {
    auto names = "--" + k.name + (k.alias.empty() ? "" : ",--" + k.alias);
    options[k.name] = app.add_option(names, flag_values[k.name]);
  }
  try {
    std::vector<std::string> rest(args.rbegin(), args.rend() - 1);  // CLI11 consumes from the back
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << help_text(*cmd);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << prefix << "ConfigInvalid: " << e.what() << "\n";
    return kInvalid;
  }

  Context ctx{settings, out, err, {}, "loading configuration"};
  try {
    if (!config_path.empty()) {
      const auto content = ctx.read_input(config_path);
      for (const auto& e : parse_config(content, config_path)) {
        const auto origin = config_path + ":" + std::to_string(e.line);
        if (!known_anywhere(e.key)) throw Error(Errc::ConfigInvalid, origin + ": unknown key '" + e.key + "'");
        if (settings.knows(e.key)) settings.set(e.key, e.value, origin);
      }
    }
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) settings.set(key, flag_values[key], "flag --" + key);
    }
    ctx.out_dir = settings.required("out");
    ctx.where = "starting";
    cmd->body(ctx);

    const auto effective = settings.effective();
    nlohmann::json manifest = {{"subcommand", cmd->name},
                               {"config", effective},
                               {"config_hash", text::hex64(text::fnv1a(effective.dump()))},
                               {"seeds", ctx.seeds},
                               {"inputs", ctx.inputs},
                               {"outputs", ctx.outputs},
                               {"summary", ctx.summary},
                               {"warnings", ctx.warnings}};
    io::write_file_atomic(ctx.out_dir / "run.json", manifest.dump(1) + "\n");
    if (!ctx.warnings.empty()) err << prefix << ctx.warnings.size() << " warning(s), see run.json\n";
  } catch (const Error& e) {
    const bool invalid = is_validation_error(e.code());
    err << prefix << (invalid ? "" : ctx.where + ": ") << e.what() << "\n";
    return invalid ? kInvalid : kFailed;
  } catch (const std::exception& e) {
    err << prefix << ctx.where << ": " << e.what() << "\n";
    return kFailed;
  }
  return kOk;
}

}  // namespace loracampus::cli
