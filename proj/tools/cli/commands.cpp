#include "commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pairloc/csv.hpp"
#include "pairloc/dataset.hpp"
#include "pairloc/error.hpp"
#include "pairloc/eval.hpp"
#include "pairloc/locate.hpp"
#include "pairloc/predictions.hpp"
#include "pairloc/prepare.hpp"
#include "pairloc/synth.hpp"
#include "pairloc/sync.hpp"
#include "run_config.hpp"

namespace pairloc::cli {

namespace {

namespace fs = std::filesystem;

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return in;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void close_out(std::ofstream& out, const fs::path& path) {
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

fs::path output_dir(const RunConfig& cfg) {
    fs::path dir(cfg.get("output_dir"));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

ColumnMap column_map(const RunConfig& cfg) {
    if (const auto p = cfg.maybe("column_map")) return ColumnMap::load(*p);
    return {};
}

void write_echo_file(const fs::path& path, const ConfigEcho& echo) {
    auto out = open_out(path);
    for (const auto& [k, v] : echo) out << k << " = " << v << '\n';
    close_out(out, path);
}

std::string grouped(std::size_t n) {
    std::string digits = std::to_string(n);
    for (auto pos = static_cast<std::ptrdiff_t>(digits.size()) - 3; pos > 0; pos -= 3) {
        digits.insert(static_cast<std::size_t>(pos), ",");
    }
    return digits;
}

// Wall-clock time of one pipeline stage, reported on the error stream.
class StageTimer {
public:
    StageTimer(std::ostream& log, std::string stage)
        : log_(log), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start_;
        log_ << "[" << stage_ << "] " << std::fixed << std::setprecision(3) << d.count() << " s\n";
        log_.unsetf(std::ios::floatfield);
    }

private:
    std::ostream& log_;
    std::string stage_;
    std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, const std::string& prefix_flag, std::ostream& out, std::ostream& err) {
    StageTimer timer(err, "synth");
    const std::string name = cfg.get("scenario");
    const Scenario scenario = reference_scenario(name, cfg.scenario_options());
    const SyntheticWorld world = generate(scenario);
    const fs::path dir = output_dir(cfg);
    const std::string prefix = prefix_flag.empty() ? name : prefix_flag;

    const auto write = [&](const std::string& suffix, const auto& body) {
        const fs::path p = dir / (prefix + suffix);
        auto f = open_out(p);
        body(f);
        close_out(f, p);
    };
    write(".csv", [&](std::ostream& f) { write_transmissions(f, world.records); });
    write("_sensors.csv", [&](std::ostream& f) { write_sensors(f, scenario.sensor_infos()); });
    write("_aircraft.csv", [&](std::ostream& f) { write_aircraft(f, scenario.aircraft_infos()); });
    write("_truthlog.csv", [&](std::ostream& f) { write_truth_log(f, world.truth_log); });
    write("_clocklog.csv", [&](std::ostream& f) { write_clock_log(f, world.clock_log); });
    write_echo_file(dir / (prefix + "_run_config.txt"), cfg.echo());

    std::size_t measurements = 0;
    for (const auto& r : world.records) measurements += r.measurements.size();
    out << "scenario      " << name << '\n'
        << "sensors       " << scenario.sensors.size() << '\n'
        << "aircraft      " << scenario.trajectories.size() << '\n'
        << "records       " << world.records.size() << '\n'
        << "measurements  " << measurements << '\n'
        << "written to    " << (dir / prefix).string() << "*\n";
    return kExitOk;
}

int cmd_ingest(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    StageTimer timer(err, "ingest");
    const ColumnMap map = column_map(cfg);
    const auto sensors = load_sensors(cfg.get("sensors"), map);
    std::size_t aircraft_count = 0;
    if (cfg.has("aircraft")) aircraft_count = load_aircraft(cfg.get("aircraft"), map).size();
    std::size_t good = 0;
    for (const auto& s : sensors) good += s.good == Indicator::True ? 1 : 0;

    const auto fraction = cfg.maybe_number("mask.fraction");
    if (fraction && !(*fraction > 0.0 && *fraction < 1.0)) {
        throw ConfigError("mask.fraction must lie strictly between 0 and 1");
    }
    const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));

    std::optional<fs::path> dir;
    std::ofstream train_f, eval_f, key_f;
    std::optional<TransmissionWriter> train_w, eval_w;
    std::size_t n_train = 0, n_eval = 0;
    if (fraction) {
        dir = output_dir(cfg);
        train_f = open_out(*dir / "train.csv");
        eval_f = open_out(*dir / "eval.csv");
        key_f = open_out(*dir / "answer_key.csv");
        train_w.emplace(train_f);
        eval_w.emplace(eval_f);
        key_f << "id,latitude,longitude,geoAltitude\n";
    }

    IngestStats stats;
    TransmissionFile file(cfg.get("transmissions"), map);
    while (auto r = file.next()) {
        stats.add(*r);
        if (!fraction) continue;
        if (r->truth && in_eval_split(r->record_id, *fraction, seed)) {
            const GeoPosition t = *r->truth;
            key_f << r->record_id << ',' << format_double(t.latitude_deg) << ',' << format_double(t.longitude_deg)
                  << ',' << format_double(t.altitude_m) << '\n';
            r->truth.reset();
            eval_w->write(*r);
            ++n_eval;
        } else {
            train_w->write(*r);
            ++n_train;
        }
    }
    if (dir) {
        close_out(train_f, *dir / "train.csv");
        close_out(eval_f, *dir / "eval.csv");
        close_out(key_f, *dir / "answer_key.csv");
        write_echo_file(*dir / "ingest_run_config.txt", cfg.echo());
    }

    out << grouped(stats.records) << " records / " << grouped(stats.measurements) << " measurements / "
        << grouped(sensors.size()) << " sensors\n"
        << "gps-good sensors       " << good << '\n';
    if (cfg.has("aircraft")) out << "aircraft               " << aircraft_count << '\n';
    out << "records with position  " << stats.with_truth << '\n'
        << "flagged records        " << stats.flagged << '\n'
        << "max redundancy         " << stats.max_redundancy() << '\n'
        << "geometric p (fit)      " << format_double(stats.geometric_success_probability()) << '\n'
        << "redundancy histogram (receivers: records)\n";
    for (const auto& [k, n] : stats.redundancy) out << "  " << std::setw(3) << k << ": " << n << '\n';
    if (fraction) {
        out << "train records          " << n_train << '\n' << "eval records           " << n_eval << '\n';
    }
    return kExitOk;
}

int cmd_sync(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    StageTimer timer(err, "sync");
    const ColumnMap map = column_map(cfg);
    const SensorTable sensors(load_sensors(cfg.get("sensors"), map));
    const AircraftMap aircraft = index_aircraft(load_aircraft(cfg.get("aircraft"), map));
    const SyncConfig sync = cfg.sync_config();

    PairGraphBuilder builder(sensors, aircraft, sync);
    TransmissionFile file(cfg.get("transmissions"), map);
    while (auto r = file.next()) builder.add(*r);
    const PairGraph graph = builder.finish();
    const SyncStats& st = builder.stats();

    const fs::path dir = output_dir(cfg);
    const fs::path path = dir / "snapshot.csv";
    auto f = open_out(path);
    write_snapshot(f, graph, cfg.echo());
    close_out(f, path);

    out << "records seen           " << st.records_seen << '\n'
        << "records used           " << st.records_used << '\n'
        << "  without position     " << st.records_without_truth << '\n'
        << "  unverified aircraft  " << st.records_bad_quality << '\n'
        << "offset samples         " << st.samples << '\n'
        << "tracked pairs          " << graph.edge_count() << '\n'
        << "rejection rate         " << format_double(st.rejection_rate()) << '\n'
        << "re-initializations     " << st.reinits << '\n'
        << "out-of-order samples   " << st.out_of_order << '\n'
        << "snapshot               " << path.string() << '\n';
    return kExitOk;
}

int cmd_locate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    StageTimer timer(err, "locate");
    const ColumnMap map = column_map(cfg);
    const SensorTable sensors(load_sensors(cfg.get("sensors"), map));
    const SyncConfig sync = cfg.sync_config();
    const LocateConfig locate = cfg.locate_config();
    const std::string snapshot_path = cfg.get("snapshot");
    auto snap = open_in(snapshot_path);
    const PairGraph graph =
        read_snapshot(snap, snapshot_path, sync.tracker.drift_noise, sync.tracker.meas_var_floor_ns2 / 2.0);

    const auto workers = cfg.integer("workers");
    if (workers < 1) throw ConfigError("workers must be positive");

    const fs::path dir = output_dir(cfg);
    const fs::path path = dir / "predictions.csv";
    auto f = open_out(path);
    PredictionWriter writer(f, cfg.echo());

    TransmissionFile file(cfg.get("transmissions"), map);
    std::map<std::string, std::size_t> outcomes;
    std::size_t predicted = 0;
    const std::size_t total = localize_stream(
        [&] { return file.next(); },
        [&](const LocateOutcome& o) {
            writer.write(to_prediction_row(o));
            ++outcomes[to_string(o.outcome)];
            predicted += o.predicted() ? 1 : 0;
        },
        graph, sensors, locate, static_cast<std::size_t>(workers));
    close_out(f, path);

    out << "records                " << total << '\n'
        << "predicted              " << predicted << '\n'
        << "coverage               " << format_double(total ? static_cast<double>(predicted) / total : 0.0) << '\n'
        << "outcomes\n";
    for (const auto& [k, n] : outcomes) out << "  " << std::left << std::setw(20) << k << n << '\n';
    out << std::right << "predictions            " << path.string() << '\n';
    return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    StageTimer timer(err, "evaluate");
    const EvalConfig ecfg = cfg.eval_config();
    auto pf = open_in(cfg.get("predictions"));
    const auto predictions = parse_predictions(pf, cfg.get("predictions"));
    auto kf = open_in(cfg.get("answer_key"));
    const auto key = parse_answer_key(kf, cfg.get("answer_key"));
    const EvalReport report = score(predictions, key, ecfg, cfg.echo());

    const fs::path dir = output_dir(cfg);
    {
        const fs::path p = dir / "report.txt";
        auto f = open_out(p);
        write_text_report(f, report);
        close_out(f, p);
    }
    {
        const fs::path p = dir / "report.json";
        auto f = open_out(p);
        write_json_report(f, report);
        close_out(f, p);
    }
    write_text_report(out, report);
    return report.pass_coverage_floor ? kExitOk : kExitCoverage;
}

// ---------------------------------------------------------------------------

struct CommonFlags {
    std::optional<std::string> config;
    std::vector<std::string> overrides;  // key=value
    std::map<std::string, std::optional<std::string>> values;  // config key -> flag value
    std::map<std::string, bool> switches;                       // config key -> set
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config, "key = value configuration file");
    sub->add_option("-D,--set", f.overrides, "override one configuration key (key=value)");
    sub->add_option("--seed", f.values["seed"], "random seed");
    sub->add_option("--workers", f.values["workers"], "worker threads");
    sub->add_option("--output-dir", f.values["output_dir"], "directory for written artifacts");
}

void add_value(CLI::App* sub, CommonFlags& f, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option(flag, f.values[key], help);
}

void add_switch(CLI::App* sub, CommonFlags& f, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_flag(flag, f.switches[key], help);
}

RunConfig resolve(const CommonFlags& f) {
    RunConfig cfg;
    if (f.config) cfg.load_file(*f.config);
    for (const auto& kv : f.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
        cfg.set(std::string(trim(std::string_view(kv).substr(0, eq))),
                std::string(trim(std::string_view(kv).substr(eq + 1))));
    }
    for (const auto& [key, v] : f.values) {
        if (v) cfg.set(key, *v);
    }
    for (const auto& [key, on] : f.switches) {
        if (on) cfg.set(key, "true");
    }
    return cfg;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Aircraft localization from crowdsourced TDoA measurements", "pairloc"};
    app.require_subcommand(1);

    CommonFlags synth_f, ingest_f, sync_f, locate_f, eval_f;
    std::string prefix;

    auto* synth = app.add_subcommand("synth", "generate a reference scenario as dataset files");
    add_common(synth, synth_f);
    add_value(synth, synth_f, "--scenario", "scenario", "exact-tetra, noisy-grid, outlier-storm, collinear or fig5");
    add_value(synth, synth_f, "--jitter-ns", "synth.jitter_ns", "ToA jitter of every sensor");
    add_switch(synth, synth_f, "--zero-noise", "synth.zero_noise", "noise-free measurements");
    add_value(synth, synth_f, "--outlier-rate", "synth.outlier_rate", "outlier rate of outlier-prone sensors");
    add_value(synth, synth_f, "--duration-s", "synth.duration_s", "flight duration");
    synth->add_option("--prefix", prefix, "file name prefix (default: scenario name)");

    auto* ingest = app.add_subcommand("ingest", "validate a subset and report its statistics");
    add_common(ingest, ingest_f);
    add_value(ingest, ingest_f, "--sensors", "sensors", "sensors CSV");
    add_value(ingest, ingest_f, "--aircraft", "aircraft", "aircraft CSV");
    add_value(ingest, ingest_f, "--transmissions", "transmissions", "transmissions CSV");
    add_value(ingest, ingest_f, "--column-map", "column_map", "column mapping file");
    add_value(ingest, ingest_f, "--mask-fraction", "mask.fraction", "split off an evaluation set with hidden positions");

    auto* sync = app.add_subcommand("sync", "track sensor pair clock offsets");
    add_common(sync, sync_f);
    add_value(sync, sync_f, "--sensors", "sensors", "sensors CSV");
    add_value(sync, sync_f, "--aircraft", "aircraft", "aircraft CSV");
    add_value(sync, sync_f, "--transmissions", "transmissions", "transmissions CSV");
    add_value(sync, sync_f, "--column-map", "column_map", "column mapping file");

    auto* locate = app.add_subcommand("locate", "localize transmissions");
    add_common(locate, locate_f);
    add_value(locate, locate_f, "--sensors", "sensors", "sensors CSV");
    add_value(locate, locate_f, "--transmissions", "transmissions", "transmissions CSV");
    add_value(locate, locate_f, "--snapshot", "snapshot", "tracker snapshot from sync");
    add_value(locate, locate_f, "--column-map", "column_map", "column mapping file");

    auto* evaluate = app.add_subcommand("evaluate", "score predictions against an answer key");
    add_common(evaluate, eval_f);
    add_value(evaluate, eval_f, "--predictions", "predictions", "prediction CSV");
    add_value(evaluate, eval_f, "--answer-key", "answer_key", "answer key CSV");
    add_value(evaluate, eval_f, "--penalty-m", "eval.penalty_m", "error charged per missing prediction");
    add_value(evaluate, eval_f, "--min-coverage", "eval.min_coverage", "coverage floor");
    add_value(evaluate, eval_f, "--metric", "eval.metric", "3d or 2d");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(resolve(synth_f), prefix, out, err);
        if (ingest->parsed()) return cmd_ingest(resolve(ingest_f), out, err);
        if (sync->parsed()) return cmd_sync(resolve(sync_f), out, err);
        if (locate->parsed()) return cmd_locate(resolve(locate_f), out, err);
        if (evaluate->parsed()) return cmd_evaluate(resolve(eval_f), out, err);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const LookupError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace pairloc::cli
