#include "run_config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>

#include "pairloc/csv.hpp"
#include "pairloc/error.hpp"

namespace pairloc::cli {

const std::vector<KeySpec>& RunConfig::keys() {
    static const std::vector<KeySpec> specs = {
        {"sensors", "", "sensors CSV"},
        {"aircraft", "", "aircraft CSV"},
        {"transmissions", "", "transmissions CSV"},
        {"column_map", "", "column mapping file for renamed columns"},
        {"snapshot", "", "tracker snapshot CSV"},
        {"predictions", "", "prediction CSV"},
        {"answer_key", "", "answer key CSV"},
        {"output_dir", ".", "directory for written artifacts", false},
        {"workers", "1", "worker threads", false},
        {"seed", "1", "seed for scenario generation and masking"},
        {"scenario", "", "reference scenario name"},
        {"synth.jitter_ns", "", "override ToA jitter of every sensor"},
        {"synth.zero_noise", "false", "remove jitter, outliers and quantization"},
        {"synth.outlier_rate", "", "override the outlier rate of outlier-prone sensors"},
        {"synth.duration_s", "", "override flight duration"},
        {"mask.fraction", "", "fraction of records with a position moved to the evaluation split"},
        {"dedup.window_ns", "2000000", "grouping window for receptions of one transmission"},
        {"sync.gate_sigma", "5", "innovation gate, standard deviations"},
        {"sync.reject_limit", "5", "consecutive rejections tolerated before re-initialization"},
        {"sync.drift_noise", "1", "drift random walk, ns/s per sqrt(s)"},
        {"sync.sigma_good_ns", "50", "initial ToA noise of GPS-synchronized sensors"},
        {"sync.sigma_other_ns", "500", "initial ToA noise of other sensors"},
        {"sync.meas_var_floor_ns2", "0.01", "lower bound of adapted pair noise"},
        {"sync.adapt_rate", "0.05", "noise adaptation weight"},
        {"sync.seed_span_s", "0.5", "minimum spread of the two seeding points"},
        {"sync.reorder_horizon_s", "2", "reorder buffer depth in server time"},
        {"sync.checkpoint_interval_s", "10", "tracker history spacing"},
        {"sync.verified_only", "false", "feed only aircraft with verified positions"},
        {"locate.max_age_s", "300", "furthest extrapolation of a pair offset"},
        {"locate.slack_s", "5e-6", "hyperbola feasibility slack"},
        {"locate.max_iter", "50", "solver iteration cap"},
        {"locate.step_tolerance_m", "0.1", "convergence step size"},
        {"locate.residual_ceiling_s", "5e-6", "largest accepted residual RMS"},
        {"locate.baro_constraint", "false", "pin altitude to barometric altitude when poorly observed"},
        {"locate.vdop_threshold", "50", "vertical dilution that triggers the altitude pin"},
        {"locate.baro_sigma_m", "50", "altitude pin standard deviation"},
        {"locate.baro_offset_m", "0", "geometric minus barometric altitude"},
        {"locate.min_receivers", "2", "records with fewer receivers are not attempted"},
        {"locate.guess_max_age_s", "10", "freshness of the previous estimate used as a guess"},
        {"eval.penalty_m", "", "error assigned to each missing prediction (required)"},
        {"eval.min_coverage", "0.5", "coverage floor"},
        {"eval.metric", "3d", "3d or 2d"},
    };
    return specs;
}

RunConfig::RunConfig() {
    for (const auto& k : keys()) {
        if (!k.default_value.empty()) values_[k.name] = k.default_value;
    }
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    parse(in, path);
}

void RunConfig::parse(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        const std::string_view body = trim(std::string_view(line).substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) throw ParseError(source, n, "expected key = value");
        const std::string key(trim(body.substr(0, eq)));
        try {
            set(key, std::string(trim(body.substr(eq + 1))));
        } catch (const ConfigError& e) {
            throw ParseError(source, n, e.what());
        }
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto& ks = keys();
    if (std::none_of(ks.begin(), ks.end(), [&](const KeySpec& k) { return k.name == key; })) {
        throw ConfigError("unknown configuration key '" + key + "'");
    }
    if (value.empty()) {
        values_.erase(key);
    } else {
        values_[key] = value;
    }
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("configuration key '" + key + "' is required");
    return it->second;
}

std::optional<std::string> RunConfig::maybe(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

double RunConfig::number(const std::string& key) const {
    const auto v = parse_double(get(key));
    if (!v || !std::isfinite(*v)) throw ConfigError("configuration key '" + key + "' is not a number");
    return *v;
}

std::optional<double> RunConfig::maybe_number(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return number(key);
}

std::int64_t RunConfig::integer(const std::string& key) const {
    const auto v = parse_int(get(key));
    if (!v) throw ConfigError("configuration key '" + key + "' is not an integer");
    return *v;
}

bool RunConfig::flag(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("configuration key '" + key + "' is not a boolean");
}

ConfigEcho RunConfig::echo() const {
    ConfigEcho out;
    for (const auto& k : keys()) {
        if (!k.echoed) continue;
        if (const auto v = maybe(k.name)) out.emplace_back(k.name, *v);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

double positive(const RunConfig& c, const std::string& key) {
    const double v = c.number(key);
    if (!(v > 0.0)) throw ConfigError("configuration key '" + key + "' must be positive");
    return v;
}

}  // namespace

SyncConfig RunConfig::sync_config() const {
    SyncConfig s;
    s.tracker.gate_sigma = positive(*this, "sync.gate_sigma");
    s.tracker.reject_limit = static_cast<int>(integer("sync.reject_limit"));
    if (s.tracker.reject_limit < 0) throw ConfigError("sync.reject_limit must not be negative");
    s.tracker.drift_noise = positive(*this, "sync.drift_noise");
    s.tracker.meas_var_floor_ns2 = positive(*this, "sync.meas_var_floor_ns2");
    s.tracker.adapt_rate = positive(*this, "sync.adapt_rate");
    if (s.tracker.adapt_rate > 1.0) throw ConfigError("sync.adapt_rate must not exceed 1");
    s.tracker.seed_span_s = positive(*this, "sync.seed_span_s");
    s.sigma_good_ns = positive(*this, "sync.sigma_good_ns");
    s.sigma_other_ns = positive(*this, "sync.sigma_other_ns");
    s.reorder_horizon_s = number("sync.reorder_horizon_s");
    if (s.reorder_horizon_s < 0.0) throw ConfigError("sync.reorder_horizon_s must not be negative");
    s.checkpoint_interval_s = positive(*this, "sync.checkpoint_interval_s");
    s.verified_only = flag("sync.verified_only");
    return s;
}

LocateConfig RunConfig::locate_config() const {
    LocateConfig l;
    l.assemble.max_age_s = positive(*this, "locate.max_age_s");
    l.assemble.slack_s = positive(*this, "locate.slack_s");
    l.assemble.sigma_good_ns = positive(*this, "sync.sigma_good_ns");
    l.assemble.sigma_other_ns = positive(*this, "sync.sigma_other_ns");
    l.guess.max_age_s = positive(*this, "locate.guess_max_age_s");
    l.solver.max_iter = static_cast<int>(integer("locate.max_iter"));
    if (l.solver.max_iter < 1) throw ConfigError("locate.max_iter must be positive");
    l.solver.step_tolerance_m = positive(*this, "locate.step_tolerance_m");
    l.solver.residual_ceiling_s = positive(*this, "locate.residual_ceiling_s");
    l.solver.baro_constraint = flag("locate.baro_constraint");
    l.solver.vdop_threshold = positive(*this, "locate.vdop_threshold");
    l.solver.baro_sigma_m = positive(*this, "locate.baro_sigma_m");
    l.solver.baro_offset_m = number("locate.baro_offset_m");
    const auto minr = integer("locate.min_receivers");
    if (minr < 2) throw ConfigError("locate.min_receivers must be at least 2");
    l.min_receivers = static_cast<std::size_t>(minr);
    return l;
}

EvalConfig RunConfig::eval_config() const {
    EvalConfig e;
    e.min_coverage = number("eval.min_coverage");
    e.penalty_m = maybe_number("eval.penalty_m");
    e.metric = parse_metric(get("eval.metric"));
    e.validate();
    return e;
}

ScenarioOptions RunConfig::scenario_options() const {
    ScenarioOptions o;
    o.seed = static_cast<std::uint64_t>(integer("seed"));
    o.jitter_sigma_ns = maybe_number("synth.jitter_ns");
    if (o.jitter_sigma_ns && *o.jitter_sigma_ns < 0.0) throw ConfigError("synth.jitter_ns must not be negative");
    o.zero_noise = flag("synth.zero_noise");
    o.outlier_rate = maybe_number("synth.outlier_rate");
    if (o.outlier_rate && !(*o.outlier_rate >= 0.0 && *o.outlier_rate < 1.0)) {
        throw ConfigError("synth.outlier_rate must lie in [0, 1)");
    }
    o.duration_s = maybe_number("synth.duration_s");
    if (o.duration_s && !(*o.duration_s > 0.0)) throw ConfigError("synth.duration_s must be positive");
    return o;
}

}  // namespace pairloc::cli
