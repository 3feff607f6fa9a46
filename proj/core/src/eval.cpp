#include "pairloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "pairloc/csv.hpp"
#include "pairloc/error.hpp"

namespace pairloc {

std::string to_string(ErrorMetric m) { return m == ErrorMetric::ThreeD ? "3d" : "2d"; }

ErrorMetric parse_metric(std::string_view s) {
    if (s == "3d" || s == "3D") return ErrorMetric::ThreeD;
    if (s == "2d" || s == "2D") return ErrorMetric::TwoD;
    throw ConfigError("unknown error metric '" + std::string(s) + "' (expected 3d or 2d)");
}

void EvalConfig::validate() const {
    if (!(min_coverage > 0.0 && min_coverage <= 1.0)) throw ConfigError("min_coverage must lie in (0, 1]");
    if (!penalty_m) throw ConfigError("penalty_m must be set explicitly for scoring");
    if (!(*penalty_m > 0.0) || !std::isfinite(*penalty_m)) throw ConfigError("penalty_m must be positive");
}

double position_error(const GeoPosition& pred, const GeoPosition& truth, ErrorMetric metric) {
    const Eigen::Vector3d d = geodetic_to_ecef(pred).vec() - geodetic_to_ecef(truth).vec();
    if (metric == ErrorMetric::ThreeD) return d.norm();
    const Eigen::Vector3d up = local_frame(truth).up;
    return (d - up * up.dot(d)).norm();
}

namespace {

// Linear interpolation between order statistics.
double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// errors are in record_id order, which fixes the summation order.
MetricScores summarize(const std::vector<double>& errors, std::size_t n_eligible, double penalty) {
    MetricScores s;
    double sum_sq = 0.0;
    for (double e : errors) sum_sq += e * e;
    const auto n = static_cast<double>(n_eligible);
    const auto missing = static_cast<double>(n_eligible - errors.size());
    s.truncated_rmse_m = std::sqrt(sum_sq / n + penalty * penalty * (missing / n));
    if (!errors.empty()) {
        s.rmse_predicted_m = std::sqrt(sum_sq / static_cast<double>(errors.size()));
        std::vector<double> sorted = errors;
        std::sort(sorted.begin(), sorted.end());
        s.p50_m = quantile(sorted, 0.50);
        s.p90_m = quantile(sorted, 0.90);
        s.p99_m = quantile(sorted, 0.99);
    }
    return s;
}

}  // namespace

EvalReport score(const std::vector<PredictionRow>& predictions, const std::vector<AnswerKeyEntry>& answer_key,
                 const EvalConfig& cfg, const ConfigEcho& echo) {
    cfg.validate();
    if (answer_key.empty()) throw ScoringError("answer key holds no eligible records");

    std::unordered_map<RecordId, const AnswerKeyEntry*> key;
    key.reserve(answer_key.size());
    for (const auto& e : answer_key) {
        if (!key.emplace(e.record_id, &e).second) {
            throw ScoringError("answer key repeats record " + std::to_string(e.record_id));
        }
    }

    std::vector<const PredictionRow*> rows;
    rows.reserve(predictions.size());
    {
        std::unordered_map<RecordId, bool> seen;
        seen.reserve(predictions.size());
        for (const auto& p : predictions) {
            if (!key.count(p.record_id)) {
                throw ScoringError("prediction for record " + std::to_string(p.record_id) + " not in the answer key");
            }
            if (!seen.emplace(p.record_id, true).second) {
                throw ScoringError("duplicate prediction for record " + std::to_string(p.record_id));
            }
            rows.push_back(&p);
        }
    }
    std::sort(rows.begin(), rows.end(),
              [](const PredictionRow* a, const PredictionRow* b) { return a->record_id < b->record_id; });

    EvalReport r;
    r.n_eligible = answer_key.size();
    r.min_coverage = cfg.min_coverage;
    r.penalty_m = *cfg.penalty_m;
    r.metric = cfg.metric;
    r.echo = echo;

    const ErrorMetric other = cfg.metric == ErrorMetric::ThreeD ? ErrorMetric::TwoD : ErrorMetric::ThreeD;
    std::vector<double> errors, other_errors;
    for (const PredictionRow* p : rows) {
        if (!p->position) {
            ++r.reasons[p->status.empty() ? "unspecified" : p->status];
            continue;
        }
        const GeoPosition& truth = key.at(p->record_id)->position;
        errors.push_back(position_error(*p->position, truth, cfg.metric));
        other_errors.push_back(position_error(*p->position, truth, other));
    }
    r.n_predicted = errors.size();
    const std::size_t absent = r.n_eligible - rows.size();
    if (absent > 0) r.reasons["missing"] = absent;
    r.coverage = static_cast<double>(r.n_predicted) / static_cast<double>(r.n_eligible);
    r.pass_coverage_floor = r.coverage >= cfg.min_coverage;
    r.scores = summarize(errors, r.n_eligible, r.penalty_m);
    r.other_scores = summarize(other_errors, r.n_eligible, r.penalty_m);
    return r;
}

namespace {

// Human-readable report only; the JSON report keeps full precision.
std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string opt(const std::optional<double>& v) { return v ? fixed(*v, 3) : "n/a"; }

nlohmann::json scores_json(const MetricScores& s) {
    const auto j = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"rmse_predicted_m", j(s.rmse_predicted_m)},
            {"truncated_rmse_m", s.truncated_rmse_m},
            {"p50_m", j(s.p50_m)},
            {"p90_m", j(s.p90_m)},
            {"p99_m", j(s.p99_m)}};
}

MetricScores scores_from_json(const nlohmann::json& j) {
    const auto o = [&](const char* k) -> std::optional<double> {
        if (j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<double>();
    };
    MetricScores s;
    s.rmse_predicted_m = o("rmse_predicted_m");
    s.truncated_rmse_m = j.at("truncated_rmse_m").get<double>();
    s.p50_m = o("p50_m");
    s.p90_m = o("p90_m");
    s.p99_m = o("p99_m");
    return s;
}

}  // namespace

void write_text_report(std::ostream& out, const EvalReport& r) {
    for (const auto& [k, v] : r.echo) out << "# " << k << " = " << v << '\n';
    const std::string other = to_string(r.metric == ErrorMetric::ThreeD ? ErrorMetric::TwoD : ErrorMetric::ThreeD);
    out << "eligible records      " << r.n_eligible << '\n'
        << "predicted records     " << r.n_predicted << '\n'
        << "coverage              " << fixed(r.coverage, 4) << '\n'
        << "coverage floor        " << format_double(r.min_coverage) << (r.pass_coverage_floor ? " (pass)" : " (FAIL)")
        << '\n'
        << "penalty               " << format_double(r.penalty_m) << " m\n"
        << '\n'
        << "metric                " << std::left << std::setw(15) << to_string(r.metric) << other << '\n';
    const auto row = [&](const char* name, const std::optional<double>& a, const std::optional<double>& b) {
        out << std::left << std::setw(22) << name << std::setw(14) << opt(a) << ' ' << opt(b) << '\n';
    };
    row("rmse (predicted) m", r.scores.rmse_predicted_m, r.other_scores.rmse_predicted_m);
    row("truncated rmse m", r.scores.truncated_rmse_m, r.other_scores.truncated_rmse_m);
    row("error p50 m", r.scores.p50_m, r.other_scores.p50_m);
    row("error p90 m", r.scores.p90_m, r.other_scores.p90_m);
    row("error p99 m", r.scores.p99_m, r.other_scores.p99_m);
    if (!r.reasons.empty()) {
        out << "\nno prediction\n";
        for (const auto& [reason, n] : r.reasons) out << "  " << std::left << std::setw(20) << reason << n << '\n';
    }
    out << std::right;
}

void write_json_report(std::ostream& out, const EvalReport& r) {
    nlohmann::json echo = nlohmann::json::array();
    for (const auto& [k, v] : r.echo) echo.push_back({k, v});
    const nlohmann::json j = {
        {"n_eligible", r.n_eligible},
        {"n_predicted", r.n_predicted},
        {"coverage", r.coverage},
        {"min_coverage", r.min_coverage},
        {"penalty_m", r.penalty_m},
        {"pass_coverage_floor", r.pass_coverage_floor},
        {"metric", to_string(r.metric)},
        {"scores", scores_json(r.scores)},
        {"other_scores", scores_json(r.other_scores)},
        {"reasons", r.reasons},
        {"config", echo},
    };
    out << j.dump(2) << '\n';
}

EvalReport read_json_report(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
        EvalReport r;
        r.n_eligible = j.at("n_eligible").get<std::size_t>();
        r.n_predicted = j.at("n_predicted").get<std::size_t>();
        r.coverage = j.at("coverage").get<double>();
        r.min_coverage = j.at("min_coverage").get<double>();
        r.penalty_m = j.at("penalty_m").get<double>();
        r.pass_coverage_floor = j.at("pass_coverage_floor").get<bool>();
        r.metric = parse_metric(j.at("metric").get<std::string>());
        r.scores = scores_from_json(j.at("scores"));
        r.other_scores = scores_from_json(j.at("other_scores"));
        r.reasons = j.at("reasons").get<std::map<std::string, std::size_t>>();
        for (const auto& kv : j.at("config")) r.echo.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("<report>", 0, e.what());
    }
}

}  // namespace pairloc
