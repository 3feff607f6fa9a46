#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pairloc/dataset.hpp"
#include "pairloc/predictions.hpp"

namespace pairloc {

enum class ErrorMetric { ThreeD, TwoD };

std::string to_string(ErrorMetric m);
ErrorMetric parse_metric(std::string_view s);  // "3d" or "2d"; ConfigError otherwise

struct EvalConfig {
    double min_coverage = 0.5;
    std::optional<double> penalty_m;  // required; scoring refuses to guess one
    ErrorMetric metric = ErrorMetric::ThreeD;

    // Throws ConfigError unless min_coverage in (0, 1] and penalty_m > 0.
    void validate() const;
};

/// 3D: straight-line ECEF distance. 2D: the same difference with its
/// component along the local vertical at `truth` removed.
double position_error(const GeoPosition& pred, const GeoPosition& truth, ErrorMetric metric);

struct MetricScores {
    std::optional<double> rmse_predicted_m;  // nullopt when nothing was predicted
    double truncated_rmse_m = 0.0;
    std::optional<double> p50_m;
    std::optional<double> p90_m;
    std::optional<double> p99_m;

    bool operator==(const MetricScores&) const = default;
};

struct EvalReport {
    std::size_t n_eligible = 0;
    std::size_t n_predicted = 0;
    double coverage = 0.0;
    double min_coverage = 0.5;
    double penalty_m = 0.0;
    bool pass_coverage_floor = false;
    ErrorMetric metric = ErrorMetric::ThreeD;
    MetricScores scores;        // under `metric`
    MetricScores other_scores;  // under the other metric
    std::map<std::string, std::size_t> reasons;  // no-prediction status -> count, includes "missing"
    ConfigEcho echo;

    bool operator==(const EvalReport&) const = default;
};

/// Scores predictions against the answer key. Every key entry is eligible;
/// rows without a position and ids absent from the predictions count as
/// missing and receive penalty_m. Throws ScoringError for an id not in the key
/// or a repeated id, ConfigError for an invalid config.
EvalReport score(const std::vector<PredictionRow>& predictions, const std::vector<AnswerKeyEntry>& answer_key,
                 const EvalConfig& cfg, const ConfigEcho& echo = {});

void write_text_report(std::ostream& out, const EvalReport& r);
void write_json_report(std::ostream& out, const EvalReport& r);
EvalReport read_json_report(std::istream& in);

}  // namespace pairloc
