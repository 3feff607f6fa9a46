#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "pairloc/dataset.hpp"
#include "pairloc/geo.hpp"
#include "pairloc/sync.hpp"

namespace pairloc {

// One TDoA constraint between two sensors, in the form
//   (|s_i - p| - |s_j - p|) / c = tdoa + offset
struct PairEquation {
    SensorPair pair;
    double tdoa_measured_s = 0.0;  // t_i - t_j
    double offset_s = 0.0;         // predicted pair offset
    double offset_variance_s2 = 0.0;
    double toa_variance_i_s2 = 0.0;
    double toa_variance_j_s2 = 0.0;
    EcefPosition s_i;
    EcefPosition s_j;
};

/// (|s_i - p| - |s_j - p|) / c - offset - tdoa, in seconds.
double residual(const PairEquation& eq, const EcefPosition& p);

/// Gradient of residual() with respect to p, in s/m: (u_i - u_j) / c with u_k
/// the unit vector from s_k toward p. Throws SingularityError when p
/// coincides with either sensor.
Eigen::Vector3d jacobian_row(const PairEquation& eq, const EcefPosition& p);

// The measured difference fits on a hyperboloid of the pair: it cannot exceed
// the baseline travel time by more than slack_s.
bool is_feasible(const PairEquation& eq, double slack_s);

struct AssembleConfig {
    double max_age_s = 300.0;  // furthest extrapolation of a pair offset
    double slack_s = 5e-6;
    double sigma_good_ns = 50.0;    // ToA noise for sensors the graph has no estimate for
    double sigma_other_ns = 500.0;
};

struct AssembledEquations {
    std::vector<PairEquation> equations;
    std::size_t untracked = 0;       // pair has no usable offset
    std::size_t infeasible = 0;      // dropped by the feasibility check
    std::size_t unknown_sensor = 0;  // sensor missing from the sensor table
};

/// One equation per measurement pair with a synchronized offset. Offsets are
/// predicted at the emission instant on the lower-id sensor's clock, taken as
/// its timestamp minus the propagation time from `emitter` (the timestamp
/// itself when no emitter estimate is given). Infeasible equations are dropped.
AssembledEquations assemble_equations(const TransmissionRecord& record, const PairGraph& graph,
                                      const SensorTable& sensors, const AssembleConfig& cfg = {},
                                      const std::optional<EcefPosition>& emitter = std::nullopt);

// Last converged estimate of an aircraft.
struct PreviousEstimate {
    EcefPosition position;
    double server_time_us = 0.0;
};

struct GuessConfig {
    double max_age_s = 10.0;
    double altitude_floor_m = 0.0;
};

/// The previous estimate when it is at most max_age_s old, otherwise the
/// centroid of the receiving sensors weighted by 10^(rssi/20), lifted to the
/// altitude floor. Throws NoGuessError when no receiver position is known.
EcefPosition initial_guess(const TransmissionRecord& record, const SensorTable& sensors,
                           const std::optional<PreviousEstimate>& previous, const GuessConfig& cfg = {});

struct SolverConfig {
    int max_iter = 50;
    double step_tolerance_m = 0.1;
    double residual_ceiling_s = 5e-6;
    double rank_tolerance = 1e-10;  // relative to the largest singular value
    bool baro_constraint = false;
    double vdop_threshold = 50.0;
    double baro_sigma_m = 50.0;
    double baro_offset_m = 0.0;  // geometric minus barometric altitude
};

enum class SolveStatus { Converged, Diverged, Underdetermined, Infeasible };

std::string to_string(SolveStatus s);

struct LocalizationResult {
    EcefPosition position;
    GeoPosition geo;
    int iterations = 0;
    double residual_rms_s = 0.0;
    std::size_t n_equations = 0;
    int rank = 0;
    Eigen::Matrix3d covariance_m2 = Eigen::Matrix3d::Zero();
    double vdop = 0.0;  // vertical std over the mean equation std, both in meters
    bool baro_used = false;
    SolveStatus status = SolveStatus::Diverged;
    std::vector<double> cost_history;  // weighted cost after each accepted step, [0] at the guess
};

/// Weighted Gauss-Newton on the stacked residuals, with Levenberg damping
/// engaged only while steps fail to reduce the cost. The weight matrix is the
/// inverse of the equation covariance: offset variances on the diagonal plus
/// the ToA variances of shared sensors, so redundant pairs are not counted
/// twice. Never throws on numerical trouble; it reports Diverged instead.
LocalizationResult solve_position(const std::vector<PairEquation>& eqs, const EcefPosition& guess,
                                  const SolverConfig& cfg = {},
                                  std::optional<double> baro_altitude_m = std::nullopt);

// Predicted 3D standard error, sqrt(trace(covariance)), in meters.
double predicted_error_m(const LocalizationResult& r);

enum class Outcome { Converged, Underdetermined, Infeasible, Diverged, NoGuess };

std::string to_string(Outcome o);
std::optional<Outcome> parse_outcome(std::string_view s);

struct LocateConfig {
    AssembleConfig assemble;
    GuessConfig guess;
    SolverConfig solver;
    std::size_t min_receivers = 2;  // records heard by fewer sensors are not attempted
};

struct LocateOutcome {
    RecordId record_id = 0;
    AircraftId aircraft_id = 0;
    Outcome outcome = Outcome::Underdetermined;
    std::size_t n_equations = 0;
    int rank = 0;
    double residual_rms_s = 0.0;  // NaN when no solve ran
    std::optional<LocalizationResult> result;

    // A position is emitted only for converged solves.
    bool predicted() const { return outcome == Outcome::Converged; }
};

/// Per-record assemble, guess and solve, with a last-estimate cache per
/// aircraft. Records of one aircraft must arrive in time order.
class Localizer {
public:
    Localizer(const PairGraph& graph, const SensorTable& sensors, LocateConfig cfg = {});

    LocateOutcome locate(const TransmissionRecord& record);

    std::size_t cached_aircraft() const { return cache_.size(); }

private:
    const PairGraph& graph_;
    const SensorTable& sensors_;
    LocateConfig cfg_;
    std::unordered_map<AircraftId, PreviousEstimate> cache_;
};

/// Localizes a record stream with `workers` threads. Records are partitioned
/// by aircraft so each aircraft's cache is touched by one worker in stream
/// order; results are identical for every worker count. Each batch of
/// batch_size records is emitted sorted by record_id.
class ParallelLocalizer {
public:
    ParallelLocalizer(const PairGraph& graph, const SensorTable& sensors, LocateConfig cfg, std::size_t workers,
                      std::size_t batch_size = 1 << 15);

    std::vector<LocateOutcome> process(const std::vector<TransmissionRecord>& batch);

    std::size_t batch_size() const { return batch_size_; }

private:
    std::vector<Localizer> workers_;
    std::size_t batch_size_;
};

using RecordSource = std::function<std::optional<TransmissionRecord>()>;
using OutcomeSink = std::function<void(const LocateOutcome&)>;

// Pulls records from `source` in bounded batches and pushes outcomes to
// `sink`. Returns the number of records processed.
std::size_t localize_stream(const RecordSource& source, const OutcomeSink& sink, const PairGraph& graph,
                            const SensorTable& sensors, const LocateConfig& cfg, std::size_t workers = 1);

}  // namespace pairloc
