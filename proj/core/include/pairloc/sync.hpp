#pragma once

#include <compare>
#include <functional>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pairloc/dataset.hpp"

namespace pairloc {

// Unordered sensor pair stored with i < j. The (j, i) direction is served by
// negating the (i, j) offset.
struct SensorPair {
    SensorId i = 0;
    SensorId j = 0;

    static SensorPair ordered(SensorId a, SensorId b) { return a < b ? SensorPair{a, b} : SensorPair{b, a}; }

    auto operator<=>(const SensorPair&) const = default;
};

std::string to_string(const SensorPair& p);

// One observation of the relative clock offset of a pair:
//   delta = (|s_i - p| - |s_j - p|) / c - (t_i - t_j)
struct OffsetSample {
    SensorPair pair;
    double t_event_ns = 0.0;  // emission instant on sensor i's clock (arrival minus propagation)
    double delta_ns = 0.0;
    RecordId source_record_id = 0;
};

/// Relative clock offset of sensors i and j from one reception of a
/// transmission at known position p, in ns. Antisymmetric in (i, j).
double pair_offset_ns(const EcefPosition& s_i, const EcefPosition& s_j, const EcefPosition& p,
                      double t_i_ns, double t_j_ns);

struct OffsetSampling {
    std::vector<OffsetSample> samples;
    std::size_t skipped_pairs = 0;  // a sensor position was unknown
};

/// One sample per unordered sensor pair of a record with a known position.
/// Returns no samples when the record carries no position.
OffsetSampling offset_samples(const TransmissionRecord& record, const SensorTable& sensors);

// ---------------------------------------------------------------------------

struct TrackerConfig {
    double gate_sigma = 5.0;
    int reject_limit = 5;
    double drift_noise = 1.0;          // drift random walk, ns/s per sqrt(s)
    double meas_var_floor_ns2 = 0.01;  // lower bound of the adapted noise
    double adapt_rate = 0.05;          // EWMA weight for noise adaptation
    double seed_span_s = 0.5;          // minimum spread of the two seeding points
};

enum class TrackerStatus { Uninitialized, Tracking, Reinitializing };

std::string to_string(TrackerStatus s);

struct TrackerState {
    double offset_ns = 0.0;
    double drift_ns_per_s = 0.0;
    Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();  // (offset, drift)
    double last_update_ns = 0.0;
    double meas_var_ns2 = 0.0;
};

struct OffsetPrediction {
    double offset_ns = 0.0;
    double variance_ns2 = 0.0;
};

enum class UpdateOutcome { Seeding, Accepted, Rejected };

/// Two-state (offset, drift) predictor-corrector for one sensor pair.
///
/// A fresh tracker seeds itself from two points at least seed_span_s apart
/// (samples closer to the first point are averaged into it). Afterwards
/// each sample is gated on its innovation: if it lies beyond gate_sigma
/// standard deviations it is not used and the state is extrapolated.
/// More than reject_limit consecutive rejections switch the tracker to
/// Reinitializing, and the following samples seed a fresh state.
class PairOffsetTracker {
public:
    PairOffsetTracker(SensorPair pair, double initial_meas_var_ns2, TrackerConfig cfg = {});

    /// Throws OrderingError when the sample is older than the previous one.
    UpdateOutcome update(const OffsetSample& sample);

    /// Offset extrapolated to t_ns with a variance that grows with |t - last|.
    /// Throws NoEstimateError unless the tracker is Tracking.
    OffsetPrediction predict(double t_ns) const;

    SensorPair pair() const { return pair_; }
    TrackerStatus status() const { return status_; }
    const TrackerState& state() const { return state_; }
    int consecutive_rejects() const { return consecutive_rejects_; }
    std::size_t accepted() const { return accepted_; }
    std::size_t rejected() const { return rejected_; }
    std::size_t reinits() const { return reinits_; }
    double last_sample_ns() const { return last_sample_ns_; }

private:
    void propagate(double dt_s, Eigen::Vector2d& x, Eigen::Matrix2d& p) const;
    UpdateOutcome seed(const OffsetSample& sample);

    SensorPair pair_;
    TrackerConfig cfg_;
    TrackerStatus status_ = TrackerStatus::Uninitialized;
    TrackerState state_;
    double initial_meas_var_;
    int consecutive_rejects_ = 0;
    std::size_t accepted_ = 0;
    std::size_t rejected_ = 0;
    std::size_t reinits_ = 0;
    double last_sample_ns_ = -1e300;

    // First seeding cluster: running means relative to its first sample.
    std::size_t seed_count_ = 0;
    double seed_t0_ns_ = 0.0;
    double seed_dt_sum_ns_ = 0.0;
    double seed_delta_sum_ns_ = 0.0;
};

/// Offset predicted from a tracker state, without the tracker.
OffsetPrediction predict_from_state(const TrackerState& s, double t_ns, double drift_noise);

// ---------------------------------------------------------------------------

struct Checkpoint {
    TrackerState state;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t reinits = 0;
};

struct PairEdge {
    SensorPair pair;
    std::vector<Checkpoint> checkpoints;  // increasing last_update_ns
};

/// Sensor pairs that hold a synchronized offset, with their tracker history.
/// Read-only once built; safe to query from many threads.
class PairGraph {
public:
    PairGraph() = default;
    explicit PairGraph(double drift_noise) : drift_noise_(drift_noise) {}

    void add_checkpoint(SensorPair pair, const Checkpoint& c);

    bool has_edge(SensorId a, SensorId b) const;
    const PairEdge* edge(SensorPair pair) const;
    const std::map<SensorPair, PairEdge>& edges() const { return edges_; }
    std::size_t edge_count() const { return edges_.size(); }

    /// Offset of the pair at t_ns (lower-id sensor's clock), predicted from
    /// the checkpoint closest in time; a (j, i) query returns the negated
    /// (i, j) offset. nullopt when the pair is untracked or the closest
    /// checkpoint is further than max_age_s away.
    std::optional<OffsetPrediction> predict(SensorPair pair, double t_ns, double max_age_s) const;

    /// Per-sensor timestamp noise variance (ns^2), split out of the pair
    /// noise estimates by least squares. Falls back to `fallback_ns2` for
    /// sensors without edges.
    double sensor_variance(SensorId id, double fallback_ns2) const;
    const std::map<SensorId, double>& sensor_variances() const { return sensor_var_; }

    // Recomputes sensor_variances from the latest checkpoint of each edge.
    void estimate_sensor_variances(double floor_ns2);

    double drift_noise() const { return drift_noise_; }

private:
    double drift_noise_ = 1.0;
    std::map<SensorPair, PairEdge> edges_;
    std::map<SensorId, double> sensor_var_;
};

/// offset_ij + offset_jk - offset_ik at t_ns; zero for a consistent network.
std::optional<double> cycle_closure_ns(const PairGraph& g, SensorId i, SensorId j, SensorId k, double t_ns,
                                       double max_age_s);

struct SyncConfig {
    TrackerConfig tracker;
    double sigma_good_ns = 50.0;    // per-sensor timestamp noise, GPS-synchronized
    double sigma_other_ns = 500.0;  // everything else
    double reorder_horizon_s = 2.0;
    double checkpoint_interval_s = 10.0;
    bool verified_only = false;  // feed only aircraft with position_quality == true
};

double class_variance_ns2(const SensorInfo& s, const SyncConfig& cfg);

struct SyncStats {
    std::size_t records_seen = 0;
    std::size_t records_used = 0;
    std::size_t records_without_truth = 0;
    std::size_t records_bad_quality = 0;
    std::size_t samples = 0;
    std::size_t seeding = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t reinits = 0;
    std::size_t out_of_order = 0;
    std::size_t skipped_pairs = 0;

    // Rejected over gated (accepted + rejected) samples.
    double rejection_rate() const;
};

/// Folds offset sampling and tracker updates over a time-ordered record
/// stream. Samples pass through a reorder buffer released by server time, so
/// modest disorder between records does not trip the trackers.
class PairGraphBuilder {
public:
    PairGraphBuilder(const SensorTable& sensors, const AircraftMap& aircraft, SyncConfig cfg = {});

    void add(const TransmissionRecord& record);
    PairGraph finish();

    const SyncStats& stats() const { return stats_; }
    const std::map<SensorPair, PairOffsetTracker>& trackers() const { return trackers_; }

private:
    struct Pending {
        double t_event_ns;
        RecordId record;
        SensorPair pair;
        double delta_ns;

        bool operator>(const Pending& o) const {
            if (t_event_ns != o.t_event_ns) return t_event_ns > o.t_event_ns;
            if (record != o.record) return record > o.record;
            return o.pair < pair;
        }
    };

    void release(double watermark_ns);
    void apply(const Pending& p);

    const SensorTable& sensors_;
    const AircraftMap& aircraft_;
    SyncConfig cfg_;
    SyncStats stats_;
    std::map<SensorPair, PairOffsetTracker> trackers_;
    std::map<SensorPair, double> checkpoint_epoch_;
    std::priority_queue<Pending, std::vector<Pending>, std::greater<>> pending_;
    PairGraph graph_;
};

PairGraph build_pair_graph(std::span<const TransmissionRecord> records, const SensorTable& sensors,
                           const AircraftMap& aircraft, const SyncConfig& cfg = {}, SyncStats* stats = nullptr);

// Tracker snapshot file: one row per checkpoint.
void write_snapshot(std::ostream& out, const PairGraph& graph,
                    const std::vector<std::pair<std::string, std::string>>& echo = {});
PairGraph read_snapshot(std::istream& in, const std::string& source = "<snapshot>",
                        double drift_noise = 1.0, double var_floor_ns2 = 0.01);

}  // namespace pairloc
