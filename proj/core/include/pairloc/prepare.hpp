#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "pairloc/dataset.hpp"

namespace pairloc {

// ---------------------------------------------------------------------------
// Rolling-counter unwrapping

// One reception as delivered by a sensor that only reports a rolling counter.
struct RawSample {
    SensorId sensor_id = 0;
    std::uint64_t rolling_counter = 0;  // in [0, modulus)
    double counter_hz = 1e9;
    std::uint64_t payload_key = 0;
    std::optional<double> server_time_us;  // coarse arrival anchor, may be missing
};

enum class UnwrapStatus { Ok, Ambiguous };

struct UnwrappedTime {
    double toa_ns = 0.0;   // NaN when ambiguous
    std::int64_t wraps = 0;
    UnwrapStatus status = UnwrapStatus::Ok;
};

/// Maps rolling counters onto continuous nanosecond timestamps, per sensor,
/// in input order. `modulus` is the counter period in counts (2^k for a
/// k-bit counter).
///
/// With a server anchor the wrap count is the one that keeps sensor time
/// closest to server time, corrected by the running sensor-minus-server
/// offset of that sensor (so slow drift is absorbed). Without an anchor the
/// counter is assumed to advance by less than half a period; larger forward
/// jumps are reported as Ambiguous and skipped. Output is monotone
/// non-decreasing per sensor.
std::vector<UnwrappedTime> unwrap_counter(std::span<const RawSample> samples, std::uint64_t modulus);

// ---------------------------------------------------------------------------
// Deduplication

// A decoded reception with a continuous timestamp, prior to grouping.
struct Reception {
    SensorId sensor_id = 0;
    double toa_ns = 0.0;
    double rssi_db = 0.0;
    std::uint64_t payload_key = 0;
    double server_time_us = 0.0;
    AircraftId aircraft_id = 0;
    std::optional<GeoPosition> reported_position;
    std::optional<double> baro_altitude_m;
};

struct DedupConfig {
    double window_ns = 2e6;
    // Groups older than the newest timestamp minus (window + lateness) are
    // closed and emitted.
    double lateness_ns = 1e9;
};

/// Groups receptions of the same transmission by payload and arrival time.
/// Receptions with equal payload_key within window_ns of the group's earliest
/// member join that group; a second reception from a sensor already in the
/// group is dropped. Groups with a single receiver are discarded.
class Deduplicator {
public:
    explicit Deduplicator(DedupConfig cfg = {}, RecordId first_id = 1);

    void push(const Reception& r);

    // Records whose groups can no longer grow, ordered by earliest arrival.
    std::vector<TransmissionRecord> drain_ready();

    // Closes every remaining group.
    std::vector<TransmissionRecord> finish();

    std::size_t dropped_singletons() const { return singletons_; }
    std::size_t dropped_repeats() const { return repeats_; }

private:
    struct Group {
        double earliest_ns;
        std::uint64_t seq;
        std::vector<Reception> members;
    };

    std::vector<TransmissionRecord> close_before(double cutoff_ns);

    DedupConfig cfg_;
    RecordId next_id_;
    std::uint64_t seq_ = 0;
    double newest_ns_ = -1e300;
    std::map<std::uint64_t, std::vector<Group>> open_;
    std::size_t singletons_ = 0;
    std::size_t repeats_ = 0;
};

std::vector<TransmissionRecord> deduplicate(std::span<const Reception> receptions, DedupConfig cfg = {});

// ---------------------------------------------------------------------------
// Simplified verification

enum class Verdict { Consistent, Inconsistent, NotVerifiable };

struct ConsistencyReport {
    Verdict verdict = Verdict::NotVerifiable;
    double max_abs_residual_s = 0.0;
    std::size_t pairs = 0;
};

/// Checks a record's reported position against its timestamps assuming zero
/// clock offset between the participating sensors (meaningful only for
/// GPS-synchronized sensors). With good_only, sensors not flagged good are
/// ignored. Fewer than two usable sensors or a missing position gives
/// NotVerifiable.
ConsistencyReport verify_consistency(const TransmissionRecord& record, const SensorMap& sensors,
                                     bool good_only = true, double threshold_s = 10e-6);

// ---------------------------------------------------------------------------
// Evaluation masking

// SplitMix64 finalizer; also derives independent sub-seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Deterministic hash selection: true when the record belongs to the
/// evaluation split for (fraction, seed).
bool in_eval_split(RecordId id, double fraction, std::uint64_t seed);

struct MaskedSplit {
    std::vector<TransmissionRecord> train;
    std::vector<TransmissionRecord> eval;  // truth removed
    std::vector<AnswerKeyEntry> answer_key;
};

/// Splits records into training and evaluation sets. Eval records keep no
/// position; the answer key holds it. Records without a position have
/// nothing to score against and always stay in training. Throws ConfigError unless
/// 0 < fraction < 1.
MaskedSplit mask_for_eval(std::span<const TransmissionRecord> records, double fraction, std::uint64_t seed);

}  // namespace pairloc
