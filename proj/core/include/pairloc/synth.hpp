#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pairloc/dataset.hpp"
#include "pairloc/geo.hpp"
#include "pairloc/prepare.hpp"

namespace pairloc {

// Receiver clock: offset0 + drift * t, plus Gaussian jitter and rare gross
// outliers, floored onto a grid of resolution_ns. The transmitter clock is
// folded into the emission time because it cancels in every difference.
struct ClockModel {
    double offset0_ns = 0.0;
    double drift_ns_per_s = 0.0;
    double jitter_sigma_ns = 0.0;
    double resolution_ns = 1.0;
    double outlier_rate = 0.0;
    double outlier_magnitude_ns = 0.0;  // applied with a random sign

    // Deterministic part at emission time t_s (seconds since recording start).
    double error_ns(double t_s) const { return offset0_ns + drift_ns_per_s * t_s; }

    // Throws ConfigError when a field is out of range.
    void validate() const;
};

struct SyntheticSensor {
    SensorInfo info;
    ClockModel clock;
};

// Piecewise-linear ECEF path flown at constant speed, emitting at emission_hz
// from start_s until the path ends or duration_s elapses.
struct Trajectory {
    AircraftInfo aircraft;
    std::vector<EcefPosition> waypoints;
    double speed_mps = 200.0;
    double start_s = 1.0;
    double duration_s = 300.0;
    double emission_hz = 2.0;
    std::vector<SensorId> audience;  // when non-empty only these sensors hear the aircraft

    EcefPosition position_at(double elapsed_s) const;
};

struct Scenario {
    std::string name;
    std::vector<SyntheticSensor> sensors;
    std::vector<Trajectory> trajectories;
    std::uint64_t seed = 1;
    double range_m = 400e3;
    double server_delay_s = 0.05;

    std::vector<SensorInfo> sensor_infos() const;
    std::vector<AircraftInfo> aircraft_infos() const;
};

struct TruthEntry {
    RecordId record_id = 0;
    AircraftId aircraft_id = 0;
    double emission_ns = 0.0;
    GeoPosition position;
    EcefPosition ecef;
};

struct ClockEntry {
    RecordId record_id = 0;
    SensorId sensor_id = 0;
    double emission_ns = 0.0;
    double clock_error_ns = 0.0;  // offset0 + drift * t
    double jitter_ns = 0.0;
    double outlier_ns = 0.0;
    double toa_ns = 0.0;  // as written, after quantization
};

struct SyntheticWorld {
    std::vector<TransmissionRecord> records;  // server-time order, ids from 1
    std::vector<TruthEntry> truth_log;
    std::vector<ClockEntry> clock_log;
};

/// Deterministic for a fixed scenario: each aircraft draws from its own
/// generator seeded from (seed, aircraft index). Emissions heard by fewer
/// than two sensors are dropped.
SyntheticWorld generate(const Scenario& scenario);

// Undoes deduplication: one Reception per measurement. Payload keys repeat
// every `key_period` emissions of an aircraft, as short messages do.
std::vector<Reception> to_receptions(const SyntheticWorld& world, std::size_t key_period = 4);

struct ScenarioOptions {
    std::optional<std::uint64_t> seed;
    std::optional<double> jitter_sigma_ns;  // applied to every sensor, with 1 ns resolution
    bool zero_noise = false;                // no jitter, outliers or quantization
    std::optional<double> outlier_rate;
    std::optional<double> duration_s;
};

/// Named scenarios: exact-tetra, noisy-grid, outlier-storm, collinear, fig5.
/// Throws LookupError for any other name.
Scenario reference_scenario(const std::string& name, const ScenarioOptions& opts = {});
std::vector<std::string> reference_scenario_names();

void write_truth_log(std::ostream& out, const std::vector<TruthEntry>& log);
void write_clock_log(std::ostream& out, const std::vector<ClockEntry>& log);

}  // namespace pairloc
