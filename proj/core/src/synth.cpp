#include "pairloc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <random>

#include "pairloc/csv.hpp"
#include "pairloc/error.hpp"

namespace pairloc {

void ClockModel::validate() const {
    const bool ok = std::isfinite(offset0_ns) && std::isfinite(drift_ns_per_s) && jitter_sigma_ns >= 0.0 &&
                    resolution_ns > 0.0 && outlier_rate >= 0.0 && outlier_rate < 1.0 && outlier_magnitude_ns >= 0.0;
    if (!ok) throw ConfigError("clock model out of range");
}

namespace {

double path_length(const std::vector<EcefPosition>& w) {
    double total = 0.0;
    for (std::size_t k = 1; k < w.size(); ++k) total += distance(w[k - 1], w[k]);
    return total;
}

}  // namespace

EcefPosition Trajectory::position_at(double elapsed_s) const {
    if (waypoints.empty()) throw ConfigError("trajectory without waypoints");
    double remaining = std::max(0.0, speed_mps * elapsed_s);
    for (std::size_t k = 1; k < waypoints.size(); ++k) {
        const double seg = distance(waypoints[k - 1], waypoints[k]);
        if (remaining <= seg && seg > 0.0) {
            const Eigen::Vector3d a = waypoints[k - 1].vec();
            return EcefPosition(a + (waypoints[k].vec() - a) * (remaining / seg));
        }
        remaining -= seg;
    }
    return waypoints.back();
}

std::vector<SensorInfo> Scenario::sensor_infos() const {
    std::vector<SensorInfo> out;
    for (const auto& s : sensors) out.push_back(s.info);
    return out;
}

std::vector<AircraftInfo> Scenario::aircraft_infos() const {
    std::vector<AircraftInfo> out;
    for (const auto& t : trajectories) out.push_back(t.aircraft);
    return out;
}

SyntheticWorld generate(const Scenario& scenario) {
    struct Site {
        const SyntheticSensor* sensor;
        EcefPosition ecef;
    };
    std::vector<Site> sites;
    for (const auto& s : scenario.sensors) {
        s.clock.validate();
        sites.push_back({&s, geodetic_to_ecef(s.info.position)});
    }
    std::sort(sites.begin(), sites.end(),
              [](const Site& a, const Site& b) { return a.sensor->info.sensor_id < b.sensor->info.sensor_id; });

    struct Pending {
        double t_s;
        std::size_t aircraft;
        EcefPosition p;
        std::vector<Measurement> measurements;
        std::vector<ClockEntry> clocks;
    };
    std::vector<Pending> pending;

    for (std::size_t a = 0; a < scenario.trajectories.size(); ++a) {
        const Trajectory& tr = scenario.trajectories[a];
        if (!(tr.emission_hz > 0.0) || !(tr.speed_mps >= 0.0)) throw ConfigError("invalid trajectory timing");
        std::mt19937_64 rng(splitmix64(scenario.seed ^ splitmix64(a + 1)));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        const double flight_s = tr.speed_mps > 0.0 ? path_length(tr.waypoints) / tr.speed_mps : tr.duration_s;
        const double end_s = std::min(tr.duration_s, flight_s);

        for (std::size_t k = 0;; ++k) {
            const double elapsed = static_cast<double>(k) / tr.emission_hz;
            if (elapsed >= end_s) break;
            const double t_s = tr.start_s + elapsed;
            const EcefPosition p = tr.position_at(elapsed);
            Pending e{t_s, a, p, {}, {}};
            for (const auto& site : sites) {
                const SensorId id = site.sensor->info.sensor_id;
                if (!tr.audience.empty() && std::find(tr.audience.begin(), tr.audience.end(), id) == tr.audience.end()) {
                    continue;
                }
                const double d = distance(site.ecef, p);
                if (d > scenario.range_m) continue;
                const ClockModel& c = site.sensor->clock;
                // All three draws are taken for every reception so that runs
                // differing only in outlier_rate share their jitter.
                const double jitter = normal(rng) * c.jitter_sigma_ns;
                const double u = uniform(rng);
                const double sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
                const double outlier = u < c.outlier_rate ? sign * c.outlier_magnitude_ns : 0.0;
                const double clock = c.error_ns(t_s);
                const double raw = t_s * 1e9 + d / kSpeedOfLight * 1e9 + clock + jitter + outlier;
                const double toa = std::floor(raw / c.resolution_ns) * c.resolution_ns;
                const double rssi = 20.0 * std::log10(1e5 / std::max(d, 1.0));
                e.measurements.push_back({id, toa, rssi});
                e.clocks.push_back({0, id, t_s * 1e9, clock, jitter, outlier, toa});
            }
            if (e.measurements.size() >= 2) pending.push_back(std::move(e));
        }
    }

    std::sort(pending.begin(), pending.end(), [](const Pending& x, const Pending& y) {
        return x.t_s != y.t_s ? x.t_s < y.t_s : x.aircraft < y.aircraft;
    });

    SyntheticWorld world;
    world.records.reserve(pending.size());
    RecordId next = 1;
    for (auto& e : pending) {
        const Trajectory& tr = scenario.trajectories[e.aircraft];
        TransmissionRecord r;
        r.record_id = next++;
        r.server_time_us = (e.t_s + scenario.server_delay_s) * 1e6;
        r.aircraft_id = tr.aircraft.aircraft_id;
        const GeoPosition g = ecef_to_geodetic(e.p);
        r.truth = g;
        r.baro_altitude_m = g.altitude_m;
        r.measurements = std::move(e.measurements);
        world.truth_log.push_back({r.record_id, r.aircraft_id, e.t_s * 1e9, g, e.p});
        for (auto& c : e.clocks) {
            c.record_id = r.record_id;
            world.clock_log.push_back(c);
        }
        world.records.push_back(std::move(r));
    }
    return world;
}

std::vector<Reception> to_receptions(const SyntheticWorld& world, std::size_t key_period) {
    key_period = std::max<std::size_t>(key_period, 1);
    std::map<AircraftId, std::size_t> ordinal;
    std::vector<Reception> out;
    for (const auto& r : world.records) {
        const std::size_t k = ordinal[r.aircraft_id]++;
        const std::uint64_t key =
            splitmix64(static_cast<std::uint64_t>(r.aircraft_id) * 1000003ULL + (k % key_period));
        for (const auto& m : r.measurements) {
            out.push_back({m.sensor_id, m.toa_ns, m.rssi_db, key, r.server_time_us, r.aircraft_id, r.truth,
                           r.baro_altitude_m});
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const Reception& a, const Reception& b) { return a.toa_ns < b.toa_ns; });
    return out;
}

// ---------------------------------------------------------------------------
// Reference scenarios

namespace {

const GeoPosition kOrigin{47.0, 8.0, 0.0};

// Geodetic position at (east, north) km from the origin on the tangent plane,
// with the altitude replaced.
GeoPosition site(double east_km, double north_km, double altitude_m) {
    const EcefPosition p = offset_enu(geodetic_to_ecef(kOrigin), kOrigin, east_km * 1e3, north_km * 1e3, 0.0);
    GeoPosition g = ecef_to_geodetic(p);
    g.altitude_m = altitude_m;
    return g;
}

EcefPosition at(double east_km, double north_km, double altitude_m) {
    return geodetic_to_ecef(site(east_km, north_km, altitude_m));
}

SyntheticSensor sensor(SensorId id, const GeoPosition& g, bool good, ClockModel c) {
    return {SensorInfo{id, g, good ? Indicator::True : Indicator::False}, c};
}

ClockModel exact_clock(double offset_ns, double drift) {
    ClockModel c;
    c.offset0_ns = offset_ns;
    c.drift_ns_per_s = drift;
    c.resolution_ns = 1e-4;
    return c;
}

Trajectory flight(AircraftId id, std::vector<EcefPosition> path, double speed, double start, double duration,
                  Indicator quality = Indicator::True) {
    Trajectory t;
    t.aircraft = {id, quality};
    t.waypoints = std::move(path);
    t.speed_mps = speed;
    t.start_s = start;
    t.duration_s = duration;
    return t;
}

void apply_noise_options(Scenario& s, const ScenarioOptions& o) {
    for (auto& sensor : s.sensors) {
        if (o.jitter_sigma_ns) {
            sensor.clock.jitter_sigma_ns = *o.jitter_sigma_ns;
            sensor.clock.resolution_ns = 1.0;
        }
        if (o.outlier_rate) sensor.clock.outlier_rate = sensor.clock.outlier_magnitude_ns > 0.0 ? *o.outlier_rate : 0.0;
        if (o.zero_noise) {
            sensor.clock.jitter_sigma_ns = 0.0;
            sensor.clock.resolution_ns = 1e-4;
            sensor.clock.outlier_rate = 0.0;
        }
    }
    if (o.duration_s) {
        for (auto& t : s.trajectories) t.duration_s = *o.duration_s;
    }
}

Scenario exact_tetra(const ScenarioOptions& o) {
    Scenario s;
    s.name = "exact-tetra";
    s.seed = o.seed.value_or(11);
    s.sensors = {
        sensor(1, site(0, 0, 400), true, exact_clock(0.0, 0.0)),
        sensor(2, site(60, 0, 550), true, exact_clock(1500.0, 10.0)),
        sensor(3, site(-30, 52, 300), true, exact_clock(-2500.0, -4.0)),
        sensor(4, site(-30, -52, 800), true, exact_clock(750000.0, 25.0)),
    };
    s.trajectories = {
        flight(101, {at(-20, -20, 9000), at(30, 30, 10000)}, 220.0, 1.0, 300.0),
        flight(102, {at(20, -25, 11000), at(-25, 25, 11000)}, 200.0, 1.5, 300.0),
        flight(103, {at(-10, 30, 9500), at(10, -30, 10500)}, 180.0, 2.25, 300.0),
    };
    apply_noise_options(s, o);
    return s;
}

Scenario noisy_grid(const ScenarioOptions& o) {
    Scenario s;
    s.name = "noisy-grid";
    s.seed = o.seed.value_or(12);
    s.range_m = 150e3;
    const double east[] = {-90, -30, 30, 90};
    const double north[] = {-60, 0, 60};
    SensorId id = 1;
    for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 4; ++col, ++id) {
            const bool good = (row + col) % 2 == 0;
            const double k = static_cast<double>(id);
            // Fixed irregularity so no three sensors line up exactly.
            const GeoPosition g = site(east[col] + 7.0 * std::sin(1.7 * k), north[row] + 6.0 * std::cos(2.3 * k),
                                       200.0 + 70.0 * static_cast<double>((id * 5) % 12));
            ClockModel c;
            if (good) {
                c.offset0_ns = 400.0 * std::sin(3.1 * k);
                c.drift_ns_per_s = 1.5 * std::cos(1.3 * k);
                c.jitter_sigma_ns = 40.0;
                c.resolution_ns = 1e9 / 60e6;
            } else {
                c.offset0_ns = 4e5 * std::sin(0.9 * k);
                c.drift_ns_per_s = 35.0 * std::cos(2.9 * k);
                c.jitter_sigma_ns = 150.0;
                c.resolution_ns = 1e9 / 2.4e6;
            }
            s.sensors.push_back(sensor(id, g, good, c));
        }
    }
    s.trajectories = {
        flight(201, {at(-80, -50, 9000), at(80, 50, 11000)}, 230.0, 1.0, 300.0),
        flight(202, {at(80, -50, 10000), at(-80, 50, 10000)}, 210.0, 1.1, 300.0),
        flight(203, {at(-80, 5, 7000), at(80, -5, 8000)}, 190.0, 1.2, 300.0),
        flight(204, {at(10, -60, 12000), at(-10, 60, 12000)}, 240.0, 1.3, 300.0),
        flight(205, {at(-50, 40, 6000), at(50, -40, 9000)}, 170.0, 1.4, 300.0),
        flight(206, {at(40, 40, 11000), at(-40, -40, 10500)}, 200.0, 1.6, 300.0),
    };
    apply_noise_options(s, o);
    return s;
}

Scenario outlier_storm(const ScenarioOptions& o) {
    Scenario s;
    s.name = "outlier-storm";
    s.seed = o.seed.value_or(13);
    ClockModel a;
    a.jitter_sigma_ns = 50.0;
    a.resolution_ns = 1e-3;
    ClockModel b = a;
    b.offset0_ns = 3000.0;
    b.drift_ns_per_s = 5.0;
    b.outlier_rate = 0.05;
    b.outlier_magnitude_ns = 1e5;
    s.sensors = {sensor(1, site(0, 0, 300), true, a), sensor(2, site(50, 10, 450), true, b)};
    s.trajectories = {flight(301, {at(-20, -30, 10000), at(60, 40, 10000)}, 200.0, 1.0, 250.0)};
    apply_noise_options(s, o);
    return s;
}

Scenario collinear(const ScenarioOptions& o) {
    Scenario s;
    s.name = "collinear";
    s.seed = o.seed.value_or(14);
    // Sensors on one straight ECEF chord.
    const Eigen::Vector3d a = at(-80, 0, 300).vec();
    const Eigen::Vector3d b = at(80, 0, 300).vec();
    for (int k = 0; k < 5; ++k) {
        const EcefPosition p(a + (b - a) * (k / 4.0));
        s.sensors.push_back(sensor(k + 1, ecef_to_geodetic(p), true, exact_clock(100.0 * k, 2.0 * k)));
    }
    s.trajectories = {
        flight(401, {at(-40, 30, 10000), at(40, 30, 10000)}, 200.0, 1.0, 120.0),
        flight(402, {at(40, -25, 9000), at(-40, -35, 9000)}, 200.0, 1.3, 120.0),
    };
    apply_noise_options(s, o);
    return s;
}

Scenario fig5(const ScenarioOptions& o) {
    Scenario s;
    s.name = "fig5";
    s.seed = o.seed.value_or(15);
    s.range_m = 100e3;
    s.sensors = {
        sensor(1, site(-300, 0, 400), true, exact_clock(200.0, 1.0)),
        sensor(2, site(-300, 200, 350), true, exact_clock(-700.0, -2.0)),
        sensor(3, site(-150, 250, 500), false, exact_clock(12000.0, 15.0)),
        sensor(4, site(-300, -200, 300), false, exact_clock(-9000.0, 8.0)),
        sensor(5, site(0, 0, 450), true, exact_clock(0.0, 0.0)),
        sensor(6, site(80, 0, 600), true, exact_clock(2500.0, 3.0)),
        sensor(7, site(140, 60, 1500), false, exact_clock(-40000.0, -12.0)),
        sensor(8, site(140, -60, 350), false, exact_clock(65000.0, 20.0)),
    };
    Trajectory p1 = flight(501, {at(-285, 15, 9000), at(-277, 24, 9000)}, 100.0, 1.0, 120.0);
    p1.audience = {1};
    Trajectory p2 = flight(502, {at(15, 35, 10000), at(25, 45, 10000)}, 100.0, 1.2, 120.0);
    p2.audience = {5, 6};
    Trajectory p3 = flight(503, {at(125, -5, 11000), at(135, 5, 11000)}, 100.0, 1.4, 120.0);
    p3.audience = {6, 7, 8};
    // Position reports of this aircraft failed verification: it never feeds
    // synchronization but is the localization target.
    Trajectory x = flight(504, {at(80, 0, 8000), at(90, 10, 8000)}, 100.0, 1.6, 120.0, Indicator::False);
    x.audience = {5, 6, 7, 8};
    s.trajectories = {p1, p2, p3, x};
    apply_noise_options(s, o);
    return s;
}

}  // namespace

std::vector<std::string> reference_scenario_names() {
    return {"exact-tetra", "noisy-grid", "outlier-storm", "collinear", "fig5"};
}

Scenario reference_scenario(const std::string& name, const ScenarioOptions& opts) {
    if (name == "exact-tetra") return exact_tetra(opts);
    if (name == "noisy-grid") return noisy_grid(opts);
    if (name == "outlier-storm") return outlier_storm(opts);
    if (name == "collinear") return collinear(opts);
    if (name == "fig5") return fig5(opts);
    throw LookupError("unknown scenario '" + name + "'");
}

void write_truth_log(std::ostream& out, const std::vector<TruthEntry>& log) {
    out << "id,aircraft,emissionNs,latitude,longitude,geoAltitude,x,y,z\n";
    for (const auto& e : log) {
        out << e.record_id << ',' << e.aircraft_id << ',' << format_double(e.emission_ns) << ','
            << format_double(e.position.latitude_deg) << ',' << format_double(e.position.longitude_deg) << ','
            << format_double(e.position.altitude_m) << ',' << format_double(e.ecef.x_m) << ','
            << format_double(e.ecef.y_m) << ',' << format_double(e.ecef.z_m) << '\n';
    }
}

void write_clock_log(std::ostream& out, const std::vector<ClockEntry>& log) {
    out << "id,sensor,emissionNs,clockErrorNs,jitterNs,outlierNs,toaNs\n";
    for (const auto& e : log) {
        out << e.record_id << ',' << e.sensor_id << ',' << format_double(e.emission_ns) << ','
            << format_double(e.clock_error_ns) << ',' << format_double(e.jitter_ns) << ','
            << format_double(e.outlier_ns) << ',' << format_double(e.toa_ns) << '\n';
    }
}

}  // namespace pairloc
