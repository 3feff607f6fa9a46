#pragma once

// In-memory synth -> mask -> sync -> locate runs shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <vector>

#include "pairloc/locate.hpp"
#include "pairloc/prepare.hpp"
#include "pairloc/synth.hpp"
#include "pairloc/sync.hpp"

namespace testing_support {

struct PipelineRun {
    pairloc::Scenario scenario;
    pairloc::SyntheticWorld world;
    std::unique_ptr<pairloc::SensorTable> sensors;
    pairloc::AircraftMap aircraft;
    pairloc::MaskedSplit split;
    pairloc::PairGraph graph;
    pairloc::SyncStats sync_stats;
    std::vector<pairloc::LocateOutcome> outcomes;  // one per eval record, id order
    std::map<pairloc::RecordId, pairloc::TruthEntry> truth;
};

inline PipelineRun run_pipeline(const pairloc::Scenario& scenario, double fraction = 0.5, std::uint64_t mask_seed = 1,
                                const pairloc::SyncConfig& sync = {}, const pairloc::LocateConfig& locate = {},
                                std::size_t workers = 1) {
    PipelineRun run;
    run.scenario = scenario;
    run.world = pairloc::generate(scenario);
    run.sensors = std::make_unique<pairloc::SensorTable>(scenario.sensor_infos());
    run.aircraft = pairloc::index_aircraft(scenario.aircraft_infos());
    run.split = pairloc::mask_for_eval(run.world.records, fraction, mask_seed);
    run.graph = pairloc::build_pair_graph(run.split.train, *run.sensors, run.aircraft, sync, &run.sync_stats);
    pairloc::ParallelLocalizer loc(run.graph, *run.sensors, locate, workers);
    run.outcomes = loc.process(run.split.eval);
    for (const auto& t : run.world.truth_log) run.truth.emplace(t.record_id, t);
    return run;
}

// Largest |predicted - true| pair offset over every record in which both
// sensors of a tracked pair took part, evaluated at the record's event time
// on the lower-id sensor's clock.
struct OffsetCheck {
    double max_abs_error_ns = 0.0;
    std::size_t checked = 0;
    std::size_t unpredicted = 0;
};

inline OffsetCheck check_offsets(const PipelineRun& run, double max_age_s = 300.0) {
    using namespace pairloc;
    std::map<std::pair<RecordId, SensorId>, const ClockEntry*> clock;
    for (const auto& c : run.world.clock_log) clock[{c.record_id, c.sensor_id}] = &c;
    OffsetCheck out;
    for (const auto& r : run.world.records) {
        const auto& truth = run.truth.at(r.record_id);
        for (std::size_t a = 0; a < r.measurements.size(); ++a) {
            for (std::size_t b = a + 1; b < r.measurements.size(); ++b) {
                const auto pair = SensorPair::ordered(r.measurements[a].sensor_id, r.measurements[b].sensor_id);
                if (!run.graph.has_edge(pair.i, pair.j)) continue;
                const ClockEntry* ci = clock.at({r.record_id, pair.i});
                const ClockEntry* cj = clock.at({r.record_id, pair.j});
                const EcefPosition si = run.sensors->find(pair.i)->ecef;
                const double t_event = ci->toa_ns - propagation_delay(si, truth.ecef) * 1e9;
                const auto pred = run.graph.predict(pair, t_event, max_age_s);
                if (!pred) {
                    ++out.unpredicted;
                    continue;
                }
                const double true_offset = cj->clock_error_ns - ci->clock_error_ns;
                out.max_abs_error_ns = std::max(out.max_abs_error_ns, std::abs(pred->offset_ns - true_offset));
                ++out.checked;
            }
        }
    }
    return out;
}

struct PositionCheck {
    std::size_t eval_records = 0;
    std::size_t converged = 0;
    double max_error_m = 0.0;
    std::vector<double> errors_m;
    std::vector<double> predicted_m;  // sqrt(trace(covariance))
};

inline PositionCheck check_positions(const PipelineRun& run) {
    PositionCheck out;
    out.eval_records = run.outcomes.size();
    for (const auto& o : run.outcomes) {
        if (!o.predicted()) continue;
        ++out.converged;
        const double e = pairloc::distance(o.result->position, run.truth.at(o.record_id).ecef);
        out.errors_m.push_back(e);
        out.predicted_m.push_back(pairloc::predicted_error_m(*o.result));
        out.max_error_m = std::max(out.max_error_m, e);
    }
    return out;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return NAN;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace testing_support
