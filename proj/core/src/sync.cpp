#include "pairloc/sync.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include <Eigen/Dense>

#include "pairloc/csv.hpp"
#include "pairloc/error.hpp"

namespace pairloc {

std::string to_string(const SensorPair& p) {
    return "{" + std::to_string(p.i) + "," + std::to_string(p.j) + "}";
}

std::string to_string(TrackerStatus s) {
    switch (s) {
        case TrackerStatus::Uninitialized: return "uninitialized";
        case TrackerStatus::Tracking: return "tracking";
        case TrackerStatus::Reinitializing: return "reinitializing";
    }
    return "unknown";
}

double pair_offset_ns(const EcefPosition& s_i, const EcefPosition& s_j, const EcefPosition& p,
                      double t_i_ns, double t_j_ns) {
    const double geometric_ns = (distance(s_i, p) / kSpeedOfLight - distance(s_j, p) / kSpeedOfLight) * 1e9;
    return geometric_ns - (t_i_ns - t_j_ns);
}

OffsetSampling offset_samples(const TransmissionRecord& record, const SensorTable& sensors) {
    OffsetSampling out;
    if (!record.truth) return out;
    const EcefPosition p = geodetic_to_ecef(*record.truth);
    const auto& ms = record.measurements;
    for (std::size_t a = 0; a < ms.size(); ++a) {
        for (std::size_t b = a + 1; b < ms.size(); ++b) {
            const Measurement* mi = &ms[a];
            const Measurement* mj = &ms[b];
            if (mi->sensor_id > mj->sensor_id) std::swap(mi, mj);
            const SensorSite* si = sensors.find(mi->sensor_id);
            const SensorSite* sj = sensors.find(mj->sensor_id);
            if (!si || !sj) {
                ++out.skipped_pairs;
                continue;
            }
            // Emission instant on sensor i's clock: arrival minus propagation.
            const double t_event_ns = mi->toa_ns - propagation_delay(si->ecef, p) * 1e9;
            out.samples.push_back({SensorPair{mi->sensor_id, mj->sensor_id}, t_event_ns,
                                   pair_offset_ns(si->ecef, sj->ecef, p, mi->toa_ns, mj->toa_ns),
                                   record.record_id});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

PairOffsetTracker::PairOffsetTracker(SensorPair pair, double initial_meas_var_ns2, TrackerConfig cfg)
    : pair_(pair), cfg_(cfg), initial_meas_var_(std::max(initial_meas_var_ns2, cfg.meas_var_floor_ns2)) {
    state_.meas_var_ns2 = initial_meas_var_;
}

void PairOffsetTracker::propagate(double dt_s, Eigen::Vector2d& x, Eigen::Matrix2d& p) const {
    Eigen::Matrix2d f;
    f << 1.0, dt_s, 0.0, 1.0;
    const double q = cfg_.drift_noise * cfg_.drift_noise;
    const double adt = std::abs(dt_s);
    Eigen::Matrix2d qm;
    qm << q * adt * adt * adt / 3.0, q * dt_s * adt / 2.0, q * dt_s * adt / 2.0, q * adt;
    x = f * x;
    p = f * p * f.transpose() + qm;
}

UpdateOutcome PairOffsetTracker::seed(const OffsetSample& sample) {
    const double r = state_.meas_var_ns2;
    if (seed_count_ == 0 || sample.t_event_ns - seed_t0_ns_ < cfg_.seed_span_s * 1e9) {
        if (seed_count_ == 0) seed_t0_ns_ = sample.t_event_ns;
        ++seed_count_;
        seed_dt_sum_ns_ += sample.t_event_ns - seed_t0_ns_;
        seed_delta_sum_ns_ += sample.delta_ns;
        ++accepted_;
        return UpdateOutcome::Seeding;
    }

    // Second point: straight line through the first cluster's mean and this
    // sample, with the covariance of that two-point estimate.
    const double n = static_cast<double>(seed_count_);
    const double t1 = seed_t0_ns_ + seed_dt_sum_ns_ / n;
    const double y1 = seed_delta_sum_ns_ / n;
    const double dt = (sample.t_event_ns - t1) * 1e-9;
    state_.offset_ns = sample.delta_ns;
    state_.drift_ns_per_s = (sample.delta_ns - y1) / dt;
    state_.covariance << r, r / dt, r / dt, (r + r / n) / (dt * dt);
    state_.last_update_ns = sample.t_event_ns;
    status_ = TrackerStatus::Tracking;
    consecutive_rejects_ = 0;
    seed_count_ = 0;
    seed_dt_sum_ns_ = 0.0;
    seed_delta_sum_ns_ = 0.0;
    ++accepted_;
    return UpdateOutcome::Seeding;
}

UpdateOutcome PairOffsetTracker::update(const OffsetSample& sample) {
    if (!(sample.pair == pair_)) {
        throw OrderingError("sample for " + to_string(sample.pair) + " fed to tracker " + to_string(pair_));
    }
    if (sample.t_event_ns < last_sample_ns_) {
        throw OrderingError("sample at " + format_double(sample.t_event_ns) + " ns precedes previous sample of " +
                            to_string(pair_));
    }
    last_sample_ns_ = sample.t_event_ns;

    if (status_ != TrackerStatus::Tracking) return seed(sample);

    const double dt_s = (sample.t_event_ns - state_.last_update_ns) * 1e-9;
    Eigen::Vector2d x(state_.offset_ns, state_.drift_ns_per_s);
    Eigen::Matrix2d p = state_.covariance;
    propagate(dt_s, x, p);

    const double innovation = sample.delta_ns - x(0);
    const double s = p(0, 0) + state_.meas_var_ns2;

    if (std::abs(innovation) > cfg_.gate_sigma * std::sqrt(s)) {
        state_.offset_ns = x(0);
        state_.drift_ns_per_s = x(1);
        state_.covariance = p;
        state_.last_update_ns = sample.t_event_ns;
        ++rejected_;
        if (++consecutive_rejects_ > cfg_.reject_limit) {
            status_ = TrackerStatus::Reinitializing;
            ++reinits_;
            consecutive_rejects_ = 0;
            state_.meas_var_ns2 = initial_meas_var_;
        }
        return UpdateOutcome::Rejected;
    }

    const Eigen::Vector2d k = p.col(0) / s;
    x += k * innovation;
    Eigen::Matrix2d ikh = Eigen::Matrix2d::Identity();
    ikh.col(0) -= k;
    p = ikh * p * ikh.transpose() + (k * k.transpose()) * state_.meas_var_ns2;
    p = 0.5 * (p + p.transpose());

    const double observed = innovation * innovation - (s - state_.meas_var_ns2);
    state_.meas_var_ns2 = std::max(cfg_.meas_var_floor_ns2,
                                   (1.0 - cfg_.adapt_rate) * state_.meas_var_ns2 + cfg_.adapt_rate * observed);

    state_.offset_ns = x(0);
    state_.drift_ns_per_s = x(1);
    state_.covariance = p;
    state_.last_update_ns = sample.t_event_ns;
    consecutive_rejects_ = 0;
    ++accepted_;
    return UpdateOutcome::Accepted;
}

OffsetPrediction predict_from_state(const TrackerState& s, double t_ns, double drift_noise) {
    const double dt = (t_ns - s.last_update_ns) * 1e-9;
    const double adt = std::abs(dt);
    const auto& p = s.covariance;
    // Bounds the propagated variance from above so it is monotone in |dt|
    // in both directions.
    const double var = p(0, 0) + 2.0 * adt * std::abs(p(0, 1)) + adt * adt * p(1, 1) +
                       drift_noise * drift_noise * adt * adt * adt / 3.0;
    return {s.offset_ns + s.drift_ns_per_s * dt, var};
}

OffsetPrediction PairOffsetTracker::predict(double t_ns) const {
    if (status_ != TrackerStatus::Tracking) {
        throw NoEstimateError("tracker " + to_string(pair_) + " holds no estimate (" + to_string(status_) + ")");
    }
    return predict_from_state(state_, t_ns, cfg_.drift_noise);
}

// ---------------------------------------------------------------------------

void PairGraph::add_checkpoint(SensorPair pair, const Checkpoint& c) {
    auto& e = edges_[pair];
    e.pair = pair;
    e.checkpoints.push_back(c);
}

bool PairGraph::has_edge(SensorId a, SensorId b) const {
    return edges_.count(SensorPair::ordered(a, b)) > 0;
}

const PairEdge* PairGraph::edge(SensorPair pair) const {
    const auto it = edges_.find(pair);
    return it == edges_.end() ? nullptr : &it->second;
}

std::optional<OffsetPrediction> PairGraph::predict(SensorPair pair, double t_ns, double max_age_s) const {
    if (pair.i > pair.j) {
        auto p = predict({pair.j, pair.i}, t_ns, max_age_s);
        if (p) p->offset_ns = -p->offset_ns;
        return p;
    }
    const PairEdge* e = edge(pair);
    if (!e || e->checkpoints.empty()) return std::nullopt;
    const auto& cps = e->checkpoints;
    auto it = std::lower_bound(cps.begin(), cps.end(), t_ns,
                               [](const Checkpoint& c, double t) { return c.state.last_update_ns < t; });
    const Checkpoint* best = nullptr;
    if (it != cps.end()) best = &*it;
    if (it != cps.begin()) {
        const Checkpoint* before = &*std::prev(it);
        if (!best || std::abs(t_ns - before->state.last_update_ns) <= std::abs(best->state.last_update_ns - t_ns)) {
            best = before;
        }
    }
    if (std::abs(t_ns - best->state.last_update_ns) > max_age_s * 1e9) return std::nullopt;
    return predict_from_state(best->state, t_ns, drift_noise_);
}

double PairGraph::sensor_variance(SensorId id, double fallback_ns2) const {
    const auto it = sensor_var_.find(id);
    return it == sensor_var_.end() ? fallback_ns2 : it->second;
}

void PairGraph::estimate_sensor_variances(double floor_ns2) {
    sensor_var_.clear();
    std::map<SensorId, Eigen::Index> index;
    for (const auto& [pair, e] : edges_) {
        index.emplace(pair.i, 0);
        index.emplace(pair.j, 0);
    }
    Eigen::Index n = 0;
    for (auto& [id, k] : index) k = n++;
    if (n == 0) return;

    // Normal equations of  v_i + v_j = R_ij  over all edges; the
    // minimum-norm solution splits unidentifiable components evenly.
    Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd atb = Eigen::VectorXd::Zero(n);
    for (const auto& [pair, e] : edges_) {
        const double r = e.checkpoints.back().state.meas_var_ns2;
        const Eigen::Index a = index[pair.i], b = index[pair.j];
        ata(a, a) += 1.0;
        ata(b, b) += 1.0;
        ata(a, b) += 1.0;
        ata(b, a) += 1.0;
        atb(a) += r;
        atb(b) += r;
    }
    const Eigen::VectorXd v = ata.completeOrthogonalDecomposition().solve(atb);
    for (const auto& [id, k] : index) sensor_var_[id] = std::max(v(k), floor_ns2);
}

std::optional<double> cycle_closure_ns(const PairGraph& g, SensorId i, SensorId j, SensorId k, double t_ns,
                                       double max_age_s) {
    const auto directed = [&](SensorId a, SensorId b) -> std::optional<double> {
        const auto p = g.predict(SensorPair::ordered(a, b), t_ns, max_age_s);
        if (!p) return std::nullopt;
        return a < b ? p->offset_ns : -p->offset_ns;
    };
    const auto ij = directed(i, j), jk = directed(j, k), ik = directed(i, k);
    if (!ij || !jk || !ik) return std::nullopt;
    return *ij + *jk - *ik;
}

// ---------------------------------------------------------------------------

double class_variance_ns2(const SensorInfo& s, const SyncConfig& cfg) {
    const double sigma = s.good == Indicator::True ? cfg.sigma_good_ns : cfg.sigma_other_ns;
    return sigma * sigma;
}

double SyncStats::rejection_rate() const {
    const std::size_t gated = accepted + rejected;
    return gated == 0 ? 0.0 : static_cast<double>(rejected) / static_cast<double>(gated);
}

PairGraphBuilder::PairGraphBuilder(const SensorTable& sensors, const AircraftMap& aircraft, SyncConfig cfg)
    : sensors_(sensors), aircraft_(aircraft), cfg_(cfg), graph_(cfg.tracker.drift_noise) {}

void PairGraphBuilder::add(const TransmissionRecord& record) {
    ++stats_.records_seen;
    if (!record.truth) {
        ++stats_.records_without_truth;
        return;
    }
    const auto it = aircraft_.find(record.aircraft_id);
    const Indicator quality = it == aircraft_.end() ? Indicator::Unknown : it->second.position_quality;
    if (quality == Indicator::False || (cfg_.verified_only && quality != Indicator::True)) {
        ++stats_.records_bad_quality;
        return;
    }
    ++stats_.records_used;

    const OffsetSampling sampling = offset_samples(record, sensors_);
    stats_.skipped_pairs += sampling.skipped_pairs;
    for (const auto& s : sampling.samples) {
        pending_.push({s.t_event_ns, s.source_record_id, s.pair, s.delta_ns});
    }
    release(record.server_time_us * 1e3 - cfg_.reorder_horizon_s * 1e9);
}

void PairGraphBuilder::release(double watermark_ns) {
    while (!pending_.empty() && pending_.top().t_event_ns <= watermark_ns) {
        const Pending p = pending_.top();
        pending_.pop();
        apply(p);
    }
}

void PairGraphBuilder::apply(const Pending& p) {
    ++stats_.samples;
    auto it = trackers_.find(p.pair);
    if (it == trackers_.end()) {
        const SensorSite* si = sensors_.find(p.pair.i);
        const SensorSite* sj = sensors_.find(p.pair.j);
        const double r0 = class_variance_ns2(si->info, cfg_) + class_variance_ns2(sj->info, cfg_);
        it = trackers_.emplace(p.pair, PairOffsetTracker(p.pair, r0, cfg_.tracker)).first;
    }
    auto& tracker = it->second;
    if (p.t_event_ns < tracker.last_sample_ns()) {
        ++stats_.out_of_order;
        return;
    }
    const std::size_t reinits_before = tracker.reinits();
    switch (tracker.update({p.pair, p.t_event_ns, p.delta_ns, p.record})) {
        case UpdateOutcome::Seeding: ++stats_.seeding; break;
        case UpdateOutcome::Accepted: ++stats_.accepted; break;
        case UpdateOutcome::Rejected: ++stats_.rejected; break;
    }
    stats_.reinits += tracker.reinits() - reinits_before;

    if (tracker.status() != TrackerStatus::Tracking) return;
    const double epoch = std::floor(p.t_event_ns / (cfg_.checkpoint_interval_s * 1e9));
    auto [ep, inserted] = checkpoint_epoch_.try_emplace(p.pair, epoch);
    if (inserted || ep->second != epoch) {
        ep->second = epoch;
        graph_.add_checkpoint(p.pair, {tracker.state(), tracker.accepted(), tracker.rejected(), tracker.reinits()});
    }
}

PairGraph PairGraphBuilder::finish() {
    release(std::numeric_limits<double>::infinity());
    for (const auto& [pair, tracker] : trackers_) {
        if (tracker.status() != TrackerStatus::Tracking) continue;
        const PairEdge* e = graph_.edge(pair);
        if (e && e->checkpoints.back().state.last_update_ns == tracker.state().last_update_ns) continue;
        graph_.add_checkpoint(pair, {tracker.state(), tracker.accepted(), tracker.rejected(), tracker.reinits()});
    }
    graph_.estimate_sensor_variances(cfg_.tracker.meas_var_floor_ns2 / 2.0);
    return std::move(graph_);
}

PairGraph build_pair_graph(std::span<const TransmissionRecord> records, const SensorTable& sensors,
                           const AircraftMap& aircraft, const SyncConfig& cfg, SyncStats* stats) {
    PairGraphBuilder builder(sensors, aircraft, cfg);
    for (const auto& r : records) builder.add(r);
    PairGraph g = builder.finish();
    if (stats) *stats = builder.stats();
    return g;
}

// ---------------------------------------------------------------------------

void write_snapshot(std::ostream& out, const PairGraph& graph,
                    const std::vector<std::pair<std::string, std::string>>& echo) {
    for (const auto& [k, v] : echo) out << "# " << k << " = " << v << '\n';
    out << "sensorI,sensorJ,lastUpdateNs,offsetNs,driftNsPerS,varOffset,covOffsetDrift,varDrift,measVar,"
           "status,accepted,rejected,reinits\n";
    for (const auto& [pair, e] : graph.edges()) {
        for (const auto& c : e.checkpoints) {
            const auto& s = c.state;
            out << pair.i << ',' << pair.j << ',' << format_double(s.last_update_ns) << ','
                << format_double(s.offset_ns) << ',' << format_double(s.drift_ns_per_s) << ','
                << format_double(s.covariance(0, 0)) << ',' << format_double(s.covariance(0, 1)) << ','
                << format_double(s.covariance(1, 1)) << ',' << format_double(s.meas_var_ns2) << ",tracking,"
                << c.accepted << ',' << c.rejected << ',' << c.reinits << '\n';
        }
    }
}

PairGraph read_snapshot(std::istream& in, const std::string& source, double drift_noise, double var_floor_ns2) {
    CsvReader reader(in, source);
    reader.read_header();
    const std::vector<std::string> names = {"sensorI",  "sensorJ",        "lastUpdateNs", "offsetNs", "driftNsPerS",
                                            "varOffset", "covOffsetDrift", "varDrift",     "measVar",  "status",
                                            "accepted",  "rejected",       "reinits"};
    std::vector<std::size_t> col;
    for (const auto& n : names) {
        const auto c = reader.column(n);
        if (!c) throw IntegrityError(source + ": snapshot lacks column " + n);
        col.push_back(*c);
    }
    PairGraph g(drift_noise);
    std::vector<std::string> f;
    const auto num = [&](std::size_t k) {
        const auto v = parse_double(f[col[k]]);
        if (!v) reader.fail("bad " + names[k]);
        return *v;
    };
    const auto integer = [&](std::size_t k) {
        const auto v = parse_int(f[col[k]]);
        if (!v) reader.fail("bad " + names[k]);
        return *v;
    };
    while (reader.next(f)) {
        if (trim(f[col[9]]) != "tracking") continue;
        const auto a = integer(0), b = integer(1);
        if (a >= b) reader.fail("snapshot pairs must satisfy sensorI < sensorJ");
        Checkpoint c;
        c.state.last_update_ns = num(2);
        c.state.offset_ns = num(3);
        c.state.drift_ns_per_s = num(4);
        c.state.covariance << num(5), num(6), num(6), num(7);
        c.state.meas_var_ns2 = num(8);
        c.accepted = static_cast<std::size_t>(integer(10));
        c.rejected = static_cast<std::size_t>(integer(11));
        c.reinits = static_cast<std::size_t>(integer(12));
        const PairEdge* e = g.edge({a, b});
        if (e && e->checkpoints.back().state.last_update_ns > c.state.last_update_ns) {
            reader.fail("snapshot checkpoints must be in time order per pair");
        }
        g.add_checkpoint({a, b}, c);
    }
    g.estimate_sensor_variances(var_floor_ns2);
    return g;
}

}  // namespace pairloc
