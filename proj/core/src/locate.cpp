#include "pairloc/locate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "pairloc/error.hpp"
#include "pairloc/prepare.hpp"

namespace pairloc {

double residual(const PairEquation& eq, const EcefPosition& p) {
    return (distance(eq.s_i, p) / kSpeedOfLight - distance(eq.s_j, p) / kSpeedOfLight) - eq.offset_s -
           eq.tdoa_measured_s;
}

Eigen::Vector3d jacobian_row(const PairEquation& eq, const EcefPosition& p) {
    const Eigen::Vector3d vi = p.vec() - eq.s_i.vec();
    const Eigen::Vector3d vj = p.vec() - eq.s_j.vec();
    const double ni = vi.norm();
    const double nj = vj.norm();
    if (ni == 0.0 || nj == 0.0) {
        throw SingularityError("position coincides with a sensor of pair " + to_string(eq.pair));
    }
    return (vi / ni - vj / nj) / kSpeedOfLight;
}

bool is_feasible(const PairEquation& eq, double slack_s) {
    const double limit = distance(eq.s_i, eq.s_j) / kSpeedOfLight + slack_s;
    return std::abs(eq.tdoa_measured_s + eq.offset_s) <= limit;
}

AssembledEquations assemble_equations(const TransmissionRecord& record, const PairGraph& graph,
                                      const SensorTable& sensors, const AssembleConfig& cfg,
                                      const std::optional<EcefPosition>& emitter) {
    AssembledEquations out;
    const auto fallback = [&](const SensorInfo& s) {
        const double sigma = s.good == Indicator::True ? cfg.sigma_good_ns : cfg.sigma_other_ns;
        return sigma * sigma;
    };
    const auto& ms = record.measurements;
    for (std::size_t a = 0; a < ms.size(); ++a) {
        for (std::size_t b = a + 1; b < ms.size(); ++b) {
            const Measurement* mi = &ms[a];
            const Measurement* mj = &ms[b];
            if (mi->sensor_id > mj->sensor_id) std::swap(mi, mj);
            const SensorSite* si = sensors.find(mi->sensor_id);
            const SensorSite* sj = sensors.find(mj->sensor_id);
            if (!si || !sj) {
                ++out.unknown_sensor;
                continue;
            }
            const SensorPair pair{mi->sensor_id, mj->sensor_id};
            const double t_event_ns = emitter ? mi->toa_ns - propagation_delay(si->ecef, *emitter) * 1e9 : mi->toa_ns;
            const auto offset = graph.predict(pair, t_event_ns, cfg.max_age_s);
            if (!offset) {
                ++out.untracked;
                continue;
            }
            PairEquation eq;
            eq.pair = pair;
            eq.tdoa_measured_s = (mi->toa_ns - mj->toa_ns) * 1e-9;
            eq.offset_s = offset->offset_ns * 1e-9;
            eq.offset_variance_s2 = offset->variance_ns2 * 1e-18;
            eq.toa_variance_i_s2 = graph.sensor_variance(pair.i, fallback(si->info)) * 1e-18;
            eq.toa_variance_j_s2 = graph.sensor_variance(pair.j, fallback(sj->info)) * 1e-18;
            eq.s_i = si->ecef;
            eq.s_j = sj->ecef;
            if (!is_feasible(eq, cfg.slack_s)) {
                ++out.infeasible;
                continue;
            }
            out.equations.push_back(eq);
        }
    }
    return out;
}

EcefPosition initial_guess(const TransmissionRecord& record, const SensorTable& sensors,
                           const std::optional<PreviousEstimate>& previous, const GuessConfig& cfg) {
    if (previous && std::abs(record.server_time_us - previous->server_time_us) <= cfg.max_age_s * 1e6) {
        return previous->position;
    }
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    double weight = 0.0;
    for (const auto& m : record.measurements) {
        const SensorSite* s = sensors.find(m.sensor_id);
        if (!s) continue;
        const double w = std::pow(10.0, m.rssi_db / 20.0);
        sum += w * s->ecef.vec();
        weight += w;
    }
    if (!(weight > 0.0) || !std::isfinite(weight)) {
        throw NoGuessError("record " + std::to_string(record.record_id) + " has no receiver with a known position");
    }
    const EcefPosition centroid(sum / weight);
    GeoPosition g = ecef_to_geodetic(centroid);
    if (g.altitude_m >= cfg.altitude_floor_m) return centroid;
    g.altitude_m = cfg.altitude_floor_m;
    return geodetic_to_ecef(g);
}

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Converged: return "converged";
        case SolveStatus::Diverged: return "diverged";
        case SolveStatus::Underdetermined: return "underdetermined";
        case SolveStatus::Infeasible: return "infeasible";
    }
    return "unknown";
}

namespace {

// Whitened problem in ns and meters. Optional altitude pseudo-measurement
// appends one already-whitened row.
class Problem {
public:
    Problem(const std::vector<PairEquation>& eqs, std::optional<double> altitude_target_m, double altitude_sigma_m)
        : eqs_(eqs), target_(altitude_target_m), sigma_(altitude_sigma_m) {
        const auto n = static_cast<Eigen::Index>(eqs.size());
        cov_ = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index a = 0; a < n; ++a) {
            const auto& ea = eqs[static_cast<std::size_t>(a)];
            for (Eigen::Index b = 0; b < n; ++b) {
                const auto& eb = eqs[static_cast<std::size_t>(b)];
                double c = 0.0;
                if (ea.pair.i == eb.pair.i) c += ea.toa_variance_i_s2;
                if (ea.pair.j == eb.pair.j) c += ea.toa_variance_j_s2;
                if (ea.pair.i == eb.pair.j) c -= ea.toa_variance_i_s2;
                if (ea.pair.j == eb.pair.i) c -= ea.toa_variance_j_s2;
                cov_(a, b) = c * 1e18;
            }
            cov_(a, a) += ea.offset_variance_s2 * 1e18;
        }
        llt_.compute(cov_);
        full_ = llt_.info() == Eigen::Success;
        if (!full_) diag_sd_ = cov_.diagonal().cwiseMax(1e-300).cwiseSqrt();
    }

    Eigen::Index rows() const { return static_cast<Eigen::Index>(eqs_.size()) + (target_ ? 1 : 0); }

    // Raw residuals in ns.
    Eigen::VectorXd raw(const EcefPosition& p) const {
        Eigen::VectorXd r(static_cast<Eigen::Index>(eqs_.size()));
        for (std::size_t k = 0; k < eqs_.size(); ++k) r(static_cast<Eigen::Index>(k)) = residual(eqs_[k], p) * 1e9;
        return r;
    }

    Eigen::VectorXd whitened(const EcefPosition& p) const {
        Eigen::VectorXd out(rows());
        out.head(static_cast<Eigen::Index>(eqs_.size())) = whiten(raw(p));
        if (target_) out(rows() - 1) = (ecef_to_geodetic(p).altitude_m - *target_) / sigma_;
        return out;
    }

    Eigen::MatrixXd whitened_jacobian(const EcefPosition& p) const {
        const auto n = static_cast<Eigen::Index>(eqs_.size());
        Eigen::MatrixXd j(n, 3);
        for (Eigen::Index k = 0; k < n; ++k) {
            j.row(k) = jacobian_row(eqs_[static_cast<std::size_t>(k)], p).transpose() * 1e9;
        }
        Eigen::MatrixXd out(rows(), 3);
        out.topRows(n) = whiten(j);
        if (target_) out.row(rows() - 1) = local_frame(ecef_to_geodetic(p)).up.transpose() / sigma_;
        return out;
    }

    // Mean per-equation standard deviation, meters.
    double equation_sd_m() const {
        if (eqs_.empty()) return 0.0;
        return cov_.diagonal().cwiseSqrt().mean() * 1e-9 * kSpeedOfLight;
    }

private:
    template <typename M>
    Eigen::MatrixXd whiten(const M& m) const {
        if (full_) return llt_.matrixL().solve(m);
        return diag_sd_.cwiseInverse().asDiagonal() * m;
    }

    const std::vector<PairEquation>& eqs_;
    std::optional<double> target_;
    double sigma_;
    Eigen::MatrixXd cov_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    bool full_ = false;
    Eigen::VectorXd diag_sd_;
};

bool finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

LocalizationResult run(const Problem& prob, const std::vector<PairEquation>& eqs, const EcefPosition& guess,
                       const SolverConfig& cfg) {
    LocalizationResult res;
    res.n_equations = eqs.size();
    res.position = guess;
    if (eqs.empty()) {
        res.status = SolveStatus::Underdetermined;
        res.residual_rms_s = std::numeric_limits<double>::quiet_NaN();
        return res;
    }

    try {
        Eigen::Vector3d x = guess.vec();
        Eigen::VectorXd r = prob.whitened(EcefPosition(x));
        double cost = r.squaredNorm();
        res.cost_history.push_back(cost);
        double lambda = 0.0;
        bool bad = !std::isfinite(cost);

        for (int it = 0; it < cfg.max_iter && !bad; ++it) {
            ++res.iterations;
            const Eigen::MatrixXd jw = prob.whitened_jacobian(EcefPosition(x));
            Eigen::Vector3d step;
            if (lambda == 0.0) {
                step = jw.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(-r);
            } else {
                Eigen::Matrix3d a = jw.transpose() * jw;
                const Eigen::Vector3d d = a.diagonal();
                const double scale = std::max(d.maxCoeff(), 1e-300);
                a.diagonal() += lambda * (d.array() + 1e-12 * scale).matrix();
                step = a.ldlt().solve(-jw.transpose() * r);
            }
            if (!step.allFinite()) {
                bad = true;
                break;
            }
            const Eigen::Vector3d xn = x + step;
            const Eigen::VectorXd rn = prob.whitened(EcefPosition(xn));
            const double cost_n = rn.squaredNorm();
            const bool small = step.norm() < cfg.step_tolerance_m;
            if (std::isfinite(cost_n) && cost_n <= cost) {
                x = xn;
                r = rn;
                cost = cost_n;
                res.cost_history.push_back(cost);
                lambda /= 10.0;
                if (lambda < 1e-3) lambda = 0.0;
                if (small) break;
            } else {
                if (small) break;  // already stationary
                lambda = lambda == 0.0 ? 1e-3 : lambda * 10.0;
                if (lambda > 1e10) break;
            }
        }

        res.position = EcefPosition(x);
        if (bad || !x.allFinite()) {
            res.status = SolveStatus::Diverged;
            res.residual_rms_s = std::numeric_limits<double>::quiet_NaN();
            return res;
        }

        const Eigen::MatrixXd jw = prob.whitened_jacobian(res.position);
        const Eigen::BDCSVD<Eigen::MatrixXd> svd(jw, Eigen::ComputeThinV);
        const Eigen::VectorXd s = svd.singularValues();
        const double smax = s.size() > 0 ? s(0) : 0.0;
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (Eigen::Index k = 0; k < s.size(); ++k) {
            if (smax > 0.0 && s(k) > cfg.rank_tolerance * smax) {
                ++res.rank;
                const Eigen::Vector3d v = svd.matrixV().col(k);
                cov += v * v.transpose() / (s(k) * s(k));
            }
        }
        res.covariance_m2 = cov;

        const Eigen::VectorXd raw = prob.raw(res.position);
        res.residual_rms_s = std::sqrt(raw.squaredNorm() / static_cast<double>(raw.size())) * 1e-9;
        res.geo = ecef_to_geodetic(res.position);
        const Eigen::Vector3d up = local_frame(res.geo).up;
        const double sd = prob.equation_sd_m();
        res.vdop = sd > 0.0 ? std::sqrt(std::max(0.0, up.dot(cov * up))) / sd : 0.0;

        if (!std::isfinite(res.residual_rms_s) || !finite(cov)) {
            res.status = SolveStatus::Diverged;
        } else if (res.rank < 3) {
            res.status = SolveStatus::Underdetermined;
        } else if (res.residual_rms_s > cfg.residual_ceiling_s) {
            res.status = SolveStatus::Diverged;
        } else {
            res.status = SolveStatus::Converged;
        }
    } catch (const Error&) {
        // Iterate landed on a sensor or the Earth's center.
        res.status = SolveStatus::Diverged;
        res.residual_rms_s = std::numeric_limits<double>::quiet_NaN();
    }
    return res;
}

}  // namespace

LocalizationResult solve_position(const std::vector<PairEquation>& eqs, const EcefPosition& guess,
                                  const SolverConfig& cfg, std::optional<double> baro_altitude_m) {
    const Problem plain(eqs, std::nullopt, cfg.baro_sigma_m);
    LocalizationResult res = run(plain, eqs, guess, cfg);
    if (cfg.baro_constraint && baro_altitude_m && res.status == SolveStatus::Converged &&
        res.vdop > cfg.vdop_threshold) {
        const Problem pinned(eqs, *baro_altitude_m + cfg.baro_offset_m, cfg.baro_sigma_m);
        LocalizationResult constrained = run(pinned, eqs, res.position, cfg);
        if (constrained.status == SolveStatus::Converged) {
            constrained.baro_used = true;
            return constrained;
        }
    }
    return res;
}

double predicted_error_m(const LocalizationResult& r) { return std::sqrt(r.covariance_m2.trace()); }

std::string to_string(Outcome o) {
    switch (o) {
        case Outcome::Converged: return "converged";
        case Outcome::Underdetermined: return "underdetermined";
        case Outcome::Infeasible: return "infeasible";
        case Outcome::Diverged: return "diverged";
        case Outcome::NoGuess: return "no_guess";
    }
    return "unknown";
}

std::optional<Outcome> parse_outcome(std::string_view s) {
    for (Outcome o : {Outcome::Converged, Outcome::Underdetermined, Outcome::Infeasible, Outcome::Diverged,
                      Outcome::NoGuess}) {
        if (s == to_string(o)) return o;
    }
    return std::nullopt;
}

Localizer::Localizer(const PairGraph& graph, const SensorTable& sensors, LocateConfig cfg)
    : graph_(graph), sensors_(sensors), cfg_(cfg) {}

namespace {

bool in_altitude_band(const LocalizationResult& r) {
    return r.geo.altitude_m >= kMinRecordAltitude && r.geo.altitude_m <= kMaxRecordAltitude;
}

}  // namespace

LocateOutcome Localizer::locate(const TransmissionRecord& record) {
    LocateOutcome out;
    out.record_id = record.record_id;
    out.aircraft_id = record.aircraft_id;
    out.residual_rms_s = std::numeric_limits<double>::quiet_NaN();

    if (record.measurements.size() < std::max<std::size_t>(cfg_.min_receivers, 2)) {
        out.outcome = Outcome::Underdetermined;
        return out;
    }

    // Candidate starting points: the aircraft's last estimate, the receiver
    // centroid, and the centroid lifted to cruise altitude (escapes the
    // below-ground mirror of the TDoA solution).
    std::vector<EcefPosition> guesses;
    const auto cached = cache_.find(record.aircraft_id);
    std::optional<PreviousEstimate> previous;
    if (cached != cache_.end()) previous = cached->second;
    try {
        const EcefPosition first = initial_guess(record, sensors_, previous, cfg_.guess);
        guesses.push_back(first);
        const EcefPosition centroid = initial_guess(record, sensors_, std::nullopt, cfg_.guess);
        if (!(centroid == first)) guesses.push_back(centroid);
        GeoPosition lifted = ecef_to_geodetic(centroid);
        lifted.altitude_m = std::max(lifted.altitude_m, 10000.0);
        guesses.push_back(geodetic_to_ecef(lifted));
    } catch (const NoGuessError&) {
        out.outcome = Outcome::NoGuess;
        return out;
    }

    std::optional<LocalizationResult> first_result;
    for (const auto& g : guesses) {
        const AssembledEquations assembled = assemble_equations(record, graph_, sensors_, cfg_.assemble, g);
        if (assembled.equations.size() < 3) {
            out.n_equations = assembled.equations.size();
            out.outcome = assembled.infeasible > 0 ? Outcome::Infeasible : Outcome::Underdetermined;
            return out;
        }
        LocalizationResult r = solve_position(assembled.equations, g, cfg_.solver, record.baro_altitude_m);
        if (r.status == SolveStatus::Converged && in_altitude_band(r)) {
            // Offsets were predicted at emission times implied by the guess;
            // repeat once with the emission times implied by the solution.
            const AssembledEquations refined =
                assemble_equations(record, graph_, sensors_, cfg_.assemble, r.position);
            if (refined.equations.size() >= 3) {
                LocalizationResult again =
                    solve_position(refined.equations, r.position, cfg_.solver, record.baro_altitude_m);
                if (again.status == SolveStatus::Converged && in_altitude_band(again)) r = std::move(again);
            }
            out.outcome = Outcome::Converged;
            out.n_equations = r.n_equations;
            out.rank = r.rank;
            out.residual_rms_s = r.residual_rms_s;
            cache_[record.aircraft_id] = {r.position, record.server_time_us};
            out.result = std::move(r);
            return out;
        }
        if (!first_result) first_result = std::move(r);
        if (first_result->status == SolveStatus::Underdetermined) break;  // geometry, not the start point
    }

    out.n_equations = first_result->n_equations;
    out.rank = first_result->rank;
    out.residual_rms_s = first_result->residual_rms_s;
    out.outcome = first_result->status == SolveStatus::Underdetermined ? Outcome::Underdetermined : Outcome::Diverged;
    out.result = std::move(first_result);
    return out;
}

ParallelLocalizer::ParallelLocalizer(const PairGraph& graph, const SensorTable& sensors, LocateConfig cfg,
                                     std::size_t workers, std::size_t batch_size)
    : batch_size_(std::max<std::size_t>(batch_size, 1)) {
    workers = std::max<std::size_t>(workers, 1);
    workers_.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) workers_.emplace_back(graph, sensors, cfg);
}

std::vector<LocateOutcome> ParallelLocalizer::process(const std::vector<TransmissionRecord>& batch) {
    const std::size_t n = workers_.size();
    std::vector<std::vector<std::size_t>> parts(n);
    for (std::size_t k = 0; k < batch.size(); ++k) {
        parts[splitmix64(static_cast<std::uint64_t>(batch[k].aircraft_id)) % n].push_back(k);
    }
    std::vector<LocateOutcome> out(batch.size());
    const auto work = [&](std::size_t w) {
        for (std::size_t k : parts[w]) out[k] = workers_[w].locate(batch[k]);
    };
    if (n == 1) {
        work(0);
    } else {
        std::vector<std::jthread> threads;
        threads.reserve(n);
        for (std::size_t w = 0; w < n; ++w) threads.emplace_back(work, w);
    }
    std::vector<std::size_t> order(out.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return out[a].record_id < out[b].record_id; });
    std::vector<LocateOutcome> sorted;
    sorted.reserve(out.size());
    for (std::size_t k : order) sorted.push_back(std::move(out[k]));
    return sorted;
}

std::size_t localize_stream(const RecordSource& source, const OutcomeSink& sink, const PairGraph& graph,
                            const SensorTable& sensors, const LocateConfig& cfg, std::size_t workers) {
    ParallelLocalizer pool(graph, sensors, cfg, workers);
    std::vector<TransmissionRecord> batch;
    std::size_t total = 0;
    bool more = true;
    while (more) {
        batch.clear();
        while (batch.size() < pool.batch_size()) {
            auto r = source();
            if (!r) {
                more = false;
                break;
            }
            batch.push_back(std::move(*r));
        }
        if (batch.empty()) break;
        total += batch.size();
        for (const auto& o : pool.process(batch)) sink(o);
    }
    return total;
}

}  // namespace pairloc
