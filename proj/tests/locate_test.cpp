#include <cmath>
#include <random>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "oracle/finite_difference.hpp"
#include "pairloc/error.hpp"
#include "pairloc/locate.hpp"
#include "pairloc/synth.hpp"
#include "support/pipeline.hpp"

namespace {

using namespace pairloc;

// Equation for an emitter at p with receiver clock errors e_i, e_j (ns).
PairEquation exact_equation(SensorId i, SensorId j, const EcefPosition& si, const EcefPosition& sj,
                            const EcefPosition& p, double e_i_ns = 0.0, double e_j_ns = 0.0,
                            double var_s2 = 2.5e-15) {
    PairEquation eq;
    eq.pair = {i, j};
    eq.s_i = si;
    eq.s_j = sj;
    const double t_i = propagation_delay(si, p) + e_i_ns * 1e-9;
    const double t_j = propagation_delay(sj, p) + e_j_ns * 1e-9;
    eq.tdoa_measured_s = t_i - t_j;
    eq.offset_s = -(e_i_ns - e_j_ns) * 1e-9;
    eq.offset_variance_s2 = var_s2;
    eq.toa_variance_i_s2 = var_s2;
    eq.toa_variance_j_s2 = var_s2;
    return eq;
}

const GeoPosition kOrigin{47.0, 8.0, 0.0};

EcefPosition enu(double e_km, double n_km, double up_m) {
    return offset_enu(geodetic_to_ecef(kOrigin), kOrigin, e_km * 1e3, n_km * 1e3, up_m);
}

struct Constellation {
    std::vector<SensorId> ids;
    std::vector<EcefPosition> sites;
};

std::vector<PairEquation> all_pairs(const Constellation& c, const EcefPosition& p, const std::vector<double>& err_ns) {
    std::vector<PairEquation> eqs;
    for (std::size_t a = 0; a < c.ids.size(); ++a) {
        for (std::size_t b = a + 1; b < c.ids.size(); ++b) {
            eqs.push_back(exact_equation(c.ids[a], c.ids[b], c.sites[a], c.sites[b], p, err_ns[a], err_ns[b]));
        }
    }
    return eqs;
}

EcefPosition centroid(const std::vector<EcefPosition>& pts) {
    Eigen::Vector3d s = Eigen::Vector3d::Zero();
    for (const auto& p : pts) s += p.vec();
    return EcefPosition(s / static_cast<double>(pts.size()));
}

TEST(Residual, ZeroAtTruthInExactWorld) {
    const Scenario sc = reference_scenario("exact-tetra", {.zero_noise = true, .duration_s = 30.0});
    const SensorTable sensors(sc.sensor_infos());
    const SyntheticWorld w = generate(sc);
    for (const auto& t : w.truth_log) {
        for (SensorId i = 1; i <= 4; ++i) {
            for (SensorId j = i + 1; j <= 4; ++j) {
                const auto eq = exact_equation(i, j, sensors.find(i)->ecef, sensors.find(j)->ecef, t.ecef, 1500.0 * i,
                                               -700.0 * j);
                EXPECT_LT(std::abs(residual(eq, t.ecef)), 1e-12);
            }
        }
    }
}

TEST(Residual, EquidistantZeroOffsetEqualTimes) {
    PairEquation eq;
    eq.s_i = enu(-50, 0, 0);
    eq.s_j = enu(50, 0, 0);
    EXPECT_LT(std::abs(residual(eq, enu(0, 30, 9000))), 1e-15);
}

TEST(Residual, DisplacementAlongBaselineMatchesGeometry) {
    const Eigen::Vector3d a = enu(-50, 0, 0).vec(), b = enu(50, 0, 0).vec();
    const Eigen::Vector3d mid = 0.5 * (a + b), dir = (b - a).normalized();
    PairEquation eq;
    eq.s_i = EcefPosition(a);
    eq.s_j = EcefPosition(b);
    // Moving 1 km toward s_j lengthens the path to s_i by 1 km and shortens
    // the path to s_j by 1 km.
    EXPECT_NEAR(residual(eq, EcefPosition(mid + 1000.0 * dir)), 2000.0 / kSpeedOfLight, 1e-12);
    EXPECT_NEAR(residual(eq, EcefPosition(mid - 1000.0 * dir)), -2000.0 / kSpeedOfLight, 1e-12);
}

TEST(JacobianRow, ParallelToBaselineOnBisectorPlane) {
    PairEquation eq;
    eq.s_i = enu(-50, 0, 0);
    eq.s_j = enu(50, 0, 0);
    const Eigen::Vector3d baseline = eq.s_j.vec() - eq.s_i.vec();
    const EcefPosition p = enu(0, 40, 9000);
    const Eigen::Vector3d row = jacobian_row(eq, p);
    EXPECT_LT(row.normalized().cross(baseline.normalized()).norm(), 1e-9);
    // u_i - u_j = (s_j - s_i) / d on the bisector.
    EXPECT_NEAR(row.norm(), baseline.norm() / (distance(p, eq.s_i) * kSpeedOfLight), 1e-18);
}

TEST(JacobianRow, CoincidentWithSensorIsSingular) {
    PairEquation eq;
    eq.s_i = enu(-50, 0, 0);
    eq.s_j = enu(50, 0, 0);
    EXPECT_THROW(jacobian_row(eq, eq.s_i), SingularityError);
    EXPECT_THROW(jacobian_row(eq, eq.s_j), SingularityError);
}

TEST(JacobianRow, MatchesCentralDifferencesAndIsBounded) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> km(-200, 200), alt(0, 12000);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
        PairEquation eq;
        eq.s_i = enu(km(rng), km(rng), 300);
        eq.s_j = enu(km(rng), km(rng), 300);
        const EcefPosition p = enu(km(rng), km(rng), alt(rng));
        const auto f = [&](double x, double y, double z) { return residual(eq, {x, y, z}); };
        const auto fd = oracle::central_gradient(f, p.x_m, p.y_m, p.z_m, 0.1);
        const Eigen::Vector3d row = jacobian_row(eq, p);
        const Eigen::Vector3d ref(fd[0], fd[1], fd[2]);
        worst = std::max(worst, (row - ref).norm() / ref.norm());
        EXPECT_LE(row.norm(), 2.0 / kSpeedOfLight);
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(Feasibility, BoundedByBaselineTravelTime) {
    PairEquation eq;
    eq.s_i = enu(0, 0, 0);
    eq.s_j = enu(30, 0, 0);
    const double baseline_s = distance(eq.s_i, eq.s_j) / kSpeedOfLight;
    eq.tdoa_measured_s = baseline_s + 4e-6;
    EXPECT_TRUE(is_feasible(eq, 5e-6));
    eq.tdoa_measured_s = 0.0;
    eq.offset_s = -(baseline_s + 6e-6);
    EXPECT_FALSE(is_feasible(eq, 5e-6));
}

class Assemble : public ::testing::Test {
protected:
    void SetUp() override {
        run_ = std::make_unique<testing_support::PipelineRun>(
            testing_support::run_pipeline(reference_scenario("exact-tetra", {.zero_noise = true, .duration_s = 60.0})));
    }
    std::unique_ptr<testing_support::PipelineRun> run_;
};

TEST_F(Assemble, OneEquationPerTrackedPair) {
    const auto& r = run_->split.eval.front();
    const auto a = assemble_equations(r, run_->graph, *run_->sensors);
    EXPECT_EQ(a.equations.size(), 6u);
    EXPECT_EQ(a.untracked, 0u);
    for (const auto& eq : a.equations) {
        EXPECT_LT(eq.pair.i, eq.pair.j);
        EXPECT_TRUE(is_feasible(eq, 5e-6));
    }
}

TEST_F(Assemble, WildClockIsDroppedAsInfeasible) {
    auto r = run_->split.eval.front();
    for (auto& m : r.measurements) {
        if (m.sensor_id == 3) m.toa_ns += 1e6;  // 1 ms, far beyond any baseline here
    }
    const auto a = assemble_equations(r, run_->graph, *run_->sensors);
    EXPECT_EQ(a.infeasible, 3u);
    EXPECT_EQ(a.equations.size(), 3u);
    for (const auto& eq : a.equations) EXPECT_TRUE(eq.pair.i != 3 && eq.pair.j != 3);
}

TEST_F(Assemble, UntrackedPairGivesNothing) {
    TransmissionRecord r;
    r.record_id = 1;
    r.measurements = {{1, 1e9, 0}, {77, 1e9, 0}};
    const auto a = assemble_equations(r, run_->graph, *run_->sensors);
    EXPECT_TRUE(a.equations.empty());
    EXPECT_EQ(a.unknown_sensor, 1u);
}

TEST(InitialGuess, SingleReceiverIsItsPosition) {
    const std::vector<SensorInfo> infos = {{1, {47.0, 8.0, 400.0}, Indicator::True},
                                           {2, {47.5, 8.5, 400.0}, Indicator::True}};
    const SensorTable sensors(infos);
    TransmissionRecord r;
    r.measurements = {{1, 0, -3}};
    EXPECT_LT(distance(initial_guess(r, sensors, std::nullopt), sensors.find(1)->ecef), 1e-6);
}

TEST(InitialGuess, EqualRssiGivesEcefMidpoint) {
    const std::vector<SensorInfo> infos = {{1, {47.0, 8.0, 400.0}, Indicator::True},
                                           {2, {47.3, 8.3, 400.0}, Indicator::True}};
    const SensorTable sensors(infos);
    TransmissionRecord r;
    r.measurements = {{1, 0, 5}, {2, 0, 5}};
    const Eigen::Vector3d mid = 0.5 * (sensors.find(1)->ecef.vec() + sensors.find(2)->ecef.vec());
    EXPECT_LT((initial_guess(r, sensors, std::nullopt).vec() - mid).norm(), 1e-6);
}

TEST(InitialGuess, RssiWeightsPullTowardStrongerReceiver) {
    const std::vector<SensorInfo> infos = {{1, {47.0, 8.0, 400.0}, Indicator::True},
                                           {2, {47.3, 8.3, 400.0}, Indicator::True}};
    const SensorTable sensors(infos);
    TransmissionRecord r;
    r.measurements = {{1, 0, 20}, {2, 0, 0}};  // weights 10 and 1
    const Eigen::Vector3d expect = (10.0 * sensors.find(1)->ecef.vec() + sensors.find(2)->ecef.vec()) / 11.0;
    EXPECT_LT((initial_guess(r, sensors, std::nullopt).vec() - expect).norm(), 1e-6);
}

TEST(InitialGuess, AltitudeFloorLiftsLowCentroid) {
    const std::vector<SensorInfo> infos = {{1, {47.0, 8.0, 0.0}, Indicator::True},
                                           {2, {47.0, 12.0, 0.0}, Indicator::True}};
    const SensorTable sensors(infos);
    TransmissionRecord r;
    r.measurements = {{1, 0, 0}, {2, 0, 0}};
    EXPECT_NEAR(ecef_to_geodetic(initial_guess(r, sensors, std::nullopt)).altitude_m, 0.0, 1e-6);
}

TEST(InitialGuess, FreshPreviousVerbatimStaleIgnored) {
    const std::vector<SensorInfo> infos = {{1, {47.0, 8.0, 400.0}, Indicator::True}};
    const SensorTable sensors(infos);
    TransmissionRecord r;
    r.server_time_us = 100e6;
    r.measurements = {{1, 0, 0}};
    const PreviousEstimate fresh{{4.1e6, 6e5, 4.8e6}, 95e6};
    EXPECT_EQ(initial_guess(r, sensors, fresh), fresh.position);
    const PreviousEstimate stale{{4.1e6, 6e5, 4.8e6}, 80e6};
    EXPECT_LT(distance(initial_guess(r, sensors, stale), sensors.find(1)->ecef), 1e-6);
}

TEST(InitialGuess, NoKnownReceiverThrows) {
    const SensorTable sensors;
    TransmissionRecord r;
    r.measurements = {{1, 0, 0}, {2, 0, 0}};
    EXPECT_THROW(initial_guess(r, sensors, std::nullopt), NoGuessError);
}

Constellation tetra() {
    return {{1, 2, 3, 4}, {enu(0, 0, 400), enu(60, 0, 900), enu(-30, 52, 250), enu(-30, -52, 1200)}};
}

TEST(Solve, ExactTetraConvergesFromCentroid) {
    const Constellation c = tetra();
    const EcefPosition truth = enu(12, -20, 9500);
    const auto eqs = all_pairs(c, truth, {0, 1500, -2500, 750000});
    const auto res = solve_position(eqs, centroid(c.sites));
    EXPECT_EQ(res.status, SolveStatus::Converged);
    EXPECT_LT(distance(res.position, truth), 1e-3);
    EXPECT_LE(res.iterations, 10);
    EXPECT_EQ(res.rank, 3);
    EXPECT_TRUE(std::isfinite(res.residual_rms_s));
}

TEST(Solve, CollinearSensorsAreUnderdetermined) {
    Eigen::Vector3d a = enu(-80, 0, 0).vec(), b = enu(80, 0, 0).vec();
    Constellation c;
    for (int k = 0; k < 5; ++k) {
        c.ids.push_back(k + 1);
        c.sites.emplace_back(a + (b - a) * (k / 4.0));
    }
    const auto eqs = all_pairs(c, enu(10, 30, 9000), {0, 0, 0, 0, 0});
    const auto res = solve_position(eqs, enu(0, 5, 5000));
    EXPECT_EQ(res.status, SolveStatus::Underdetermined);
    EXPECT_LE(res.rank, 2);
}

TEST(Solve, NonFiniteInputDivergesWithoutThrowing) {
    const Constellation c = tetra();
    auto eqs = all_pairs(c, enu(0, 0, 9000), {0, 0, 0, 0});
    eqs[2].tdoa_measured_s = NAN;
    LocalizationResult res;
    EXPECT_NO_THROW(res = solve_position(eqs, centroid(c.sites)));
    EXPECT_EQ(res.status, SolveStatus::Diverged);
}

TEST(Solve, InconsistentEquationsDiverge) {
    const Constellation c = tetra();
    auto eqs = all_pairs(c, enu(0, 0, 9000), {0, 0, 0, 0});
    eqs[0].tdoa_measured_s += 50e-6;
    eqs[4].tdoa_measured_s -= 40e-6;
    EXPECT_EQ(solve_position(eqs, centroid(c.sites)).status, SolveStatus::Diverged);
}

TEST(Solve, WeightedCostNeverIncreasesAcrossAcceptedSteps) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> noise(0.0, 200.0);
    std::uniform_real_distribution<double> km(-100, 100);
    Constellation c = tetra();
    c.ids.push_back(5);
    c.sites.push_back(enu(90, 70, 300));
    for (int k = 0; k < 100; ++k) {
        const EcefPosition truth = enu(km(rng), km(rng), 10000);
        std::vector<double> err(5);
        for (auto& e : err) e = noise(rng);
        const auto res = solve_position(all_pairs(c, truth, err), enu(km(rng), km(rng), 0));
        for (std::size_t i = 1; i < res.cost_history.size(); ++i) {
            EXPECT_LE(res.cost_history[i], res.cost_history[i - 1] * (1 + 1e-12));
        }
        if (res.status == SolveStatus::Converged) EXPECT_GE(res.rank, 3);
    }
}

// A pair that is the difference of two others adds no rank and, in an
// exact world, does not move the solution.
TEST(Solve, LinearlyDependentPairLeavesSolutionUnchanged) {
    const Scenario sc = reference_scenario("fig5");
    const SensorTable sensors(sc.sensor_infos());
    const auto s = [&](SensorId id) { return sensors.find(id)->ecef; };
    const EcefPosition truth = enu(110, 5, 9000);
    const std::vector<double> err = {0, 0, 0, 0, 0, 2500, -40000, 65000};
    const auto eq = [&](SensorId i, SensorId j) { return exact_equation(i, j, s(i), s(j), truth, err[i - 1], err[j - 1]); };
    const std::vector<PairEquation> base = {eq(5, 6), eq(6, 7), eq(6, 8)};
    auto extended = base;
    extended.push_back(eq(7, 8));
    const EcefPosition guess = enu(100, 0, 5000);
    const auto a = solve_position(base, guess);
    const auto b = solve_position(extended, guess);
    ASSERT_EQ(a.status, SolveStatus::Converged);
    ASSERT_EQ(b.status, SolveStatus::Converged);
    EXPECT_EQ(a.rank, b.rank);
    EXPECT_LT(distance(a.position, b.position), 1e-6);
    EXPECT_LT(distance(a.position, truth), 1e-3);
}

// sqrt(trace(cov)) against Monte-Carlo errors with 50 ns ToA noise.
TEST(Solve, PredictedCovarianceMatchesMonteCarlo) {
    Constellation c = tetra();
    c.ids.insert(c.ids.end(), {5, 6});
    c.sites.push_back(enu(90, 70, 300));
    c.sites.push_back(enu(-80, -10, 700));
    const EcefPosition truth = enu(10, 10, 10000);
    std::mt19937_64 rng(19);
    std::normal_distribution<double> noise(0.0, 50.0);
    std::vector<double> errors, predicted;
    for (int k = 0; k < 1000; ++k) {
        std::vector<double> err(6);
        for (auto& e : err) e = noise(rng);
        auto eqs = all_pairs(c, truth, err);
        // The equations see the noise as unknown: offsets are zero.
        for (auto& q : eqs) {
            q.offset_s = 0.0;
            q.offset_variance_s2 = 1e-20;
            q.toa_variance_i_s2 = q.toa_variance_j_s2 = 2500e-18;
        }
        const auto res = solve_position(eqs, centroid(c.sites));
        ASSERT_EQ(res.status, SolveStatus::Converged);
        errors.push_back(distance(res.position, truth));
        predicted.push_back(predicted_error_m(res));
    }
    const double ratio = testing_support::median(errors) / testing_support::median(predicted);
    EXPECT_GT(ratio, 0.5);
    EXPECT_LT(ratio, 2.0);
}

TEST(Solve, BaroPseudoRowUsedWhenVerticalIsWeak) {
    const Constellation c = tetra();
    const EcefPosition truth = enu(5, 5, 9000);
    const auto eqs = all_pairs(c, truth, {0, 0, 0, 0});
    SolverConfig cfg;
    cfg.baro_constraint = true;
    cfg.vdop_threshold = 0.0;
    const double baro = ecef_to_geodetic(truth).altitude_m;
    const auto res = solve_position(eqs, centroid(c.sites), cfg, baro);
    EXPECT_TRUE(res.baro_used);
    EXPECT_EQ(res.status, SolveStatus::Converged);
    EXPECT_LT(distance(res.position, truth), 1e-3);
    EXPECT_FALSE(solve_position(eqs, centroid(c.sites), {}, baro).baro_used);
}

TEST(Outcome, StringsRoundTrip) {
    for (Outcome o : {Outcome::Converged, Outcome::Underdetermined, Outcome::Infeasible, Outcome::Diverged,
                      Outcome::NoGuess}) {
        EXPECT_EQ(parse_outcome(to_string(o)), o);
    }
    EXPECT_FALSE(parse_outcome("bogus"));
}

TEST(Localizer, TwoReceiversAreUnderdetermined) {
    const auto run =
        testing_support::run_pipeline(reference_scenario("exact-tetra", {.zero_noise = true, .duration_s = 30.0}));
    Localizer loc(run.graph, *run.sensors);
    auto r = run.split.eval.front();
    r.measurements.resize(2);
    const auto o = loc.locate(r);
    EXPECT_EQ(o.outcome, Outcome::Underdetermined);
    EXPECT_FALSE(o.predicted());
}

TEST(Localizer, CollinearScenarioNeverPredicts) {
    const auto run = testing_support::run_pipeline(reference_scenario("collinear"));
    ASSERT_FALSE(run.outcomes.empty());
    for (const auto& o : run.outcomes) EXPECT_EQ(o.outcome, Outcome::Underdetermined);
}

TEST(Localizer, Fig5TargetUsesFourEquations) {
    const auto run = testing_support::run_pipeline(reference_scenario("fig5"));
    std::size_t seen = 0;
    for (const auto& o : run.outcomes) {
        if (o.aircraft_id != 504) continue;
        ++seen;
        EXPECT_EQ(o.n_equations, 4u);
        EXPECT_EQ(o.outcome, Outcome::Converged);
        EXPECT_EQ(o.rank, 3);
    }
    EXPECT_GT(seen, 0u);
}

TEST(Localizer, EveryPredictionIsConverged) {
    const auto run = testing_support::run_pipeline(reference_scenario("noisy-grid", {.jitter_sigma_ns = 200.0}));
    for (const auto& o : run.outcomes) {
        if (!o.predicted()) continue;
        ASSERT_TRUE(o.result);
        EXPECT_EQ(o.result->status, SolveStatus::Converged);
        EXPECT_TRUE(std::isfinite(o.result->residual_rms_s));
        EXPECT_GE(o.result->rank, 3);
    }
}

TEST(Localizer, CachesLastEstimatePerAircraft) {
    const auto run =
        testing_support::run_pipeline(reference_scenario("exact-tetra", {.zero_noise = true, .duration_s = 30.0}));
    Localizer loc(run.graph, *run.sensors);
    for (const auto& r : run.split.eval) loc.locate(r);
    EXPECT_EQ(loc.cached_aircraft(), 3u);
}

TEST(ParallelLocalizer, IdenticalAcrossWorkerCountsAndSortedById) {
    const Scenario sc = reference_scenario("noisy-grid", {.jitter_sigma_ns = 100.0, .duration_s = 120.0});
    const auto run = testing_support::run_pipeline(sc, 0.5, 1, {}, {}, 1);
    for (std::size_t workers : {2u, 3u, 8u}) {
        ParallelLocalizer loc(run.graph, *run.sensors, {}, workers, 97);
        std::vector<LocateOutcome> out;
        std::size_t next = 0;
        localize_stream(
            [&]() -> std::optional<TransmissionRecord> {
                if (next == run.split.eval.size()) return std::nullopt;
                return run.split.eval[next++];
            },
            [&](const LocateOutcome& o) { out.push_back(o); }, run.graph, *run.sensors, {}, workers);
        ASSERT_EQ(out.size(), run.outcomes.size());
        for (std::size_t k = 0; k < out.size(); ++k) {
            EXPECT_EQ(out[k].record_id, run.outcomes[k].record_id);
            EXPECT_EQ(out[k].outcome, run.outcomes[k].outcome);
            if (out[k].predicted()) EXPECT_EQ(out[k].result->position, run.outcomes[k].result->position);
        }
        const auto batch = loc.process(run.split.eval);
        for (std::size_t k = 1; k < batch.size(); ++k) EXPECT_LT(batch[k - 1].record_id, batch[k].record_id);
    }
}

}  // namespace
