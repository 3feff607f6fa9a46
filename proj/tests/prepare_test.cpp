#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "pairloc/error.hpp"
#include "pairloc/prepare.hpp"
#include "pairloc/synth.hpp"

namespace {

using namespace pairloc;

std::vector<double> toas(const std::vector<UnwrappedTime>& u) {
    std::vector<double> out;
    for (const auto& x : u) out.push_back(x.toa_ns);
    return out;
}

TEST(UnwrapCounter, SingleForcedWrap) {
    std::vector<RawSample> s;
    for (std::uint64_t c : {10u, 20u, 5u}) s.push_back({1, c, 1e9, 0, std::nullopt});
    EXPECT_EQ(toas(unwrap_counter(s, 30)), (std::vector<double>{10, 20, 35}));
}

TEST(UnwrapCounter, IncreasingCountersScaleIdentically) {
    std::vector<RawSample> s;
    for (std::uint64_t c : {1u, 2u, 7u, 12u}) s.push_back({1, c, 1e8, 0, std::nullopt});
    EXPECT_EQ(toas(unwrap_counter(s, 1u << 20)), (std::vector<double>{10, 20, 70, 120}));
}

TEST(UnwrapCounter, LargeGapWithoutAnchorIsAmbiguous) {
    std::vector<RawSample> s = {{1, 10, 1e9, 0, std::nullopt}, {1, 80, 1e9, 0, std::nullopt}};
    const auto u = unwrap_counter(s, 100);
    EXPECT_EQ(u[0].status, UnwrapStatus::Ok);
    EXPECT_EQ(u[1].status, UnwrapStatus::Ambiguous);
    EXPECT_TRUE(std::isnan(u[1].toa_ns));
}

TEST(UnwrapCounter, SensorsAreIndependent) {
    std::vector<RawSample> s = {{1, 10, 1e9, 0, std::nullopt}, {2, 25, 1e9, 0, std::nullopt},
                                {1, 20, 1e9, 0, std::nullopt}, {2, 28, 1e9, 0, std::nullopt},
                                {1, 5, 1e9, 0, std::nullopt}};
    EXPECT_EQ(toas(unwrap_counter(s, 30)), (std::vector<double>{10, 25, 20, 28, 35}));
}

// Generator knows the true wrap count of each sample; server times carry
// +-200 ms of jitter, well inside half of the 2^32 / 1 MHz period.
TEST(UnwrapCounter, RecoversKnownWrapsWithJitteredServerTimes) {
    const std::uint64_t modulus = 1ull << 32;
    const double hz = 1e6;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> step_s(0.0, 3000.0), jitter_s(-0.2, 0.2);
    std::vector<RawSample> samples;
    std::vector<std::int64_t> true_wraps;
    double t_s = 0.0;
    for (int k = 0; k < 10000; ++k) {
        t_s += step_s(rng);
        const auto counts = static_cast<std::uint64_t>(t_s * hz);
        samples.push_back({3, counts % modulus, hz, 0, (t_s + jitter_s(rng)) * 1e6});
        true_wraps.push_back(static_cast<std::int64_t>(counts / modulus));
    }
    const auto u = unwrap_counter(samples, modulus);
    ASSERT_EQ(u.size(), samples.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
        ASSERT_EQ(u[k].status, UnwrapStatus::Ok) << k;
        ASSERT_EQ(u[k].wraps, true_wraps[k]) << k;
    }
}

TEST(UnwrapCounter, MonotonePerSensor) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::uint64_t> step(0, 400);
    std::vector<RawSample> s;
    std::uint64_t c[3] = {0, 0, 0};
    for (int k = 0; k < 3000; ++k) {
        const int id = k % 3;
        c[id] += step(rng);
        s.push_back({id, c[id] % 1000, 1e9, 0, std::nullopt});
    }
    const auto u = unwrap_counter(s, 1000);
    std::map<SensorId, double> last;
    for (std::size_t k = 0; k < u.size(); ++k) {
        if (u[k].status != UnwrapStatus::Ok) continue;
        const auto it = last.find(s[k].sensor_id);
        if (it != last.end()) EXPECT_GE(u[k].toa_ns, it->second);
        last[s[k].sensor_id] = u[k].toa_ns;
    }
}

Reception rec(SensorId s, double t, std::uint64_t key) {
    Reception r;
    r.sensor_id = s;
    r.toa_ns = t;
    r.payload_key = key;
    return r;
}

TEST(Deduplicate, TwoSamplesWithinWindowFormOneRecord) {
    const std::vector<Reception> in = {rec(1, 1e9, 77), rec(2, 1e9 + 100e3, 77)};
    const auto out = deduplicate(in, {.window_ns = 2e6});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].measurements.size(), 2u);
}

TEST(Deduplicate, LoneSampleIsDropped) {
    const std::vector<Reception> in = {rec(1, 1e9, 77)};
    EXPECT_TRUE(deduplicate(in).empty());
}

TEST(Deduplicate, OutsideWindowSplits) {
    const std::vector<Reception> in = {rec(1, 1e9, 77), rec(2, 1e9 + 1e5, 77), rec(3, 1e9 + 3e6, 77),
                                       rec(4, 1e9 + 3.1e6, 77)};
    EXPECT_EQ(deduplicate(in).size(), 2u);
}

TEST(Deduplicate, SyntheticWorldGroupsMatchEmissions) {
    const Scenario sc = reference_scenario("noisy-grid", {.duration_s = 60.0});
    const SyntheticWorld w = generate(sc);
    const auto receptions = to_receptions(w);
    Deduplicator d;
    std::vector<TransmissionRecord> out;
    for (const auto& r : receptions) {
        d.push(r);
        for (auto& x : d.drain_ready()) out.push_back(std::move(x));
    }
    for (auto& x : d.finish()) out.push_back(std::move(x));

    std::map<std::pair<SensorId, double>, RecordId> origin;
    for (const auto& r : w.records) {
        for (const auto& m : r.measurements) origin[{m.sensor_id, m.toa_ns}] = r.record_id;
    }
    EXPECT_EQ(out.size(), w.records.size());
    std::size_t overgrouped = 0;
    for (const auto& r : out) {
        std::set<SensorId> sensors;
        std::set<RecordId> sources;
        for (const auto& m : r.measurements) {
            EXPECT_TRUE(sensors.insert(m.sensor_id).second);
            sources.insert(origin.at({m.sensor_id, m.toa_ns}));
        }
        overgrouped += sources.size() > 1 ? 1 : 0;
    }
    EXPECT_LT(static_cast<double>(overgrouped) / out.size(), 1e-3);
}

TEST(Deduplicate, NeverTwoMeasurementsFromOneSensor) {
    std::vector<Reception> in;
    for (int k = 0; k < 50; ++k) in.push_back(rec(k % 4, 1e9 + k * 1e4, 5));
    for (const auto& r : deduplicate(in)) {
        std::set<SensorId> seen;
        for (const auto& m : r.measurements) EXPECT_TRUE(seen.insert(m.sensor_id).second);
    }
}

struct VerifyWorld {
    SensorMap sensors;
    TransmissionRecord record;
};

VerifyWorld verify_world(bool good3) {
    VerifyWorld w;
    const std::vector<SensorInfo> infos = {{1, {47.0, 8.0, 500}, Indicator::True},
                                           {2, {47.6, 8.0, 500}, Indicator::True},
                                           {3, {47.0, 9.0, 500}, good3 ? Indicator::True : Indicator::False}};
    w.sensors = index_sensors(infos);
    const GeoPosition truth{47.2, 8.4, 10000};
    const auto p = geodetic_to_ecef(truth);
    w.record.record_id = 1;
    w.record.truth = truth;
    for (const auto& s : infos) {
        w.record.measurements.push_back({s.sensor_id, 1e9 + propagation_delay(geodetic_to_ecef(s.position), p) * 1e9, 0});
    }
    return w;
}

TEST(VerifyConsistency, ExactTimestampsAreConsistent) {
    const auto w = verify_world(true);
    const auto rep = verify_consistency(w.record, w.sensors);
    EXPECT_EQ(rep.verdict, Verdict::Consistent);
    EXPECT_LT(rep.max_abs_residual_s, 1e-12);
    EXPECT_EQ(rep.pairs, 3u);
}

TEST(VerifyConsistency, DisplacedTruthIsInconsistent) {
    auto w = verify_world(true);
    // 10 km east of the true position.
    const GeoPosition t = *w.record.truth;
    const auto moved = offset_enu(geodetic_to_ecef(t), t, 10e3, 0.0, 0.0);
    w.record.truth = ecef_to_geodetic(moved);
    const auto rep = verify_consistency(w.record, w.sensors);

    // Independent geometric residual for the widest pair.
    double expected = 0.0;
    const auto p_true = geodetic_to_ecef(t);
    for (SensorId i : {1, 2, 3}) {
        for (SensorId j : {1, 2, 3}) {
            const auto si = geodetic_to_ecef(w.sensors.at(i).position);
            const auto sj = geodetic_to_ecef(w.sensors.at(j).position);
            const double r = (distance(si, moved) - distance(sj, moved) - distance(si, p_true) + distance(sj, p_true)) /
                             kSpeedOfLight;
            expected = std::max(expected, std::abs(r));
        }
    }
    EXPECT_EQ(rep.verdict, Verdict::Inconsistent);
    EXPECT_GT(rep.max_abs_residual_s, 10e-6);
    EXPECT_NEAR(rep.max_abs_residual_s, expected, 1e-12);
}

TEST(VerifyConsistency, OneGoodSensorIsNotVerifiable) {
    auto w = verify_world(false);
    w.sensors.at(2).good = Indicator::Unknown;
    EXPECT_EQ(verify_consistency(w.record, w.sensors).verdict, Verdict::NotVerifiable);
}

TEST(VerifyConsistency, MissingTruthIsNotVerifiable) {
    auto w = verify_world(true);
    w.record.truth.reset();
    EXPECT_EQ(verify_consistency(w.record, w.sensors).verdict, Verdict::NotVerifiable);
}

std::vector<TransmissionRecord> numbered(int n) {
    std::vector<TransmissionRecord> out(n);
    for (int k = 0; k < n; ++k) {
        out[k].record_id = k + 1;
        out[k].truth = GeoPosition{47.0, 8.0, 1000.0 + k};
        out[k].measurements = {{1, 1.0, 0}, {2, 2.0, 0}};
    }
    return out;
}

TEST(MaskForEval, DeterministicDisjointAndComplete) {
    const auto recs = numbered(1000);
    const auto a = mask_for_eval(recs, 0.5, 42);
    const auto b = mask_for_eval(recs, 0.5, 42);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.eval, b.eval);
    EXPECT_EQ(a.answer_key, b.answer_key);

    std::set<RecordId> train, eval;
    for (const auto& r : a.train) train.insert(r.record_id);
    for (const auto& r : a.eval) {
        eval.insert(r.record_id);
        EXPECT_FALSE(r.truth);
    }
    for (RecordId id : eval) EXPECT_FALSE(train.count(id));
    EXPECT_EQ(train.size() + eval.size(), recs.size());
    EXPECT_EQ(a.answer_key.size(), a.eval.size());
    for (std::size_t k = 0; k < a.eval.size(); ++k) {
        EXPECT_EQ(a.answer_key[k].record_id, a.eval[k].record_id);
        EXPECT_EQ(a.answer_key[k].position, *recs[a.eval[k].record_id - 1].truth);
    }
    EXPECT_NEAR(static_cast<double>(eval.size()), 500.0, 60.0);
}

TEST(MaskForEval, SeedChangesSelection) {
    const auto recs = numbered(1000);
    EXPECT_NE(mask_for_eval(recs, 0.5, 1).answer_key, mask_for_eval(recs, 0.5, 2).answer_key);
}

TEST(MaskForEval, RecordsWithoutTruthStayInTraining) {
    auto recs = numbered(200);
    for (auto& r : recs) r.truth.reset();
    const auto s = mask_for_eval(recs, 0.5, 1);
    EXPECT_EQ(s.train.size(), 200u);
    EXPECT_TRUE(s.eval.empty());
}

TEST(MaskForEval, FractionMustBeOpenInterval) {
    const auto recs = numbered(10);
    EXPECT_THROW(mask_for_eval(recs, 0.0, 1), ConfigError);
    EXPECT_THROW(mask_for_eval(recs, 1.0, 1), ConfigError);
}

}  // namespace
