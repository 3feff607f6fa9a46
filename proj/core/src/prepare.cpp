#include "pairloc/prepare.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <unordered_map>

#include "pairloc/error.hpp"

namespace pairloc {

namespace {

struct SensorClock {
    bool started = false;
    std::uint64_t last_counts = 0;  // unwrapped
    std::uint64_t last_counter = 0;
    std::int64_t wraps = 0;
    std::deque<double> offsets_ns;  // sensor time minus server time
    double offset_sum = 0.0;

    static constexpr std::size_t kWindow = 64;

    void remember_offset(double v) {
        offsets_ns.push_back(v);
        offset_sum += v;
        if (offsets_ns.size() > kWindow) {
            offset_sum -= offsets_ns.front();
            offsets_ns.pop_front();
        }
    }
};

}  // namespace

std::vector<UnwrappedTime> unwrap_counter(std::span<const RawSample> samples, std::uint64_t modulus) {
    if (modulus < 2) throw ConfigError("counter modulus must be at least 2");

    std::unordered_map<SensorId, SensorClock> clocks;
    std::vector<UnwrappedTime> out;
    out.reserve(samples.size());

    for (const auto& s : samples) {
        if (s.rolling_counter >= modulus) {
            throw IntegrityError("rolling counter " + std::to_string(s.rolling_counter) +
                                 " outside counter range of sensor " + std::to_string(s.sensor_id));
        }
        if (!(s.counter_hz > 0.0)) throw ConfigError("counter frequency must be positive");
        const double ns_per_count = 1e9 / s.counter_hz;

        auto& clk = clocks[s.sensor_id];
        UnwrappedTime result;

        if (!clk.started) {
            clk.started = true;
            clk.last_counts = s.rolling_counter;
            clk.last_counter = s.rolling_counter;
        } else if (s.server_time_us && !clk.offsets_ns.empty()) {
            const double offset = clk.offset_sum / static_cast<double>(clk.offsets_ns.size());
            const double predicted = (*s.server_time_us * 1e3 + offset) / ns_per_count;
            const double m = static_cast<double>(modulus);
            auto w = static_cast<std::int64_t>(
                std::llround((predicted - static_cast<double>(s.rolling_counter)) / m));
            // Monotone: never step behind the previous unwrapped value.
            std::int64_t w_min = clk.wraps;
            if (s.rolling_counter + static_cast<std::uint64_t>(w_min) * modulus < clk.last_counts) ++w_min;
            w = std::max(w, w_min);
            clk.wraps = w;
            clk.last_counts = s.rolling_counter + static_cast<std::uint64_t>(w) * modulus;
            clk.last_counter = s.rolling_counter;
        } else {
            const std::uint64_t forward = (s.rolling_counter + modulus - clk.last_counter) % modulus;
            if (forward > modulus / 2) {
                result.status = UnwrapStatus::Ambiguous;
                result.toa_ns = std::numeric_limits<double>::quiet_NaN();
                result.wraps = clk.wraps;
                out.push_back(result);
                continue;
            }
            if (s.rolling_counter < clk.last_counter) ++clk.wraps;
            clk.last_counts += forward;
            clk.last_counter = s.rolling_counter;
        }

        result.wraps = clk.wraps;
        result.toa_ns = static_cast<double>(clk.last_counts) * ns_per_count;
        if (s.server_time_us) clk.remember_offset(result.toa_ns - *s.server_time_us * 1e3);
        out.push_back(result);
    }
    return out;
}

Deduplicator::Deduplicator(DedupConfig cfg, RecordId first_id) : cfg_(cfg), next_id_(first_id) {}

void Deduplicator::push(const Reception& r) {
    newest_ns_ = std::max(newest_ns_, r.toa_ns);
    auto& groups = open_[r.payload_key];
    for (auto& g : groups) {
        if (std::abs(r.toa_ns - g.earliest_ns) > cfg_.window_ns) continue;
        const bool repeat = std::any_of(g.members.begin(), g.members.end(),
                                        [&](const Reception& m) { return m.sensor_id == r.sensor_id; });
        if (repeat) {
            ++repeats_;
            return;
        }
        g.members.push_back(r);
        g.earliest_ns = std::min(g.earliest_ns, r.toa_ns);
        return;
    }
    groups.push_back(Group{r.toa_ns, seq_++, {r}});
}

std::vector<TransmissionRecord> Deduplicator::drain_ready() {
    return close_before(newest_ns_ - cfg_.window_ns - cfg_.lateness_ns);
}

std::vector<TransmissionRecord> Deduplicator::finish() {
    return close_before(std::numeric_limits<double>::infinity());
}

std::vector<TransmissionRecord> Deduplicator::close_before(double cutoff_ns) {
    std::vector<Group> closed;
    for (auto it = open_.begin(); it != open_.end();) {
        auto& groups = it->second;
        auto split = std::stable_partition(groups.begin(), groups.end(),
                                           [&](const Group& g) { return g.earliest_ns >= cutoff_ns; });
        std::move(split, groups.end(), std::back_inserter(closed));
        groups.erase(split, groups.end());
        it = groups.empty() ? open_.erase(it) : std::next(it);
    }
    std::sort(closed.begin(), closed.end(), [](const Group& a, const Group& b) {
        return a.earliest_ns != b.earliest_ns ? a.earliest_ns < b.earliest_ns : a.seq < b.seq;
    });

    std::vector<TransmissionRecord> out;
    for (auto& g : closed) {
        if (g.members.size() < 2) {
            ++singletons_;
            continue;
        }
        TransmissionRecord rec;
        rec.record_id = next_id_++;
        rec.server_time_us = g.members.front().server_time_us;
        rec.aircraft_id = g.members.front().aircraft_id;
        for (const auto& m : g.members) {
            rec.server_time_us = std::min(rec.server_time_us, m.server_time_us);
            if (!rec.truth && m.reported_position) rec.truth = m.reported_position;
            if (!rec.baro_altitude_m && m.baro_altitude_m) rec.baro_altitude_m = m.baro_altitude_m;
            if (m.toa_ns < 0.0) rec.flagged = true;
            rec.measurements.push_back({m.sensor_id, m.toa_ns, m.rssi_db});
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<TransmissionRecord> deduplicate(std::span<const Reception> receptions, DedupConfig cfg) {
    Deduplicator d(cfg);
    std::vector<TransmissionRecord> out;
    for (const auto& r : receptions) {
        d.push(r);
    }
    auto rest = d.finish();
    std::move(rest.begin(), rest.end(), std::back_inserter(out));
    return out;
}

ConsistencyReport verify_consistency(const TransmissionRecord& record, const SensorMap& sensors,
                                     bool good_only, double threshold_s) {
    ConsistencyReport report;
    if (!record.truth) return report;

    struct Usable {
        EcefPosition position;
        double toa_ns;
    };
    std::vector<Usable> usable;
    for (const auto& m : record.measurements) {
        const auto it = sensors.find(m.sensor_id);
        if (it == sensors.end()) continue;
        if (good_only && it->second.good != Indicator::True) continue;
        usable.push_back({geodetic_to_ecef(it->second.position), m.toa_ns});
    }
    if (usable.size() < 2) return report;

    const EcefPosition p = geodetic_to_ecef(*record.truth);
    for (std::size_t i = 0; i < usable.size(); ++i) {
        for (std::size_t j = i + 1; j < usable.size(); ++j) {
            const double geometric = propagation_delay(usable[i].position, p) -
                                     propagation_delay(usable[j].position, p);
            const double measured = (usable[i].toa_ns - usable[j].toa_ns) * 1e-9;
            report.max_abs_residual_s = std::max(report.max_abs_residual_s, std::abs(geometric - measured));
            ++report.pairs;
        }
    }
    report.verdict = report.max_abs_residual_s < threshold_s ? Verdict::Consistent : Verdict::Inconsistent;
    return report;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool in_eval_split(RecordId id, double fraction, std::uint64_t seed) {
    const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(id) ^ splitmix64(seed));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return u < fraction;
}

MaskedSplit mask_for_eval(std::span<const TransmissionRecord> records, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ConfigError("mask fraction must lie strictly between 0 and 1");
    }
    MaskedSplit split;
    for (const auto& r : records) {
        if (r.truth && in_eval_split(r.record_id, fraction, seed)) {
            split.answer_key.push_back({r.record_id, *r.truth});
            TransmissionRecord hidden = r;
            hidden.truth.reset();
            split.eval.push_back(std::move(hidden));
        } else {
            split.train.push_back(r);
        }
    }
    return split;
}

}  // namespace pairloc
