#include "pairloc/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "pairloc/error.hpp"

namespace pairloc {

std::string to_string(Indicator v) {
    switch (v) {
        case Indicator::True: return "true";
        case Indicator::False: return "false";
        case Indicator::Unknown: return "";
    }
    return "";
}

std::optional<Indicator> parse_indicator(std::string_view s) {
    s = trim(s);
    if (s.empty()) return Indicator::Unknown;
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "true" || lower == "1") return Indicator::True;
    if (lower == "false" || lower == "0") return Indicator::False;
    if (lower == "nan" || lower == "null" || lower == "none") return Indicator::Unknown;
    return std::nullopt;
}

const Measurement* TransmissionRecord::find(SensorId id) const {
    for (const auto& m : measurements) {
        if (m.sensor_id == id) return &m;
    }
    return nullptr;
}

SensorMap index_sensors(const std::vector<SensorInfo>& sensors) {
    SensorMap map;
    map.reserve(sensors.size());
    for (const auto& s : sensors) map.emplace(s.sensor_id, s);
    return map;
}

AircraftMap index_aircraft(const std::vector<AircraftInfo>& aircraft) {
    AircraftMap map;
    map.reserve(aircraft.size());
    for (const auto& a : aircraft) map.emplace(a.aircraft_id, a);
    return map;
}

SensorTable::SensorTable(const std::vector<SensorInfo>& sensors) {
    sites_.reserve(sensors.size());
    for (const auto& s : sensors) sites_.emplace(s.sensor_id, SensorSite{s, geodetic_to_ecef(s.position)});
}

const SensorSite* SensorTable::find(SensorId id) const {
    const auto it = sites_.find(id);
    return it == sites_.end() ? nullptr : &it->second;
}

namespace {

// Resolves canonical names against a header, reporting every missing column
// at once so the user sees the full schema diff.
std::vector<std::optional<std::size_t>> bind_columns(const CsvReader& reader, const ColumnMap& map,
                                                     const std::vector<std::string>& canonical,
                                                     const std::vector<std::string>& optional) {
    std::vector<std::optional<std::size_t>> cols;
    std::string missing;
    for (const auto& name : canonical) {
        const auto actual = map.resolve(name);
        std::optional<std::size_t> idx;
        if (actual) idx = reader.column(*actual);
        const bool is_optional =
            std::find(optional.begin(), optional.end(), name) != optional.end() || !actual;
        if (!idx && !is_optional) {
            missing += (missing.empty() ? "" : ", ") + *actual;
        }
        cols.push_back(idx);
    }
    if (!missing.empty()) {
        std::string found;
        for (const auto& h : reader.header()) found += (found.empty() ? "" : ",") + h;
        throw IntegrityError(reader.source() + ": schema mismatch: missing column(s) " + missing +
                             "; header is [" + found + "]");
    }
    return cols;
}

double require_double(const CsvReader& r, const std::string& field, const char* name) {
    const auto v = parse_double(field);
    if (!v) r.fail(std::string("bad ") + name + " '" + field + "'");
    return *v;
}

std::int64_t require_int(const CsvReader& r, const std::string& field, const char* name) {
    const auto v = parse_int(field);
    if (!v) r.fail(std::string("bad ") + name + " '" + field + "'");
    return *v;
}

Indicator require_indicator(const CsvReader& r, const std::string& field) {
    const auto v = parse_indicator(field);
    if (!v) r.fail("bad indicator '" + field + "'");
    return *v;
}

std::optional<double> optional_double(const CsvReader& r, const std::vector<std::string>& fields,
                                      std::optional<std::size_t> col, const char* name) {
    if (!col) return std::nullopt;
    const std::string_view f = trim(fields[*col]);
    if (f.empty()) return std::nullopt;
    const auto v = parse_double(f);
    if (!v) r.fail(std::string("bad ") + name + " '" + std::string(f) + "'");
    if (std::isnan(*v)) return std::nullopt;
    return v;
}

}  // namespace

std::vector<SensorInfo> parse_sensors(std::istream& in, const std::string& source, const ColumnMap& map) {
    CsvReader reader(in, source);
    reader.read_header();
    const auto cols = bind_columns(reader, map, columns::kSensors, {"good"});

    std::vector<SensorInfo> out;
    std::unordered_set<SensorId> seen;
    std::vector<std::string> f;
    while (reader.next(f)) {
        SensorInfo s;
        s.sensor_id = require_int(reader, f[*cols[0]], "serial");
        s.position.latitude_deg = require_double(reader, f[*cols[1]], "latitude");
        s.position.longitude_deg = require_double(reader, f[*cols[2]], "longitude");
        s.position.altitude_m = require_double(reader, f[*cols[3]], "height");
        s.good = cols[4] ? require_indicator(reader, f[*cols[4]]) : Indicator::Unknown;
        if (!is_valid_coordinate(s.position)) reader.fail("sensor position out of range");
        if (!seen.insert(s.sensor_id).second) {
            throw IntegrityError(source + ":" + std::to_string(reader.line()) + ": duplicate sensor id " +
                                 std::to_string(s.sensor_id));
        }
        out.push_back(s);
    }
    return out;
}

std::vector<AircraftInfo> parse_aircraft(std::istream& in, const std::string& source, const ColumnMap& map) {
    CsvReader reader(in, source);
    reader.read_header();
    const auto cols = bind_columns(reader, map, columns::kAircraft, {"good"});

    std::vector<AircraftInfo> out;
    std::unordered_set<AircraftId> seen;
    std::vector<std::string> f;
    while (reader.next(f)) {
        AircraftInfo a;
        a.aircraft_id = require_int(reader, f[*cols[0]], "aircraft");
        a.position_quality = cols[1] ? require_indicator(reader, f[*cols[1]]) : Indicator::Unknown;
        if (!seen.insert(a.aircraft_id).second) {
            throw IntegrityError(source + ":" + std::to_string(reader.line()) + ": duplicate aircraft id " +
                                 std::to_string(a.aircraft_id));
        }
        out.push_back(a);
    }
    return out;
}

std::vector<SensorInfo> load_sensors(const std::string& path, const ColumnMap& map) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse_sensors(in, path, map);
}

std::vector<AircraftInfo> load_aircraft(const std::string& path, const ColumnMap& map) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse_aircraft(in, path, map);
}

TransmissionReader::TransmissionReader(std::istream& in, std::string source, const ColumnMap& map)
    : reader_(in, std::move(source)), map_(map) {
    reader_.read_header();
    const auto cols = bind_columns(reader_, map_, columns::kTransmissions,
                                   {"latitude", "longitude", "baroAltitude", "geoAltitude", "numMeasurements"});
    id_col_ = *cols[0];
    time_col_ = *cols[1];
    aircraft_col_ = *cols[2];
    lat_col_ = cols[3];
    lon_col_ = cols[4];
    baro_col_ = cols[5];
    geo_col_ = cols[6];
    num_col_ = cols[7] ? *cols[7] : static_cast<std::size_t>(-1);
    meas_col_ = *cols[8];

    if (const auto unit = map_.directive("server_time_unit")) {
        if (*unit == "s") server_time_scale_ = 1e6;
        else if (*unit == "ms") server_time_scale_ = 1e3;
        else if (*unit == "us") server_time_scale_ = 1.0;
        else throw ConfigError("unknown server_time_unit '" + *unit + "'");
    }
}

std::optional<TransmissionRecord> TransmissionReader::next() {
    if (!reader_.next(fields_)) return std::nullopt;
    const auto& f = fields_;

    TransmissionRecord r;
    r.record_id = require_int(reader_, f[id_col_], "id");
    r.server_time_us = require_double(reader_, f[time_col_], "timeAtServer") * server_time_scale_;
    r.aircraft_id = require_int(reader_, f[aircraft_col_], "aircraft");

    const auto lat = optional_double(reader_, f, lat_col_, "latitude");
    const auto lon = optional_double(reader_, f, lon_col_, "longitude");
    const auto geo = optional_double(reader_, f, geo_col_, "geoAltitude");
    r.baro_altitude_m = optional_double(reader_, f, baro_col_, "baroAltitude");
    if (lat && lon && geo) {
        r.truth = GeoPosition{*lat, *lon, *geo};
        if (!is_valid_coordinate(*r.truth)) reader_.fail("position out of range");
    }

    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(f[meas_col_]);
    } catch (const nlohmann::json::exception& e) {
        reader_.fail(std::string("bad measurements array: ") + e.what());
    }
    if (!arr.is_array()) reader_.fail("measurements must be a JSON array");
    r.measurements.reserve(arr.size());
    for (const auto& m : arr) {
        if (!m.is_array() || m.size() != 3 || !m[0].is_number_integer() || !m[1].is_number() ||
            !m[2].is_number()) {
            reader_.fail("measurement must be [sensorId, timestampNs, rssi]");
        }
        Measurement meas{m[0].get<SensorId>(), m[1].get<double>(), m[2].get<double>()};
        if (meas.toa_ns < 0.0) r.flagged = true;
        r.measurements.push_back(meas);
    }

    const std::string where = reader_.source() + ":" + std::to_string(reader_.line()) + ": record " +
                              std::to_string(r.record_id);
    if (num_col_ != static_cast<std::size_t>(-1)) {
        const auto declared = require_int(reader_, f[num_col_], "numMeasurements");
        if (declared != static_cast<std::int64_t>(r.measurements.size())) {
            throw IntegrityError(where + ": numMeasurements " + std::to_string(declared) + " but " +
                                 std::to_string(r.measurements.size()) + " listed");
        }
    }
    if (r.measurements.size() < 2) {
        throw IntegrityError(where + ": fewer than two measurements");
    }
    for (std::size_t i = 0; i < r.measurements.size(); ++i) {
        for (std::size_t j = i + 1; j < r.measurements.size(); ++j) {
            if (r.measurements[i].sensor_id == r.measurements[j].sensor_id) {
                throw IntegrityError(where + ": sensor " + std::to_string(r.measurements[i].sensor_id) +
                                     " listed twice");
            }
        }
    }

    ++records_;
    measurements_ += r.measurements.size();
    return r;
}

TransmissionFile::TransmissionFile(const std::string& path, const ColumnMap& map) {
    auto in = std::make_unique<std::ifstream>(path);
    if (!*in) throw IoError("cannot open " + path);
    in_ = std::move(in);
    reader_ = std::make_unique<TransmissionReader>(*in_, path, map);
}

std::vector<TransmissionRecord> parse_transmissions(std::istream& in, const std::string& source,
                                                    const ColumnMap& map) {
    TransmissionReader reader(in, source, map);
    std::vector<TransmissionRecord> out;
    while (auto r = reader.next()) out.push_back(std::move(*r));
    return out;
}

void write_sensors(std::ostream& out, const std::vector<SensorInfo>& sensors) {
    out << "serial,latitude,longitude,height,good\n";
    for (const auto& s : sensors) {
        out << s.sensor_id << ',' << format_double(s.position.latitude_deg) << ','
            << format_double(s.position.longitude_deg) << ',' << format_double(s.position.altitude_m) << ','
            << to_string(s.good) << '\n';
    }
}

void write_aircraft(std::ostream& out, const std::vector<AircraftInfo>& aircraft) {
    out << "aircraft,good\n";
    for (const auto& a : aircraft) {
        out << a.aircraft_id << ',' << to_string(a.position_quality) << '\n';
    }
}

TransmissionWriter::TransmissionWriter(std::ostream& out) : out_(out) {
    out_ << "id,timeAtServer,aircraft,latitude,longitude,baroAltitude,geoAltitude,numMeasurements,measurements\n";
}

void TransmissionWriter::write(const TransmissionRecord& r) {
    out_ << r.record_id << ',' << format_double(r.server_time_us) << ',' << r.aircraft_id << ',';
    if (r.truth) {
        out_ << format_double(r.truth->latitude_deg) << ',' << format_double(r.truth->longitude_deg) << ',';
    } else {
        out_ << ",,";
    }
    if (r.baro_altitude_m) out_ << format_double(*r.baro_altitude_m);
    out_ << ',';
    if (r.truth) out_ << format_double(r.truth->altitude_m);
    out_ << ',' << r.measurements.size() << ",\"[";
    for (std::size_t i = 0; i < r.measurements.size(); ++i) {
        const auto& m = r.measurements[i];
        if (i) out_ << ',';
        out_ << '[' << m.sensor_id << ',' << format_double(m.toa_ns) << ',' << format_double(m.rssi_db) << ']';
    }
    out_ << "]\"\n";
}

void write_transmissions(std::ostream& out, const std::vector<TransmissionRecord>& records) {
    TransmissionWriter w(out);
    for (const auto& r : records) w.write(r);
}

void write_answer_key(std::ostream& out, const std::vector<AnswerKeyEntry>& key) {
    out << "id,latitude,longitude,geoAltitude\n";
    for (const auto& e : key) {
        out << e.record_id << ',' << format_double(e.position.latitude_deg) << ','
            << format_double(e.position.longitude_deg) << ',' << format_double(e.position.altitude_m) << '\n';
    }
}

std::vector<AnswerKeyEntry> parse_answer_key(std::istream& in, const std::string& source) {
    CsvReader reader(in, source);
    reader.read_header();
    const auto cols = bind_columns(reader, {}, columns::kAnswerKey, {});
    std::vector<AnswerKeyEntry> out;
    std::vector<std::string> f;
    while (reader.next(f)) {
        AnswerKeyEntry e;
        e.record_id = require_int(reader, f[*cols[0]], "id");
        e.position.latitude_deg = require_double(reader, f[*cols[1]], "latitude");
        e.position.longitude_deg = require_double(reader, f[*cols[2]], "longitude");
        e.position.altitude_m = require_double(reader, f[*cols[3]], "geoAltitude");
        out.push_back(e);
    }
    return out;
}

void IngestStats::add(const TransmissionRecord& r) {
    ++records;
    measurements += r.measurements.size();
    if (r.truth) ++with_truth;
    if (r.flagged) ++flagged;
    ++redundancy[r.measurements.size()];
}

std::size_t IngestStats::max_redundancy() const {
    return redundancy.empty() ? 0 : redundancy.rbegin()->first;
}

double IngestStats::geometric_success_probability() const {
    if (records == 0) return std::nan("");
    const double mean = static_cast<double>(measurements) / static_cast<double>(records);
    return 1.0 / (mean - 1.0);
}

}  // namespace pairloc
