#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pairloc/csv.hpp"
#include "pairloc/geo.hpp"

namespace pairloc {

using SensorId = std::int64_t;
using AircraftId = std::int64_t;
using RecordId = std::int64_t;

// A missing indicator ("could not be verified") is distinct from false.
enum class Indicator { False, True, Unknown };

std::string to_string(Indicator v);
std::optional<Indicator> parse_indicator(std::string_view s);

struct SensorInfo {
    SensorId sensor_id = 0;
    GeoPosition position;
    Indicator good = Indicator::Unknown;  // GPS-synchronized and location-verified

    bool operator==(const SensorInfo&) const = default;
};

struct AircraftInfo {
    AircraftId aircraft_id = 0;
    Indicator position_quality = Indicator::Unknown;

    bool operator==(const AircraftInfo&) const = default;
};

struct Measurement {
    SensorId sensor_id = 0;
    double toa_ns = 0.0;  // sensor clock, ns since recording start
    double rssi_db = 0.0;  // uncalibrated

    bool operator==(const Measurement&) const = default;
};

struct TransmissionRecord {
    RecordId record_id = 0;
    double server_time_us = 0.0;
    AircraftId aircraft_id = 0;
    std::optional<GeoPosition> truth;  // geometric (WGS84) altitude
    std::optional<double> baro_altitude_m;
    std::vector<Measurement> measurements;
    bool flagged = false;  // carries a negative timestamp

    const Measurement* find(SensorId id) const;

    bool operator==(const TransmissionRecord&) const = default;
};

using SensorMap = std::unordered_map<SensorId, SensorInfo>;
using AircraftMap = std::unordered_map<AircraftId, AircraftInfo>;

SensorMap index_sensors(const std::vector<SensorInfo>& sensors);
AircraftMap index_aircraft(const std::vector<AircraftInfo>& aircraft);

// Sensor metadata with the ECEF position precomputed.
struct SensorSite {
    SensorInfo info;
    EcefPosition ecef;
};

class SensorTable {
public:
    SensorTable() = default;
    explicit SensorTable(const std::vector<SensorInfo>& sensors);

    const SensorSite* find(SensorId id) const;
    std::size_t size() const { return sites_.size(); }
    const std::unordered_map<SensorId, SensorSite>& sites() const { return sites_; }

private:
    std::unordered_map<SensorId, SensorSite> sites_;
};

// Canonical column names of the three subset files.
namespace columns {
inline const std::vector<std::string> kSensors = {"serial", "latitude", "longitude", "height", "good"};
inline const std::vector<std::string> kAircraft = {"aircraft", "good"};
inline const std::vector<std::string> kTransmissions = {
    "id", "timeAtServer", "aircraft", "latitude", "longitude",
    "baroAltitude", "geoAltitude", "numMeasurements", "measurements"};
inline const std::vector<std::string> kAnswerKey = {"id", "latitude", "longitude", "geoAltitude"};
}  // namespace columns

/// Parses a sensors file. Throws ParseError on malformed rows and
/// IntegrityError on a missing column or duplicate serial.
std::vector<SensorInfo> parse_sensors(std::istream& in, const std::string& source = "<sensors>",
                                      const ColumnMap& map = {});
std::vector<AircraftInfo> parse_aircraft(std::istream& in, const std::string& source = "<aircraft>",
                                         const ColumnMap& map = {});

std::vector<SensorInfo> load_sensors(const std::string& path, const ColumnMap& map = {});
std::vector<AircraftInfo> load_aircraft(const std::string& path, const ColumnMap& map = {});

/// Streaming reader for the transmissions file. Holds one row at a time.
class TransmissionReader {
public:
    TransmissionReader(std::istream& in, std::string source = "<transmissions>",
                       const ColumnMap& map = {});

    // Next record in file order, or nullopt at end of stream.
    // Throws IntegrityError for records with fewer than two measurements or
    // a repeated sensor, ParseError for malformed rows.
    std::optional<TransmissionRecord> next();

    std::size_t records_read() const { return records_; }
    std::size_t measurements_read() const { return measurements_; }

private:
    std::size_t require(const std::string& canonical) const;
    std::optional<std::size_t> optional_column(const std::string& canonical) const;

    CsvReader reader_;
    ColumnMap map_;
    double server_time_scale_ = 1.0;  // to microseconds
    std::vector<std::string> fields_;
    std::size_t id_col_, time_col_, aircraft_col_, num_col_, meas_col_;
    std::optional<std::size_t> lat_col_, lon_col_, baro_col_, geo_col_;
    std::size_t records_ = 0;
    std::size_t measurements_ = 0;
};

/// Owns the input stream for file-based reading.
class TransmissionFile {
public:
    explicit TransmissionFile(const std::string& path, const ColumnMap& map = {});
    TransmissionReader& reader() { return *reader_; }
    std::optional<TransmissionRecord> next() { return reader_->next(); }

private:
    std::unique_ptr<std::istream> in_;
    std::unique_ptr<TransmissionReader> reader_;
};

std::vector<TransmissionRecord> parse_transmissions(std::istream& in,
                                                    const std::string& source = "<transmissions>",
                                                    const ColumnMap& map = {});

void write_sensors(std::ostream& out, const std::vector<SensorInfo>& sensors);
void write_aircraft(std::ostream& out, const std::vector<AircraftInfo>& aircraft);

class TransmissionWriter {
public:
    explicit TransmissionWriter(std::ostream& out);
    void write(const TransmissionRecord& r);

private:
    std::ostream& out_;
};

void write_transmissions(std::ostream& out, const std::vector<TransmissionRecord>& records);

struct AnswerKeyEntry {
    RecordId record_id = 0;
    GeoPosition position;

    bool operator==(const AnswerKeyEntry&) const = default;
};

void write_answer_key(std::ostream& out, const std::vector<AnswerKeyEntry>& key);
std::vector<AnswerKeyEntry> parse_answer_key(std::istream& in, const std::string& source = "<answer-key>");

// Per-subset statistics gathered while streaming a transmissions file.
struct IngestStats {
    std::size_t records = 0;
    std::size_t measurements = 0;
    std::size_t with_truth = 0;
    std::size_t flagged = 0;
    std::map<std::size_t, std::size_t> redundancy;  // receivers per record -> records

    void add(const TransmissionRecord& r);

    std::size_t max_redundancy() const;

    // MLE success probability of a geometric law on {2, 3, ...}:
    // p = 1 / (mean - 1). NaN when no records were seen.
    double geometric_success_probability() const;
};

}  // namespace pairloc
