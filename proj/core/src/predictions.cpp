#include "pairloc/predictions.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "pairloc/csv.hpp"
#include "pairloc/error.hpp"

namespace pairloc {

bool PredictionRow::operator==(const PredictionRow& o) const {
    const bool rms_equal = residual_rms_ns == o.residual_rms_ns ||
                           (std::isnan(residual_rms_ns) && std::isnan(o.residual_rms_ns));
    return record_id == o.record_id && position == o.position && n_equations == o.n_equations &&
           rank == o.rank && rms_equal && status == o.status;
}

PredictionRow to_prediction_row(const LocateOutcome& o) {
    PredictionRow row;
    row.record_id = o.record_id;
    if (o.predicted()) row.position = o.result->geo;
    row.n_equations = o.n_equations;
    row.rank = o.rank;
    row.residual_rms_ns = o.residual_rms_s * 1e9;
    row.status = to_string(o.outcome);
    return row;
}

PredictionWriter::PredictionWriter(std::ostream& out, const ConfigEcho& echo) : out_(out) {
    for (const auto& [k, v] : echo) out_ << "# " << k << " = " << v << '\n';
    out_ << "id,latitude,longitude,geoAltitude,nEquations,rank,residualRmsNs,status\n";
}

void PredictionWriter::write(const PredictionRow& row) {
    out_ << row.record_id << ',';
    if (row.position) {
        out_ << format_double(row.position->latitude_deg) << ',' << format_double(row.position->longitude_deg) << ','
             << format_double(row.position->altitude_m);
    } else {
        out_ << ",,";
    }
    out_ << ',' << row.n_equations << ',' << row.rank << ',';
    if (!std::isnan(row.residual_rms_ns)) out_ << format_double(row.residual_rms_ns);
    out_ << ',' << csv_escape(row.status) << '\n';
}

std::vector<PredictionRow> parse_predictions(std::istream& in, const std::string& source) {
    CsvReader reader(in, source);
    reader.read_header();
    const std::vector<std::string> names = {"id",         "latitude", "longitude",     "geoAltitude",
                                            "nEquations", "rank",     "residualRmsNs", "status"};
    std::vector<std::size_t> col;
    std::string missing;
    for (const auto& n : names) {
        const auto c = reader.column(n);
        if (!c) {
            missing += (missing.empty() ? "" : ", ") + n;
            continue;
        }
        col.push_back(*c);
    }
    if (!missing.empty()) throw IntegrityError(source + ": prediction file lacks columns: " + missing);

    std::vector<PredictionRow> rows;
    std::vector<std::string> f;
    while (reader.next(f)) {
        PredictionRow row;
        const auto id = parse_int(f[col[0]]);
        if (!id) reader.fail("bad id");
        row.record_id = *id;
        const auto lat = trim(f[col[1]]), lon = trim(f[col[2]]), alt = trim(f[col[3]]);
        if (!lat.empty() || !lon.empty() || !alt.empty()) {
            const auto a = parse_double(lat), b = parse_double(lon), h = parse_double(alt);
            if (!a || !b || !h) reader.fail("incomplete predicted position");
            row.position = GeoPosition{*a, *b, *h};
            if (!is_valid_coordinate(*row.position)) reader.fail("predicted position out of range");
        }
        const auto neq = parse_int(f[col[4]]);
        const auto rank = parse_int(f[col[5]]);
        if (!neq || *neq < 0 || !rank) reader.fail("bad equation count or rank");
        row.n_equations = static_cast<std::size_t>(*neq);
        row.rank = static_cast<int>(*rank);
        const auto rms = trim(f[col[6]]);
        if (rms.empty()) {
            row.residual_rms_ns = std::nan("");
        } else {
            const auto v = parse_double(rms);
            if (!v) reader.fail("bad residualRmsNs");
            row.residual_rms_ns = *v;
        }
        row.status = std::string(trim(f[col[7]]));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace pairloc
