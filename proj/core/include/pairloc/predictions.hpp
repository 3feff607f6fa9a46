#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pairloc/dataset.hpp"
#include "pairloc/locate.hpp"

namespace pairloc {

// One line of the prediction file. Records without a prediction keep an
// empty position and carry the reason in status.
struct PredictionRow {
    RecordId record_id = 0;
    std::optional<GeoPosition> position;
    std::size_t n_equations = 0;
    int rank = 0;
    double residual_rms_ns = 0.0;  // NaN when no solve ran
    std::string status;

    bool operator==(const PredictionRow& o) const;
};

PredictionRow to_prediction_row(const LocateOutcome& o);

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

// Header `id,latitude,longitude,geoAltitude,nEquations,rank,residualRmsNs,status`,
// preceded by the config echo as '#' comment lines.
class PredictionWriter {
public:
    explicit PredictionWriter(std::ostream& out, const ConfigEcho& echo = {});
    void write(const PredictionRow& row);

private:
    std::ostream& out_;
};

std::vector<PredictionRow> parse_predictions(std::istream& in, const std::string& source = "<predictions>");

}  // namespace pairloc
