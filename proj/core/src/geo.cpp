#include "pairloc/geo.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "pairloc/error.hpp"

namespace pairloc {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace

bool is_valid_coordinate(const GeoPosition& g) {
    return std::isfinite(g.latitude_deg) && std::isfinite(g.longitude_deg) &&
           std::isfinite(g.altitude_m) && g.latitude_deg >= -90.0 && g.latitude_deg <= 90.0 &&
           g.longitude_deg >= -180.0 && g.longitude_deg < 180.0;
}

bool is_valid_record(const GeoPosition& g) {
    return is_valid_coordinate(g) && g.altitude_m >= kMinRecordAltitude &&
           g.altitude_m <= kMaxRecordAltitude;
}

EcefPosition geodetic_to_ecef(const GeoPosition& g) {
    if (!is_valid_coordinate(g)) {
        throw InvalidCoordinateError("invalid geodetic coordinate (" + std::to_string(g.latitude_deg) +
                                     ", " + std::to_string(g.longitude_deg) + ")");
    }
    const double lat = g.latitude_deg * kDegToRad;
    const double lon = g.longitude_deg * kDegToRad;
    const double sin_lat = std::sin(lat);
    const double cos_lat = std::cos(lat);
    const double n = kWgs84SemiMajor / std::sqrt(1.0 - kWgs84EccentricitySq * sin_lat * sin_lat);
    return {(n + g.altitude_m) * cos_lat * std::cos(lon),
            (n + g.altitude_m) * cos_lat * std::sin(lon),
            (n * (1.0 - kWgs84EccentricitySq) + g.altitude_m) * sin_lat};
}

GeoPosition ecef_to_geodetic(const EcefPosition& e) {
    const double p = std::hypot(e.x_m, e.y_m);
    if (p == 0.0 && e.z_m == 0.0) {
        throw SingularityError("geodetic conversion undefined at the Earth's center");
    }

    double lon = std::atan2(e.y_m, e.x_m) * kRadToDeg;
    if (lon >= 180.0) {
        lon -= 360.0;
    }

    // Fixed-point iteration on latitude; the height expression below stays
    // well conditioned at the poles.
    double lat = std::atan2(e.z_m, p * (1.0 - kWgs84EccentricitySq));
    double h = 0.0;
    for (int i = 0; i < 20; ++i) {
        const double s = std::sin(lat);
        const double c = std::cos(lat);
        const double root = std::sqrt(1.0 - kWgs84EccentricitySq * s * s);
        const double n = kWgs84SemiMajor / root;
        h = p * c + e.z_m * s - kWgs84SemiMajor * root;
        const double next = std::atan2(e.z_m, p * (1.0 - kWgs84EccentricitySq * n / (n + h)));
        const bool done = std::abs(next - lat) < 1e-15;
        lat = next;
        if (done) {
            break;
        }
    }
    const double s = std::sin(lat);
    h = p * std::cos(lat) + e.z_m * s -
        kWgs84SemiMajor * std::sqrt(1.0 - kWgs84EccentricitySq * s * s);

    return {lat * kRadToDeg, lon, h};
}

double distance(const EcefPosition& a, const EcefPosition& b) {
    return (a.vec() - b.vec()).norm();
}

double propagation_delay(const EcefPosition& a, const EcefPosition& b) {
    return distance(a, b) / kSpeedOfLight;
}

LocalFrame local_frame(const GeoPosition& g) {
    const double lat = g.latitude_deg * kDegToRad;
    const double lon = g.longitude_deg * kDegToRad;
    const double sl = std::sin(lat), cl = std::cos(lat);
    const double so = std::sin(lon), co = std::cos(lon);
    return {Eigen::Vector3d(-so, co, 0.0),
            Eigen::Vector3d(-sl * co, -sl * so, cl),
            Eigen::Vector3d(cl * co, cl * so, sl)};
}

EcefPosition offset_enu(const EcefPosition& origin, const GeoPosition& at,
                        double east_m, double north_m, double up_m) {
    const LocalFrame f = local_frame(at);
    return EcefPosition(origin.vec() + east_m * f.east + north_m * f.north + up_m * f.up);
}

}  // namespace pairloc
