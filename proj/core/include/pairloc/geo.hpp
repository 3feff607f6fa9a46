#pragma once

#include <Eigen/Core>

namespace pairloc {

// Speed of light in vacuum, m/s. All propagation is straight-line at this
// speed; tropospheric delay (tens of ns) is not modelled.
inline constexpr double kSpeedOfLight = 299792458.0;

// WGS84 ellipsoid.
inline constexpr double kWgs84SemiMajor = 6378137.0;
inline constexpr double kWgs84Flattening = 1.0 / 298.257223563;
inline constexpr double kWgs84SemiMinor = kWgs84SemiMajor * (1.0 - kWgs84Flattening);
inline constexpr double kWgs84EccentricitySq = kWgs84Flattening * (2.0 - kWgs84Flattening);

// Plausible altitude band for aircraft and sensor records, meters.
inline constexpr double kMinRecordAltitude = -1000.0;
inline constexpr double kMaxRecordAltitude = 30000.0;

/// WGS84 geodetic position. Altitude is height above the ellipsoid.
struct GeoPosition {
    double latitude_deg = 0.0;
    double longitude_deg = 0.0;
    double altitude_m = 0.0;

    bool operator==(const GeoPosition&) const = default;
};

/// Earth-centered Earth-fixed Cartesian position in meters.
struct EcefPosition {
    double x_m = 0.0;
    double y_m = 0.0;
    double z_m = 0.0;

    EcefPosition() = default;
    EcefPosition(double x, double y, double z) : x_m(x), y_m(y), z_m(z) {}
    explicit EcefPosition(const Eigen::Vector3d& v) : x_m(v.x()), y_m(v.y()), z_m(v.z()) {}

    Eigen::Vector3d vec() const { return {x_m, y_m, z_m}; }

    bool operator==(const EcefPosition&) const = default;
};

// Latitude in [-90, 90] and longitude in [-180, 180), both finite.
bool is_valid_coordinate(const GeoPosition& g);

// is_valid_coordinate plus altitude inside the record band.
bool is_valid_record(const GeoPosition& g);

/// Closed-form WGS84 forward transform.
/// Throws InvalidCoordinateError when latitude or longitude is out of range.
EcefPosition geodetic_to_ecef(const GeoPosition& g);

/// Iterative inverse of geodetic_to_ecef, accurate to well below 1e-6 m for
/// near-Earth positions. Longitude is normalised to [-180, 180).
/// Throws SingularityError at the Earth's center.
GeoPosition ecef_to_geodetic(const EcefPosition& e);

double distance(const EcefPosition& a, const EcefPosition& b);

/// Straight-line vacuum propagation time between a and b, in seconds.
double propagation_delay(const EcefPosition& a, const EcefPosition& b);

// Unit vectors of the local East-North-Up frame at a geodetic position.
struct LocalFrame {
    Eigen::Vector3d east;
    Eigen::Vector3d north;
    Eigen::Vector3d up;
};

LocalFrame local_frame(const GeoPosition& g);

// Moves an ECEF point by an offset expressed in the local ENU frame at `at`.
EcefPosition offset_enu(const EcefPosition& origin, const GeoPosition& at,
                        double east_m, double north_m, double up_m);

}  // namespace pairloc
