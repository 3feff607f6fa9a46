#pragma once

// Reference geodesy kept independent of the library: long double arithmetic,
// ellipsoid parameterised by (a, b) instead of (a, f), and a closed-form
// inverse (Heikkinen) instead of the library's iteration.

#include <array>
#include <cmath>

namespace oracle {

inline constexpr long double kA = 6378137.0L;
inline constexpr long double kB = 6356752.314245179497563967L;  // a (1 - 1/298.257223563)
inline constexpr long double kPi = 3.141592653589793238462643383279502884L;

inline long double rad(long double deg) { return deg * kPi / 180.0L; }
inline long double deg(long double r) { return r * 180.0L / kPi; }

inline std::array<double, 3> to_ecef(double lat_deg, double lon_deg, double h) {
    const long double e2 = 1.0L - (kB * kB) / (kA * kA);
    const long double phi = rad(lat_deg), lam = rad(lon_deg);
    const long double s = std::sin(phi), c = std::cos(phi);
    const long double n = kA / std::sqrt(1.0L - e2 * s * s);
    return {static_cast<double>((n + h) * c * std::cos(lam)),
            static_cast<double>((n + h) * c * std::sin(lam)),
            static_cast<double>((n * (1.0L - e2) + h) * s)};
}

// Heikkinen (1982) exact closed form.
inline std::array<double, 3> to_geodetic(double x_, double y_, double z_) {
    const long double x = x_, y = y_, z = z_;
    const long double a2 = kA * kA, b2 = kB * kB;
    const long double e2 = 1.0L - b2 / a2;
    const long double ep2 = a2 / b2 - 1.0L;
    const long double p = std::sqrt(x * x + y * y);
    const long double f = 54.0L * b2 * z * z;
    const long double g = p * p + (1.0L - e2) * z * z - e2 * (a2 - b2);
    const long double cc = e2 * e2 * f * p * p / (g * g * g);
    const long double s = std::cbrt(1.0L + cc + std::sqrt(cc * cc + 2.0L * cc));
    const long double k = s + 1.0L + 1.0L / s;
    const long double pp = f / (3.0L * k * k * g * g);
    const long double q = std::sqrt(1.0L + 2.0L * e2 * e2 * pp);
    const long double r0 = -pp * e2 * p / (1.0L + q) +
                           std::sqrt(0.5L * a2 * (1.0L + 1.0L / q) - pp * (1.0L - e2) * z * z / (q * (1.0L + q)) -
                                     0.5L * pp * p * p);
    const long double u = std::sqrt((p - e2 * r0) * (p - e2 * r0) + z * z);
    const long double v = std::sqrt((p - e2 * r0) * (p - e2 * r0) + (1.0L - e2) * z * z);
    const long double z0 = b2 * z / (kA * v);
    const long double h = u * (1.0L - b2 / (kA * v));
    const long double lat = std::atan((z + ep2 * z0) / p);
    const long double lon = std::atan2(y, x);
    return {static_cast<double>(deg(lat)), static_cast<double>(deg(lon)), static_cast<double>(h)};
}

// Unit "up" normal of the ellipsoid at a geodetic latitude/longitude.
inline std::array<double, 3> up(double lat_deg, double lon_deg) {
    const long double phi = rad(lat_deg), lam = rad(lon_deg);
    return {static_cast<double>(std::cos(phi) * std::cos(lam)), static_cast<double>(std::cos(phi) * std::sin(lam)),
            static_cast<double>(std::sin(phi))};
}

inline std::array<double, 3> east(double lon_deg) {
    const long double lam = rad(lon_deg);
    return {static_cast<double>(-std::sin(lam)), static_cast<double>(std::cos(lam)), 0.0};
}

}  // namespace oracle
