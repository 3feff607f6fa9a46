#pragma once

#include <array>
#include <functional>

namespace oracle {

// Central differences of a scalar field of three variables.
inline std::array<double, 3> central_gradient(const std::function<double(double, double, double)>& f, double x,
                                              double y, double z, double h) {
    return {(f(x + h, y, z) - f(x - h, y, z)) / (2 * h), (f(x, y + h, z) - f(x, y - h, z)) / (2 * h),
            (f(x, y, z + h) - f(x, y, z - h)) / (2 * h)};
}

}  // namespace oracle
