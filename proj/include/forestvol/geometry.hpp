#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace forestvol {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr Vec3& operator+=(const Vec3& o) noexcept {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    constexpr Vec3& operator-=(const Vec3& o) noexcept {
        x -= o.x;
        y -= o.y;
        z -= o.z;
        return *this;
    }
    constexpr Vec3& operator*=(double s) noexcept {
        x *= s;
        y *= s;
        z *= s;
        return *this;
    }

    friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) noexcept { return a += b; }
    friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) noexcept { return a -= b; }
    friend constexpr Vec3 operator*(Vec3 a, double s) noexcept { return a *= s; }
    friend constexpr Vec3 operator*(double s, Vec3 a) noexcept { return a *= s; }
    friend constexpr Vec3 operator-(const Vec3& a) noexcept { return {-a.x, -a.y, -a.z}; }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;

    constexpr double operator[](int axis) const noexcept {
        return axis == 0 ? x : (axis == 1 ? y : z);
    }
};

constexpr double dot(const Vec3& a, const Vec3& b) noexcept {
    return a.x * b.x + a.y * b.y + a.z * b.z;
}

constexpr Vec3 cross(const Vec3& a, const Vec3& b) noexcept {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& a) noexcept { return std::sqrt(dot(a, a)); }

inline Vec3 normalized(const Vec3& a) noexcept {
    const double n = norm(a);
    return n > 0.0 ? a * (1.0 / n) : a;
}

/// Squared Euclidean distance. Every nearest-neighbour routine in the library
/// uses this exact expression so that tie decisions agree across code paths.
constexpr double squared_distance(const Vec3& a, const Vec3& b) noexcept {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}

/// Lexicographic (x, y, z) order.
constexpr bool lex_less(const Vec3& a, const Vec3& b) noexcept {
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    return a.z < b.z;
}

inline double deg_to_rad(double deg) noexcept { return deg * std::numbers::pi / 180.0; }

/// Rotation about +z by `degrees` (counter-clockwise seen from above).
inline Vec3 rotate_z(const Vec3& p, double degrees) noexcept {
    const double a = deg_to_rad(degrees);
    const double c = std::cos(a);
    const double s = std::sin(a);
    return {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
}

struct Aabb {
    Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity()};

    void expand(const Vec3& p) noexcept {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    void expand(const Aabb& b) noexcept {
        expand(b.lo);
        expand(b.hi);
    }
    bool empty() const noexcept { return lo.x > hi.x; }
    Vec3 extent() const noexcept { return hi - lo; }
    Vec3 center() const noexcept { return (lo + hi) * 0.5; }
};

}  // namespace forestvol
