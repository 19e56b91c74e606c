#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "errors.hpp"

namespace sparsesplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d; // quaternions are stored (w, x, y, z)
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline Vec4 normalized_quaternion(const Vec4& q) {
    const double n = q.norm();
    if (!(n > 1e-12) || !std::isfinite(n)) {
        throw DegenerateRotationError("quaternion norm too small to normalize");
    }
    return q / n;
}

// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 rotation_from_unit_quaternion(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

inline Mat3 rotation_from_quaternion(const Vec4& q) {
    return rotation_from_unit_quaternion(normalized_quaternion(q));
}

// Pull back dL/dR (R = rotation of the unit quaternion q) onto q itself.
inline Vec4 rotation_vjp_unit(const Vec4& q, const Mat3& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 out;
    out[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    out[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                  w * g(2, 1) - 2 * x * g(2, 2));
    out[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                  z * g(2, 1) - 2 * y * g(2, 2));
    out[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
                  x * g(2, 0) + y * g(2, 1));
    return out;
}

// Gradient w.r.t. the raw (unnormalized) quaternion given dL/dR.
inline Vec4 rotation_vjp(const Vec4& q_raw, const Mat3& g) {
    const double n = q_raw.norm();
    const Vec4 qn = q_raw / n;
    const Vec4 gu = rotation_vjp_unit(qn, g);
    return (gu - qn * qn.dot(gu)) / n;
}

// Unit quaternion (w, x, y, z) of a rotation matrix.
inline Vec4 quaternion_from_rotation(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    Vec4 out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0) out = -out;
    return out;
}

// Shortest-arc spherical linear interpolation between unit quaternions.
inline Vec4 slerp(const Vec4& a, const Vec4& b_in, double t) {
    Vec4 b = b_in;
    double d = a.dot(b);
    if (d < 0.0) {
        b = -b;
        d = -d;
    }
    if (d > 1.0 - 1e-12) {
        return normalized_quaternion(a + t * (b - a));
    }
    const double theta = std::acos(std::min(1.0, d));
    const double s = std::sin(theta);
    return (std::sin((1.0 - t) * theta) / s) * a + (std::sin(t * theta) / s) * b;
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

} // namespace sparsesplat
