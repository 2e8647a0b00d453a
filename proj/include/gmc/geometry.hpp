// Quaternion / SE(3) arithmetic shared by every other module.
//
// Conventions: quaternions are Eigen::Quaternion<T> stored (w, x, y, z) in
// the API below; rotations act as p' = R p + t. All angles in radians.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace gmc {

using Quat = Eigen::Quaterniond;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kUnitQuatTol = 1e-9;

// Normalizes to the unit sphere. Throws on (near-)zero input.
template <typename T>
Eigen::Quaternion<T> normalized_quat(const Eigen::Quaternion<T>& q) {
    const T n = q.norm();
    if (!(n > T(1e-300))) {
        throw std::invalid_argument("normalized_quat: degenerate (zero-norm) quaternion");
    }
    return Eigen::Quaternion<T>(q.w() / n, q.x() / n, q.y() / n, q.z() / n);
}

template <typename T>
bool is_unit_quat(const Eigen::Quaternion<T>& q, T tol = T(kUnitQuatTol)) {
    return std::abs(q.squaredNorm() - T(1)) <= tol;
}

// Rotation matrix of a unit quaternion. Non-unit input beyond tolerance is a
// precondition violation.
template <typename T>
Eigen::Matrix<T, 3, 3> quat_to_matrix(const Eigen::Quaternion<T>& q) {
    if (!is_unit_quat(q, T(1e-6))) {
        throw std::invalid_argument("quat_to_matrix: input quaternion is not unit length");
    }
    return q.toRotationMatrix();
}

template <typename T>
Eigen::Quaternion<T> quat_from_matrix(const Eigen::Matrix<T, 3, 3>& m) {
    return Eigen::Quaternion<T>(m).normalized();
}

// Hemisphere canonicalization: flips q1 so dot(q0, q1) >= 0 (same rotation,
// shortest great-circle arc).
template <typename T>
Eigen::Quaternion<T> same_hemisphere(const Eigen::Quaternion<T>& q0,
                                     const Eigen::Quaternion<T>& q1) {
    if (q0.dot(q1) < T(0)) {
        return Eigen::Quaternion<T>(-q1.w(), -q1.x(), -q1.y(), -q1.z());
    }
    return q1;
}

// Geodesic angle between the rotations represented by q0 and q1, via the
// atan2 form (well conditioned at both small and near-pi angles).
template <typename T>
T quat_angle(const Eigen::Quaternion<T>& q0, const Eigen::Quaternion<T>& q1) {
    const Eigen::Quaternion<T> rel = q0.conjugate() * q1;
    const T vec_norm = rel.vec().norm();
    return T(2) * std::atan2(vec_norm, std::abs(rel.w()));
}

// SLERP along the shortest arc. t is unrestricted: t < 0 and t > 1
// extrapolate along the same geodesic. Near-parallel inputs fall back to
// normalized linear interpolation.
template <typename T>
Eigen::Quaternion<T> slerp(const Eigen::Quaternion<T>& q0_in,
                           const Eigen::Quaternion<T>& q1_in, T t) {
    const Eigen::Quaternion<T> q0 = normalized_quat(q0_in);
    Eigen::Quaternion<T> q1 = same_hemisphere(q0, normalized_quat(q1_in));
    const T d = std::min(q0.dot(q1), T(1));
    if (d > T(1) - T(1e-7)) {
        // nlerp fallback; also extends linearly outside [0, 1]
        Eigen::Quaternion<T> out(q0.w() + t * (q1.w() - q0.w()),
                                 q0.x() + t * (q1.x() - q0.x()),
                                 q0.y() + t * (q1.y() - q0.y()),
                                 q0.z() + t * (q1.z() - q0.z()));
        return normalized_quat(out);
    }
    const T theta = std::acos(d);
    const T s = std::sin(theta);
    const T a = std::sin((T(1) - t) * theta) / s;
    const T b = std::sin(t * theta) / s;
    Eigen::Quaternion<T> out(a * q0.w() + b * q1.w(), a * q0.x() + b * q1.x(),
                             a * q0.y() + b * q1.y(), a * q0.z() + b * q1.z());
    return normalized_quat(out);
}

// Rigid transform p -> R p + t with R held as a unit quaternion.
template <typename T>
struct Se3 {
    Eigen::Quaternion<T> rotation{T(1), T(0), T(0), T(0)};
    Eigen::Matrix<T, 3, 1> translation{T(0), T(0), T(0)};

    static Se3 identity() { return Se3{}; }

    Eigen::Matrix<T, 3, 1> apply(const Eigen::Matrix<T, 3, 1>& p) const {
        return rotation * p + translation;
    }
};

using Se3d = Se3<double>;

template <typename T>
Se3<T> compose(const Se3<T>& a, const Se3<T>& b) {
    Se3<T> out;
    out.rotation = normalized_quat(Eigen::Quaternion<T>(a.rotation * b.rotation));
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

template <typename T>
Se3<T> inverse(const Se3<T>& a) {
    Se3<T> out;
    out.rotation = a.rotation.conjugate();
    out.translation = -(out.rotation * a.translation);
    return out;
}

// ---------------------------------------------------------------------------
// Differentiable rotation application, used by the field gradient path.
//
// rotate(q, v) evaluates R(q) v for unit q; rotate_backward pushes an
// upstream gradient g = dL/d(Rv) back to (dL/dq, dL/dv), treating q as a
// free 4-vector on the unit sphere (the normalization Jacobian is applied
// separately by the caller).
// ---------------------------------------------------------------------------

inline Vec3 rotate(const Quat& q, const Vec3& v) {
    // y = v + w*s + u x s, with u = vec(q), s = 2 u x v
    const Vec3 u(q.x(), q.y(), q.z());
    const Vec3 s = 2.0 * u.cross(v);
    return v + q.w() * s + u.cross(s);
}

struct RotateGrad {
    Vec4 dq;  // (w, x, y, z) order
    Vec3 dv;
};

inline RotateGrad rotate_backward(const Quat& q, const Vec3& v, const Vec3& g) {
    const Vec3 u(q.x(), q.y(), q.z());
    const Vec3 s = 2.0 * u.cross(v);
    RotateGrad out;
    // dL/dw = g . s
    out.dq(0) = g.dot(s);
    // dL/du_k = g . (2w e_k x v + 2 e_k x (u x v) + 2 u x (e_k x v))
    for (int k = 0; k < 3; ++k) {
        Vec3 ek = Vec3::Zero();
        ek(k) = 1.0;
        const Vec3 ekv = ek.cross(v);
        const Vec3 term = 2.0 * q.w() * ekv + 2.0 * ek.cross(u.cross(v)) + 2.0 * u.cross(ekv);
        out.dq(k + 1) = g.dot(term);
    }
    // dL/dv: R(q)^T g
    out.dv = q.conjugate() * g;
    return out;
}

// Jacobian-vector product of q = u / |u| at u: g_u = (I - q q^T) g_q / |u|.
inline Vec4 normalize_backward(const Vec4& u, const Vec4& g_q) {
    const double n = u.norm();
    if (!(n > 1e-300)) {
        throw std::invalid_argument("normalize_backward: zero-norm quaternion");
    }
    const Vec4 q = u / n;
    return (g_q - q * q.dot(g_q)) / n;
}

}  // namespace gmc
