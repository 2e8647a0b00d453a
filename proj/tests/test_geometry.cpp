#include "gmc/geometry.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace gmc;

namespace {

Quat random_unit_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Quat q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    return normalized_quat(q);
}

Quat z_rotation(double angle) {
    return Quat(std::cos(angle / 2), 0.0, 0.0, std::sin(angle / 2));
}

}  // namespace

TEST_CASE("normalize scales to the unit sphere") {
    const Quat a = normalized_quat(Quat(2.0, 0.0, 0.0, 0.0));
    CHECK(a.w() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.x() == 0.0);

    const Quat b = normalized_quat(Quat(0.0, 3.0, 0.0, 0.0));
    CHECK(b.x() == doctest::Approx(1.0).epsilon(1e-12));

    // norm of (1,1,1,1) is 2
    const Quat c = normalized_quat(Quat(1.0, 1.0, 1.0, 1.0));
    CHECK(c.w() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(c.x() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(c.y() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(c.z() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("normalize rejects zero input") {
    CHECK_THROWS_AS(normalized_quat(Quat(0.0, 0.0, 0.0, 0.0)), std::invalid_argument);
}

TEST_CASE("unit invariant after normalization") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        Quat q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
        if (q.norm() < 1e-6) continue;
        CHECK(std::abs(normalized_quat(q).squaredNorm() - 1.0) <= 1e-9);
    }
}

TEST_CASE("q and -q give the same rotation matrix") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 50; ++i) {
        const Quat q = random_unit_quat(rng);
        const Quat nq(-q.w(), -q.x(), -q.y(), -q.z());
        CHECK((quat_to_matrix(q) - quat_to_matrix(nq)).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("to_matrix basics") {
    CHECK((quat_to_matrix(Quat::Identity()) - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);

    const Mat3 m = quat_to_matrix(z_rotation(M_PI / 2));
    Mat3 expect;
    expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    CHECK((m - expect).cwiseAbs().maxCoeff() <= 1e-12);

    CHECK_THROWS_AS(quat_to_matrix(Quat(2.0, 0.0, 0.0, 0.0)), std::invalid_argument);
}

TEST_CASE("to_matrix is orthonormal with det +1") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        const Mat3 m = quat_to_matrix(random_unit_quat(rng));
        CHECK((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9);
        CHECK(std::abs(m.determinant() - 1.0) <= 1e-9);
    }
}

TEST_CASE("matrix round trip") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        const Mat3 m = quat_to_matrix(random_unit_quat(rng));
        CHECK((quat_to_matrix(quat_from_matrix(m)) - m).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("se3 apply") {
    Se3d identity;
    const Vec3 p(1.2, -3.4, 0.5);
    CHECK((identity.apply(p) - p).norm() == 0.0);

    Se3d shift;
    shift.translation = Vec3(0, 0, 1);
    CHECK((shift.apply(Vec3::Zero()) - Vec3(0, 0, 1)).norm() == 0.0);

    Se3d rot;
    rot.rotation = z_rotation(M_PI / 2);
    CHECK((rot.apply(Vec3(1, 0, 0)) - Vec3(0, 1, 0)).norm() <= 1e-12);
}

TEST_CASE("compose and inverse") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> coord(-2.0, 2.0);
    for (int i = 0; i < 30; ++i) {
        Se3d a{random_unit_quat(rng), Vec3(coord(rng), coord(rng), coord(rng))};
        Se3d b{random_unit_quat(rng), Vec3(coord(rng), coord(rng), coord(rng))};
        const Vec3 p(coord(rng), coord(rng), coord(rng));

        CHECK((compose(a, b).apply(p) - a.apply(b.apply(p))).norm() <= 1e-9);
        CHECK((a.apply(inverse(a).apply(p)) - p).norm() <= 1e-9);

        const Se3d id = compose(a, inverse(a));
        CHECK(quat_angle(id.rotation, Quat::Identity()) <= 1e-9);
        CHECK(id.translation.norm() <= 1e-9);
    }

    Se3d t;
    t.translation = Vec3(1, 2, 3);
    CHECK((inverse(t).translation + Vec3(1, 2, 3)).norm() <= 1e-12);

    Se3d a{z_rotation(0.7), Vec3(0.1, 0.2, 0.3)};
    const Se3d same = compose(a, Se3d::identity());
    CHECK(quat_angle(same.rotation, a.rotation) <= 1e-12);
    CHECK((same.translation - a.translation).norm() <= 1e-12);
}

TEST_CASE("apply preserves pairwise distances") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> coord(-5.0, 5.0);
    for (int i = 0; i < 30; ++i) {
        Se3d t{random_unit_quat(rng), Vec3(coord(rng), coord(rng), coord(rng))};
        const Vec3 a(coord(rng), coord(rng), coord(rng));
        const Vec3 b(coord(rng), coord(rng), coord(rng));
        CHECK(std::abs((t.apply(a) - t.apply(b)).norm() - (a - b).norm()) <= 1e-9);
    }
}

TEST_CASE("slerp endpoints and midpoint") {
    const Quat i = Quat::Identity();
    const Quat z90 = z_rotation(M_PI / 2);

    const Quat still = slerp(i, i, 0.37);
    CHECK(quat_angle(still, i) <= 1e-12);

    const Quat mid = slerp(i, z90, 0.5);
    CHECK(quat_angle(mid, z_rotation(M_PI / 4)) <= 1e-12);

    CHECK(quat_angle(slerp(i, z90, 0.0), i) <= 1e-12);
    CHECK(quat_angle(slerp(i, z90, 1.0), z90) <= 1e-12);
}

TEST_CASE("slerp extrapolates along the same geodesic") {
    // doubling t doubles the rotation angle
    const Quat two = slerp(Quat::Identity(), z_rotation(M_PI / 2), 2.0);
    CHECK(quat_angle(two, z_rotation(M_PI)) <= 1e-9);
}

TEST_CASE("slerp angle grows linearly in t") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const Quat q0 = random_unit_quat(rng);
        const Quat q1 = random_unit_quat(rng);
        const double full = quat_angle(q0, q1);
        for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            const Quat qt = slerp(q0, q1, t);
            CHECK(std::abs(quat_angle(q0, qt) - t * full) <= 1e-9);
        }
    }
}

TEST_CASE("slerp takes the short arc") {
    const Quat z90 = z_rotation(M_PI / 2);
    const Quat flipped(-z90.w(), -z90.x(), -z90.y(), -z90.z());
    const Quat mid = slerp(Quat::Identity(), flipped, 0.5);
    CHECK(quat_angle(mid, z_rotation(M_PI / 4)) <= 1e-12);
}

TEST_CASE("rotate matches quaternion application and its backward matches FD") {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> coord(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Quat q = random_unit_quat(rng);
        const Vec3 v(coord(rng), coord(rng), coord(rng));
        CHECK((rotate(q, v) - q * v).norm() <= 1e-12);

        // FD check of rotate_backward with a random upstream gradient.
        // dq is the free-4-vector derivative, so probe without renormalizing.
        const Vec3 g(coord(rng), coord(rng), coord(rng));
        const RotateGrad an = rotate_backward(q, v, g);
        const double h = 1e-6;
        Vec4 qv(q.w(), q.x(), q.y(), q.z());
        for (int k = 0; k < 4; ++k) {
            Vec4 plus = qv, minus = qv;
            plus(k) += h;
            minus(k) -= h;
            const Quat qp(plus(0), plus(1), plus(2), plus(3));
            const Quat qm(minus(0), minus(1), minus(2), minus(3));
            // rotate() assumes unit q; evaluate via the raw polynomial form
            auto raw = [&](const Quat& qq) {
                const Vec3 u(qq.x(), qq.y(), qq.z());
                const Vec3 s = 2.0 * u.cross(v);
                return Vec3(v + qq.w() * s + u.cross(s));
            };
            const double fd = g.dot(raw(qp) - raw(qm)) / (2 * h);
            CHECK(an.dq(k) == doctest::Approx(fd).epsilon(1e-5));
        }
        for (int k = 0; k < 3; ++k) {
            Vec3 plus = v, minus = v;
            plus(k) += h;
            minus(k) -= h;
            const double fd = g.dot(rotate(q, plus) - rotate(q, minus)) / (2 * h);
            CHECK(an.dv(k) == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("normalize_backward projects out the radial direction") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> coord(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vec4 u(coord(rng) + 2.0, coord(rng), coord(rng), coord(rng));
        Vec4 g(coord(rng), coord(rng), coord(rng), coord(rng));
        const Vec4 an = normalize_backward(u, g);
        const double h = 1e-6;
        for (int k = 0; k < 4; ++k) {
            Vec4 plus = u, minus = u;
            plus(k) += h;
            minus(k) -= h;
            const double fd = g.dot(plus.normalized() - minus.normalized()) / (2 * h);
            CHECK(an(k) == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}
