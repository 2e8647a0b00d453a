#include "gmc/field.hpp"

#include <doctest.h>

#include <random>

using namespace gmc;

namespace {

Matrix random_rows(Eigen::Index n, Eigen::Index cols, std::mt19937_64& rng, double span = 1.0) {
    std::uniform_real_distribution<double> coord(-span, span);
    Matrix m(n, cols);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = coord(rng);
    return m;
}

// scalar loss for finite differencing: 0.5 ||canonical||^2 summed over rows
double canonical_half_sqnorm(const UnaryField& field, const Matrix& pos, const Matrix& feat,
                             const Matrix& masks) {
    return 0.5 * field_to_canonical(field, pos, feat, masks).canonical.squaredNorm();
}

}  // namespace

TEST_CASE("freshly made field is the identity map") {
    std::mt19937_64 rng(21);
    const UnaryField field = make_unary_field(0, rng, 32, 2);
    const Matrix pos = random_rows(12, 3, rng);
    const Matrix feat = random_rows(12, 4, rng);
    const FieldTape tape = field_to_canonical(field, pos, feat);
    CHECK((tape.canonical - pos).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-15));
    for (Eigen::Index i = 0; i < pos.rows(); ++i) {
        const Se3d T = field_transform_at(tape, i);
        CHECK(T.rotation.w() == doctest::Approx(1.0));
        CHECK(T.rotation.vec().norm() == doctest::Approx(0.0));
        CHECK(T.translation.norm() == doctest::Approx(0.0));
    }
}

TEST_CASE("constant translation can be hard-coded through the bias") {
    std::mt19937_64 rng(22);
    UnaryField field = make_unary_field(0, rng, 16, 2);
    const Eigen::Vector3d shift(0.3, -0.7, 1.1);
    field.translation_head.layers.back().bias = shift;
    const Matrix pos = random_rows(9, 3, rng);
    const Matrix feat = random_rows(9, 4, rng);
    const FieldTape tape = field_to_canonical(field, pos, feat);
    for (Eigen::Index i = 0; i < pos.rows(); ++i) {
        CHECK((tape.canonical.row(i).transpose() - (pos.row(i).transpose() + shift)).norm() ==
              doctest::Approx(0.0).epsilon(1e-14));
    }
}

TEST_CASE("constant rotation can be hard-coded through the bias") {
    std::mt19937_64 rng(23);
    UnaryField field = make_unary_field(1, rng, 16, 2);
    // raw quat (1,0,0,1)/sqrt(2): 90 degrees about z after the identity offset
    field.rotation_head.layers.back().bias = Eigen::Vector4d(0.0, 0.0, 0.0, 1.0);
    Matrix pos(1, 3), feat(1, 4);
    pos.row(0) << 1, 0, 0;
    feat.setZero();
    const FieldTape tape = field_to_canonical(field, pos, feat);
    CHECK(tape.canonical(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(tape.canonical(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tape.canonical(0, 2) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(is_unit_quat(field_transform_at(tape, 0).rotation));
}

TEST_CASE("unit quaternions on the tape really are unit") {
    std::mt19937_64 rng(24);
    UnaryField field = make_unary_field(0, rng, 24, 3);
    // un-zero the final layers so the heads actually produce varied output
    std::normal_distribution<double> g(0.0, 0.5);
    auto fill = [&](Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = g(rng);
    };
    fill(field.rotation_head.layers.back().weight);
    const Matrix pos = random_rows(40, 3, rng);
    const Matrix feat = random_rows(40, 4, rng);
    const FieldTape tape = field_to_canonical(field, pos, feat);
    for (Eigen::Index i = 0; i < pos.rows(); ++i) {
        CHECK(tape.unit_quats.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gradients agree with finite differences") {
    std::mt19937_64 rng(25);
    UnaryField field = make_unary_field(0, rng, 10, 2);
    std::normal_distribution<double> g(0.0, 0.3);
    auto fill = [&](Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = g(rng);
    };
    fill(field.rotation_head.layers.back().weight);
    fill(field.translation_head.layers.back().weight);

    const Matrix pos = random_rows(6, 3, rng);
    const Matrix feat = random_rows(6, 4, rng);
    const FieldTape tape = field_to_canonical(field, pos, feat);

    FieldUpstream up;
    up.d_canonical = tape.canonical;  // dL/d(mu_hat) of 0.5||mu_hat||^2
    const FieldGrads grads = field_backward(field, tape, up);

    const double h = 1e-6;
    auto fd_check = [&](Mlp& head, const MlpGrads& analytic) {
        for (std::size_t l = 0; l < head.layers.size(); ++l) {
            Matrix& w = head.layers[l].weight;
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                for (Eigen::Index j = 0; j < w.cols(); ++j) {
                    const double keep = w(i, j);
                    w(i, j) = keep + h;
                    const double up_v = canonical_half_sqnorm(field, pos, feat, Matrix());
                    w(i, j) = keep - h;
                    const double dn_v = canonical_half_sqnorm(field, pos, feat, Matrix());
                    w(i, j) = keep;
                    const double fd = (up_v - dn_v) / (2.0 * h);
                    CHECK(analytic.layers[l].weight(i, j) ==
                          doctest::Approx(fd).epsilon(1e-4).scale(1.0));
                }
            }
            Vector& b = head.layers[l].bias;
            for (Eigen::Index i = 0; i < b.size(); ++i) {
                const double keep = b(i);
                b(i) = keep + h;
                const double up_v = canonical_half_sqnorm(field, pos, feat, Matrix());
                b(i) = keep - h;
                const double dn_v = canonical_half_sqnorm(field, pos, feat, Matrix());
                b(i) = keep;
                const double fd = (up_v - dn_v) / (2.0 * h);
                CHECK(analytic.layers[l].bias(i) == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
            }
        }
    };
    fd_check(field.rotation_head, grads.rotation);
    fd_check(field.translation_head, grads.translation);
}

TEST_CASE("extra quaternion and translation upstream terms also check out") {
    std::mt19937_64 rng(26);
    UnaryField field = make_unary_field(1, rng, 8, 2);
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& layer : field.rotation_head.layers)
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] += g(rng) * 0.1;

    const Matrix pos = random_rows(4, 3, rng);
    const Matrix feat = random_rows(4, 4, rng);
    const Matrix cq = random_rows(4, 4, rng);  // fixed cotangent on the unit quats
    const Matrix ct = random_rows(4, 3, rng);

    auto value = [&]() {
        const FieldTape t = field_to_canonical(field, pos, feat);
        return (t.unit_quats.cwiseProduct(cq)).sum() +
               (t.trans_tape.output.cwiseProduct(ct)).sum();
    };
    const FieldTape tape = field_to_canonical(field, pos, feat);
    FieldUpstream up;
    up.d_quat = cq;
    up.d_trans = ct;
    const FieldGrads grads = field_backward(field, tape, up);

    const double h = 1e-6;
    Matrix& w = field.rotation_head.layers[1].weight;
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(w.rows(), 4); ++i) {
        const double keep = w(i, 0);
        w(i, 0) = keep + h;
        const double up_v = value();
        w(i, 0) = keep - h;
        const double dn_v = value();
        w(i, 0) = keep;
        CHECK(grads.rotation.layers[1].weight(i, 0) ==
              doctest::Approx((up_v - dn_v) / (2.0 * h)).epsilon(1e-4).scale(1.0));
    }
    Vector& b = field.translation_head.layers.back().bias;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        const double keep = b(i);
        b(i) = keep + h;
        const double up_v = value();
        b(i) = keep - h;
        const double dn_v = value();
        b(i) = keep;
        CHECK(grads.translation.layers.back().bias(i) ==
              doctest::Approx((up_v - dn_v) / (2.0 * h)).epsilon(1e-4).scale(1.0));
    }
}

TEST_CASE("dropout masks only affect the network input, not mu") {
    std::mt19937_64 rng(27);
    UnaryField field = make_unary_field(0, rng, 16, 2);
    const Eigen::Vector3d shift(1.0, 2.0, 3.0);
    field.translation_head.layers.back().bias = shift;
    const Matrix pos = random_rows(5, 3, rng);
    const Matrix feat = random_rows(5, 4, rng);
    const Matrix masks = Matrix::Zero(5, 3);  // drop every position slot
    const FieldTape tape = field_to_canonical(field, pos, feat, masks);
    CHECK((tape.input.leftCols<3>()).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index i = 0; i < 5; ++i) {
        // mu still flows through R mu + t even with all position inputs dropped
        CHECK((tape.canonical.row(i).transpose() - (pos.row(i).transpose() + shift)).norm() ==
              doctest::Approx(0.0).epsilon(1e-14));
    }
}

TEST_CASE("the map is continuous in position") {
    std::mt19937_64 rng(28);
    UnaryField field = make_unary_field(0, rng, 32, 3);
    std::normal_distribution<double> g(0.0, 0.2);
    for (auto& layer : field.rotation_head.layers)
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] += g(rng) * 0.05;
    for (auto& layer : field.translation_head.layers)
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] += g(rng) * 0.05;

    const Eigen::Vector4d feat(0.2, -0.1, 0.4, 0.0);
    Eigen::Vector3d prev_out = Eigen::Vector3d::Zero();
    bool have_prev = false;
    for (int s = 0; s <= 200; ++s) {
        const double x = -1.0 + 2.0 * s / 200.0;
        Matrix pos(1, 3), f(1, 4);
        pos.row(0) << x, 0.5, -0.25;
        f.row(0) = feat.transpose();
        const Eigen::Vector3d out = field_to_canonical(field, pos, f).canonical.row(0).transpose();
        if (have_prev) {
            CHECK((out - prev_out).norm() < 0.05);  // small input step, small output step
        }
        prev_out = out;
        have_prev = true;
    }
}

TEST_CASE("input validation") {
    std::mt19937_64 rng(29);
    const UnaryField field = make_unary_field(0, rng, 8, 2);
    CHECK_THROWS_AS(field_input(Matrix(3, 2), Matrix(3, 4), Matrix()), std::invalid_argument);
    CHECK_THROWS_AS(field_input(Matrix(3, 3), Matrix(2, 4), Matrix()), std::invalid_argument);
    Matrix pos = Matrix::Zero(2, 3), feat = Matrix::Zero(2, 4);
    pos(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(field_to_canonical(field, pos, feat), std::invalid_argument);
}
