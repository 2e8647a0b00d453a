// Unary potential field: (reduced feature, normalized position) -> SE(3),
// realized as two MLP heads (rotation quaternion, translation), plus the
// canonical-space mapping mu_hat = R mu + t and its reverse-mode gradients.
//
// The rotation head's raw 4-vector is offset by the identity quaternion
// (1,0,0,0) and normalized, and final layers are zero-initialized, so an
// untrained field is exactly the identity transform everywhere.
//
// Dropout only masks the position slots of the MLP *input*; the mu used in
// R mu + t is always the true position. A field that can only see features
// cannot learn the collapse shortcut R mu = -t.

#pragma once

#include "gmc/geometry.hpp"
#include "gmc/mlp.hpp"
#include "gmc/pointset.hpp"

#include <random>
#include <stdexcept>
#include <vector>

namespace gmc {

inline constexpr int kFieldInputDim = 7;  // 3 position + 4 reduced feature

enum class FieldMode { kTrain, kEval };

struct UnaryField {
    Mlp rotation_head;     // 7 -> 4
    Mlp translation_head;  // 7 -> 3
    int timestep = 0;      // 0 or 1
};

inline UnaryField make_unary_field(int timestep, std::mt19937_64& rng, int hidden = 128,
                                   int depth = 3) {
    std::vector<int> rot_sizes{kFieldInputDim};
    for (int i = 0; i < depth; ++i) rot_sizes.push_back(hidden);
    std::vector<int> trans_sizes = rot_sizes;
    rot_sizes.push_back(4);
    trans_sizes.push_back(3);
    UnaryField field;
    field.rotation_head = make_mlp(rot_sizes, rng);
    field.translation_head = make_mlp(trans_sizes, rng);
    field.timestep = timestep;
    return field;
}

// Everything the backward pass needs for a batch mapped to canonical space.
struct FieldTape {
    Matrix input;       // B x 7 (dropout already applied to position slots)
    Matrix positions;   // B x 3, true normalized positions
    MlpTape rot_tape;
    MlpTape trans_tape;
    Matrix raw_quats;   // B x 4, head output + identity offset, pre-normalization
    Matrix unit_quats;  // B x 4 (w, x, y, z)
    Matrix canonical;   // B x 3, mu_hat
};

struct FieldGrads {
    MlpGrads rotation;
    MlpGrads translation;
};

// Assembles the MLP input for a batch: [masked positions | reduced features].
// `dropout_masks` (B x 3) multiplies the position slots; pass an empty matrix
// in eval mode.
inline Matrix field_input(const Matrix& positions, const Matrix& reduced_features,
                          const Matrix& dropout_masks) {
    if (positions.cols() != 3 || reduced_features.cols() != 4 ||
        positions.rows() != reduced_features.rows()) {
        throw std::invalid_argument("field_input: positions must be Bx3 and features Bx4");
    }
    Matrix x(positions.rows(), kFieldInputDim);
    if (dropout_masks.size() > 0) {
        x.leftCols<3>() = positions.cwiseProduct(dropout_masks);
    } else {
        x.leftCols<3>() = positions;
    }
    x.rightCols<4>() = reduced_features;
    return x;
}

// Maps a batch to canonical space: mu_hat_i = R(q_i) mu_i + t_i. The tape
// holds the per-point unit quaternions and translations for later use.
inline FieldTape field_to_canonical(const UnaryField& field, const Matrix& positions,
                                    const Matrix& reduced_features,
                                    const Matrix& dropout_masks = Matrix()) {
    FieldTape tape;
    tape.positions = positions;
    tape.input = field_input(positions, reduced_features, dropout_masks);
    if (!tape.input.allFinite()) {
        throw std::invalid_argument("field_to_canonical: non-finite input");
    }
    tape.rot_tape = mlp_forward(field.rotation_head, tape.input);
    tape.trans_tape = mlp_forward(field.translation_head, tape.input);
    const Eigen::Index n = positions.rows();
    tape.raw_quats = tape.rot_tape.output;
    tape.raw_quats.col(0).array() += 1.0;  // identity offset
    tape.unit_quats.resize(n, 4);
    tape.canonical.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec4 raw = tape.raw_quats.row(i).transpose();
        const double norm = raw.norm();
        if (!(norm > 1e-300)) {
            throw std::runtime_error("field_to_canonical: degenerate rotation output");
        }
        tape.unit_quats.row(i) = (raw / norm).transpose();
        const Quat q(tape.unit_quats(i, 0), tape.unit_quats(i, 1), tape.unit_quats(i, 2),
                     tape.unit_quats(i, 3));
        const Vec3 mu = positions.row(i).transpose();
        tape.canonical.row(i) =
            (rotate(q, mu) + tape.trans_tape.output.row(i).transpose()).transpose();
    }
    return tape;
}

// SE(3) of one tape row.
inline Se3d field_transform_at(const FieldTape& tape, Eigen::Index i) {
    Se3d out;
    out.rotation = Quat(tape.unit_quats(i, 0), tape.unit_quats(i, 1), tape.unit_quats(i, 2),
                        tape.unit_quats(i, 3));
    out.translation = tape.trans_tape.output.row(i).transpose();
    return out;
}

// Single-point convenience wrapper (eval path).
inline Se3d field_transform(const UnaryField& field, const Eigen::Vector4d& reduced_feature,
                            const Eigen::Vector3d& position) {
    Matrix pos(1, 3), feat(1, 4);
    pos.row(0) = position.transpose();
    feat.row(0) = reduced_feature.transpose();
    const FieldTape tape = field_to_canonical(field, pos, feat);
    return field_transform_at(tape, 0);
}

// Per-row upstream gradients feeding the field backward pass. Any of the
// matrices may be empty (treated as zero).
struct FieldUpstream {
    Matrix d_canonical;  // B x 3, dL/d(mu_hat)
    Matrix d_quat;       // B x 4, dL/d(unit quaternion), extra to the canonical path
    Matrix d_trans;      // B x 3, dL/d(translation), extra to the canonical path
};

// Pushes upstream gradients through mu_hat = R(q) mu + t, the quaternion
// normalization, the identity offset, and both MLP heads.
inline FieldGrads field_backward(const UnaryField& field, const FieldTape& tape,
                                 const FieldUpstream& up) {
    const Eigen::Index n = tape.positions.rows();
    Matrix d_unit = up.d_quat.size() > 0 ? up.d_quat : Matrix::Zero(n, 4);
    Matrix d_t = up.d_trans.size() > 0 ? up.d_trans : Matrix::Zero(n, 3);
    if (up.d_canonical.size() > 0) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const Quat q(tape.unit_quats(i, 0), tape.unit_quats(i, 1), tape.unit_quats(i, 2),
                         tape.unit_quats(i, 3));
            const Vec3 mu = tape.positions.row(i).transpose();
            const Vec3 g = up.d_canonical.row(i).transpose();
            const RotateGrad rg = rotate_backward(q, mu, g);
            d_unit.row(i) += rg.dq.transpose();
            d_t.row(i) += g.transpose();
        }
    }
    // chain through normalization; the identity offset has unit Jacobian
    Matrix d_raw(n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        d_raw.row(i) =
            normalize_backward(tape.raw_quats.row(i).transpose(), d_unit.row(i).transpose())
                .transpose();
    }
    FieldGrads grads;
    grads.rotation = mlp_backward(field.rotation_head, tape.rot_tape, d_raw);
    grads.translation = mlp_backward(field.translation_head, tape.trans_tape, d_t);
    return grads;
}

}  // namespace gmc
