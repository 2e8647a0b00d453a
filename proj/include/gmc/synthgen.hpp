// Deterministic two-state synthetic scenes with ground-truth correspondence
// and per-part transforms. Parts are sampled once on a primitive surface,
// then placed by their two SE(3)s; the end state is shuffled so index
// equality never happens by accident.

#pragma once

#include "gmc/geometry.hpp"
#include "gmc/pointset.hpp"
#include "gmc/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmc {

enum class Primitive { kBox, kSphere, kCylinder };

inline Primitive primitive_from_string(const std::string& s) {
    if (s == "box") return Primitive::kBox;
    if (s == "sphere") return Primitive::kSphere;
    if (s == "cylinder") return Primitive::kCylinder;
    throw std::invalid_argument("unknown primitive: " + s);
}

struct PartSpec {
    Primitive shape = Primitive::kBox;
    int count = 0;
    Eigen::Vector3d half_extent{0.5, 0.5, 0.5};  // box half sizes / sphere & cylinder radius+height
    Eigen::Vector3d color{0.5, 0.5, 0.5};
    Eigen::Vector4d feature{0.0, 0.0, 0.0, 0.0};
    Se3d transform0;
    Se3d transform1;
};

struct SceneSpec {
    std::vector<PartSpec> parts;
    double position_noise = 0.0;   // sigma, world units, independent per state
    double feature_jitter = 0.01;  // per-point fingerprint around the part feature
    std::uint64_t seed = 0;
};

struct GroundTruth {
    std::vector<int> g1_index_of_g0;  // partner of each G0 point after the shuffle
    std::vector<int> part_of_g0;
    std::vector<Se3d> part_transforms;  // world map state0 -> state1 per part
    double noise_sigma = 0.0;
};

struct SyntheticScene {
    FeaturedPointCloud g0;
    FeaturedPointCloud g1;
    GroundTruth truth;
};

namespace detail {

inline Eigen::Vector3d sample_primitive(Primitive shape, const Eigen::Vector3d& he,
                                        std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    switch (shape) {
        case Primitive::kBox: {
            // pick a face weighted by area, then a uniform point on it
            const double ax = he.y() * he.z(), ay = he.x() * he.z(), az = he.x() * he.y();
            std::uniform_real_distribution<double> pick(0.0, ax + ay + az);
            const double r = pick(rng);
            std::uniform_real_distribution<double> sign_dist(0.0, 1.0);
            const double sign = sign_dist(rng) < 0.5 ? -1.0 : 1.0;
            if (r < ax) return {sign * he.x(), unit(rng) * he.y(), unit(rng) * he.z()};
            if (r < ax + ay) return {unit(rng) * he.x(), sign * he.y(), unit(rng) * he.z()};
            return {unit(rng) * he.x(), unit(rng) * he.y(), sign * he.z()};
        }
        case Primitive::kSphere: {
            std::normal_distribution<double> gauss(0.0, 1.0);
            Eigen::Vector3d v(gauss(rng), gauss(rng), gauss(rng));
            while (v.norm() < 1e-12) v = Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
            return v.normalized() * he.x();
        }
        case Primitive::kCylinder: {
            // radius he.x, half height he.z, lateral surface only
            const double a = angle(rng);
            return {he.x() * std::cos(a), he.x() * std::sin(a), unit(rng) * he.z()};
        }
    }
    throw std::logic_error("sample_primitive: unreachable");
}

}  // namespace detail

inline SyntheticScene generate(const SceneSpec& spec) {
    for (const auto& part : spec.parts) {
        if (part.count <= 0) throw std::invalid_argument("generate: part point counts must be positive");
        if (!is_unit_quat(part.transform0.rotation, 1e-6) ||
            !is_unit_quat(part.transform1.rotation, 1e-6)) {
            throw std::invalid_argument("generate: part transforms need unit rotations");
        }
    }
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Eigen::Index total = 0;
    for (const auto& part : spec.parts) total += part.count;

    SyntheticScene scene;
    scene.g0.positions.resize(total, 3);
    scene.g0.colors.resize(total, 3);
    scene.g0.features.resize(total, 4);
    scene.g0.reduced_features.resize(total, 4);
    scene.truth.part_of_g0.resize(static_cast<std::size_t>(total));
    scene.truth.noise_sigma = spec.position_noise;

    Matrix g1_positions(total, 3);
    Eigen::Index row = 0;
    for (std::size_t p = 0; p < spec.parts.size(); ++p) {
        const PartSpec& part = spec.parts[p];
        scene.truth.part_transforms.push_back(compose(part.transform1, inverse(part.transform0)));
        for (int i = 0; i < part.count; ++i, ++row) {
            const Eigen::Vector3d base = detail::sample_primitive(part.shape, part.half_extent, rng);
            Eigen::Vector4d feat = part.feature;
            for (int k = 0; k < 4; ++k) feat(k) += spec.feature_jitter * gauss(rng);
            scene.g0.positions.row(row) = part.transform0.apply(base).transpose();
            g1_positions.row(row) = part.transform1.apply(base).transpose();
            scene.g0.colors.row(row) = part.color.transpose();
            scene.g0.features.row(row) = feat.transpose();
            scene.g0.reduced_features.row(row) = feat.transpose();
            scene.truth.part_of_g0[static_cast<std::size_t>(row)] = static_cast<int>(p);
        }
    }
    if (spec.position_noise > 0.0) {
        for (Eigen::Index i = 0; i < total; ++i) {
            for (int k = 0; k < 3; ++k) {
                scene.g0.positions(i, k) += spec.position_noise * gauss(rng);
                g1_positions(i, k) += spec.position_noise * gauss(rng);
            }
        }
    }

    // seeded shuffle of the end state
    std::vector<int> perm(static_cast<std::size_t>(total));
    std::iota(perm.begin(), perm.end(), 0);
    for (Eigen::Index i = total - 1; i > 0; --i) {
        std::uniform_int_distribution<Eigen::Index> pick(0, i);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
    }
    // perm[k] = original index stored at shuffled row k
    scene.truth.g1_index_of_g0.resize(static_cast<std::size_t>(total));
    scene.g1.positions.resize(total, 3);
    scene.g1.colors.resize(total, 3);
    scene.g1.features.resize(total, 4);
    scene.g1.reduced_features.resize(total, 4);
    for (Eigen::Index k = 0; k < total; ++k) {
        const int orig = perm[static_cast<std::size_t>(k)];
        scene.truth.g1_index_of_g0[static_cast<std::size_t>(orig)] = static_cast<int>(k);
        scene.g1.positions.row(k) = g1_positions.row(orig);
        scene.g1.colors.row(k) = scene.g0.colors.row(orig);
        scene.g1.features.row(k) = scene.g0.features.row(orig);
        scene.g1.reduced_features.row(k) = scene.g0.reduced_features.row(orig);
    }
    return scene;
}

// Fraction of points matched to their ground-truth partner. With noise the
// prediction counts as correct when it lands on any G1 point at least as
// close to the true partner's position as 1.5x the noise level.
inline double score_correspondence(const std::vector<int>& predicted, const GroundTruth& truth,
                                   const Matrix& g1_positions) {
    if (predicted.size() != truth.g1_index_of_g0.size()) {
        throw std::invalid_argument("score_correspondence: length mismatch");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int want = truth.g1_index_of_g0[i];
        if (truth.noise_sigma <= 0.0) {
            correct += predicted[i] == want;
        } else {
            const double d = (g1_positions.row(predicted[i]) - g1_positions.row(want)).norm();
            correct += d <= 1.5 * truth.noise_sigma;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

struct TransformScore {
    double median_rotation_error_deg = 0.0;
    double median_translation_error_fraction = 0.0;  // of the G0 bbox diagonal
};

inline double bbox_diagonal(const Matrix& positions) {
    const Eigen::RowVector3d lo = positions.colwise().minCoeff();
    const Eigen::RowVector3d hi = positions.colwise().maxCoeff();
    return (hi - lo).norm();
}

// Per-point predicted world transforms against each point's part transform.
inline TransformScore score_transforms(const std::vector<Se3d>& predicted,
                                       const GroundTruth& truth, const Matrix& g0_positions) {
    if (predicted.size() != truth.part_of_g0.size()) {
        throw std::invalid_argument("score_transforms: length mismatch");
    }
    const double diag = bbox_diagonal(g0_positions);
    std::vector<double> rot_err, trans_err;
    rot_err.reserve(predicted.size());
    trans_err.reserve(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const Se3d& gt = truth.part_transforms[static_cast<std::size_t>(
            truth.part_of_g0[i])];
        rot_err.push_back(quat_angle(predicted[i].rotation, gt.rotation) * 180.0 / M_PI);
        trans_err.push_back((predicted[i].translation - gt.translation).norm() / diag);
    }
    auto median = [](std::vector<double>& v) {
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    return {median(rot_err), median(trans_err)};
}

// ---------------------------------------------------------------------------
// JSON scene specs (CLI input)
// ---------------------------------------------------------------------------

inline Se3d se3_from_json(const Json& j) {
    Se3d t;
    const auto& q = j.at("rotation");  // [w, x, y, z]
    t.rotation = normalized_quat(
        Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>()));
    const auto& tr = j.at("translation");
    t.translation << tr.at(0).get<double>(), tr.at(1).get<double>(), tr.at(2).get<double>();
    return t;
}

inline Json se3_to_json(const Se3d& t) {
    return Json{{"rotation", {t.rotation.w(), t.rotation.x(), t.rotation.y(), t.rotation.z()}},
                {"translation", {t.translation(0), t.translation(1), t.translation(2)}}};
}

inline SceneSpec scene_spec_from_json(const Json& j) {
    SceneSpec spec;
    spec.position_noise = j.value("position_noise", 0.0);
    spec.feature_jitter = j.value("feature_jitter", 0.01);
    spec.seed = j.value("seed", std::uint64_t{0});
    for (const auto& pj : j.at("parts")) {
        PartSpec part;
        part.shape = primitive_from_string(pj.value("shape", std::string("box")));
        part.count = pj.at("count").get<int>();
        if (pj.contains("half_extent")) {
            const auto& he = pj.at("half_extent");
            part.half_extent << he.at(0).get<double>(), he.at(1).get<double>(), he.at(2).get<double>();
        }
        if (pj.contains("color")) {
            const auto& c = pj.at("color");
            part.color << c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>();
        }
        if (pj.contains("feature")) {
            const auto& f = pj.at("feature");
            part.feature << f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>(),
                f.at(3).get<double>();
        }
        if (pj.contains("transform0")) part.transform0 = se3_from_json(pj.at("transform0"));
        if (pj.contains("transform1")) part.transform1 = se3_from_json(pj.at("transform1"));
        spec.parts.push_back(part);
    }
    return spec;
}

inline Json ground_truth_to_json(const GroundTruth& truth) {
    Json j;
    j["g1_index_of_g0"] = truth.g1_index_of_g0;
    j["part_of_g0"] = truth.part_of_g0;
    Json parts = Json::array();
    for (const auto& t : truth.part_transforms) parts.push_back(se3_to_json(t));
    j["part_transforms"] = std::move(parts);
    j["noise_sigma"] = truth.noise_sigma;
    return j;
}

inline GroundTruth ground_truth_from_json(const Json& j) {
    GroundTruth truth;
    truth.g1_index_of_g0 = j.at("g1_index_of_g0").get<std::vector<int>>();
    truth.part_of_g0 = j.at("part_of_g0").get<std::vector<int>>();
    for (const auto& pj : j.at("part_transforms")) truth.part_transforms.push_back(se3_from_json(pj));
    truth.noise_sigma = j.at("noise_sigma").get<double>();
    return truth;
}

}  // namespace gmc
