// Per-point relative SE(3) motion between the two states and frame
// synthesis by SLERP / linear interpolation, including extrapolation.
//
// The relative transform of point i with match j is
//   R_r = R_j^(1)T R_i^(0),   t_r = R_j^(1)T (t_i^(0) - t_j^(1)),
// so R_r mu_i + t_r lands on the matched end-state position. Interpolation
// blends from the identity: R_t = slerp(I, R_r, t), t_t = t * t_r.

#pragma once

#include "gmc/energy.hpp"
#include "gmc/field.hpp"
#include "gmc/geometry.hpp"
#include "gmc/pointset.hpp"
#include "gmc/serialize.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmc {

struct MotionModel {
    Matrix rotations;          // N x 4 unit quaternions (w, x, y, z), hemisphere w >= 0
    Matrix translations;       // N x 3, normalized units
    std::vector<int> matched;  // index into G1 per point
    std::vector<double> match_energy;
    Matrix start_normalized;   // N x 3, normalized G0 positions
    Matrix start_world;        // N x 3, exact world-space G0 positions
    NormStats stats;

    Eigen::Index size() const { return rotations.rows(); }

    Se3d relative_transform(Eigen::Index i) const {
        Se3d out;
        out.rotation = Quat(rotations(i, 0), rotations(i, 1), rotations(i, 2), rotations(i, 3));
        out.translation = translations.row(i).transpose();
        return out;
    }

    // The same per-point transform expressed in world coordinates
    // (conjugation by the normalization map; the rotation is unchanged).
    Se3d world_transform(Eigen::Index i) const {
        Se3d norm_t = relative_transform(i);
        const double a = stats.position_weight / stats.position_scale;
        const Eigen::Vector3d b = -a * stats.position_mean;
        Se3d out;
        out.rotation = norm_t.rotation;
        out.translation = (norm_t.rotation * b + norm_t.translation - b) / a;
        return out;
    }
};

// Matches every G0 point against the full G1 set with zero Gumbel noise and
// extracts the per-point relative transforms. Clouds must be normalized with
// the shared stats; `world_positions` carries the exact start-state world
// coordinates that pose_at(0) reproduces.
inline MotionModel build_motion_model(const UnaryField& f0, const UnaryField& f1,
                                      const FeaturedPointCloud& g0_normalized,
                                      const FeaturedPointCloud& g1_normalized,
                                      const NormStats& stats, const Matrix& world_positions,
                                      const EnergyConfig& energy_cfg) {
    if (g0_normalized.size() == 0 || g1_normalized.size() == 0) {
        throw std::invalid_argument("build_motion_model: empty cloud");
    }
    if (world_positions.rows() != g0_normalized.size()) {
        throw std::invalid_argument("build_motion_model: world position row mismatch");
    }
    const FieldTape t0 =
        field_to_canonical(f0, g0_normalized.positions, g0_normalized.reduced_features);
    const FieldTape t1 =
        field_to_canonical(f1, g1_normalized.positions, g1_normalized.reduced_features);
    if (!t0.canonical.allFinite() || !t1.canonical.allFinite()) {
        throw std::runtime_error("build_motion_model: fields produced non-finite canonicals");
    }

    EnergyConfig ecfg = energy_cfg;
    ecfg.gumbel_scale = 0.0;  // inference matching is deterministic
    const Matrix emb0 = energy_embedding(g0_normalized.colors, g0_normalized.reduced_features,
                                         t0.canonical, ecfg);
    const Matrix emb1 = energy_embedding(g1_normalized.colors, g1_normalized.reduced_features,
                                         t1.canonical, ecfg);
    const KdTree tree1(emb1);
    const MatchSet matches = min_energy_match(emb0, tree1, ecfg);

    MotionModel model;
    const Eigen::Index n = g0_normalized.size();
    model.rotations.resize(n, 4);
    model.translations.resize(n, 3);
    model.matched = matches.matched;
    model.match_energy = matches.energy;
    model.start_normalized = g0_normalized.positions;
    model.start_world = world_positions;
    model.stats = stats;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int j = matches.matched[static_cast<std::size_t>(i)];
        const Se3d ti = field_transform_at(t0, i);
        const Se3d tj = field_transform_at(t1, j);
        Quat rel = tj.rotation.conjugate() * ti.rotation;
        rel = same_hemisphere(Quat::Identity(), normalized_quat(rel));
        model.rotations.row(i) << rel.w(), rel.x(), rel.y(), rel.z();
        model.translations.row(i) =
            (tj.rotation.conjugate() * (ti.translation - tj.translation)).transpose();
    }
    return model;
}

// World-space positions at interpolation parameter t (t < 0 and t > 1
// extrapolate). t = 0 returns the stored start positions exactly.
inline Matrix pose_at(const MotionModel& model, double t) {
    if (t == 0.0) return model.start_world;
    const Eigen::Index n = model.size();
    Matrix out(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Quat q_t = slerp(Quat::Identity(), Quat(model.rotations(i, 0), model.rotations(i, 1),
                                                      model.rotations(i, 2), model.rotations(i, 3)),
                               t);
        const Vec3 p = rotate(q_t, model.start_normalized.row(i).transpose()) +
                       t * model.translations.row(i).transpose();
        out.row(i) = denormalize_position(p, model.stats).transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Frame export
// ---------------------------------------------------------------------------

inline constexpr int kTransformsSchemaVersion = 1;

inline Json motion_to_json(const MotionModel& model) {
    Json j;
    j["schema_version"] = kTransformsSchemaVersion;
    j["count"] = model.size();
    Json points = Json::array();
    for (Eigen::Index i = 0; i < model.size(); ++i) {
        points.push_back({{"rotation", {model.rotations(i, 0), model.rotations(i, 1),
                                        model.rotations(i, 2), model.rotations(i, 3)}},
                          {"translation", {model.translations(i, 0), model.translations(i, 1),
                                           model.translations(i, 2)}},
                          {"matched", model.matched[static_cast<std::size_t>(i)]},
                          {"energy", model.match_energy[static_cast<std::size_t>(i)]}});
    }
    j["points"] = std::move(points);
    j["norm"] = {{"position_mean", {model.stats.position_mean(0), model.stats.position_mean(1),
                                    model.stats.position_mean(2)}},
                 {"position_scale", model.stats.position_scale},
                 {"position_weight", model.stats.position_weight}};
    return j;
}

// Writes one PLY per timestep (interpolated positions, template colors and
// features) plus transforms.json. Returns the written frame paths.
inline std::vector<std::string> export_frames(const MotionModel& model,
                                              const std::vector<double>& timesteps,
                                              const FeaturedPointCloud& tmpl,
                                              const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (tmpl.size() != model.size()) {
        throw std::invalid_argument("export_frames: template size does not match model");
    }
    std::vector<std::string> paths;
    for (std::size_t s = 0; s < timesteps.size(); ++s) {
        FeaturedPointCloud frame = tmpl;
        frame.positions = pose_at(model, timesteps[s]);
        char name[64];
        std::snprintf(name, sizeof(name), "frame_%04zu.ply", s);
        const std::string path = out_dir + "/" + name;
        try {
            save_ply(frame, path);
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("export_frames: ") + e.what());
        }
        paths.push_back(path);
    }
    Json manifest;
    manifest["timesteps"] = timesteps;
    manifest["frames"] = paths;
    write_text_file(out_dir + "/frames.json", manifest.dump(2));
    write_text_file(out_dir + "/transforms.json", motion_to_json(model).dump());
    return paths;
}

}  // namespace gmc
