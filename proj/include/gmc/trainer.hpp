// Training loop for a pair of unary potential fields: batch sampling, the
// assembled loss (bidirectional energy + local isometry with alpha ramp),
// Gumbel annealing, Adam updates, checkpointing, and convergence reporting.

#pragma once

#include "gmc/energy.hpp"
#include "gmc/field.hpp"
#include "gmc/geometry.hpp"
#include "gmc/isometry.hpp"
#include "gmc/mlp.hpp"
#include "gmc/pointset.hpp"
#include "gmc/serialize.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmc {

struct TrainConfig {
    int iterations = 20000;
    double lr = 5e-4;
    double alpha_start = 0.0;
    double alpha_end = 10.0;
    int alpha_ramp_iters = 10000;
    double dropout_ratio = 0.1;    // paired with position_weight: {0.1, 0.2} <-> {1.0, 0.1}
    double position_weight = 1.0;
    double gumbel_scale = 0.01;    // linearly decays to 0 over the first half of training
    int neighbor_k = 256;
    int hidden = 128;
    int depth = 3;
    std::uint64_t seed = 0;
    int checkpoint_every = 5000;
    EnergyConfig energy;

    void validate() const {
        if (iterations <= 0) throw std::invalid_argument("TrainConfig: iterations must be positive");
        if (alpha_ramp_iters <= 0 || alpha_ramp_iters > iterations) {
            throw std::invalid_argument("TrainConfig: alpha_ramp_iters must be in [1, iterations]");
        }
        if (dropout_ratio < 0.0 || dropout_ratio >= 1.0) {
            throw std::invalid_argument("TrainConfig: dropout_ratio must be in [0, 1)");
        }
        if (!(position_weight > 0.0)) throw std::invalid_argument("TrainConfig: position_weight <= 0");
        energy.validate();
    }

    double alpha_at(int iter) const {
        const double f = std::min(1.0, static_cast<double>(iter) / alpha_ramp_iters);
        return alpha_start + (alpha_end - alpha_start) * f;
    }

    double gumbel_at(int iter) const {
        const double half = 0.5 * iterations;
        if (iter >= half) return 0.0;
        return gumbel_scale * (1.0 - static_cast<double>(iter) / half);
    }
};

struct TrainReport {
    std::vector<double> energy_loss;
    std::vector<double> iso_loss;  // canonical + crossframe, already alpha-free
    std::vector<double> total;
    double final_mean_matched_energy = 0.0;
    double final_canonical_spread = 0.0;
    std::vector<double> spread_at_checkpoints;
    std::int64_t skipped_updates = 0;
};

struct TrainedFields {
    UnaryField f0;
    UnaryField f1;
    AdamState adam_rot0, adam_trans0, adam_rot1, adam_trans1;
};

// ---------------------------------------------------------------------------
// Loss assembly for one batch (also the entry point for gradient checks).
// ---------------------------------------------------------------------------

struct StepLoss {
    double energy = 0.0;
    double iso_canonical = 0.0;   // both clouds' canonical terms summed
    double iso_crossframe = 0.0;
    double total = 0.0;
    FieldGrads grads0;
    FieldGrads grads1;
    MatchSet forward_matches;  // batch0 rows -> batch1 rows
};

inline Matrix rows_of(const Matrix& m, const std::vector<int>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
    return out;
}

// Full training loss on one pair of batches. Dropout masks are passed in so
// a finite-difference probe can re-evaluate the identical function; pass
// empty matrices for eval-style (no-dropout) evaluation. `rng` drives only
// the Gumbel perturbation and may be null.
inline StepLoss compute_loss_and_grads(
    const UnaryField& f0, const UnaryField& f1, const FeaturedPointCloud& g0,
    const FeaturedPointCloud& g1, const std::vector<int>& batch0, const std::vector<int>& batch1,
    const Matrix& masks0, const Matrix& masks1, const NeighborGraph& graph0,
    const NeighborGraph& graph1, const EnergyConfig& energy_cfg, double alpha,
    std::mt19937_64* rng = nullptr) {
    const Matrix pos0 = rows_of(g0.positions, batch0);
    const Matrix pos1 = rows_of(g1.positions, batch1);
    const Matrix feat0 = rows_of(g0.reduced_features, batch0);
    const Matrix feat1 = rows_of(g1.reduced_features, batch1);

    FieldTape tape0 = field_to_canonical(f0, pos0, feat0, masks0);
    FieldTape tape1 = field_to_canonical(f1, pos1, feat1, masks1);

    BidirectionalLoss energy = bidirectional_energy_loss(
        rows_of(g0.colors, batch0), feat0, tape0.canonical, rows_of(g1.colors, batch1), feat1,
        tape1.canonical, energy_cfg, rng);

    StepLoss out;
    out.energy = energy.loss;
    out.forward_matches = energy.forward;

    Matrix d_can0 = energy.d_canonical0;
    Matrix d_can1 = energy.d_canonical1;
    Matrix d_quat1 = Matrix::Zero(pos1.rows(), 4);
    Matrix d_trans1 = Matrix::Zero(pos1.rows(), 3);

    if (alpha > 0.0) {
        const IsometryLoss iso0 = isometry_loss(pos0, tape0.canonical, graph0, batch0);
        const IsometryLoss iso1 = isometry_loss(pos1, tape1.canonical, graph1, batch1);
        out.iso_canonical = iso0.value + iso1.value;
        d_can0 += alpha * iso0.d_transformed;
        d_can1 += alpha * iso1.d_transformed;

        // Cross-frame term: y_i = R(q_j)^T (mu_hat_i - t_j) for the matched
        // batch1 row j of each batch0 row i; match indices are frozen.
        const Eigen::Index b0 = pos0.rows();
        Matrix crossed(b0, 3);
        for (Eigen::Index i = 0; i < b0; ++i) {
            const int j = out.forward_matches.matched[static_cast<std::size_t>(i)];
            const Quat qj(tape1.unit_quats(j, 0), tape1.unit_quats(j, 1), tape1.unit_quats(j, 2),
                          tape1.unit_quats(j, 3));
            const Vec3 v = tape0.canonical.row(i).transpose() -
                           tape1.trans_tape.output.row(j).transpose();
            crossed.row(i) = rotate(qj.conjugate(), v).transpose();
        }
        const IsometryLoss cross = isometry_loss(pos0, crossed, graph0, batch0);
        out.iso_crossframe = cross.value;
        for (Eigen::Index i = 0; i < b0; ++i) {
            const Vec3 g = alpha * cross.d_transformed.row(i).transpose();
            if (g.isZero(0.0)) continue;
            const int j = out.forward_matches.matched[static_cast<std::size_t>(i)];
            const Quat qj(tape1.unit_quats(j, 0), tape1.unit_quats(j, 1), tape1.unit_quats(j, 2),
                          tape1.unit_quats(j, 3));
            const Vec3 v = tape0.canonical.row(i).transpose() -
                           tape1.trans_tape.output.row(j).transpose();
            const RotateGrad rg = rotate_backward(qj.conjugate(), v, g);
            // conjugation flips the sign of the vector part's gradient
            d_quat1(j, 0) += rg.dq(0);
            d_quat1(j, 1) -= rg.dq(1);
            d_quat1(j, 2) -= rg.dq(2);
            d_quat1(j, 3) -= rg.dq(3);
            d_can0.row(i) += rg.dv.transpose();
            d_trans1.row(j) -= rg.dv.transpose();
        }
    }

    out.total = total_loss(out.energy, out.iso_canonical, out.iso_crossframe, alpha);

    FieldUpstream up0;
    up0.d_canonical = std::move(d_can0);
    out.grads0 = field_backward(f0, tape0, up0);
    FieldUpstream up1;
    up1.d_canonical = std::move(d_can1);
    up1.d_quat = std::move(d_quat1);
    up1.d_trans = std::move(d_trans1);
    out.grads1 = field_backward(f1, tape1, up1);
    return out;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

// Ratio of canonical-position RMS spread to original RMS spread, pooled over
// both clouds. 1.0 for identity fields, 0.0 for total collapse.
inline double canonical_spread(const UnaryField& f0, const UnaryField& f1,
                               const FeaturedPointCloud& g0, const FeaturedPointCloud& g1) {
    auto spread = [](const Matrix& m) {
        const Eigen::RowVector3d mean = m.colwise().mean();
        return (m.rowwise() - mean).squaredNorm();
    };
    const FieldTape t0 = field_to_canonical(f0, g0.positions, g0.reduced_features);
    const FieldTape t1 = field_to_canonical(f1, g1.positions, g1.reduced_features);
    Matrix canonical(g0.size() + g1.size(), 3);
    canonical.topRows(g0.size()) = t0.canonical;
    canonical.bottomRows(g1.size()) = t1.canonical;
    Matrix original(g0.size() + g1.size(), 3);
    original.topRows(g0.size()) = g0.positions;
    original.bottomRows(g1.size()) = g1.positions;
    const double denom = spread(original);
    if (!(denom > 0.0)) return 1.0;
    return std::sqrt(spread(canonical) / denom);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const TrainedFields& fields, int iter,
                            const std::mt19937_64& rng, std::uint64_t config_hash) {
    Json j;
    j["version"] = kCheckpointVersion;
    j["iter"] = iter;
    j["config_hash"] = config_hash;
    j["f0"] = field_to_json(fields.f0);
    j["f1"] = field_to_json(fields.f1);
    j["adam_rot0"] = adam_to_json(fields.adam_rot0);
    j["adam_trans0"] = adam_to_json(fields.adam_trans0);
    j["adam_rot1"] = adam_to_json(fields.adam_rot1);
    j["adam_trans1"] = adam_to_json(fields.adam_trans1);
    j["rng"] = rng_to_string(rng);
    const std::string payload = j.dump();
    Json wrapper;
    wrapper["checksum"] = fnv1a(payload);
    wrapper["payload"] = std::move(j);
    write_text_file(path, wrapper.dump());
}

struct Checkpoint {
    TrainedFields fields;
    int iter = 0;
    std::uint64_t config_hash = 0;
    std::mt19937_64 rng;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    Json wrapper = Json::parse(read_text_file(path));
    const Json& j = wrapper.at("payload");
    if (fnv1a(j.dump()) != wrapper.at("checksum").get<std::uint64_t>()) {
        throw std::runtime_error("load_checkpoint: checksum mismatch, " + path + " is corrupt");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
        throw std::runtime_error("load_checkpoint: unsupported checkpoint version " +
                                 std::to_string(j.at("version").get<int>()));
    }
    Checkpoint cp;
    cp.iter = j.at("iter").get<int>();
    cp.config_hash = j.at("config_hash").get<std::uint64_t>();
    cp.fields.f0 = field_from_json(j.at("f0"));
    cp.fields.f1 = field_from_json(j.at("f1"));
    cp.fields.adam_rot0 = adam_from_json(j.at("adam_rot0"));
    cp.fields.adam_trans0 = adam_from_json(j.at("adam_trans0"));
    cp.fields.adam_rot1 = adam_from_json(j.at("adam_rot1"));
    cp.fields.adam_trans1 = adam_from_json(j.at("adam_trans1"));
    cp.rng = rng_from_string(j.at("rng").get<std::string>());
    return cp;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> sample_without_replacement(int n, int count, std::mt19937_64& rng) {
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    if (count >= n) return all;
    // partial Fisher-Yates
    for (int i = 0; i < count; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
    }
    all.resize(static_cast<std::size_t>(count));
    return all;
}

inline Matrix dropout_masks(Eigen::Index rows, double ratio, std::mt19937_64& rng) {
    if (ratio <= 0.0) return Matrix();
    Matrix m(rows, 3);
    for (Eigen::Index i = 0; i < rows; ++i) {
        m.row(i) = make_dropout_mask(3, ratio, rng).transpose();
    }
    return m;
}

}  // namespace detail

struct TrainResult {
    TrainedFields fields;
    TrainReport report;
    std::mt19937_64 rng;  // state after the run, for reproducible continuation
};

class TrainDivergence : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Trains fields on pre-normalized clouds. `checkpoint_dir` (optional) gets
// checkpoint_<iter>.json files at the configured cadence. `resume` continues
// from a loaded checkpoint and reproduces the unbroken run bit-for-bit.
inline TrainResult train(const FeaturedPointCloud& g0, const FeaturedPointCloud& g1,
                         const TrainConfig& cfg, const std::string& checkpoint_dir = "",
                         const Checkpoint* resume = nullptr) {
    cfg.validate();
    if (g0.size() == 0 || g1.size() == 0) throw std::invalid_argument("train: empty cloud");
    if (!g0.has_reduced() || !g1.has_reduced()) {
        throw std::invalid_argument("train: clouds need reduced features");
    }

    const std::uint64_t config_hash = fnv1a(Json{{"iterations", cfg.iterations},
                                                 {"lr", cfg.lr},
                                                 {"seed", cfg.seed},
                                                 {"hidden", cfg.hidden},
                                                 {"depth", cfg.depth}}
                                                .dump());

    TrainResult res;
    int start_iter = 0;
    if (resume != nullptr) {
        res.fields = resume->fields;
        res.rng = resume->rng;
        start_iter = resume->iter;
    } else {
        res.rng = std::mt19937_64(cfg.seed);
        res.fields.f0 = make_unary_field(0, res.rng, cfg.hidden, cfg.depth);
        res.fields.f1 = make_unary_field(1, res.rng, cfg.hidden, cfg.depth);
        const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
        res.fields.adam_rot0 = make_adam_state(res.fields.f0.rotation_head, adam);
        res.fields.adam_trans0 = make_adam_state(res.fields.f0.translation_head, adam);
        res.fields.adam_rot1 = make_adam_state(res.fields.f1.rotation_head, adam);
        res.fields.adam_trans1 = make_adam_state(res.fields.f1.translation_head, adam);
    }

    const NeighborGraph graph0 = build_neighbor_graph(g0.positions, cfg.neighbor_k);
    const NeighborGraph graph1 = build_neighbor_graph(g1.positions, cfg.neighbor_k);

    const int b0 = std::min<int>(cfg.energy.batch_size, static_cast<int>(g0.size()));
    const int b1 = std::min<int>(cfg.energy.batch_size, static_cast<int>(g1.size()));

    TrainReport& report = res.report;
    double guard_reference = -1.0;
    int guard_streak = 0;

    for (int iter = start_iter; iter < cfg.iterations; ++iter) {
        const double alpha = cfg.alpha_at(iter);
        EnergyConfig ecfg = cfg.energy;
        ecfg.gumbel_scale = cfg.gumbel_at(iter);

        const std::vector<int> batch0 =
            detail::sample_without_replacement(static_cast<int>(g0.size()), b0, res.rng);
        const std::vector<int> batch1 =
            detail::sample_without_replacement(static_cast<int>(g1.size()), b1, res.rng);
        const Matrix masks0 = detail::dropout_masks(static_cast<Eigen::Index>(batch0.size()),
                                                    cfg.dropout_ratio, res.rng);
        const Matrix masks1 = detail::dropout_masks(static_cast<Eigen::Index>(batch1.size()),
                                                    cfg.dropout_ratio, res.rng);

        const StepLoss step =
            compute_loss_and_grads(res.fields.f0, res.fields.f1, g0, g1, batch0, batch1, masks0,
                                   masks1, graph0, graph1, ecfg, alpha, &res.rng);

        report.energy_loss.push_back(step.energy);
        report.iso_loss.push_back(step.iso_canonical + step.iso_crossframe);
        report.total.push_back(step.total);

        if (!std::isfinite(step.total)) {
            throw TrainDivergence("train: non-finite loss at iteration " + std::to_string(iter) +
                                  "; last checkpoint (if any) is the most recent good state");
        }
        if (iter == 100) guard_reference = step.total;
        if (guard_reference > 0.0 && step.total > 10.0 * guard_reference) {
            if (++guard_streak >= 500) {
                throw TrainDivergence("train: loss exceeded 10x its iteration-100 value for 500 "
                                      "consecutive iterations (diverged at iteration " +
                                      std::to_string(iter) + ")");
            }
        } else {
            guard_streak = 0;
        }

        adam_step(res.fields.f0.rotation_head, step.grads0.rotation, res.fields.adam_rot0);
        adam_step(res.fields.f0.translation_head, step.grads0.translation, res.fields.adam_trans0);
        adam_step(res.fields.f1.rotation_head, step.grads1.rotation, res.fields.adam_rot1);
        adam_step(res.fields.f1.translation_head, step.grads1.translation, res.fields.adam_trans1);

        const bool cadence = cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0;
        if (cadence || iter + 1 == cfg.iterations) {
            report.spread_at_checkpoints.push_back(
                canonical_spread(res.fields.f0, res.fields.f1, g0, g1));
            if (!checkpoint_dir.empty()) {
                save_checkpoint(checkpoint_dir + "/checkpoint_" + std::to_string(iter + 1) +
                                    ".json",
                                res.fields, iter + 1, res.rng, config_hash);
            }
        }
    }

    report.skipped_updates = res.fields.adam_rot0.skipped + res.fields.adam_trans0.skipped +
                             res.fields.adam_rot1.skipped + res.fields.adam_trans1.skipped;
    report.final_canonical_spread = canonical_spread(res.fields.f0, res.fields.f1, g0, g1);

    // final mean matched energy over the full clouds, no perturbation
    {
        EnergyConfig ecfg = cfg.energy;
        ecfg.gumbel_scale = 0.0;
        const FieldTape t0 = field_to_canonical(res.fields.f0, g0.positions, g0.reduced_features);
        const FieldTape t1 = field_to_canonical(res.fields.f1, g1.positions, g1.reduced_features);
        const Matrix emb0 = energy_embedding(g0.colors, g0.reduced_features, t0.canonical, ecfg);
        const Matrix emb1 = energy_embedding(g1.colors, g1.reduced_features, t1.canonical, ecfg);
        const KdTree tree1(emb1);
        const MatchSet matches = min_energy_match(emb0, tree1, ecfg);
        double sum = 0.0;
        for (double e : matches.energy) sum += e;
        report.final_mean_matched_energy = sum / static_cast<double>(matches.energy.size());
    }
    return res;
}

}  // namespace gmc
