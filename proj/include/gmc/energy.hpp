// Pairwise matching energy, min-energy neighbor search with optional
// Gumbel perturbation, and the bidirectional energy loss.
//
// The energy is a squared Euclidean distance in the 10-D embedding
// [sqrt(w_c) c, sqrt(w_f) f, sqrt(w_mu) mu_hat], so the nearest-neighbor
// search runs on a kd-tree over that embedding.

#pragma once

#include "gmc/kdtree.hpp"
#include "gmc/mlp.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

namespace gmc {

struct EnergyConfig {
    double w_c = 1.0;
    double w_f = 10.0;
    double w_mu = 10.0;
    double gumbel_scale = 0.0;
    int gumbel_candidates = 8;  // perturbed argmin runs over this many nearest candidates
    int batch_size = 20000;

    void validate() const {
        if (w_c < 0.0 || w_f < 0.0 || w_mu < 0.0) {
            throw std::invalid_argument("EnergyConfig: weights must be nonnegative");
        }
        if (w_c + w_f + w_mu <= 0.0) {
            throw std::invalid_argument("EnergyConfig: at least one weight must be positive");
        }
        if (batch_size <= 0) throw std::invalid_argument("EnergyConfig: batch_size must be positive");
        if (gumbel_scale < 0.0) throw std::invalid_argument("EnergyConfig: gumbel_scale < 0");
    }
};

inline double pair_energy(const Eigen::Vector3d& c_i, const Eigen::Vector4d& f_i,
                          const Eigen::Vector3d& mu_i, const Eigen::Vector3d& c_j,
                          const Eigen::Vector4d& f_j, const Eigen::Vector3d& mu_j,
                          const EnergyConfig& cfg) {
    return cfg.w_c * (c_i - c_j).squaredNorm() + cfg.w_f * (f_i - f_j).squaredNorm() +
           cfg.w_mu * (mu_i - mu_j).squaredNorm();
}

// Rowwise embedding whose squared distances equal the energy.
inline Matrix energy_embedding(const Matrix& colors, const Matrix& reduced_features,
                               const Matrix& canonical, const EnergyConfig& cfg) {
    if (colors.rows() != reduced_features.rows() || colors.rows() != canonical.rows()) {
        throw std::invalid_argument("energy_embedding: row count mismatch");
    }
    Matrix e(colors.rows(), 10);
    e.leftCols<3>() = std::sqrt(cfg.w_c) * colors;
    e.middleCols<4>(3) = std::sqrt(cfg.w_f) * reduced_features;
    e.rightCols<3>() = std::sqrt(cfg.w_mu) * canonical;
    return e;
}

struct MatchSet {
    std::vector<int> matched;             // database index per query
    std::vector<double> energy;           // unperturbed energy of the chosen pair
    std::vector<double> perturbed_energy; // energy actually minimized
};

// Min-energy match of every query row against a database embedding.
//
// With gumbel_scale = 0 this is the exact argmin (ties to the lowest index).
// With gumbel_scale > 0, Gumbel(0,1) noise scaled by gumbel_scale perturbs
// the energies of the `gumbel_candidates` nearest candidates and the argmin
// is taken over those; with small annealed scales the winner outside that
// set has vanishing probability.
inline MatchSet min_energy_match(const Matrix& query_embedding, const KdTree& database,
                                 const EnergyConfig& cfg, std::mt19937_64* rng = nullptr) {
    if (database.size() == 0) throw std::invalid_argument("min_energy_match: empty database");
    const Eigen::Index nq = query_embedding.rows();
    MatchSet out;
    out.matched.resize(static_cast<std::size_t>(nq));
    out.energy.resize(static_cast<std::size_t>(nq));
    out.perturbed_energy.resize(static_cast<std::size_t>(nq));
    const bool perturb = cfg.gumbel_scale > 0.0 && rng != nullptr;
    std::uniform_real_distribution<double> unit(std::numeric_limits<double>::min(), 1.0);
    for (Eigen::Index i = 0; i < nq; ++i) {
        const Eigen::VectorXd q = query_embedding.row(i).transpose();
        if (!perturb) {
            const int j = database.nearest(q);
            out.matched[static_cast<std::size_t>(i)] = j;
            const double e = (database.point(j) - q).squaredNorm();
            out.energy[static_cast<std::size_t>(i)] = e;
            out.perturbed_energy[static_cast<std::size_t>(i)] = e;
            continue;
        }
        const int k = std::min<int>(cfg.gumbel_candidates, static_cast<int>(database.size()));
        const std::vector<int> cand = database.knearest(q, k);
        int best = cand.front();
        double best_clean = (database.point(best) - q).squaredNorm();
        double best_pert = std::numeric_limits<double>::infinity();
        for (int j : cand) {
            const double clean = (database.point(j) - q).squaredNorm();
            const double gumbel = -std::log(-std::log(unit(*rng)));
            const double pert = clean + cfg.gumbel_scale * gumbel;
            if (pert < best_pert) {
                best_pert = pert;
                best = j;
                best_clean = clean;
            }
        }
        out.matched[static_cast<std::size_t>(i)] = best;
        out.energy[static_cast<std::size_t>(i)] = best_clean;
        out.perturbed_energy[static_cast<std::size_t>(i)] = best_pert;
    }
    return out;
}

// One direction of Eq-style matching between two embedded batches; also
// returns the gradient of sum_i E(i, match(i)) with respect to both sides'
// canonical positions (match indices are stop-gradients, energies are the
// unperturbed ones).
struct DirectionalLoss {
    MatchSet matches;
    double loss = 0.0;
    Matrix d_query_canonical;     // Bq x 3
    Matrix d_database_canonical;  // Bd x 3
};

inline DirectionalLoss directional_energy_loss(const Matrix& query_embedding,
                                               const Matrix& query_canonical,
                                               const KdTree& database_tree,
                                               const Matrix& database_canonical,
                                               const EnergyConfig& cfg, std::mt19937_64* rng) {
    if (query_embedding.rows() == 0) throw std::invalid_argument("energy loss: empty batch");
    DirectionalLoss out;
    out.matches = min_energy_match(query_embedding, database_tree, cfg, rng);
    out.d_query_canonical = Matrix::Zero(query_canonical.rows(), 3);
    out.d_database_canonical = Matrix::Zero(database_canonical.rows(), 3);
    for (Eigen::Index i = 0; i < query_embedding.rows(); ++i) {
        const int j = out.matches.matched[static_cast<std::size_t>(i)];
        out.loss += out.matches.energy[static_cast<std::size_t>(i)];
        const Eigen::RowVector3d diff = query_canonical.row(i) - database_canonical.row(j);
        out.d_query_canonical.row(i) += 2.0 * cfg.w_mu * diff;
        out.d_database_canonical.row(j) -= 2.0 * cfg.w_mu * diff;
    }
    return out;
}

// The bidirectional loss: matches from batch 0 into batch 1 and vice versa,
// summing unperturbed energies of the selected pairs. Gradients flow into
// the canonical positions of both batches from both directions.
struct BidirectionalLoss {
    double loss = 0.0;
    MatchSet forward;   // batch0 -> batch1
    MatchSet backward;  // batch1 -> batch0
    Matrix d_canonical0;
    Matrix d_canonical1;
};

inline BidirectionalLoss bidirectional_energy_loss(
    const Matrix& colors0, const Matrix& features0, const Matrix& canonical0,
    const Matrix& colors1, const Matrix& features1, const Matrix& canonical1,
    const EnergyConfig& cfg, std::mt19937_64* rng = nullptr) {
    if (canonical0.rows() == 0 || canonical1.rows() == 0) {
        throw std::invalid_argument("bidirectional_energy_loss: empty batch");
    }
    const Matrix emb0 = energy_embedding(colors0, features0, canonical0, cfg);
    const Matrix emb1 = energy_embedding(colors1, features1, canonical1, cfg);
    const KdTree tree0(emb0);
    const KdTree tree1(emb1);
    BidirectionalLoss out;
    DirectionalLoss fwd = directional_energy_loss(emb0, canonical0, tree1, canonical1, cfg, rng);
    DirectionalLoss bwd = directional_energy_loss(emb1, canonical1, tree0, canonical0, cfg, rng);
    out.loss = fwd.loss + bwd.loss;
    out.forward = std::move(fwd.matches);
    out.backward = std::move(bwd.matches);
    out.d_canonical0 = fwd.d_query_canonical + bwd.d_database_canonical;
    out.d_canonical1 = fwd.d_database_canonical + bwd.d_query_canonical;
    return out;
}

}  // namespace gmc
