// Geometry-quality metrics over interpolation sweeps: exact earth mover's
// distance on subsampled sets, multiscale potential energy discrepancy, and
// their progress-weighted SI aggregates.

#pragma once

#include "gmc/kdtree.hpp"
#include "gmc/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace gmc {

// ---------------------------------------------------------------------------
// Exact square assignment (Jonker-Volgenant shortest augmenting path).
// cost is n x n; returns the column assigned to each row.
// ---------------------------------------------------------------------------

inline std::vector<int> solve_assignment(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    if (cost.cols() != n) throw std::invalid_argument("solve_assignment: cost must be square");
    const double inf = std::numeric_limits<double>::infinity();
    // 1-based internals, the classic formulation with row/column potentials
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);  // match[col] = row
    std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = match[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j) {
        row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)]) - 1] = j - 1;
    }
    return row_to_col;
}

// ---------------------------------------------------------------------------
// EMD
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> subsample_indices(Eigen::Index n, int count, std::mt19937_64& rng) {
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    if (count >= n) return all;
    for (int i = 0; i < count; ++i) {
        std::uniform_int_distribution<int> pick(i, static_cast<int>(n) - 1);
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
    }
    all.resize(static_cast<std::size_t>(count));
    return all;
}

}  // namespace detail

// Mean Euclidean transport cost under the exact minimum-cost perfect
// matching, after seeded uniform subsampling of both sets to
// s = min(|P|, |Q|, subsample) points.
inline double emd(const Matrix& p, const Matrix& q, int subsample = 1024,
                  std::uint64_t seed = 0) {
    if (p.rows() == 0 || q.rows() == 0) throw std::invalid_argument("emd: empty point set");
    const int s = static_cast<int>(std::min<Eigen::Index>({p.rows(), q.rows(), subsample}));
    std::mt19937_64 rng(seed);
    const std::vector<int> ip = detail::subsample_indices(p.rows(), s, rng);
    const std::vector<int> iq = detail::subsample_indices(q.rows(), s, rng);
    Matrix cost(s, s);
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
            cost(i, j) = (p.row(ip[static_cast<std::size_t>(i)]) -
                          q.row(iq[static_cast<std::size_t>(j)]))
                             .norm();
        }
    }
    const std::vector<int> assign = solve_assignment(cost);
    double total = 0.0;
    for (int i = 0; i < s; ++i) total += cost(i, assign[static_cast<std::size_t>(i)]);
    return total / static_cast<double>(s);
}

// ---------------------------------------------------------------------------
// MPED
// ---------------------------------------------------------------------------

namespace detail {

// Local potential of every point: sum of squared distances to its k nearest
// same-cloud neighbors.
inline Vector local_potentials(const Matrix& cloud, int k) {
    const Eigen::Index n = cloud.rows();
    Vector pot = Vector::Zero(n);
    if (n < 2) return pot;
    const int kk = std::min<int>(k, static_cast<int>(n) - 1);
    const KdTree tree(cloud);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto nn = tree.knearest(cloud.row(i).transpose(), kk, static_cast<int>(i));
        double sum = 0.0;
        for (int j : nn) sum += (cloud.row(i) - cloud.row(j)).squaredNorm();
        pot(i) = sum;
    }
    return pot;
}

}  // namespace detail

// Multiscale potential energy discrepancy between a predicted cloud Q and a
// reference P. Neighborhood sizes are fractions of each cloud's own count;
// per scale the score is mean_q |pot_P(nearest P point) - pot_Q(q)| and the
// scales are summed.
inline double mped(const Matrix& p, const Matrix& q,
                   const std::vector<double>& scales = {0.001, 0.005, 0.01}) {
    if (p.rows() == 0 || q.rows() == 0) throw std::invalid_argument("mped: empty point set");
    const KdTree ptree(p);
    std::vector<int> nearest_in_p(static_cast<std::size_t>(q.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        nearest_in_p[static_cast<std::size_t>(i)] = ptree.nearest(q.row(i).transpose());
    }
    double total = 0.0;
    for (double frac : scales) {
        const int kp = std::max(1, static_cast<int>(std::lround(frac * static_cast<double>(p.rows()))));
        const int kq = std::max(1, static_cast<int>(std::lround(frac * static_cast<double>(q.rows()))));
        const Vector pot_p = detail::local_potentials(p, kp);
        const Vector pot_q = detail::local_potentials(q, kq);
        double scale_term = 0.0;
        for (Eigen::Index i = 0; i < q.rows(); ++i) {
            scale_term += std::abs(pot_p(nearest_in_p[static_cast<std::size_t>(i)]) - pot_q(i));
        }
        total += scale_term / static_cast<double>(q.rows());
    }
    return total;
}

// ---------------------------------------------------------------------------
// SI aggregation
// ---------------------------------------------------------------------------

struct MetricReport {
    std::vector<double> timesteps;
    std::vector<double> emd_to_start, emd_to_end;
    std::vector<double> mped_to_start, mped_to_end;
    std::vector<double> progress_weights;
    double si_emd = 0.0;   // reported x 1e3
    double si_mped = 0.0;  // reported x 1e3
};

// Progress weights from the trajectories: mean displacement from the first
// frame over mean total displacement, clamped to [0, 1]. Zero total movement
// falls back to the raw interpolation parameter.
inline std::vector<double> progress_weights(const std::vector<Matrix>& frames,
                                            const std::vector<double>& timesteps) {
    if (frames.size() < 2) throw std::invalid_argument("progress_weights: need >= 2 frames");
    const Matrix& first = frames.front();
    const Matrix& last = frames.back();
    const double total = (last - first).rowwise().norm().mean();
    std::vector<double> w(frames.size());
    for (std::size_t s = 0; s < frames.size(); ++s) {
        if (total > 0.0) {
            const double moved = (frames[s] - first).rowwise().norm().mean();
            w[s] = std::clamp(moved / total, 0.0, 1.0);
        } else {
            w[s] = timesteps[s];
        }
    }
    return w;
}

// (1 - w_t) D(P_t, start) + w_t D(P_t, end), averaged over interior steps,
// reported x 1e3.
inline double si_aggregate(const std::vector<double>& to_start, const std::vector<double>& to_end,
                           const std::vector<double>& weights) {
    const std::size_t n = to_start.size();
    if (n < 2 || to_end.size() != n || weights.size() != n) {
        throw std::invalid_argument("si_aggregate: need >= 2 aligned steps");
    }
    double sum = 0.0;
    for (std::size_t s = 1; s + 1 < n; ++s) {
        sum += (1.0 - weights[s]) * to_start[s] + weights[s] * to_end[s];
    }
    const std::size_t interior = n - 2;
    return interior > 0 ? 1e3 * sum / static_cast<double>(interior) : 0.0;
}

// Full sweep evaluation of interpolated frames against the two endpoint
// clouds.
inline MetricReport evaluate_sweep(const std::vector<Matrix>& frames,
                                   const std::vector<double>& timesteps, const Matrix& start,
                                   const Matrix& end, int emd_subsample = 1024,
                                   std::uint64_t seed = 0) {
    if (frames.size() != timesteps.size()) {
        throw std::invalid_argument("evaluate_sweep: frames/timesteps mismatch");
    }
    MetricReport rep;
    rep.timesteps = timesteps;
    rep.progress_weights = progress_weights(frames, timesteps);
    for (const Matrix& f : frames) {
        rep.emd_to_start.push_back(emd(f, start, emd_subsample, seed));
        rep.emd_to_end.push_back(emd(f, end, emd_subsample, seed));
        rep.mped_to_start.push_back(mped(start, f));
        rep.mped_to_end.push_back(mped(end, f));
    }
    rep.si_emd = si_aggregate(rep.emd_to_start, rep.emd_to_end, rep.progress_weights);
    rep.si_mped = si_aggregate(rep.mped_to_start, rep.mped_to_end, rep.progress_weights);
    return rep;
}

}  // namespace gmc
