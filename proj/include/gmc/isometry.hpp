// Local isometry regularizer over k-nearest-neighbor graphs in the original
// space: mean absolute change of squared pairwise distances across graph
// edges. Applied to the canonical maps of both clouds and to the composed
// cross-frame transform.

#pragma once

#include "gmc/kdtree.hpp"
#include "gmc/mlp.hpp"

#include <stdexcept>
#include <vector>

namespace gmc {

struct NeighborGraph {
    std::vector<std::vector<int>> neighbors;  // per point, k nearest (or N-1 when N <= k)
    int k = 256;

    Eigen::Index size() const { return static_cast<Eigen::Index>(neighbors.size()); }
};

// Exact Euclidean kNN on the original positions, ties broken by index.
// k >= N clamps each list to N-1 entries.
inline NeighborGraph build_neighbor_graph(const Matrix& positions, int k) {
    const Eigen::Index n = positions.rows();
    if (n < 2) throw std::invalid_argument("build_neighbor_graph: need at least 2 points");
    if (k <= 0) throw std::invalid_argument("build_neighbor_graph: k must be positive");
    NeighborGraph graph;
    graph.k = k;
    graph.neighbors.resize(static_cast<std::size_t>(n));
    const int kk = std::min<int>(k, static_cast<int>(n) - 1);
    const KdTree tree(positions);
    for (Eigen::Index i = 0; i < n; ++i) {
        graph.neighbors[static_cast<std::size_t>(i)] =
            tree.knearest(positions.row(i).transpose(), kk, static_cast<int>(i));
    }
    return graph;
}

struct IsometryLoss {
    double value = 0.0;
    Matrix d_transformed;          // same shape as transformed positions
    Eigen::Index edge_count = 0;
};

// |d_orig^2 - d_new^2| averaged over graph edges, with the gradient with
// respect to the transformed positions. `selection` restricts to a batch:
// when non-empty, row b of the position arrays corresponds to original point
// selection[b], and only edges with both endpoints in the batch contribute
// (normalized by the realized edge count).
inline IsometryLoss isometry_loss(const Matrix& original, const Matrix& transformed,
                                  const NeighborGraph& graph,
                                  const std::vector<int>& selection = {}) {
    if (original.rows() != transformed.rows()) {
        throw std::invalid_argument("isometry_loss: position arrays misaligned");
    }
    IsometryLoss out;
    out.d_transformed = Matrix::Zero(transformed.rows(), 3);

    // map original index -> batch row (-1 when absent)
    std::vector<int> row_of;
    if (!selection.empty()) {
        row_of.assign(static_cast<std::size_t>(graph.size()), -1);
        for (std::size_t b = 0; b < selection.size(); ++b) {
            row_of[static_cast<std::size_t>(selection[b])] = static_cast<int>(b);
        }
    }

    double total = 0.0;
    for (Eigen::Index bi = 0; bi < original.rows(); ++bi) {
        const int i = selection.empty() ? static_cast<int>(bi) : selection[static_cast<std::size_t>(bi)];
        for (int j : graph.neighbors[static_cast<std::size_t>(i)]) {
            const int bj = selection.empty() ? j : row_of[static_cast<std::size_t>(j)];
            if (bj < 0) continue;
            const Eigen::RowVector3d d_orig = original.row(bi) - original.row(bj);
            const Eigen::RowVector3d d_new = transformed.row(bi) - transformed.row(bj);
            const double gap = d_orig.squaredNorm() - d_new.squaredNorm();
            total += std::abs(gap);
            ++out.edge_count;
            // d|gap|/d(transformed_i) = -sign(gap) * 2 (x_i - x_j)
            const double s = gap > 0.0 ? 1.0 : (gap < 0.0 ? -1.0 : 0.0);
            out.d_transformed.row(bi) -= s * 2.0 * d_new;
            out.d_transformed.row(bj) += s * 2.0 * d_new;
        }
    }
    if (out.edge_count > 0) {
        out.value = total / static_cast<double>(out.edge_count);
        out.d_transformed /= static_cast<double>(out.edge_count);
    }
    return out;
}

// L = L_E + alpha * (iso terms already summed by the caller).
inline double total_loss(double energy_loss, double iso_canonical, double iso_crossframe,
                         double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("total_loss: alpha must be nonnegative");
    return energy_loss + alpha * (iso_canonical + iso_crossframe);
}

}  // namespace gmc
