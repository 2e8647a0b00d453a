// Median-split kd-tree over the rows of an Eigen matrix, dynamic dimension.
// Used both for the 10-D energy embedding search and the 3-D neighbor graph.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <vector>

namespace gmc {

class KdTree {
  public:
    // Points are rows; the matrix is copied so the tree owns its data.
    explicit KdTree(Eigen::MatrixXd points) : points_(std::move(points)) {
        if (points_.rows() == 0) throw std::invalid_argument("KdTree: empty point set");
        index_.resize(static_cast<std::size_t>(points_.rows()));
        std::iota(index_.begin(), index_.end(), 0);
        nodes_.reserve(2 * index_.size());
        root_ = build(0, static_cast<int>(index_.size()));
    }

    Eigen::Index size() const { return points_.rows(); }

    Eigen::VectorXd point(int row) const { return points_.row(row).transpose(); }

    // Index of the nearest row to `query` by squared Euclidean distance.
    // Exact ties resolve to the lowest row index.
    int nearest(const Eigen::VectorXd& query) const {
        int best = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        search(root_, query, best, best_d2);
        return best;
    }

    // k nearest rows, ascending by distance (ties by index). `exclude` drops
    // one row (for self-neighbor queries).
    std::vector<int> knearest(const Eigen::VectorXd& query, int k, int exclude = -1) const {
        using Entry = std::pair<double, int>;  // (d2, index)
        std::priority_queue<Entry> heap;       // max-heap on distance
        search_k(root_, query, k, exclude, heap);
        std::vector<Entry> out;
        out.reserve(heap.size());
        while (!heap.empty()) {
            out.push_back(heap.top());
            heap.pop();
        }
        std::sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) {
            return a.first != b.first ? a.first < b.first : a.second < b.second;
        });
        std::vector<int> idx;
        idx.reserve(out.size());
        for (const auto& e : out) idx.push_back(e.second);
        return idx;
    }

  private:
    struct Node {
        int axis = -1;       // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf range into index_
    };

    static constexpr int kLeafSize = 16;

    int build(int begin, int end) {
        Node node;
        node.begin = begin;
        node.end = end;
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        if (end - begin <= kLeafSize) return id;

        // split on the widest axis at the median
        const int dim = static_cast<int>(points_.cols());
        int axis = 0;
        double widest = -1.0;
        for (int a = 0; a < dim; ++a) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (int i = begin; i < end; ++i) {
                const double v = points_(index_[static_cast<std::size_t>(i)], a);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi - lo > widest) {
                widest = hi - lo;
                axis = a;
            }
        }
        if (!(widest > 0.0)) return id;  // all points identical: keep as leaf

        const int mid = begin + (end - begin) / 2;
        std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                         [&](int a, int b) { return points_(a, axis) < points_(b, axis); });
        nodes_[id].axis = axis;
        nodes_[id].split = points_(index_[static_cast<std::size_t>(mid)], axis);
        nodes_[id].left = build(begin, mid);
        nodes_[id].right = build(mid, end);
        return id;
    }

    void scan_leaf(const Node& node, const Eigen::VectorXd& query, int& best,
                   double& best_d2) const {
        for (int i = node.begin; i < node.end; ++i) {
            const int row = index_[static_cast<std::size_t>(i)];
            const double d2 = (points_.row(row).transpose() - query).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && row < best)) {
                best_d2 = d2;
                best = row;
            }
        }
    }

    void search(int id, const Eigen::VectorXd& query, int& best, double& best_d2) const {
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.axis < 0) {
            scan_leaf(node, query, best, best_d2);
            return;
        }
        const double delta = query(node.axis) - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search(near, query, best, best_d2);
        if (delta * delta <= best_d2) search(far, query, best, best_d2);
    }

    void search_k(int id, const Eigen::VectorXd& query, int k, int exclude,
                  std::priority_queue<std::pair<double, int>>& heap) const {
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const int row = index_[static_cast<std::size_t>(i)];
                if (row == exclude) continue;
                const double d2 = (points_.row(row).transpose() - query).squaredNorm();
                if (static_cast<int>(heap.size()) < k) {
                    heap.emplace(d2, row);
                } else if (d2 < heap.top().first ||
                           (d2 == heap.top().first && row < heap.top().second)) {
                    heap.pop();
                    heap.emplace(d2, row);
                }
            }
            return;
        }
        const double delta = query(node.axis) - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search_k(near, query, k, exclude, heap);
        if (static_cast<int>(heap.size()) < k || delta * delta <= heap.top().first) {
            search_k(far, query, k, exclude, heap);
        }
    }

    Eigen::MatrixXd points_;
    std::vector<int> index_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace gmc
