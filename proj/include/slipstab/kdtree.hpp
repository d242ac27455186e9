#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

#include "slipstab/geom.hpp"

namespace slipstab {

/// Minimal 3-D kd-tree over a fixed point set. Built once, queried many times.
class KdTree3 {
public:
    KdTree3() = default;
    explicit KdTree3(const std::vector<Vec3>& points) { build(points); }

    void build(const std::vector<Vec3>& points) {
        points_ = points;
        order_.resize(points.size());
        std::iota(order_.begin(), order_.end(), 0);
        nodes_.clear();
        nodes_.reserve(points.size());
        if (!points_.empty()) root_ = build_range(0, static_cast<int>(points_.size()));
    }

    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const std::vector<Vec3>& points() const { return points_; }

    /// Index and squared distance of the nearest point.
    std::pair<int, double> nearest(const Vec3& query) const {
        int best = -1;
        double best_sq = std::numeric_limits<double>::infinity();
        nearest_rec(root_, query, best, best_sq);
        return {best, best_sq};
    }

    /// Indices of the k nearest points, nearest first.
    std::vector<int> knn(const Vec3& query, int k) const {
        // max-heap of (squared distance, index)
        std::priority_queue<std::pair<double, int>> heap;
        knn_rec(root_, query, k, heap);
        std::vector<int> out(heap.size());
        for (int i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = heap.top().second;
            heap.pop();
        }
        return out;
    }

private:
    struct Node {
        int index = -1;
        int axis = 0;
        int left = -1;
        int right = -1;
    };

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;

    int build_range(int lo, int hi) {
        if (lo >= hi) return -1;
        Vec3 mn = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(lo)])];
        Vec3 mx = mn;
        for (int i = lo + 1; i < hi; ++i) {
            const Vec3& p = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
            mn = mn.cwiseMin(p);
            mx = mx.cwiseMax(p);
        }
        int axis = 0;
        (mx - mn).maxCoeff(&axis);

        const int mid = lo + (hi - lo) / 2;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                         [&](int a, int b) {
                             return points_[static_cast<std::size_t>(a)][axis] <
                                    points_[static_cast<std::size_t>(b)][axis];
                         });

        Node node;
        node.index = order_[static_cast<std::size_t>(mid)];
        node.axis = axis;
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const int left = build_range(lo, mid);
        const int right = build_range(mid + 1, hi);
        nodes_[static_cast<std::size_t>(self)].left = left;
        nodes_[static_cast<std::size_t>(self)].right = right;
        return self;
    }

    void nearest_rec(int node_id, const Vec3& query, int& best, double& best_sq) const {
        if (node_id < 0) return;
        const Node& node = nodes_[static_cast<std::size_t>(node_id)];
        const Vec3& p = points_[static_cast<std::size_t>(node.index)];
        const double d_sq = (p - query).squaredNorm();
        if (d_sq < best_sq) {
            best_sq = d_sq;
            best = node.index;
        }
        const double delta = query[node.axis] - p[node.axis];
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        nearest_rec(near, query, best, best_sq);
        if (delta * delta < best_sq) nearest_rec(far, query, best, best_sq);
    }

    void knn_rec(int node_id, const Vec3& query, int k,
                 std::priority_queue<std::pair<double, int>>& heap) const {
        if (node_id < 0) return;
        const Node& node = nodes_[static_cast<std::size_t>(node_id)];
        const Vec3& p = points_[static_cast<std::size_t>(node.index)];
        const double d_sq = (p - query).squaredNorm();
        if (static_cast<int>(heap.size()) < k) {
            heap.emplace(d_sq, node.index);
        } else if (d_sq < heap.top().first) {
            heap.pop();
            heap.emplace(d_sq, node.index);
        }
        const double delta = query[node.axis] - p[node.axis];
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        knn_rec(near, query, k, heap);
        if (static_cast<int>(heap.size()) < k || delta * delta < heap.top().first) {
            knn_rec(far, query, k, heap);
        }
    }
};

}  // namespace slipstab
