#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "l2s/common.hpp"

namespace l2s::knn {

// Exact Euclidean k nearest neighbors over 3-D points. Ties break toward the
// smaller index. Self is excluded unless include_self is set; when fewer than
// k neighbors exist the row is padded by repeating the nearest (a lone point
// pads with itself).
struct NeighborTable {
    int k = 0;
    Matrix<int> indices;  // G x k
};

namespace detail {

// (squared distance, index) with the tie-break ordering baked in.
struct Cand {
    double d2;
    int idx;
    bool operator<(const Cand& o) const { return d2 != o.d2 ? d2 < o.d2 : idx < o.idx; }
};

// Sorted fixed-capacity candidate list; k is small (paper uses 4).
class BestK {
public:
    explicit BestK(int k) : k_(k) { list_.reserve(k); }
    bool full() const { return (int)list_.size() == k_; }
    double worst() const { return list_.back().d2; }
    void offer(const Cand& c) {
        if (full() && !(c < list_.back())) return;
        auto pos = std::upper_bound(list_.begin(), list_.end(), c);
        list_.insert(pos, c);
        if ((int)list_.size() > k_) list_.pop_back();
    }
    const std::vector<Cand>& list() const { return list_; }

private:
    int k_;
    std::vector<Cand> list_;
};

template <typename T>
inline double dist2(const T* a, const T* b) {
    const double dx = (double)a[0] - (double)b[0];
    const double dy = (double)a[1] - (double)b[1];
    const double dz = (double)a[2] - (double)b[2];
    return dx * dx + dy * dy + dz * dz;
}

template <typename T>
void check_points(const Matrix<T>& points) {
    if (points.cols != 3) throw ShapeError("build_knn", points.rows, points.cols, points.rows, 3);
    if (points.rows == 0) throw ConfigError("build_knn: empty point set");
    for (std::size_t i = 0; i < points.rows; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            if (!std::isfinite((double)points.at(i, c)))
                throw NumericError("build_knn: non-finite coordinate at point " + std::to_string(i));
}

inline void fill_row(int* row, int k, const BestK& best, int self) {
    const auto& list = best.list();
    for (int j = 0; j < k; ++j) {
        if (j < (int)list.size())
            row[j] = list[j].idx;
        else
            row[j] = list.empty() ? self : list[0].idx;
    }
}

template <typename T>
struct KdTree {
    struct NodeRec {
        int axis = -1;       // -1 marks a leaf
        double split = 0.0;  // splitting coordinate value
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf range into order
    };
    const Matrix<T>* pts = nullptr;
    std::vector<int> order;
    std::vector<NodeRec> nodes;
    static constexpr int kLeafSize = 8;

    int build(int begin, int end, int depth) {
        NodeRec rec;
        rec.begin = begin;
        rec.end = end;
        const int id = (int)nodes.size();
        nodes.push_back(rec);
        if (end - begin <= kLeafSize) return id;
        const int axis = depth % 3;
        const int mid = (begin + end) / 2;
        std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                         [&](int a, int b) {
                             const double ca = (double)pts->at(a, axis), cb = (double)pts->at(b, axis);
                             return ca != cb ? ca < cb : a < b;
                         });
        nodes[id].axis = axis;
        nodes[id].split = (double)pts->at(order[mid], axis);
        const int l = build(begin, mid, depth + 1);
        const int r = build(mid, end, depth + 1);
        nodes[id].left = l;
        nodes[id].right = r;
        return id;
    }

    void query(int node, const T* q, int self, bool include_self, BestK& best) const {
        const NodeRec& n = nodes[node];
        if (n.axis < 0) {
            for (int i = n.begin; i < n.end; ++i) {
                const int idx = order[i];
                if (!include_self && idx == self) continue;
                best.offer({dist2(q, pts->row(idx)), idx});
            }
            return;
        }
        const double delta = (double)q[n.axis] - n.split;
        const int near = delta < 0 ? n.left : n.right;
        const int far = delta < 0 ? n.right : n.left;
        query(near, q, self, include_self, best);
        // Equal axis distance can still hide an equal-distance smaller index,
        // so only prune on a strict excess.
        if (!best.full() || delta * delta <= best.worst()) query(far, q, self, include_self, best);
    }
};

}  // namespace detail

template <typename T>
NeighborTable build_knn_bruteforce(const Matrix<T>& points, int k, bool include_self = false) {
    detail::check_points(points);
    if (k < 1) throw ConfigError("build_knn: k must be >= 1");
    const int G = (int)points.rows;
    NeighborTable table;
    table.k = k;
    table.indices = Matrix<int>(G, k);
    for (int i = 0; i < G; ++i) {
        detail::BestK best(k);
        for (int j = 0; j < G; ++j) {
            if (!include_self && j == i) continue;
            best.offer({detail::dist2(points.row(i), points.row(j)), j});
        }
        detail::fill_row(table.indices.row(i), k, best, i);
    }
    return table;
}

template <typename T>
NeighborTable build_knn(const Matrix<T>& points, int k, bool include_self = false) {
    detail::check_points(points);
    if (k < 1) throw ConfigError("build_knn: k must be >= 1");
    const int G = (int)points.rows;
    detail::KdTree<T> tree;
    tree.pts = &points;
    tree.order.resize(G);
    for (int i = 0; i < G; ++i) tree.order[i] = i;
    tree.build(0, G, 0);
    NeighborTable table;
    table.k = k;
    table.indices = Matrix<int>(G, k);
    for (int i = 0; i < G; ++i) {
        detail::BestK best(k);
        tree.query(0, points.row(i), i, include_self, best);
        detail::fill_row(table.indices.row(i), k, best, i);
    }
    return table;
}

}  // namespace l2s::knn
