#include "semid/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "semid/error.hpp"
#include "semid/rng.hpp"

namespace semid {

double squared_distance(const Vec& a, const Vec& b) {
    double d2 = 0.0;
    for (size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - b[j];
        d2 += diff * diff;
    }
    return d2;
}

namespace {

// Greedy k-means++: each new center is the best of several D^2-sampled
// candidates (the one minimizing the resulting potential), which removes the
// long tail of bad single-draw seedings.
std::vector<Vec> kmeanspp_init(const std::vector<Vec>& points, const std::vector<double>& weights,
                               int k, Rng& rng) {
    const size_t n = points.size();
    std::vector<Vec> centers;
    centers.reserve(k);
    std::vector<uint8_t> used(n, 0);

    const size_t first = rng.next_weighted(weights);
    centers.push_back(points[first]);
    used[first] = 1;

    std::vector<double> d2(n);
    for (size_t i = 0; i < n; ++i) d2[i] = squared_distance(points[i], centers[0]);

    const int n_candidates = 2 + static_cast<int>(std::log2(static_cast<double>(k)));
    std::vector<double> probs(n);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            probs[i] = weights[i] * d2[i];
            total += probs[i];
        }
        size_t pick;
        if (total > 0.0) {
            pick = rng.next_weighted(probs);
            double best_pot = 0.0;
            for (size_t i = 0; i < n; ++i)
                best_pot += weights[i] * std::min(d2[i], squared_distance(points[i], points[pick]));
            for (int t = 1; t < n_candidates; ++t) {
                const size_t cand = rng.next_weighted(probs);
                double pot = 0.0;
                for (size_t i = 0; i < n; ++i)
                    pot += weights[i] *
                           std::min(d2[i], squared_distance(points[i], points[cand]));
                if (pot < best_pot) {
                    best_pot = pot;
                    pick = cand;
                }
            }
        } else {
            // All remaining mass sits on existing centers (duplicate points);
            // take the lowest unused index, or 0 if every point is a center.
            pick = 0;
            while (pick < n && used[pick]) ++pick;
            if (pick == n) pick = 0;
        }
        used[pick] = 1;
        centers.push_back(points[pick]);
        for (size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], squared_distance(points[i], centers.back()));
    }
    return centers;
}

}  // namespace

KmeansResult kmeans(const std::vector<Vec>& points, const std::vector<double>& weights, int k,
                    int max_iters, uint64_t seed) {
    const size_t n = points.size();
    if (k < 1) throw InvalidArgument("kmeans: need k >= 1");
    if (n < static_cast<size_t>(k)) throw InvalidArgument("kmeans: need |points| >= k");
    if (weights.size() != n) throw InvalidArgument("kmeans: weights size mismatch");
    if (max_iters < 1) throw InvalidArgument("kmeans: need max_iters >= 1");
    const size_t dim = points[0].size();
    for (size_t i = 0; i < n; ++i) {
        if (points[i].size() != dim) throw InvalidArgument("kmeans: point dimension mismatch");
        if (!(weights[i] > 0.0)) throw InvalidArgument("kmeans: weights must be > 0");
    }

    Rng rng(seed);
    KmeansResult res;
    res.centroids = kmeanspp_init(points, weights, k, rng);
    res.assignments.assign(n, 0);
    std::vector<int> prev_assignments(n, -1);
    std::vector<double> point_d2(n, 0.0);
    std::vector<int64_t> cluster_size(k, 0);

    for (int iter = 0; iter < max_iters; ++iter) {
        // Assignment step; ties break to the lowest centroid index.
        std::fill(cluster_size.begin(), cluster_size.end(), 0);
        for (size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d2 = squared_distance(points[i], res.centroids[0]);
            for (int c = 1; c < k; ++c) {
                const double d2 = squared_distance(points[i], res.centroids[c]);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = c;
                }
            }
            res.assignments[i] = best;
            point_d2[i] = best_d2;
            ++cluster_size[best];
        }

        // Re-seed empty clusters from the farthest point of a non-singleton
        // cluster (lowest index on ties).
        for (int c = 0; c < k; ++c) {
            if (cluster_size[c] > 0) continue;
            size_t farthest = n;
            double best_d2 = -1.0;
            for (size_t i = 0; i < n; ++i) {
                if (cluster_size[res.assignments[i]] < 2) continue;
                if (point_d2[i] > best_d2) {
                    best_d2 = point_d2[i];
                    farthest = i;
                }
            }
            if (farthest == n) break;  // nothing movable
            --cluster_size[res.assignments[farthest]];
            res.assignments[farthest] = c;
            cluster_size[c] = 1;
            res.centroids[c] = points[farthest];
            point_d2[farthest] = 0.0;
        }

        // Update step: weighted means.
        std::vector<Vec> sums(k, Vec(dim, 0.0));
        std::vector<double> mass(k, 0.0);
        for (size_t i = 0; i < n; ++i) {
            const int c = res.assignments[i];
            mass[c] += weights[i];
            for (size_t j = 0; j < dim; ++j) sums[c][j] += weights[i] * points[i][j];
        }
        for (int c = 0; c < k; ++c) {
            if (mass[c] > 0.0)
                for (size_t j = 0; j < dim; ++j) res.centroids[c][j] = sums[c][j] / mass[c];
        }

        double objective = 0.0;
        for (size_t i = 0; i < n; ++i)
            objective += weights[i] * squared_distance(points[i], res.centroids[res.assignments[i]]);
        res.objective_trace.push_back(objective);
        res.iterations = iter + 1;

        if (res.assignments == prev_assignments) break;
        prev_assignments = res.assignments;
    }

    res.objective = res.objective_trace.back();
    return res;
}

KmeansResult kmeans(const std::vector<Vec>& points, int k, int max_iters, uint64_t seed) {
    return kmeans(points, std::vector<double>(points.size(), 1.0), k, max_iters, seed);
}

}  // namespace semid
