#pragma once

#include <cstdint>
#include <vector>

#include "semid/dataset.hpp"

namespace semid {

struct KmeansResult {
    std::vector<Vec> centroids;
    std::vector<int> assignments;
    double objective = 0.0;                  // sum_i w_i * ||x_i - mu_a(i)||^2
    std::vector<double> objective_trace;     // per Lloyd iteration, non-increasing
    int iterations = 0;
};

// Weighted Lloyd from k-means++ init. Ties in the assignment step break to
// the lowest centroid index; empty clusters are re-seeded from the point
// farthest from its assigned centroid. Terminates on assignment fixpoint or
// max_iters. All points identical with k > 1 yields duplicate centroids.
KmeansResult kmeans(const std::vector<Vec>& points, const std::vector<double>& weights, int k,
                    int max_iters, uint64_t seed);

// Unweighted convenience overload.
KmeansResult kmeans(const std::vector<Vec>& points, int k, int max_iters, uint64_t seed);

double squared_distance(const Vec& a, const Vec& b);

}  // namespace semid
