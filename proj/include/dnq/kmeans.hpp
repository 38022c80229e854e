// One-dimensional Lloyd clustering used both for weight codebooks and for
// grouping weights by quantization distance. Supports a pinned centroid at
// exactly 0.0 so one codebook entry always represents zero.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dnq/common.hpp"

namespace dnq {

// Codebook size for a given bit-width: half the code space plus the zero code.
inline size_t centroid_count_for_bits(int bits) {
    require(bits >= 1 && bits <= 30, "bits out of range");
    return (size_t{1} << (bits - 1)) + 1;
}

struct KMeansResult {
    std::vector<double> centroids;
    std::vector<uint32_t> assignment;  // per input value, index into centroids
    std::vector<double> sse_trace;     // one entry per assignment pass
    size_t iterations = 0;
};

// Nearest centroid; ties go to the smaller centroid value, then smaller index.
inline uint32_t nearest_centroid(double v, const std::vector<double>& centroids) {
    require(!centroids.empty(), "nearest_centroid: empty codebook");
    uint32_t best = 0;
    double best_d = std::abs(v - centroids[0]);
    for (uint32_t i = 1; i < centroids.size(); ++i) {
        double d = std::abs(v - centroids[i]);
        if (d < best_d || (d == best_d && centroids[i] < centroids[best])) {
            best = i;
            best_d = d;
        }
    }
    return best;
}

inline std::vector<uint32_t> assign_nearest(const std::vector<double>& values,
                                            const std::vector<double>& centroids) {
    std::vector<uint32_t> out(values.size());
    for (size_t i = 0; i < values.size(); ++i) out[i] = nearest_centroid(values[i], centroids);
    return out;
}

inline double clustering_sse(const std::vector<double>& values,
                             const std::vector<double>& centroids,
                             const std::vector<uint32_t>& assignment) {
    require(values.size() == assignment.size(), "sse: assignment size mismatch");
    double total = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        double d = values[i] - centroids[assignment[i]];
        total += d * d;
    }
    return total;
}

// Quantile seeding over the distinct input values. When there are fewer
// distinct values than requested centroids, every distinct value becomes a
// centroid and the remainder are parked strictly above the maximum so they
// start (and stay) empty.
inline std::vector<double> seed_centroids(const std::vector<double>& values, size_t k,
                                          bool pin_zero) {
    require(!values.empty(), "seed_centroids: no values");
    require(k >= 1, "seed_centroids: k must be positive");

    std::vector<double> uniq(values);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (pin_zero) std::erase(uniq, 0.0);

    size_t want = k - (pin_zero ? 1 : 0);
    std::vector<double> picks;
    if (want > 0 && !uniq.empty()) {
        if (uniq.size() <= want) {
            picks = uniq;
        } else if (want == 1) {
            picks.push_back(uniq[uniq.size() / 2]);
        } else {
            for (size_t j = 0; j < want; ++j)
                picks.push_back(uniq[j * (uniq.size() - 1) / (want - 1)]);
        }
    }
    double hi = uniq.empty() ? 0.0 : uniq.back();
    double lo = uniq.empty() ? 0.0 : uniq.front();
    double step = std::max(1e-3, hi - lo);
    size_t fill = want - picks.size();
    for (size_t j = 0; j < fill; ++j) picks.push_back(hi + step * static_cast<double>(j + 1));

    std::vector<double> centroids;
    if (pin_zero) centroids.push_back(0.0);
    centroids.insert(centroids.end(), picks.begin(), picks.end());
    return centroids;
}

// Lloyd iterations: assign, then move each unpinned centroid to the mean of
// its members. Empty clusters keep their centroid. Stops when the assignment
// repeats or after max_iter passes. The SSE trace is non-increasing.
inline KMeansResult kmeans_1d(const std::vector<double>& values, size_t k, bool pin_zero,
                              size_t max_iter = 100) {
    for (double v : values)
        require(std::isfinite(v), "kmeans_1d: non-finite input");
    KMeansResult res;
    res.centroids = seed_centroids(values, k, pin_zero);

    std::vector<uint32_t> prev;
    for (size_t iter = 0; iter < max_iter; ++iter) {
        res.assignment = assign_nearest(values, res.centroids);
        res.sse_trace.push_back(clustering_sse(values, res.centroids, res.assignment));
        res.iterations = iter + 1;
        if (res.assignment == prev) break;
        prev = res.assignment;

        std::vector<double> sum(k, 0.0);
        std::vector<size_t> count(k, 0);
        for (size_t i = 0; i < values.size(); ++i) {
            sum[res.assignment[i]] += values[i];
            count[res.assignment[i]] += 1;
        }
        for (size_t c = pin_zero ? 1 : 0; c < k; ++c)
            if (count[c] > 0) res.centroids[c] = sum[c] / static_cast<double>(count[c]);
    }
    return res;
}

}  // namespace dnq
