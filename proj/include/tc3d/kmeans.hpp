#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace tc3d {

/// Shared weights of one layer: `centroids[assignments[i]]` replaces surviving weight i.
struct Codebook {
    std::vector<double> centroids;
    std::vector<std::uint32_t> assignments;
    std::size_t requested_clusters = 0; // k asked for; centroids.size() is smaller when values ran out
    std::size_t iterations = 0;
    std::vector<double> objective; // sum of squared errors after each Lloyd iteration

    double value(std::size_t i) const { return centroids[assignments[i]]; }
};

namespace detail {

// Index of the nearest centroid in a sorted list; ties go to the lower index.
inline std::uint32_t nearest(const std::vector<double>& sorted, double v)
{
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), v);
    std::size_t hi = static_cast<std::size_t>(it - sorted.begin());
    if (hi == 0) return 0;
    if (hi == sorted.size()) return static_cast<std::uint32_t>(hi - 1);
    const std::size_t lo = hi - 1;
    return static_cast<std::uint32_t>((v - sorted[lo]) <= (sorted[hi] - v) ? lo : hi);
}

inline double sse(std::span<const double> values, const Codebook& cb)
{
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double d = values[i] - cb.value(i);
        s += d * d;
    }
    return s;
}

} // namespace detail

/// One-dimensional Lloyd's k-means with centroids initialised evenly over [min, max]. Runs until
/// the assignment stops changing or `max_iterations` is reached. Fewer distinct values than `k`
/// shrinks k to the distinct count (each value becomes its own centroid). An emptied cluster is
/// moved onto the worst-served value; the seed picks among equally bad candidates.
inline Codebook kmeans_quantize(std::span<const double> values, std::size_t k, std::uint64_t seed,
                                std::size_t max_iterations = 100)
{
    if (k == 0) throw std::invalid_argument("kmeans needs at least one cluster");
    Codebook cb;
    cb.requested_clusters = k;
    if (values.empty()) return cb;

    std::vector<double> distinct(values.begin(), values.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() <= k) {
        cb.centroids = distinct;
        cb.assignments.resize(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) cb.assignments[i] = detail::nearest(cb.centroids, values[i]);
        cb.objective.push_back(0.0);
        return cb;
    }

    const double lo = distinct.front(), hi = distinct.back();
    cb.centroids.resize(k);
    for (std::size_t j = 0; j < k; ++j)
        cb.centroids[j] = k == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(k - 1);

    std::mt19937_64 rng(seed);
    cb.assignments.assign(values.size(), 0);
    for (std::size_t i = 0; i < values.size(); ++i) cb.assignments[i] = detail::nearest(cb.centroids, values[i]);

    for (std::size_t it = 0; it < max_iterations; ++it) {
        // update
        std::vector<double> sum(k, 0.0);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < values.size(); ++i) {
            sum[cb.assignments[i]] += values[i];
            ++cnt[cb.assignments[i]];
        }
        for (std::size_t j = 0; j < k; ++j)
            if (cnt[j]) cb.centroids[j] = sum[j] / static_cast<double>(cnt[j]);
        for (std::size_t j = 0; j < k; ++j) {
            if (cnt[j]) continue;
            double worst = -1.0;
            std::vector<std::size_t> cand;
            for (std::size_t i = 0; i < values.size(); ++i) {
                if (cnt[cb.assignments[i]] <= 1) continue;
                const double d = std::abs(values[i] - cb.centroids[cb.assignments[i]]);
                if (d > worst) {
                    worst = d;
                    cand.assign(1, i);
                } else if (d == worst) {
                    cand.push_back(i);
                }
            }
            if (cand.empty() || worst <= 0.0) continue;
            const std::size_t pick = cand[std::uniform_int_distribution<std::size_t>(0, cand.size() - 1)(rng)];
            --cnt[cb.assignments[pick]];
            cb.centroids[j] = values[pick];
            cb.assignments[pick] = static_cast<std::uint32_t>(j);
            cnt[j] = 1;
        }
        // keep centroids sorted so nearest() can bisect; relabel assignments to match
        std::vector<std::uint32_t> order(k), rank(k);
        for (std::uint32_t j = 0; j < k; ++j) order[j] = j;
        std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return cb.centroids[x] < cb.centroids[y]; });
        std::vector<double> sorted(k);
        for (std::uint32_t j = 0; j < k; ++j) {
            sorted[j] = cb.centroids[order[j]];
            rank[order[j]] = j;
        }
        cb.centroids = std::move(sorted);
        for (auto& a : cb.assignments) a = rank[a];
        cb.objective.push_back(detail::sse(values, cb));

        // assignment
        bool changed = false;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const std::uint32_t a = detail::nearest(cb.centroids, values[i]);
            if (a != cb.assignments[i]) {
                cb.assignments[i] = a;
                changed = true;
            }
        }
        cb.iterations = it + 1;
        if (!changed) break;
    }
    return cb;
}

} // namespace tc3d
