#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "tc3d/container.hpp"

namespace tc3d {

/// One eval mode's line of a benchmark report.
struct BenchRow {
    EvalMode mode = EvalMode::SClips;
    std::uint64_t flops = 0;       // forward FLOPs over the whole video set
    std::uint64_t frames = 0;      // video frames consumed per repetition
    std::size_t clips = 0;         // clip forwards per repetition
    double median_seconds = 0.0;   // wall time of one pass over the videos
    double fps = 0.0;              // frames / median_seconds
    std::size_t bytes = 0;         // container size
    std::size_t repetitions = 0;
    std::size_t threads = 1;
};

/// Times `repetitions` passes of s-clips and all-clips inference over `videos` with the
/// decoded container (sparse fully-connected layers run from CSC) and reports the median.
inline std::vector<BenchRow> bench_container(const ModelContainer& c, std::size_t container_bytes,
                                             std::span<const VideoSample> videos, std::size_t repetitions)
{
    if (repetitions < 1) throw std::invalid_argument("bench needs at least one repetition");
    if (videos.empty()) throw std::invalid_argument("bench needs at least one video");
    const SparseRunner runner(c);
    std::vector<BenchRow> rows;
    for (EvalMode mode : {EvalMode::SClips, EvalMode::AllClips}) {
        BenchRow row;
        row.mode = mode;
        row.bytes = container_bytes;
        row.repetitions = repetitions;
        for (const VideoSample& v : videos) {
            row.frames += v.frame_count();
            row.flops += eval_flops(c.model.net, v.frame_count(), c.sampler, mode);
            row.clips += eval_clip_indices(v.frame_count(), c.sampler, mode).size();
        }
        std::vector<double> times;
        double sink = 0.0;
        for (std::size_t r = 0; r < repetitions; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            for (const VideoSample& v : videos) sink += runner.predict(v, mode)[0];
            times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        std::sort(times.begin(), times.end());
        const std::size_t n = times.size();
        row.median_seconds = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
        row.fps = row.median_seconds > 0.0 ? static_cast<double>(row.frames) / row.median_seconds : 0.0;
        if (sink != sink) throw std::runtime_error("bench produced NaN scores"); // keeps the work observable
        rows.push_back(row);
    }
    return rows;
}

} // namespace tc3d
