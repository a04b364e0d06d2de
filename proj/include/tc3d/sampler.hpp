#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tc3d/layers.hpp"
#include "tc3d/tensor.hpp"

namespace tc3d {

class SamplerError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class SamplingStrategy : std::uint8_t {
    UniformSpread = 0, // one random frame from each of k equal sub-fragments of a part
    Consecutive = 1,   // k frames spaced `offset` apart from one random start
};

inline const char* strategy_name(SamplingStrategy s)
{
    return s == SamplingStrategy::UniformSpread ? "uniform-spread" : "consecutive";
}

/// Random draws for training, midpoint-of-range draws for reproducible evaluation.
enum class SampleMode { Random, Center };

struct SamplerConfig {
    std::size_t parts = 3;
    std::size_t frames_per_clip = 8;
    std::size_t offset = 2;
    SamplingStrategy strategy = SamplingStrategy::Consecutive;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (parts < 1 || frames_per_clip < 1 || offset < 1)
            throw SamplerError("sampler needs parts >= 1, frames_per_clip >= 1 and offset >= 1");
    }

    friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;

    /// Smallest video that every part of which can hold one clip.
    std::size_t min_frames() const
    {
        return strategy == SamplingStrategy::UniformSpread ? parts * frames_per_clip : parts * frames_per_clip * offset;
    }
};

struct VideoSample {
    std::vector<Tensor> frames; // each [C, H, W]
    std::size_t label = 0;

    std::size_t frame_count() const noexcept { return frames.size(); }
    friend bool operator==(const VideoSample&, const VideoSample&) = default;
};

struct FrameRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t length() const noexcept { return end - begin; }
    friend bool operator==(const FrameRange&, const FrameRange&) = default;
};

struct ClipSet {
    std::vector<std::vector<std::size_t>> clips; // S lists of k absolute frame indices
    std::vector<Tensor> clip_tensors;            // S tensors [C, k, H, W]
    friend bool operator==(const ClipSet&, const ClipSet&) = default;
};

/// Splits [0, frame_count) into `parts` equal parts of floor(frame_count / parts) frames;
/// trailing remainder frames are dropped.
inline std::vector<FrameRange> segment_video(std::size_t frame_count, const SamplerConfig& cfg)
{
    cfg.validate();
    if (frame_count < cfg.min_frames())
        throw SamplerError("video has " + std::to_string(frame_count) + " frames; " + strategy_name(cfg.strategy) +
                           " sampling with S=" + std::to_string(cfg.parts) + ", k=" +
                           std::to_string(cfg.frames_per_clip) + ", o=" + std::to_string(cfg.offset) +
                           " requires at least " + std::to_string(cfg.min_frames()));
    const std::size_t m = frame_count / cfg.parts;
    std::vector<FrameRange> parts;
    parts.reserve(cfg.parts);
    for (std::size_t i = 0; i < cfg.parts; ++i) parts.push_back({i * m, (i + 1) * m});
    return parts;
}

namespace detail {

// Uniform integer on [0, n).
inline std::size_t draw_below(std::size_t n, Rng& rng)
{
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

} // namespace detail

/// Frame i is drawn from sub-fragment [part.begin + i*step, part.begin + (i+1)*step), step = floor(M/k).
inline std::vector<std::size_t> sample_uniform_spread(FrameRange part, std::size_t k, Rng& rng,
                                                      SampleMode mode = SampleMode::Random)
{
    const std::size_t m = part.length();
    if (k == 0 || m < k)
        throw SamplerError("uniform-spread sampling needs part length >= k (M=" + std::to_string(m) +
                           ", k=" + std::to_string(k) + ")");
    const std::size_t step = m / k;
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t r = mode == SampleMode::Random ? detail::draw_below(step, rng) : (step - 1) / 2;
        idx[i] = part.begin + step * i + r;
    }
    return idx;
}

/// One start drawn from [0, M - k*o) (forced to 0 when M == k*o), then k frames spaced o apart.
inline std::vector<std::size_t> sample_consecutive(FrameRange part, std::size_t k, std::size_t o, Rng& rng,
                                                   SampleMode mode = SampleMode::Random)
{
    const std::size_t m = part.length();
    if (k == 0 || o == 0 || m < k * o)
        throw SamplerError("consecutive sampling needs part length >= k*o (M=" + std::to_string(m) +
                           ", k=" + std::to_string(k) + ", o=" + std::to_string(o) + ")");
    const std::size_t range = m - k * o;
    std::size_t start = 0;
    if (range > 0) start = mode == SampleMode::Random ? detail::draw_below(range, rng) : (range - 1) / 2;
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = part.begin + start + i * o;
    return idx;
}

/// Stacks frames [C, H, W] at the given indices into a clip [C, k, H, W].
inline Tensor gather_clip(const VideoSample& video, const std::vector<std::size_t>& indices)
{
    if (video.frames.empty()) throw SamplerError("empty video");
    const Shape& fs = video.frames.front().shape();
    if (fs.size() != 3) throw ShapeError("frames must be [C,H,W], got " + shape_str(fs));
    const std::size_t c_n = fs[0], plane = fs[1] * fs[2], k = indices.size();
    Tensor clip({c_n, k, fs[1], fs[2]});
    for (std::size_t t = 0; t < k; ++t) {
        const Tensor& f = video.frames.at(indices[t]);
        if (f.shape() != fs) throw_shape_error("frame shape", f.shape(), fs);
        for (std::size_t c = 0; c < c_n; ++c)
            std::copy(f.data() + c * plane, f.data() + (c + 1) * plane, clip.data() + (c * k + t) * plane);
    }
    return clip;
}

inline std::vector<std::vector<std::size_t>> sample_clip_indices(std::size_t frame_count, const SamplerConfig& cfg,
                                                                 Rng& rng, SampleMode mode = SampleMode::Random)
{
    std::vector<std::vector<std::size_t>> clips;
    for (const FrameRange& part : segment_video(frame_count, cfg)) {
        if (cfg.strategy == SamplingStrategy::UniformSpread)
            clips.push_back(sample_uniform_spread(part, cfg.frames_per_clip, rng, mode));
        else
            clips.push_back(sample_consecutive(part, cfg.frames_per_clip, cfg.offset, rng, mode));
    }
    return clips;
}

inline ClipSet assemble_clips(const VideoSample& video, const SamplerConfig& cfg, Rng& rng,
                              SampleMode mode = SampleMode::Random)
{
    ClipSet set;
    set.clips = sample_clip_indices(video.frame_count(), cfg, rng, mode);
    for (const auto& c : set.clips) set.clip_tensors.push_back(gather_clip(video, c));
    return set;
}

/// Deterministic in cfg.seed.
inline ClipSet assemble_clips(const VideoSample& video, const SamplerConfig& cfg, SampleMode mode = SampleMode::Random)
{
    Rng rng(cfg.seed);
    return assemble_clips(video, cfg, rng, mode);
}

/// Every window an all-clips evaluation visits: k frames spaced o apart, a new window every k*o
/// frames, plus one window aligned to the last frame when the tiling stops short of it, so the
/// tail of the video is scored too.
inline std::vector<std::vector<std::size_t>> tile_all_clips(std::size_t frame_count, std::size_t k, std::size_t o)
{
    const std::size_t span = (k - 1) * o + 1;
    if (k == 0 || o == 0 || frame_count < span)
        throw SamplerError("video of " + std::to_string(frame_count) + " frames cannot hold a clip spanning " +
                           std::to_string(span));
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + span <= frame_count; s += k * o) starts.push_back(s);
    if (starts.back() + span < frame_count) starts.push_back(frame_count - span);
    std::vector<std::vector<std::size_t>> windows;
    for (std::size_t s : starts) {
        std::vector<std::size_t> w(k);
        for (std::size_t i = 0; i < k; ++i) w[i] = s + i * o;
        windows.push_back(std::move(w));
    }
    return windows;
}

} // namespace tc3d
