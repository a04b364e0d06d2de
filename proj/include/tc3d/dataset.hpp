#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tc3d/binary_io.hpp"
#include "tc3d/sampler.hpp"

namespace tc3d {

struct Dataset {
    std::size_t class_count = 0;
    std::vector<VideoSample> videos;
    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SyntheticConfig {
    std::size_t class_count = 4;
    std::size_t train_per_class = 16;
    std::size_t test_per_class = 8;
    std::size_t frames = 60;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t segments = 3;
    std::uint64_t seed = 7;
};

/// Scales a video to unit standard deviation over all its pixels. The mean is left in place so
/// the dark background stays near zero, like the zero padding the convolutions see. Values end
/// at fp32 precision so in-memory and reloaded data agree.
inline void normalize_contrast(VideoSample& v)
{
    double sum = 0.0, sq = 0.0, n = 0.0;
    for (const Tensor& f : v.frames)
        for (double x : f.values()) {
            sum += x;
            sq += x * x;
            n += 1.0;
        }
    if (n == 0.0) return;
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    for (Tensor& f : v.frames)
        for (double& x : f.values()) x = static_cast<double>(static_cast<float>(x * scale));
}

/// A bright Gaussian blob on a dark field. The video is split into `segments` equal temporal
/// thirds (by default); in one randomly chosen segment the blob sweeps steadily in the class
/// direction (right, left, up, down for classes 0..3), in every other segment it only wobbles
/// around a random resting point. A short clip drawn from one place in the video therefore usually
/// carries no class evidence; clips from every segment always include the sweep. The finished
/// video is contrast-normalized.
inline VideoSample render_synthetic_video(std::size_t label, const SyntheticConfig& cfg, Rng& rng)
{
    if (label >= 4) throw std::invalid_argument("synthetic videos define at most 4 classes");
    if (cfg.segments == 0 || cfg.frames < cfg.segments) throw std::invalid_argument("bad synthetic segment count");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n = cfg.frames;
    const std::size_t seg_len = n / cfg.segments;
    const std::size_t event_seg = std::uniform_int_distribution<std::size_t>(0, cfg.segments - 1)(rng);
    const double sigma = 1.1 + 0.3 * u(rng);
    const double amp = 0.8 + 0.4 * u(rng);
    const double margin = 2.0;
    const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);

    const double dirs[4][2] = {{1, 0}, {-1, 0}, {0, -1}, {0, 1}}; // rows grow downwards, so "up" is -y
    const double dx = dirs[label][0], dy = dirs[label][1];

    std::normal_distribution<double> step(0.0, 0.15);
    std::normal_distribution<double> noise(0.0, 0.03);
    double cx = 0.0, cy = 0.0, rest_x = 0.0, rest_y = 0.0;
    std::size_t current_seg = cfg.segments;
    double speed = 0.0;

    VideoSample v;
    v.label = label;
    v.frames.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t seg = std::min(t / seg_len, cfg.segments - 1);
        if (seg != current_seg) {
            current_seg = seg;
            if (seg == event_seg) {
                speed = 0.45 + 0.1 * u(rng);
                const double travel = speed * static_cast<double>(seg_len);
                auto start = [&](double d, double extent) {
                    const double lo = margin + (d < 0 ? travel : 0.0);
                    const double hi = extent - 1.0 - margin - (d > 0 ? travel : 0.0);
                    return lo + (hi - lo) * u(rng);
                };
                cx = start(dx, w);
                cy = start(dy, h);
            } else {
                rest_x = margin + (w - 1.0 - 2 * margin) * u(rng);
                rest_y = margin + (h - 1.0 - 2 * margin) * u(rng);
                cx = rest_x;
                cy = rest_y;
            }
        } else if (seg == event_seg) {
            cx += dx * speed;
            cy += dy * speed;
        } else {
            cx += step(rng) + 0.3 * (rest_x - cx);
            cy += step(rng) + 0.3 * (rest_y - cy);
        }
        Tensor f({1, cfg.height, cfg.width});
        for (std::size_t y = 0; y < cfg.height; ++y)
            for (std::size_t x = 0; x < cfg.width; ++x) {
                const double ex = static_cast<double>(x) - cx, ey = static_cast<double>(y) - cy;
                f[y * cfg.width + x] = amp * std::exp(-(ex * ex + ey * ey) / (2 * sigma * sigma)) + noise(rng);
            }
        v.frames.push_back(std::move(f));
    }
    normalize_contrast(v);
    return v;
}

struct SyntheticSplit {
    Dataset train;
    Dataset test;
};

/// Balanced train/test splits, fully determined by cfg.seed. Videos are interleaved by class.
inline SyntheticSplit generate_synthetic(const SyntheticConfig& cfg)
{
    if (cfg.class_count < 2 || cfg.class_count > 4) throw std::invalid_argument("synthetic class_count must be 2..4");
    Rng rng(cfg.seed);
    SyntheticSplit s;
    s.train.class_count = s.test.class_count = cfg.class_count;
    for (std::size_t i = 0; i < cfg.train_per_class; ++i)
        for (std::size_t c = 0; c < cfg.class_count; ++c) s.train.videos.push_back(render_synthetic_video(c, cfg, rng));
    for (std::size_t i = 0; i < cfg.test_per_class; ++i)
        for (std::size_t c = 0; c < cfg.class_count; ++c) s.test.videos.push_back(render_synthetic_video(c, cfg, rng));
    return s;
}

// ---------------------------------------------------------------------------
// file format: "TC3DDATA", u32 version, u32 videos, u32 classes, u32 frames, u32 channels,
// u32 height, u32 width, u32 dtype (0 = fp32); fp32 frames video-major; u32 label per video.

inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> encode_dataset(const Dataset& d)
{
    ByteWriter w;
    w.bytes("TC3DDATA");
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(d.videos.size()));
    w.u32(static_cast<std::uint32_t>(d.class_count));
    Shape fs{0, 0, 0};
    std::size_t frames = 0;
    if (!d.videos.empty()) {
        frames = d.videos.front().frame_count();
        fs = d.videos.front().frames.at(0).shape();
    }
    w.u32(static_cast<std::uint32_t>(frames));
    for (std::size_t e : fs) w.u32(static_cast<std::uint32_t>(e));
    w.u32(0);
    for (const VideoSample& v : d.videos) {
        if (v.frame_count() != frames) throw FormatError("all videos in a dataset file must have equal length");
        for (const Tensor& f : v.frames) {
            if (f.shape() != fs) throw_shape_error("dataset frame", f.shape(), fs);
            for (double x : f.values()) w.f32(static_cast<float>(x));
        }
    }
    for (const VideoSample& v : d.videos) w.u32(static_cast<std::uint32_t>(v.label));
    return w.take();
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes)
{
    ByteReader r(bytes);
    if (r.str(8) != "TC3DDATA") throw FormatError("not a dataset file (bad magic)");
    if (const auto ver = r.u32(); ver != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(ver));
    Dataset d;
    const std::size_t count = r.u32();
    d.class_count = r.u32();
    const std::size_t frames = r.u32();
    const Shape fs{r.u32(), r.u32(), r.u32()};
    if (r.u32() != 0) throw FormatError("unsupported dataset dtype");
    const std::size_t fv = shape_volume(fs);
    if (count * frames * fv * 4 > r.remaining()) throw FormatError("dataset file truncated");
    d.videos.resize(count);
    for (VideoSample& v : d.videos) {
        v.frames.reserve(frames);
        for (std::size_t t = 0; t < frames; ++t) {
            Tensor f(fs);
            for (double& x : f.values()) x = r.f32();
            v.frames.push_back(std::move(f));
        }
    }
    for (VideoSample& v : d.videos) {
        v.label = r.u32();
        if (v.label >= d.class_count) throw FormatError("label " + std::to_string(v.label) + " out of range");
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after dataset");
    return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) { write_file(path, encode_dataset(d)); }
inline Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

} // namespace tc3d
