#pragma once

// Seeded synthetic face pairs: a cartoon "photo" per subject and a styled "sketch" of it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "sgrda/descriptors.hpp"
#include "sgrda/error.hpp"
#include "sgrda/imagegrid.hpp"
#include "sgrda/io.hpp"

namespace sgrda {

enum class SynthStyle { identity, edge_emphasis, tone_inversion, blur_contrast };

inline std::string_view to_string(SynthStyle s) {
    switch (s) {
        case SynthStyle::identity: return "identity";
        case SynthStyle::edge_emphasis: return "edge_emphasis";
        case SynthStyle::tone_inversion: return "tone_inversion";
        case SynthStyle::blur_contrast: return "blur_contrast";
    }
    return "?";
}

inline SynthStyle parse_synth_style(std::string_view s) {
    for (auto k : {SynthStyle::identity, SynthStyle::edge_emphasis, SynthStyle::tone_inversion, SynthStyle::blur_contrast})
        if (s == to_string(k)) return k;
    throw UsageError("unknown style '" + std::string(s) + "'");
}

struct SynthSpec {
    int subjects = 60;
    int width = 100, height = 125;
    std::uint64_t seed = 0;
    SynthStyle style = SynthStyle::edge_emphasis;
    double noise_sigma = 0.25;
    int identity_components = 6;
    int distractors = 0;  // extra gallery-only identities
};

struct SynthImage {
    std::string subject_id;
    Modality modality = Modality::photo;
    Role role = Role::train;
    PixelMatrix pixels;
};

struct SynthDataset {
    SynthSpec spec;
    std::vector<SynthImage> images;
    double mate_consistency = 0.0;  // fraction of locations, see mate_consistency()
};

namespace detail {

inline double smoothstep01(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Paints a soft-edged rotated ellipse of value `v` over `px`.
inline void paint_ellipse(PixelMatrix& px, double cx, double cy, double rx, double ry, double angle, double v,
                          double softness = 1.0) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const int r0 = std::max(0, static_cast<int>(cy - std::max(rx, ry) - 2));
    const int r1 = std::min(static_cast<int>(px.rows()) - 1, static_cast<int>(cy + std::max(rx, ry) + 2));
    const int c0 = std::max(0, static_cast<int>(cx - std::max(rx, ry) - 2));
    const int c1 = std::min(static_cast<int>(px.cols()) - 1, static_cast<int>(cx + std::max(rx, ry) + 2));
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
            const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
            const double u = (ca * dx + sa * dy) / rx, w = (-sa * dx + ca * dy) / ry;
            const double d = (std::sqrt(u * u + w * w) - 1.0) * std::min(rx, ry);  // ≈ pixels outside the rim
            const double a = 1.0 - smoothstep01(0.5 + d / (2.0 * softness));
            px(r, c) = (1.0 - a) * px(r, c) + a * v;
        }
}

inline PixelMatrix gaussian_blur(const PixelMatrix& px, double sigma) {
    const int rad = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    Eigen::VectorXd k(2 * rad + 1);
    for (int i = -rad; i <= rad; ++i) k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
    k /= k.sum();
    const auto h = static_cast<int>(px.rows()), w = static_cast<int>(px.cols());
    PixelMatrix tmp(h, w), out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double s = 0;
            for (int i = -rad; i <= rad; ++i) s += k[i + rad] * px(r, std::clamp(c + i, 0, w - 1));
            tmp(r, c) = s;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double s = 0;
            for (int i = -rad; i <= rad; ++i) s += k[i + rad] * tmp(std::clamp(r + i, 0, h - 1), c);
            out(r, c) = s;
        }
    return out;
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    return std::mt19937_64(seq);
}

}  // namespace detail

/// Face-like base image for one identity: smooth low-frequency texture plus a face oval,
/// hair, brows, eyes, nose and mouth whose placement, size and tone vary per subject.
inline PixelMatrix render_identity(std::uint64_t seed, std::uint64_t identity, int width, int height, int components) {
    auto rng = detail::stream(seed, identity, 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    const double sx = width / 100.0, sy = height / 125.0;

    PixelMatrix px(height, width);
    const double bg = uni(0.15, 0.35);
    px.setConstant(bg);

    // face oval and skin tone
    const double cx = 50 * sx + uni(-2, 2), cy = 64 * sy + uni(-2, 2);
    const double skin = uni(0.55, 0.8);
    detail::paint_ellipse(px, cx, cy, uni(33, 41) * sx, uni(46, 54) * sy, uni(-0.05, 0.05), skin, 1.5);
    // hair cap
    const double hair = uni(0.05, 0.45);
    detail::paint_ellipse(px, cx, cy - uni(34, 42) * sy, uni(34, 44) * sx, uni(14, 22) * sy, uni(-0.1, 0.1), hair, 1.5);

    // smooth identity texture
    for (int k = 0; k < components; ++k) {
        const double fx = uni(0.5, 3.0) / width, fy = uni(0.5, 3.0) / height, ph = uni(0, 2 * std::numbers::pi);
        const double amp = uni(0.02, 0.06);
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) px(r, c) += amp * std::cos(2 * std::numbers::pi * (fx * c + fy * r) + ph);
    }

    const double eye_y = cy + uni(-16, -10) * sy, eye_dx = uni(14, 20) * sx;
    const double eye_rx = uni(5, 8) * sx, eye_ry = uni(2.5, 4.5) * sy, eye_tone = uni(0.05, 0.3);
    const double brow_tone = std::min(hair, uni(0.1, 0.35)), brow_lift = uni(6, 10) * sy, brow_tilt = uni(-0.25, 0.25);
    for (int side : {-1, 1}) {
        const double ex = cx + side * eye_dx;
        detail::paint_ellipse(px, ex, eye_y, eye_rx * 1.3, eye_ry * 1.5, 0.0, std::min(1.0, skin + 0.1), 1.0);
        detail::paint_ellipse(px, ex, eye_y, eye_rx, eye_ry, side * uni(-0.1, 0.15), eye_tone, 0.8);
        detail::paint_ellipse(px, ex, eye_y - brow_lift, eye_rx * uni(1.1, 1.5), uni(1.2, 2.2) * sy, side * brow_tilt,
                              brow_tone, 0.8);
    }
    const double nose_len = uni(10, 18) * sy;
    detail::paint_ellipse(px, cx + uni(-1.5, 1.5), eye_y + uni(8, 12) * sy + nose_len / 2, uni(3, 6) * sx, nose_len / 2,
                          0.0, skin - uni(0.1, 0.25), 1.2);
    detail::paint_ellipse(px, cx, cy + uni(20, 28) * sy, uni(9, 16) * sx, uni(2.5, 5.5) * sy, uni(-0.08, 0.08),
                          uni(0.15, 0.4), 1.0);
    // one subject-specific mark (mole, scar or glasses-like bar)
    const int mark = static_cast<int>(uni(0, 3));
    if (mark == 0)
        detail::paint_ellipse(px, cx + uni(-25, 25) * sx, cy + uni(-5, 25) * sy, uni(1.5, 3) * sx, uni(1.5, 3) * sy, 0.0,
                              uni(0.1, 0.3), 0.6);
    else if (mark == 1)
        detail::paint_ellipse(px, cx, eye_y, eye_dx + eye_rx * 1.6, uni(0.8, 1.5) * sy, 0.0, uni(0.1, 0.3), 0.6);
    return px.cwiseMax(0.0).cwiseMin(1.0);
}

/// The cross-modal appearance change, applied before noise.
inline PixelMatrix apply_style(const PixelMatrix& photo, SynthStyle style) {
    switch (style) {
        case SynthStyle::identity: return photo;
        case SynthStyle::edge_emphasis: {
            // pencil-like: light paper, dark strokes along intensity edges, faint shading
            const PixelMatrix b = detail::gaussian_blur(photo, 0.8);
            const GradientField g = gradient_field(b);
            PixelMatrix out = (0.9 + 0.25 * (b.array() - b.mean()) - 2.2 * g.magnitude.array()).matrix();
            return out.cwiseMax(0.0).cwiseMin(1.0);
        }
        case SynthStyle::tone_inversion: {
            PixelMatrix out = (1.0 - photo.array()).pow(1.3).matrix();
            return detail::gaussian_blur(out, 0.7).cwiseMax(0.0).cwiseMin(1.0);
        }
        case SynthStyle::blur_contrast: {
            const PixelMatrix b = detail::gaussian_blur(photo, 1.5);
            return ((b.array() - b.mean()) * 1.6 + 0.5).matrix().cwiseMax(0.0).cwiseMin(1.0);
        }
    }
    return photo;
}

inline std::string synth_subject_id(int k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%03d", k);
    return buf;
}

/// Distractor ids carry the seed so galleries drawn with different seeds can be merged.
inline std::string synth_distractor_id(std::uint64_t seed, int k) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "d%llu-%04d", static_cast<unsigned long long>(seed), k);
    return buf;
}

/// Fraction of patch locations at which the median same-subject probe-to-gallery descriptor
/// distance is below the median across-subject distance.
inline double mate_consistency(const std::vector<const PixelMatrix*>& probes, const std::vector<const PixelMatrix*>& gallery,
                               const PatchGrid& grid, DescriptorKind kind) {
    const auto n = probes.size();
    if (n < 2 || gallery.size() != n) throw UsageError("mate consistency needs at least 2 coupled pairs");
    std::vector<DescriptorBank> pb, gb;
    for (std::size_t s = 0; s < n; ++s) {
        pb.push_back(describe_image({*probes[s], "p", Modality::sketch}, grid, kind));
        gb.push_back(describe_image({*gallery[s], "g", Modality::photo}, grid, kind));
    }
    auto median = [](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    int good = 0;
    for (int i = 0; i < grid.size(); ++i) {
        std::vector<double> same, across;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                const double d = (pb[a].columns.col(i) - gb[b].columns.col(i)).norm();
                (a == b ? same : across).push_back(d);
            }
        good += median(same) < median(across);
    }
    return static_cast<double>(good) / grid.size();
}

inline bool mild_style(SynthStyle s) { return s != SynthStyle::tone_inversion; }

/// Deterministic dataset: per subject a photo and a sketch; subjects split into thirds as
/// representation / train / test roles (the remainder goes to test). Distractors contribute
/// photos only.
inline SynthDataset generate(const SynthSpec& spec) {
    if (spec.subjects < 4) throw UsageError("synthetic data needs at least 4 subjects");
    if (spec.width < 10 || spec.height < 10) throw UsageError("synthetic images must be at least 10×10");
    if (spec.noise_sigma < 0 || spec.identity_components < 0 || spec.distractors < 0)
        throw UsageError("noise, component and distractor counts must be non-negative");
    SynthDataset ds{spec, {}, 0.0};
    const int third = spec.subjects / 3;
    std::vector<const PixelMatrix*> clean_probe, clean_gallery;
    std::vector<PixelMatrix> clean;
    clean.reserve(static_cast<std::size_t>(spec.subjects));
    for (int k = 0; k < spec.subjects; ++k) {
        const Role role = k < third ? Role::representation : k < 2 * third ? Role::train : Role::test_probe;
        const std::string id = synth_subject_id(k);
        PixelMatrix photo = render_identity(spec.seed, static_cast<std::uint64_t>(k), spec.width, spec.height,
                                            spec.identity_components);
        PixelMatrix sketch = apply_style(photo, spec.style);
        clean.push_back(sketch);
        if (spec.noise_sigma > 0) {
            auto rng = detail::stream(spec.seed, static_cast<std::uint64_t>(k), 2);
            std::normal_distribution<double> g(0.0, spec.noise_sigma);
            for (Eigen::Index i = 0; i < sketch.size(); ++i) sketch.data()[i] += g(rng);
            sketch = sketch.cwiseMax(0.0).cwiseMin(1.0);
        }
        ds.images.push_back({id, Modality::photo, role == Role::test_probe ? Role::test_gallery : role, std::move(photo)});
        ds.images.push_back({id, Modality::sketch, role, std::move(sketch)});
    }
    for (int k = 0; k < spec.subjects; ++k) {
        clean_probe.push_back(&clean[static_cast<std::size_t>(k)]);
        clean_gallery.push_back(&ds.images[static_cast<std::size_t>(2 * k)].pixels);
    }
    // The benchmark is meaningful only if mates look alike across the modality gap.
    if (mild_style(spec.style) && spec.width >= 20 && spec.height >= 20) {
        const PatchGrid grid = build_grid(spec.width, spec.height, 10, 0.5);
        ds.mate_consistency = mate_consistency(clean_probe, clean_gallery, grid, DescriptorKind::hog);
        if (ds.mate_consistency < 0.9)
            throw NumericError("synthetic mates are not consistent across modalities (" +
                               std::to_string(ds.mate_consistency) + " of locations)");
    }
    for (int k = 0; k < spec.distractors; ++k)
        ds.images.push_back({synth_distractor_id(spec.seed, k), Modality::photo, Role::gallery_distractor,
                             render_identity(spec.seed, 1'000'000u + static_cast<std::uint64_t>(k), spec.width,
                                             spec.height, spec.identity_components)});

    return ds;
}

inline std::string synth_file_name(const SynthImage& im) {
    return im.subject_id + "_" + std::string(to_string(im.modality)) + ".pgm";
}

/// Writes every image as PGM under `dir`/images and the manifest as `dir`/manifest.csv.
inline Manifest write_dataset(const SynthDataset& ds, const fs::path& dir) {
    Manifest m;
    m.base_dir = dir;
    for (const auto& im : ds.images) {
        const std::string rel = "images/" + synth_file_name(im);
        write_atomic(dir / rel, encode_pgm(im.pixels));
        m.entries.push_back({im.subject_id, im.modality, rel, im.role});
    }
    write_atomic(dir / "manifest.csv", serialize_manifest(m));
    return m;
}

}  // namespace sgrda
