#pragma once

// Fixed-scale, upright patch descriptors: a SIFT-like 4x4x8 gradient histogram and a
// 4x4x8 unsigned-orientation HOG. Both use a context window twice the patch size,
// centred on the patch centre, with clamp-to-edge replication at image borders.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "sgrda/error.hpp"
#include "sgrda/imagegrid.hpp"

namespace sgrda {

enum class DescriptorKind { sift_like, hog };

inline std::string_view to_string(DescriptorKind k) { return k == DescriptorKind::sift_like ? "sift_like" : "hog"; }

inline DescriptorKind parse_descriptor_kind(std::string_view s) {
    if (s == "sift_like" || s == "sift") return DescriptorKind::sift_like;
    if (s == "hog") return DescriptorKind::hog;
    throw UsageError("unknown descriptor kind '" + std::string(s) + "'");
}

inline constexpr int kCellsPerSide = 4;
inline constexpr int kOrientationBins = 8;
inline constexpr int kDescriptorDim = kCellsPerSide * kCellsPerSide * kOrientationBins;
inline constexpr double kHistogramClip = 0.2;

/// Per-patch descriptors of one image; column i describes patch i.
struct DescriptorBank {
    Eigen::MatrixXd columns;  // kDescriptorDim x N
    std::string image_id;
    Modality modality = Modality::photo;
    DescriptorKind kind = DescriptorKind::sift_like;

    int size() const { return static_cast<int>(columns.cols()); }
};

/// Gradient magnitude and orientation (radians in [0, 2pi)) from clamped central differences.
struct GradientField {
    Eigen::MatrixXd magnitude;
    Eigen::MatrixXd orientation;
};

inline GradientField gradient_field(const PixelMatrix& px) {
    const Eigen::Index h = px.rows(), w = px.cols();
    GradientField g{Eigen::MatrixXd(h, w), Eigen::MatrixXd(h, w)};
    for (Eigen::Index r = 0; r < h; ++r) {
        const Eigen::Index ru = std::max<Eigen::Index>(r - 1, 0), rd = std::min<Eigen::Index>(r + 1, h - 1);
        for (Eigen::Index c = 0; c < w; ++c) {
            const Eigen::Index cl = std::max<Eigen::Index>(c - 1, 0), cr = std::min<Eigen::Index>(c + 1, w - 1);
            const double gx = 0.5 * (px(r, cr) - px(r, cl));
            const double gy = 0.5 * (px(rd, c) - px(ru, c));
            g.magnitude(r, c) = std::hypot(gx, gy);
            double theta = std::atan2(gy, gx);
            if (theta < 0) theta += 2 * std::numbers::pi;
            if (theta >= 2 * std::numbers::pi) theta = 0;
            g.orientation(r, c) = theta;
        }
    }
    return g;
}

namespace detail {

inline void normalize_clip_renormalize(Eigen::VectorXd& v) {
    const double n = v.norm();
    if (n <= 0) return;
    v /= n;
    v = v.cwiseMin(kHistogramClip);
    const double n2 = v.norm();
    if (n2 > 0) v /= n2;
}

inline int histogram_index(int cell_row, int cell_col, int bin) {
    return (cell_row * kCellsPerSide + cell_col) * kOrientationBins + bin;
}

}  // namespace detail

/// SIFT-like histogram over the square window of `g` starting at (row0, col0).
/// Gaussian-weighted (sigma = half the window), trilinear binning across cells and orientation.
inline Eigen::VectorXd sift_like(const GradientField& g, int row0, int col0, int window) {
    Eigen::VectorXd hist = Eigen::VectorXd::Zero(kDescriptorDim);
    const double cell = static_cast<double>(window) / kCellsPerSide;
    const double half = 0.5 * window;
    const double sigma = half;
    const double bin_width = 2 * std::numbers::pi / kOrientationBins;
    for (int v = 0; v < window; ++v) {
        for (int u = 0; u < window; ++u) {
            const double mag = g.magnitude(row0 + v, col0 + u);
            if (mag == 0.0) continue;
            const double du = u + 0.5 - half, dv = v + 0.5 - half;
            const double weight = mag * std::exp(-(du * du + dv * dv) / (2 * sigma * sigma));

            // cell-centre coordinates: centres at 0,1,2,3
            const double cx = (u + 0.5) / cell - 0.5;
            const double cy = (v + 0.5) / cell - 0.5;
            const int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
            const double fx = cx - x0, fy = cy - y0;

            const double ob = g.orientation(row0 + v, col0 + u) / bin_width;
            const int b0 = static_cast<int>(std::floor(ob)) % kOrientationBins;
            const double fb = ob - std::floor(ob);

            for (int dy = 0; dy < 2; ++dy) {
                const int yy = y0 + dy;
                if (yy < 0 || yy >= kCellsPerSide) continue;
                const double wy = dy ? fy : 1 - fy;
                for (int dx = 0; dx < 2; ++dx) {
                    const int xx = x0 + dx;
                    if (xx < 0 || xx >= kCellsPerSide) continue;
                    const double wxy = wy * (dx ? fx : 1 - fx);
                    hist[detail::histogram_index(yy, xx, b0)] += weight * wxy * (1 - fb);
                    hist[detail::histogram_index(yy, xx, (b0 + 1) % kOrientationBins)] += weight * wxy * fb;
                }
            }
        }
    }
    detail::normalize_clip_renormalize(hist);
    return hist;
}

/// HOG with unsigned orientation (8 bins over pi, centres at k*pi/8), hard cell assignment and
/// one L2-Hys normalized block spanning the window.
inline Eigen::VectorXd hog(const GradientField& g, int row0, int col0, int window) {
    Eigen::VectorXd hist = Eigen::VectorXd::Zero(kDescriptorDim);
    const int cell = window / kCellsPerSide;
    const double bin_width = std::numbers::pi / kOrientationBins;
    for (int v = 0; v < window; ++v) {
        const int cy = std::min(v / cell, kCellsPerSide - 1);
        for (int u = 0; u < window; ++u) {
            const double mag = g.magnitude(row0 + v, col0 + u);
            if (mag == 0.0) continue;
            const int cx = std::min(u / cell, kCellsPerSide - 1);
            double theta = g.orientation(row0 + v, col0 + u);
            if (theta >= std::numbers::pi) theta -= std::numbers::pi;
            const double ob = theta / bin_width;
            const int b0 = static_cast<int>(std::floor(ob)) % kOrientationBins;
            const double fb = ob - std::floor(ob);
            hist[detail::histogram_index(cy, cx, b0)] += mag * (1 - fb);
            hist[detail::histogram_index(cy, cx, (b0 + 1) % kOrientationBins)] += mag * fb;
        }
    }
    detail::normalize_clip_renormalize(hist);
    return hist;
}

/// Descriptor of a standalone pixel window (gradients clamp at the window edge).
inline Eigen::VectorXd describe_window(const PixelMatrix& window, DescriptorKind kind) {
    if (window.rows() != window.cols() || window.rows() < kCellsPerSide)
        throw UsageError("descriptor window must be square with side >= 4");
    const GradientField g = gradient_field(window);
    const int w = static_cast<int>(window.rows());
    return kind == DescriptorKind::sift_like ? sift_like(g, 0, 0, w) : hog(g, 0, 0, w);
}

/// Copy of `px` padded by `margin` pixels of edge replication on every side.
inline PixelMatrix replicate_pad(const PixelMatrix& px, int margin) {
    const Eigen::Index h = px.rows(), w = px.cols();
    PixelMatrix out(h + 2 * margin, w + 2 * margin);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const Eigen::Index sr = std::clamp<Eigen::Index>(r - margin, 0, h - 1);
        for (Eigen::Index c = 0; c < out.cols(); ++c)
            out(r, c) = px(sr, std::clamp<Eigen::Index>(c - margin, 0, w - 1));
    }
    return out;
}

/// Window side used for a given patch size.
inline int descriptor_window(int patch_size) { return 2 * patch_size; }

inline DescriptorBank describe_image(const FaceImage& image, const PatchGrid& grid, DescriptorKind kind) {
    if (image.width() != grid.width || image.height() != grid.height)
        throw DataError("image '" + image.id + "' does not match the patch grid geometry");
    const int window = descriptor_window(grid.patch_size);
    const int margin = grid.patch_size / 2;
    const GradientField g = gradient_field(replicate_pad(image.pixels, margin));

    DescriptorBank bank;
    bank.columns.resize(kDescriptorDim, grid.size());
    bank.image_id = image.id;
    bank.modality = image.modality;
    bank.kind = kind;
    for (int i = 0; i < grid.size(); ++i) {
        // window top-left in image coords is origin - margin, i.e. origin in padded coords
        const auto o = grid.origins[static_cast<std::size_t>(i)];
        bank.columns.col(i) = kind == DescriptorKind::sift_like ? sift_like(g, o.y, o.x, window)
                                                                : hog(g, o.y, o.x, window);
    }
    return bank;
}

}  // namespace sgrda
