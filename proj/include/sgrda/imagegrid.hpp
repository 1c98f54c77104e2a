#pragma once

// Aligned grayscale face images and the overlapping patch lattice laid over them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#ifdef SGRDA_WITH_PNG
#include <png.h>
#endif

#include "sgrda/error.hpp"

namespace sgrda {

enum class Modality { photo, sketch, nir, tir, vis };

inline std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::photo: return "photo";
        case Modality::sketch: return "sketch";
        case Modality::nir: return "nir";
        case Modality::tir: return "tir";
        case Modality::vis: return "vis";
    }
    return "photo";
}

inline Modality parse_modality(std::string_view s) {
    for (Modality m : {Modality::photo, Modality::sketch, Modality::nir, Modality::tir, Modality::vis})
        if (to_string(m) == s) return m;
    throw UsageError("unknown modality '" + std::string(s) + "'");
}

/// Row-major pixel matrix: rows = image height, cols = image width, values in [0,1].
using PixelMatrix = Eigen::MatrixXd;

struct FaceImage {
    PixelMatrix pixels;
    std::string id;
    Modality modality = Modality::photo;

    int width() const { return static_cast<int>(pixels.cols()); }
    int height() const { return static_cast<int>(pixels.rows()); }
};

struct ImageSize {
    int width = 100;
    int height = 125;
    friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Top-left corner of a patch in pixel coordinates.
struct PatchOrigin {
    int x = 0;
    int y = 0;
    friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

struct PatchGrid {
    int width = 0;
    int height = 0;
    int patch_size = 0;
    int step = 0;
    int cols = 0;
    int rows = 0;
    std::vector<PatchOrigin> origins;  // row-major

    int size() const { return rows * cols; }
    int index(int row, int col) const { return row * cols + col; }
    int row_of(int i) const { return i / cols; }
    int col_of(int i) const { return i % cols; }

    friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

/// Unordered 4-neighbourhood edges of a patch grid, stored with first < second.
struct PatchAdjacency {
    std::vector<std::pair<int, int>> edges;
    std::vector<std::vector<int>> neighbors;  // per patch, ascending

    bool adjacent(int i, int j) const {
        if (i < 0 || j < 0 || i >= static_cast<int>(neighbors.size())) return false;
        const auto& n = neighbors[static_cast<std::size_t>(i)];
        return std::binary_search(n.begin(), n.end(), j);
    }
};

/// Axis-aligned pixel rectangle in image coordinates.
struct PixelRect {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    int area() const { return width * height; }

    /// Pixel coordinates (x, y) in row-major order.
    std::vector<std::pair<int, int>> pixels() const {
        std::vector<std::pair<int, int>> out;
        out.reserve(static_cast<std::size_t>(area()));
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) out.emplace_back(x + c, y + r);
        return out;
    }

    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

inline PatchGrid build_grid(int width, int height, int patch_size, double overlap_ratio) {
    if (patch_size <= 0) throw UsageError("patch size must be positive");
    if (patch_size > std::min(width, height)) throw UsageError("patch larger than image");
    if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0)) throw UsageError("overlap ratio must lie in [0,1)");
    const double raw_step = patch_size * (1.0 - overlap_ratio);
    const double rounded = std::round(raw_step);
    if (std::abs(raw_step - rounded) > 1e-9 || rounded < 1.0)
        throw UsageError("patch step " + std::to_string(raw_step) + " is not a positive integer");

    PatchGrid g;
    g.width = width;
    g.height = height;
    g.patch_size = patch_size;
    g.step = static_cast<int>(rounded);
    g.cols = (width - patch_size) / g.step + 1;
    g.rows = (height - patch_size) / g.step + 1;
    g.origins.reserve(static_cast<std::size_t>(g.size()));
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) g.origins.push_back({c * g.step, r * g.step});
    return g;
}

inline PatchAdjacency build_adjacency(const PatchGrid& grid) {
    PatchAdjacency adj;
    adj.neighbors.resize(static_cast<std::size_t>(grid.size()));
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            const int i = grid.index(r, c);
            if (c + 1 < grid.cols) adj.edges.emplace_back(i, grid.index(r, c + 1));
            if (r + 1 < grid.rows) adj.edges.emplace_back(i, grid.index(r + 1, c));
        }
    }
    std::sort(adj.edges.begin(), adj.edges.end());
    for (auto [i, j] : adj.edges) {
        adj.neighbors[static_cast<std::size_t>(i)].push_back(j);
        adj.neighbors[static_cast<std::size_t>(j)].push_back(i);
    }
    for (auto& n : adj.neighbors) std::sort(n.begin(), n.end());
    return adj;
}

inline void check_patch_index(const PatchGrid& grid, int index) {
    if (index < 0 || index >= grid.size())
        throw UsageError("patch index " + std::to_string(index) + " out of range [0," +
                         std::to_string(grid.size()) + ")");
}

inline PixelMatrix extract_patch(const FaceImage& image, const PatchGrid& grid, int index) {
    check_patch_index(grid, index);
    if (image.width() != grid.width || image.height() != grid.height)
        throw DataError("image geometry does not match patch grid");
    const auto o = grid.origins[static_cast<std::size_t>(index)];
    return image.pixels.block(o.y, o.x, grid.patch_size, grid.patch_size);
}

/// Intersection of the footprints of two adjacent patches.
inline PixelRect overlap_region(const PatchGrid& grid, const PatchAdjacency& adj, int i, int j) {
    check_patch_index(grid, i);
    check_patch_index(grid, j);
    if (!adj.adjacent(i, j))
        throw UsageError("patches " + std::to_string(i) + " and " + std::to_string(j) + " are not adjacent");
    const auto a = grid.origins[static_cast<std::size_t>(i)];
    const auto b = grid.origins[static_cast<std::size_t>(j)];
    const int x0 = std::max(a.x, b.x);
    const int y0 = std::max(a.y, b.y);
    const int x1 = std::min(a.x, b.x) + grid.patch_size;
    const int y1 = std::min(a.y, b.y) + grid.patch_size;
    return {x0, y0, x1 - x0, y1 - y0};
}

namespace detail {

inline void skip_pnm_space(std::istream& in) {
    for (;;) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
            in.get();
        } else {
            return;
        }
    }
}

inline int read_pnm_int(std::istream& in, const std::string& path) {
    skip_pnm_space(in);
    int v = -1;
    if (!(in >> v) || v < 0) throw DataError(path + ": malformed PNM header");
    return v;
}

inline double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline PixelMatrix decode_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || (magic[1] != '2' && magic[1] != '5' && magic[1] != '3' && magic[1] != '6'))
        throw DataError(path + ": not a PGM/PPM file");
    const bool ascii = magic[1] == '2' || magic[1] == '3';
    const int channels = (magic[1] == '3' || magic[1] == '6') ? 3 : 1;
    const int w = read_pnm_int(in, path);
    const int h = read_pnm_int(in, path);
    const int maxval = read_pnm_int(in, path);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw DataError(path + ": bad PNM header values");
    const bool wide = maxval > 255;

    std::vector<double> samples(static_cast<std::size_t>(w) * h * channels);
    if (ascii) {
        for (auto& s : samples) {
            int v = read_pnm_int(in, path);
            if (v > maxval) throw DataError(path + ": sample exceeds maxval");
            s = v;
        }
    } else {
        in.get();  // single whitespace byte after maxval
        const std::size_t bytes = samples.size() * (wide ? 2 : 1);
        std::vector<unsigned char> raw(bytes);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
        if (static_cast<std::size_t>(in.gcount()) != bytes) throw DataError(path + ": truncated pixel data");
        for (std::size_t k = 0; k < samples.size(); ++k)
            samples[k] = wide ? (raw[2 * k] << 8 | raw[2 * k + 1]) : raw[k];
    }

    PixelMatrix px(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const std::size_t k = (static_cast<std::size_t>(r) * w + c) * channels;
            const double v = channels == 1 ? samples[k] : luminance(samples[k], samples[k + 1], samples[k + 2]);
            px(r, c) = v / maxval;
        }
    }
    return px;
}

#ifdef SGRDA_WITH_PNG
inline PixelMatrix decode_png(const std::string& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw DataError(path + ": " + img.message);
    img.format = PNG_FORMAT_LINEAR_Y;  // 16-bit linear luminance
    std::vector<png_uint_16> buf(PNG_IMAGE_SIZE(img) / sizeof(png_uint_16));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw DataError(path + ": " + img.message);
    }
    PixelMatrix px(static_cast<Eigen::Index>(img.height), static_cast<Eigen::Index>(img.width));
    for (png_uint_32 r = 0; r < img.height; ++r)
        for (png_uint_32 c = 0; c < img.width; ++c)
            px(r, c) = buf[static_cast<std::size_t>(r) * img.width + c] / 65535.0;
    return px;
}
#endif

}  // namespace detail

/// Decodes a PGM/PPM (or PNG when built with libpng) and scales samples to [0,1].
inline FaceImage load_image(const std::filesystem::path& path, Modality modality, ImageSize expected,
                            std::string id = {}) {
    const std::string p = path.string();
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });

    FaceImage img;
    if (ext == ".png") {
#ifdef SGRDA_WITH_PNG
        img.pixels = detail::decode_png(p);
#else
        throw DataError(p + ": PNG support not compiled in");
#endif
    } else {
        img.pixels = detail::decode_pnm(p);
    }
    if (img.width() != expected.width || img.height() != expected.height)
        throw DataError(p + ": image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                        ", expected " + std::to_string(expected.width) + "x" + std::to_string(expected.height));
    img.id = id.empty() ? path.stem().string() : std::move(id);
    img.modality = modality;
    return img;
}

/// Serializes to 8-bit binary PGM (P5) bytes with round-to-nearest quantization.
inline std::string encode_pgm(const PixelMatrix& px) {
    std::ostringstream out(std::ios::binary);
    out << "P5\n" << px.cols() << ' ' << px.rows() << "\n255\n";
    for (Eigen::Index r = 0; r < px.rows(); ++r)
        for (Eigen::Index c = 0; c < px.cols(); ++c) {
            const double v = std::clamp(px(r, c), 0.0, 1.0);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    return out.str();
}

}  // namespace sgrda
