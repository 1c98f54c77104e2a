#pragma once

// Spatial partition schemes: groups of patch locations over which discriminant models are
// trained independently.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "sgrda/descriptors.hpp"
#include "sgrda/error.hpp"
#include "sgrda/imagegrid.hpp"

namespace sgrda {

enum class PartitionKind { column, row, learned, block };

inline std::string_view to_string(PartitionKind k) {
    switch (k) {
        case PartitionKind::column: return "column";
        case PartitionKind::row: return "row";
        case PartitionKind::learned: return "learned";
        case PartitionKind::block: return "block";
    }
    return "?";
}

inline PartitionKind parse_partition_kind(std::string_view s) {
    for (auto k : {PartitionKind::column, PartitionKind::row, PartitionKind::learned, PartitionKind::block})
        if (s == to_string(k)) return k;
    throw UsageError("unknown partition kind '" + std::string(s) + "'");
}

struct PartitionScheme {
    PartitionKind kind = PartitionKind::column;
    std::vector<int> params;  // {K_c}, {K_r}, {K_l} or {region rows, region cols} for blocks
    int patches = 0;
    std::vector<std::vector<int>> regions;  // each ascending

    int region_count() const { return static_cast<int>(regions.size()); }

    std::vector<int> region_of() const {
        std::vector<int> out(static_cast<std::size_t>(patches), -1);
        for (int r = 0; r < region_count(); ++r)
            for (int i : regions[static_cast<std::size_t>(r)]) out[static_cast<std::size_t>(i)] = r;
        return out;
    }

    /// Throws unless the regions are non-empty, disjoint and cover 0..patches-1.
    void validate() const {
        std::vector<int> seen(static_cast<std::size_t>(patches), 0);
        for (const auto& region : regions) {
            if (region.empty()) throw DataError("partition has an empty region");
            for (int i : region) {
                if (i < 0 || i >= patches) throw DataError("partition refers to patch " + std::to_string(i));
                if (seen[static_cast<std::size_t>(i)]++) throw DataError("patch " + std::to_string(i) + " lies in two regions");
            }
        }
        for (int i = 0; i < patches; ++i)
            if (!seen[static_cast<std::size_t>(i)]) throw DataError("patch " + std::to_string(i) + " is in no region");
    }

    bool operator==(const PartitionScheme&) const = default;
};

namespace detail {

// Regions from a label per patch, ordered by their smallest member.
inline std::vector<std::vector<int>> regions_from_labels(const std::vector<int>& labels) {
    std::vector<int> rename(labels.size(), -1);
    std::vector<std::vector<int>> regions;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& r = rename[static_cast<std::size_t>(labels[i])];
        if (r < 0) {
            r = static_cast<int>(regions.size());
            regions.emplace_back();
        }
        regions[static_cast<std::size_t>(r)].push_back(static_cast<int>(i));
    }
    return regions;
}

inline PartitionScheme grouped(const PatchGrid& grid, PartitionKind kind, int per_region) {
    const bool by_col = kind == PartitionKind::column;
    const int lines = by_col ? grid.cols : grid.rows;
    if (per_region < 1 || per_region > lines)
        throw UsageError(std::string(by_col ? "K_c" : "K_r") + " must lie in [1, " + std::to_string(lines) + "]");
    PartitionScheme s{kind, {per_region}, grid.size(), {}};
    s.regions.assign(static_cast<std::size_t>((lines + per_region - 1) / per_region), {});
    for (int i = 0; i < grid.size(); ++i)
        s.regions[static_cast<std::size_t>((by_col ? grid.col_of(i) : grid.row_of(i)) / per_region)].push_back(i);
    return s;
}

}  // namespace detail

/// Consecutive runs of K_c grid columns; the last region keeps the remainder.
inline PartitionScheme column_partition(const PatchGrid& grid, int k_c) {
    return detail::grouped(grid, PartitionKind::column, k_c);
}

/// Consecutive runs of K_r grid rows; the last region keeps the remainder.
inline PartitionScheme row_partition(const PatchGrid& grid, int k_r) {
    return detail::grouped(grid, PartitionKind::row, k_r);
}

/// Fixed rectangular blocks: grid rows split into `region_rows` near-equal bands and grid
/// columns into `region_cols`, bands differing in size by at most one line.
inline PartitionScheme block_partition(const PatchGrid& grid, int region_rows, int region_cols) {
    if (region_rows < 1 || region_rows > grid.rows || region_cols < 1 || region_cols > grid.cols)
        throw UsageError("block partition dimensions out of range");
    auto band = [](int line, int lines, int bands) { return static_cast<int>((static_cast<long>(line) * bands) / lines); };
    PartitionScheme s{PartitionKind::block, {region_rows, region_cols}, grid.size(), {}};
    s.regions.assign(static_cast<std::size_t>(region_rows * region_cols), {});
    for (int i = 0; i < grid.size(); ++i) {
        const int r = band(grid.row_of(i), grid.rows, region_rows), c = band(grid.col_of(i), grid.cols, region_cols);
        s.regions[static_cast<std::size_t>(r * region_cols + c)].push_back(i);
    }
    return s;
}

struct KMeansResult {
    std::vector<int> labels;
    Eigen::MatrixXd centers;  // dim × k
    std::vector<double> inertia_trace;  // after each assignment step
    int iterations = 0;
};

/// k-means++ seeding over the columns of `points`; returns the chosen column indices.
inline std::vector<int> kmeanspp_seeds(const Eigen::MatrixXd& points, int k, std::uint64_t seed) {
    const auto n = static_cast<int>(points.cols());
    if (k < 1 || k > n) throw UsageError("cluster count must lie in [1, " + std::to_string(n) + "]");
    std::mt19937_64 rng(seed);
    std::vector<int> chosen{std::uniform_int_distribution<int>(0, n - 1)(rng)};
    Eigen::VectorXd d2 = (points.colwise() - points.col(chosen[0])).colwise().squaredNorm().transpose();
    while (static_cast<int>(chosen.size()) < k) {
        const double total = d2.sum();
        int next = 0;
        if (total > 0) {
            const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            double acc = 0.0;
            next = -1;
            for (int i = 0; i < n; ++i) {
                if (d2[i] <= 0) continue;
                acc += d2[i];
                next = i;
                if (acc > u) break;
            }
        } else {
            // every point coincides with a chosen center; take the first unused index
            while (std::find(chosen.begin(), chosen.end(), next) != chosen.end()) ++next;
        }
        chosen.push_back(next);
        d2 = d2.cwiseMin((points.colwise() - points.col(next)).colwise().squaredNorm().transpose());
    }
    return chosen;
}

namespace detail {

// Nearest center per point, ties to the lower center index; returns the inertia.
inline double assign_points(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centers, std::vector<int>& labels,
                            Eigen::VectorXd& dist) {
    const auto n = points.cols();
    const auto k = centers.cols();
    labels.assign(static_cast<std::size_t>(n), 0);
    dist.resize(n);
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (Eigen::Index c = 0; c < k; ++c) {
            const double d = (points.col(i) - centers.col(c)).squaredNorm();
            if (d < best) {
                best = d;
                arg = static_cast<int>(c);
            }
        }
        labels[static_cast<std::size_t>(i)] = arg;
        dist[i] = best;
        inertia += best;
    }
    return inertia;
}

}  // namespace detail

/// Lloyd iterations from k-means++ seeds. Stops when assignments are stable or the relative
/// inertia change falls to `rel_tol`. An empty cluster takes over the point farthest from its
/// center in the cluster with the largest inertia.
inline KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iters = 300,
                           double rel_tol = 1e-6) {
    const auto seeds = kmeanspp_seeds(points, k, seed);
    KMeansResult res;
    res.centers.resize(points.rows(), k);
    for (int c = 0; c < k; ++c) res.centers.col(c) = points.col(seeds[static_cast<std::size_t>(c)]);

    Eigen::VectorXd dist;
    std::vector<int> prev;
    double inertia = detail::assign_points(points, res.centers, res.labels, dist);
    res.inertia_trace.push_back(inertia);
    for (int it = 1; it <= max_iters; ++it) {
        res.iterations = it;
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(points.rows(), k);
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < points.cols(); ++i) {
            sums.col(res.labels[static_cast<std::size_t>(i)]) += points.col(i);
            ++counts[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0) res.centers.col(c) = sums.col(c) / counts[static_cast<std::size_t>(c)];
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) continue;
            std::vector<double> cluster_inertia(static_cast<std::size_t>(k), 0.0);
            for (Eigen::Index i = 0; i < points.cols(); ++i)
                cluster_inertia[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])] += dist[i];
            const auto donor = static_cast<int>(std::max_element(cluster_inertia.begin(), cluster_inertia.end()) -
                                                cluster_inertia.begin());
            Eigen::Index far = -1;
            for (Eigen::Index i = 0; i < points.cols(); ++i)
                if (res.labels[static_cast<std::size_t>(i)] == donor && (far < 0 || dist[i] > dist[far])) far = i;
            res.centers.col(c) = points.col(far);
            res.labels[static_cast<std::size_t>(far)] = c;
            dist[far] = 0.0;
            ++counts[static_cast<std::size_t>(c)];
            --counts[static_cast<std::size_t>(donor)];
        }

        prev = res.labels;
        const double next = detail::assign_points(points, res.centers, res.labels, dist);
        res.inertia_trace.push_back(next);
        const bool stable = prev == res.labels;
        const bool flat = inertia - next <= rel_tol * std::max(inertia, std::numeric_limits<double>::min());
        inertia = next;
        if (stable || flat) break;
    }
    return res;
}

/// Location features: column i is the concatenation over all given banks of their
/// descriptor at location i.
inline Eigen::MatrixXd location_features(const std::vector<DescriptorBank>& banks) {
    if (banks.empty()) throw DataError("learned partition needs at least one training pair");
    const int n = banks.front().size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(banks.size()) * kDescriptorDim, n);
    for (std::size_t b = 0; b < banks.size(); ++b) {
        if (banks[b].size() != n || banks[b].columns.rows() != kDescriptorDim)
            throw DataError("descriptor bank '" + banks[b].image_id + "' has a different geometry");
        x.middleRows(static_cast<Eigen::Index>(b) * kDescriptorDim, kDescriptorDim) = banks[b].columns;
    }
    return x;
}

/// k-means over patch locations described by the training banks (both modalities of every
/// training pair). All-identical locations give a single region.
inline PartitionScheme learned_partition(const std::vector<DescriptorBank>& train_banks, int k_l, std::uint64_t seed) {
    const Eigen::MatrixXd x = location_features(train_banks);
    const auto n = static_cast<int>(x.cols());
    if (k_l < 1 || k_l > n) throw UsageError("K_l must lie in [1, " + std::to_string(n) + "]");
    PartitionScheme s{PartitionKind::learned, {k_l}, n, {}};

    int distinct = 0;
    {
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        auto less = [&](int a, int b) {
            for (Eigen::Index r = 0; r < x.rows(); ++r)
                if (x(r, a) != x(r, b)) return x(r, a) < x(r, b);
            return false;
        };
        std::sort(order.begin(), order.end(), less);
        for (int i = 0; i < n; ++i)
            if (i == 0 || less(order[static_cast<std::size_t>(i - 1)], order[static_cast<std::size_t>(i)])) ++distinct;
    }
    if (distinct == 1) {
        warn("all patch locations have identical training features; learned partition collapses to one region");
        s.regions = detail::regions_from_labels(std::vector<int>(static_cast<std::size_t>(n), 0));
        return s;
    }
    if (distinct < k_l)
        throw DataError("only " + std::to_string(distinct) + " distinct patch locations for " + std::to_string(k_l) +
                        " clusters");
    s.regions = detail::regions_from_labels(kmeans(x, k_l, seed).labels);
    return s;
}

/// Text form: a header line, kind, params, patch count, then one region id per patch.
inline std::string serialize_scheme(const PartitionScheme& s) {
    std::ostringstream out;
    out << "sgrda-partition 1\nkind " << to_string(s.kind) << "\nparams";
    for (int p : s.params) out << ' ' << p;
    out << "\npatches " << s.patches << '\n';
    for (int r : s.region_of()) out << r << '\n';
    return out.str();
}

inline PartitionScheme parse_scheme(const std::string& text) {
    std::istringstream in(text);
    std::string line, word;
    auto expect = [&](const std::string& key) {
        if (!std::getline(in, line)) throw DataError("partition file truncated before '" + key + "'");
        std::istringstream ls(line);
        ls >> word;
        if (word != key) throw DataError("partition file: expected '" + key + "', got '" + word + "'");
        return line.substr(std::min(line.size(), key.size() + 1));
    };
    std::getline(in, line);
    if (line != "sgrda-partition 1") throw DataError("not a partition file");
    PartitionScheme s;
    s.kind = parse_partition_kind(expect("kind"));
    std::istringstream ps(expect("params"));
    for (int p; ps >> p;) s.params.push_back(p);
    s.patches = std::stoi(expect("patches"));
    if (s.patches < 1) throw DataError("partition file has no patches");
    std::vector<int> labels;
    for (int r; in >> r;) {
        if (r < 0 || r >= s.patches) throw DataError("partition file has region id " + std::to_string(r));
        labels.push_back(r);
    }
    if (static_cast<int>(labels.size()) != s.patches) throw DataError("partition file lists the wrong number of patches");
    // keep stored region ids as region order
    const int count = *std::max_element(labels.begin(), labels.end()) + 1;
    s.regions.assign(static_cast<std::size_t>(count), {});
    for (int i = 0; i < s.patches; ++i) s.regions[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
    s.validate();
    return s;
}

/// Binary PPM picture of the grid, one flat-colored square of `cell` pixels per patch location.
inline std::string render_scheme_ppm(const PartitionScheme& s, const PatchGrid& grid, int cell = 8) {
    if (s.patches != grid.size()) throw UsageError("scheme does not match grid");
    const auto region = s.region_of();
    const int w = grid.cols * cell, h = grid.rows * cell;
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto r = static_cast<std::uint32_t>(region[static_cast<std::size_t>(grid.index(y / cell, x / cell))]);
            const std::uint32_t hash = (r + 1) * 2654435761u;  // spread neighbouring ids apart
            out.push_back(static_cast<char>(64 + (hash >> 8) % 192));
            out.push_back(static_cast<char>(64 + (hash >> 16) % 192));
            out.push_back(static_cast<char>(64 + (hash >> 24) % 192));
        }
    }
    return out;
}

}  // namespace sgrda
