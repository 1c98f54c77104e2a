#pragma once

// Adaptive sparse graphical representation: each patch of an input image is expressed as a
// non-negative, sum-to-one combination of its related patches (one per representation image),
// with neighbouring combinations tied together through their overlapping pixels.

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sgrda/descriptors.hpp"
#include "sgrda/error.hpp"
#include "sgrda/imagegrid.hpp"
#include "sgrda/qpsolver.hpp"

namespace sgrda {

/// One coupled cross-modal pair of the representation dataset.
struct RepresentationEntry {
    std::string subject_id;
    std::map<Modality, FaceImage> images;
    std::map<std::pair<Modality, DescriptorKind>, DescriptorBank> banks;

    const FaceImage& image(Modality m) const {
        auto it = images.find(m);
        if (it == images.end()) throw DataError("representation pair '" + subject_id + "' lacks modality " +
                                                std::string(to_string(m)));
        return it->second;
    }
    const DescriptorBank& bank(Modality m, DescriptorKind k) const {
        auto it = banks.find({m, k});
        if (it == banks.end()) throw DataError("representation pair '" + subject_id + "' has no " +
                                               std::string(to_string(k)) + " bank for " + std::string(to_string(m)));
        return it->second;
    }
};

struct RepresentationDataset {
    PatchGrid grid;
    PatchAdjacency adjacency;
    std::vector<RepresentationEntry> entries;

    int size() const { return static_cast<int>(entries.size()); }
};

/// Describes every image of every pair with each requested descriptor kind.
inline RepresentationDataset build_representation(std::vector<RepresentationEntry> entries, const PatchGrid& grid,
                                                  const std::vector<DescriptorKind>& kinds) {
    if (entries.size() < 2) throw DataError("representation dataset needs at least 2 pairs");
    RepresentationDataset rep{grid, build_adjacency(grid), std::move(entries)};
    for (auto& e : rep.entries) {
        for (const auto& [modality, img] : e.images) {
            if (img.width() != grid.width || img.height() != grid.height)
                throw DataError("representation image '" + img.id + "' does not match the grid geometry");
            for (auto k : kinds) e.banks[{modality, k}] = describe_image(img, grid, k);
        }
    }
    return rep;
}

/// Grid patches whose origins fall in the R x R window [o - R/2, o - R/2 + R) around the
/// probe origin o, ascending index.
inline std::vector<int> search_window(const PatchGrid& grid, int probe_patch, int search_region) {
    check_patch_index(grid, probe_patch);
    if (search_region < grid.step) throw UsageError("search region must be at least the patch step");
    const auto o = grid.origins[static_cast<std::size_t>(probe_patch)];
    const int half = search_region / 2;
    const int x0 = o.x - half, x1 = o.x - half + search_region;
    const int y0 = o.y - half, y1 = o.y - half + search_region;
    std::vector<int> out;
    const int c_lo = std::max(0, (x0 + grid.step - 1) / grid.step);
    const int r_lo = std::max(0, (y0 + grid.step - 1) / grid.step);
    for (int r = r_lo; r < grid.rows && r * grid.step < y1; ++r)
        for (int c = c_lo; c < grid.cols && c * grid.step < x1; ++c)
            if (c * grid.step >= x0 && r * grid.step >= y0) out.push_back(grid.index(r, c));
    return out;
}

struct RelatedPatch {
    int patch = -1;
    double distance = 0.0;
};

/// For each representation image of `modality`, the window patch nearest in descriptor space
/// (ties to the lowest patch index).
inline std::vector<RelatedPatch> find_related(const DescriptorBank& probe_bank, int probe_patch,
                                              const RepresentationDataset& rep, Modality modality,
                                              int search_region) {
    const auto window = search_window(rep.grid, probe_patch, search_region);
    if (window.empty()) throw NumericError("empty search window");
    const auto f = probe_bank.columns.col(probe_patch);
    std::vector<RelatedPatch> out;
    out.reserve(rep.entries.size());
    for (const auto& e : rep.entries) {
        const auto& bank = e.bank(modality, probe_bank.kind);
        RelatedPatch best{-1, std::numeric_limits<double>::infinity()};
        for (int p : window) {
            const double d = (bank.columns.col(p) - f).squaredNorm();
            if (d < best.distance) best = {p, d};
        }
        best.distance = std::sqrt(best.distance);
        out.push_back(best);
    }
    return out;
}

/// Related patches of one probe location restricted to a set of representation columns.
struct RelatedPatchSet {
    int location = 0;
    std::vector<int> columns;  // representation indices m, ascending
    std::vector<int> patches;  // chosen grid patch per column
    std::vector<double> distances;
    Eigen::MatrixXd descriptors;                           // F_i: dim x K
    std::vector<std::pair<int, Eigen::MatrixXd>> overlaps;  // (neighbour j, O_i^j: |overlap| x K)

    int width() const { return static_cast<int>(columns.size()); }
};

enum class NeighborMode { all_m, top_k };

struct EncodeOptions {
    double alpha = 0.25;
    int search_region = 16;
    NeighborMode mode = NeighborMode::all_m;
    int top_k = 10;
    SolverConfig solver{};
};

/// Builds F_i and every O_i^j for location i from the chosen related patches.
inline RelatedPatchSet make_related_set(const DescriptorBank& probe_bank, int location,
                                        const std::vector<RelatedPatch>& related,
                                        const std::vector<int>& columns, const RepresentationDataset& rep,
                                        Modality modality) {
    const auto& grid = rep.grid;
    RelatedPatchSet s;
    s.location = location;
    s.columns = columns;
    const auto k = static_cast<Eigen::Index>(columns.size());
    s.descriptors.resize(probe_bank.columns.rows(), k);
    for (Eigen::Index a = 0; a < k; ++a) {
        const int m = columns[static_cast<std::size_t>(a)];
        const auto& rp = related.at(static_cast<std::size_t>(m));
        s.patches.push_back(rp.patch);
        s.distances.push_back(rp.distance);
        s.descriptors.col(a) = rep.entries[static_cast<std::size_t>(m)].bank(modality, probe_bank.kind).columns.col(rp.patch);
    }
    const auto home = grid.origins[static_cast<std::size_t>(location)];
    for (int j : rep.adjacency.neighbors[static_cast<std::size_t>(location)]) {
        const PixelRect ov = overlap_region(grid, rep.adjacency, location, j);
        Eigen::MatrixXd o(ov.area(), k);
        for (Eigen::Index a = 0; a < k; ++a) {
            const auto& px = rep.entries[static_cast<std::size_t>(columns[static_cast<std::size_t>(a)])].image(modality).pixels;
            const auto src = grid.origins[static_cast<std::size_t>(s.patches[static_cast<std::size_t>(a)])];
            Eigen::Index row = 0;
            for (int r = 0; r < ov.height; ++r)
                for (int c = 0; c < ov.width; ++c)
                    o(row++, a) = px(src.y + (ov.y - home.y) + r, src.x + (ov.x - home.x) + c);
        }
        s.overlaps.emplace_back(j, std::move(o));
    }
    return s;
}

namespace detail {

inline const Eigen::MatrixXd& overlap_toward(const RelatedPatchSet& s, int j) {
    for (const auto& [nb, o] : s.overlaps)
        if (nb == j) return o;
    throw UsageError("related set of location " + std::to_string(s.location) + " has no overlap toward " +
                     std::to_string(j));
}

}  // namespace detail

/// Q and c of the Markov-network energy, without the constant sum_i ||f(y_i)||^2:
///   Q_ii = F_i'F_i + alpha sum_j O_i^j' O_i^j,  Q_ij = -alpha O_i^j' O_j^i,  c_i = -2 F_i' f(y_i).
inline EnergyProblem assemble_energy(const Eigen::MatrixXd& probe_descriptors,
                                     const std::vector<RelatedPatchSet>& related,
                                     const PatchAdjacency& adjacency, double alpha) {
    if (alpha < 0) throw UsageError("alpha must be non-negative");
    const int n = static_cast<int>(related.size());
    if (n < 1) throw UsageError("no related sets");
    if (probe_descriptors.cols() != n) throw UsageError("probe descriptor count does not match related sets");
    const int m = related.front().width();
    EnergyProblem p;
    p.blocks = n;
    p.width = m;
    p.alpha = alpha;
    p.diagonal.resize(static_cast<std::size_t>(n));
    p.linear.resize(p.dim());
    for (int i = 0; i < n; ++i) {
        const auto& s = related[static_cast<std::size_t>(i)];
        if (s.width() != m) throw UsageError("related sets must share a common width");
        if (s.descriptors.rows() != probe_descriptors.rows() || s.descriptors.cols() != m)
            throw UsageError("descriptor matrix shape mismatch at location " + std::to_string(i));
        Eigen::MatrixXd q = s.descriptors.transpose() * s.descriptors;
        if (alpha > 0)
            for (const auto& [j, o] : s.overlaps) {
                if (o.cols() != m) throw UsageError("overlap matrix width mismatch");
                q.noalias() += alpha * (o.transpose() * o);
            }
        p.diagonal[static_cast<std::size_t>(i)] = std::move(q);
        p.segment(p.linear, i) = -2.0 * s.descriptors.transpose() * probe_descriptors.col(i);
    }
    if (alpha > 0) {
        for (auto [i, j] : adjacency.edges) {
            if (i >= n || j >= n) throw UsageError("adjacency refers to missing location");
            const auto& oij = detail::overlap_toward(related[static_cast<std::size_t>(i)], j);
            const auto& oji = detail::overlap_toward(related[static_cast<std::size_t>(j)], i);
            if (oij.rows() != oji.rows()) throw UsageError("overlap vectors of an edge differ in length");
            p.couplings.push_back({i, j, -alpha * (oij.transpose() * oji)});
        }
    }
    return p;
}

/// N x M weight matrix of one image; row i holds the weights of location i over the
/// representation images.
struct SparseFaceCode {
    Eigen::MatrixXd weights;
    std::string image_id;
    Modality modality = Modality::photo;
    DescriptorKind kind = DescriptorKind::sift_like;
    // solver diagnostics
    double objective = 0.0;
    double kkt_residual = 0.0;
    int sweeps = 0;
    bool converged = true;
};

/// Fraction of weight entries strictly below `threshold`.
inline double sparsity_fraction(const SparseFaceCode& code, double threshold = 1e-6) {
    if (code.weights.size() == 0) return 0.0;
    return static_cast<double>((code.weights.array() < threshold).count()) / static_cast<double>(code.weights.size());
}

/// Indices of the k smallest distances, ties to the lower index, returned ascending.
inline std::vector<int> nearest_columns(const std::vector<RelatedPatch>& related, int k) {
    std::vector<int> order(related.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return related[static_cast<std::size_t>(a)].distance < related[static_cast<std::size_t>(b)].distance;
    });
    order.resize(static_cast<std::size_t>(std::min<int>(k, static_cast<int>(order.size()))));
    std::sort(order.begin(), order.end());
    return order;
}

/// Encodes an already-described image.
inline SparseFaceCode encode_bank(const DescriptorBank& bank, const RepresentationDataset& rep,
                                  const EncodeOptions& opt = {}) {
    const int n = rep.grid.size();
    const int m = rep.size();
    if (bank.size() != n) throw DataError("image '" + bank.image_id + "' does not match the representation grid");
    if (opt.mode == NeighborMode::top_k && (opt.top_k < 1 || opt.top_k > m))
        throw UsageError("K must lie in [1, M]");

    std::vector<int> all(static_cast<std::size_t>(m));
    std::iota(all.begin(), all.end(), 0);
    std::vector<RelatedPatchSet> sets;
    sets.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto related = find_related(bank, i, rep, bank.modality, opt.search_region);
        const auto cols = opt.mode == NeighborMode::all_m ? all : nearest_columns(related, opt.top_k);
        sets.push_back(make_related_set(bank, i, related, cols, rep, bank.modality));
    }
    const EnergyProblem problem = assemble_energy(bank.columns, sets, rep.adjacency, opt.alpha);
    const SolverResult sol = solve_block_coordinate(problem, opt.solver);

    SparseFaceCode code;
    code.weights = Eigen::MatrixXd::Zero(n, m);
    for (int i = 0; i < n; ++i) {
        const auto& cols = sets[static_cast<std::size_t>(i)].columns;
        for (std::size_t a = 0; a < cols.size(); ++a)
            code.weights(i, cols[a]) = sol.w[static_cast<Eigen::Index>(i) * problem.width + static_cast<Eigen::Index>(a)];
    }
    code.image_id = bank.image_id;
    code.modality = bank.modality;
    code.kind = bank.kind;
    code.objective = sol.objective;
    code.kkt_residual = sol.kkt_residual;
    code.sweeps = sol.sweeps_used;
    code.converged = sol.converged;
    return code;
}

inline SparseFaceCode encode(const FaceImage& image, const RepresentationDataset& rep, DescriptorKind kind,
                             const EncodeOptions& opt = {}) {
    return encode_bank(describe_image(image, rep.grid, kind), rep, opt);
}

}  // namespace sgrda
