#pragma once

// Per-region PCA followed by LDA over concatenated patch representations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgrda/error.hpp"
#include "sgrda/imagegrid.hpp"
#include "sgrda/partition.hpp"

namespace sgrda {

/// Concatenates, for each region, the rows of `per_patch` (one row per patch location) in
/// ascending patch order. Works for sparse codes (N×M) and transposed descriptor banks (N×d).
inline std::vector<Eigen::VectorXd> split_by_region(const Eigen::MatrixXd& per_patch, const PartitionScheme& scheme) {
    if (per_patch.rows() != scheme.patches)
        throw DataError("representation has " + std::to_string(per_patch.rows()) + " patch rows, partition covers " +
                        std::to_string(scheme.patches));
    const auto w = per_patch.cols();
    std::vector<Eigen::VectorXd> out;
    out.reserve(scheme.regions.size());
    for (const auto& region : scheme.regions) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(region.size()) * w);
        for (std::size_t k = 0; k < region.size(); ++k)
            v.segment(static_cast<Eigen::Index>(k) * w, w) = per_patch.row(region[k]).transpose();
        out.push_back(std::move(v));
    }
    return out;
}

/// Flips each column so that its largest-magnitude entry (first one on ties) is positive.
inline void fix_signs(Eigen::MatrixXd& basis) {
    for (Eigen::Index c = 0; c < basis.cols(); ++c) {
        Eigen::Index arg = 0;
        basis.col(c).cwiseAbs().maxCoeff(&arg);
        if (basis(arg, c) < 0) basis.col(c) *= -1.0;
    }
}

/// Smallest k whose leading eigenvalues (sorted descending) reach `keep` of the total.
inline int components_for_variance(const Eigen::VectorXd& descending, double keep) {
    const double total = descending.sum();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < descending.size(); ++k) {
        acc += descending[k];
        if (acc >= keep * total) return static_cast<int>(k + 1);
    }
    return static_cast<int>(descending.size());
}

struct PcaFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;        // dim × k, orthonormal columns
    Eigen::VectorXd eigenvalues;  // all non-negative sample-covariance eigenvalues, descending
    double retained = 0.0;

    Eigen::VectorXd project(const Eigen::VectorXd& x) const { return basis.transpose() * (x - mean); }
};

/// PCA of the columns of `samples`, keeping the fewest components that reach `keep` of the
/// variance. Uses the Gram matrix when there are fewer samples than dimensions.
inline PcaFit fit_pca(const Eigen::MatrixXd& samples, double keep) {
    if (samples.cols() < 2) throw DataError("PCA needs at least 2 samples");
    if (!(keep > 0 && keep <= 1)) throw UsageError("variance_keep must lie in (0, 1]");
    PcaFit fit;
    fit.mean = samples.rowwise().mean();
    const Eigen::MatrixXd xc = samples.colwise() - fit.mean;
    const double denom = static_cast<double>(samples.cols() - 1);
    const bool gram = samples.cols() < samples.rows();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram ? Eigen::MatrixXd(xc.transpose() * xc / denom)
                                                           : Eigen::MatrixXd(xc * xc.transpose() / denom));
    if (es.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");
    const Eigen::VectorXd ev = es.eigenvalues().reverse().cwiseMax(0.0);
    const Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
    fit.eigenvalues = ev;
    const double total = ev.sum();
    // identical samples leave only rounding noise after centering
    if (!(total > 1e-26 * fit.mean.squaredNorm())) {
        warn("PCA input has zero variance; region gets an empty basis");
        fit.basis.resize(samples.rows(), 0);
        fit.eigenvalues = Eigen::VectorXd::Zero(ev.size());
        return fit;
    }
    const int k = components_for_variance(ev, keep);
    if (gram) {
        fit.basis = xc * vecs.leftCols(k);
        for (int c = 0; c < k; ++c) fit.basis.col(c).normalize();
    } else {
        fit.basis = vecs.leftCols(k);
    }
    fix_signs(fit.basis);
    fit.retained = ev.head(k).sum() / total;
    return fit;
}

struct LdaFit {
    Eigen::MatrixXd basis;  // input dim × out dim, unit columns
    double epsilon = 0.0;
};

namespace detail {

struct Scatter {
    Eigen::MatrixXd within, between;
};

inline Scatter scatter(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
    std::map<int, std::pair<Eigen::VectorXd, int>> sums;
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
        auto [it, fresh] = sums.try_emplace(labels[static_cast<std::size_t>(i)], Eigen::VectorXd::Zero(x.rows()), 0);
        it->second.first += x.col(i);
        ++it->second.second;
    }
    const Eigen::VectorXd mu = x.rowwise().mean();
    Scatter s{Eigen::MatrixXd::Zero(x.rows(), x.rows()), Eigen::MatrixXd::Zero(x.rows(), x.rows())};
    std::map<int, Eigen::VectorXd> means;
    for (auto& [label, acc] : sums) {
        means[label] = acc.first / acc.second;
        const Eigen::VectorXd d = means[label] - mu;
        s.between.noalias() += static_cast<double>(acc.second) * d * d.transpose();
    }
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
        const Eigen::VectorXd d = x.col(i) - means[labels[static_cast<std::size_t>(i)]];
        s.within.noalias() += d * d.transpose();
    }
    return s;
}

}  // namespace detail

/// trace(S_b) / trace(S_w) of labelled columns.
inline double fisher_ratio(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
    const auto s = detail::scatter(x, labels);
    return s.between.trace() / s.within.trace();
}

/// Fisher directions of labelled columns: generalized eigenvectors of S_b against
/// S_w + eps·I with eps = 1e-4·trace(S_w)/dim, at most classes−1 of them.
inline LdaFit fit_lda(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
    if (static_cast<std::size_t>(x.cols()) != labels.size()) throw UsageError("one label per sample required");
    const auto classes = static_cast<int>(std::set<int>(labels.begin(), labels.end()).size());
    if (classes < 2) throw DataError("LDA needs at least 2 classes");
    const auto dim = x.rows();
    LdaFit fit;
    if (dim == 0) {
        fit.basis.resize(0, 0);
        return fit;
    }
    auto s = detail::scatter(x, labels);
    const double tw = s.within.trace();
    // zero within-class scatter (identical samples per class): shrink against the between scatter
    const double scale = tw > 0 ? tw : s.between.trace();
    fit.epsilon = scale > 0 ? 1e-4 * scale / static_cast<double>(dim) : 1e-4;
    s.within.diagonal().array() += fit.epsilon;

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(s.between, s.within);
    if (es.info() != Eigen::Success) throw NumericError("LDA generalized eigenproblem failed");
    const Eigen::VectorXd ev = es.eigenvalues().reverse();
    const Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
    int keep = 0;
    const auto limit = std::min<Eigen::Index>(classes - 1, dim);
    while (keep < limit && ev[keep] > 1e-12 * std::max(ev[0], 0.0) && ev[keep] > 0) ++keep;
    fit.basis = vecs.leftCols(keep);
    for (int c = 0; c < keep; ++c) fit.basis.col(c).normalize();
    fix_signs(fit.basis);
    return fit;
}

struct RegionModel {
    PcaFit pca;                           // pooled over modalities
    std::map<Modality, PcaFit> per_modality;  // used instead of `pca` when non-empty
    LdaFit lda;

    int output_dim() const { return static_cast<int>(lda.basis.cols()); }

    Eigen::VectorXd project(const Eigen::VectorXd& v, Modality m) const {
        const PcaFit* p = &pca;
        if (!per_modality.empty()) {
            auto it = per_modality.find(m);
            if (it == per_modality.end())
                throw DataError("model has no PCA for modality " + std::string(to_string(m)));
            p = &it->second;
        }
        if (v.size() != p->mean.size()) throw DataError("region vector length does not match the model");
        if (lda.basis.cols() == 0) return Eigen::VectorXd(0);
        return lda.basis.transpose() * p->project(v);
    }
};

enum class FeatureSource : std::uint8_t { sparse_code, descriptor };

struct ProjectionModel {
    PartitionScheme scheme;
    DescriptorKind kind = DescriptorKind::sift_like;
    FeatureSource source = FeatureSource::sparse_code;
    int width = 0;  // per-patch representation width (M, or d for descriptors)
    std::vector<RegionModel> regions;

    int output_dim() const {
        int d = 0;
        for (const auto& r : regions) d += r.output_dim();
        return d;
    }
};

/// One training or test representation: per-patch rows (N × width).
struct LabelledRepresentation {
    std::string subject_id;
    Modality modality = Modality::photo;
    Eigen::MatrixXd rows;
};

struct TrainOptions {
    double variance_keep = 0.99;
    bool per_modality_pca = false;
};

/// Fits one PCA+LDA model per region. Subjects are the classes; each subject normally
/// contributes one sample per modality.
inline ProjectionModel train_models(const std::vector<LabelledRepresentation>& train, const PartitionScheme& scheme,
                                    DescriptorKind kind, FeatureSource source, const TrainOptions& opt = {}) {
    scheme.validate();
    if (train.empty()) throw DataError("no training samples");
    std::map<std::string, int> class_of;
    for (const auto& t : train) class_of.try_emplace(t.subject_id, static_cast<int>(class_of.size()));
    if (class_of.size() < 2) throw DataError("training needs at least 2 subjects");
    // classes numbered by sorted subject id, so sample order cannot change the result
    int next = 0;
    for (auto& [id, c] : class_of) c = next++;

    // canonical sample order: by subject, then modality
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::tie(train[a].subject_id, train[a].modality) < std::tie(train[b].subject_id, train[b].modality);
    });

    ProjectionModel model{scheme, kind, source, static_cast<int>(train.front().rows.cols()), {}};
    std::vector<std::vector<Eigen::VectorXd>> split;
    std::vector<int> labels;
    std::vector<Modality> modalities;
    for (std::size_t i : order) {
        if (train[i].rows.cols() != model.width) throw DataError("training representations differ in width");
        split.push_back(split_by_region(train[i].rows, scheme));
        labels.push_back(class_of[train[i].subject_id]);
        modalities.push_back(train[i].modality);
    }

    for (int r = 0; r < scheme.region_count(); ++r) {
        const auto len = split.front()[static_cast<std::size_t>(r)].size();
        Eigen::MatrixXd x(len, static_cast<Eigen::Index>(split.size()));
        for (std::size_t s = 0; s < split.size(); ++s) x.col(static_cast<Eigen::Index>(s)) = split[s][static_cast<std::size_t>(r)];

        RegionModel rm;
        Eigen::MatrixXd projected;
        if (!opt.per_modality_pca) {
            rm.pca = fit_pca(x, opt.variance_keep);
            projected = rm.pca.basis.transpose() * (x.colwise() - rm.pca.mean);
        } else {
            // each modality gets its own mean and basis; all are cut to a common dimension k, the
            // largest per-modality 99% count that every modality's rank can supply
            std::map<Modality, std::vector<Eigen::Index>> cols;
            for (std::size_t s = 0; s < modalities.size(); ++s) cols[modalities[s]].push_back(static_cast<Eigen::Index>(s));
            Eigen::Index k = 0;
            for (auto& [m, idx] : cols) {
                rm.per_modality[m] = fit_pca(x(Eigen::all, idx), opt.variance_keep);
                k = std::max(k, rm.per_modality[m].basis.cols());
            }
            for (auto& [m, idx] : cols) {
                auto& p = rm.per_modality[m];
                if (p.basis.cols() < k) p = fit_pca(x(Eigen::all, idx), 1.0);
                k = std::min(k, p.basis.cols());
            }
            for (auto& [m, p] : rm.per_modality) p.basis.conservativeResize(Eigen::NoChange, k);
            projected.resize(k, x.cols());
            for (auto& [m, idx] : cols)
                for (auto c : idx) projected.col(c) = rm.per_modality[m].project(x.col(c));
        }
        rm.lda = fit_lda(projected, labels);
        model.regions.push_back(std::move(rm));
    }
    return model;
}

/// Concatenated discriminant feature of one representation.
inline Eigen::VectorXd project(const Eigen::MatrixXd& rows, Modality modality, const ProjectionModel& model) {
    if (rows.cols() != model.width) throw DataError("representation width does not match the model");
    const auto parts = split_by_region(rows, model.scheme);
    Eigen::VectorXd out(model.output_dim());
    Eigen::Index at = 0;
    for (std::size_t r = 0; r < parts.size(); ++r) {
        const Eigen::VectorXd p = model.regions[r].project(parts[r], modality);
        out.segment(at, p.size()) = p;
        at += p.size();
    }
    return out;
}

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("binary file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f64(std::ostream& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

inline double get_f64(std::istream& in) {
    const std::uint64_t v = get_u64(in);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

inline void put_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}

inline Eigen::MatrixXd get_matrix(std::istream& in) {
    const auto rows = get_u64(in), cols = get_u64(in);
    if (rows > (1u << 26) || cols > (1u << 26) || rows * cols > (1u << 28)) throw DataError("implausible matrix size");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get_f64(in);
    return m;
}

inline void put_pca(std::ostream& out, const PcaFit& p) {
    put_matrix(out, p.mean);
    put_matrix(out, p.basis);
    put_matrix(out, p.eigenvalues);
    put_f64(out, p.retained);
}

inline PcaFit get_pca(std::istream& in) {
    PcaFit p;
    p.mean = get_matrix(in);
    p.basis = get_matrix(in);
    p.eigenvalues = get_matrix(in);
    p.retained = get_f64(in);
    return p;
}

inline constexpr char kModelMagic[8] = {'S', 'G', 'R', 'D', 'A', 'P', 'M', '1'};

}  // namespace detail

/// Little-endian binary container; identical models give identical bytes.
inline void write_model(std::ostream& out, const ProjectionModel& m) {
    out.write(detail::kModelMagic, 8);
    const std::string scheme = serialize_scheme(m.scheme);
    detail::put_u64(out, scheme.size());
    out.write(scheme.data(), static_cast<std::streamsize>(scheme.size()));
    detail::put_u64(out, static_cast<std::uint64_t>(m.kind));
    detail::put_u64(out, static_cast<std::uint64_t>(m.source));
    detail::put_u64(out, static_cast<std::uint64_t>(m.width));
    detail::put_u64(out, m.regions.size());
    for (const auto& r : m.regions) {
        detail::put_pca(out, r.pca);
        detail::put_u64(out, r.per_modality.size());
        for (const auto& [mod, p] : r.per_modality) {
            detail::put_u64(out, static_cast<std::uint64_t>(mod));
            detail::put_pca(out, p);
        }
        detail::put_matrix(out, r.lda.basis);
        detail::put_f64(out, r.lda.epsilon);
    }
}

inline ProjectionModel read_model(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, detail::kModelMagic, 8) != 0) throw DataError("not a model file");
    ProjectionModel m;
    const auto len = detail::get_u64(in);
    if (len > (1u << 24)) throw DataError("implausible scheme size");
    std::string scheme(len, '\0');
    if (!in.read(scheme.data(), static_cast<std::streamsize>(len))) throw DataError("model file truncated");
    m.scheme = parse_scheme(scheme);
    const auto kind = detail::get_u64(in), source = detail::get_u64(in);
    if (kind > 1 || source > 1) throw DataError("model file has an unknown kind");
    m.kind = static_cast<DescriptorKind>(kind);
    m.source = static_cast<FeatureSource>(source);
    m.width = static_cast<int>(detail::get_u64(in));
    const auto regions = detail::get_u64(in);
    if (regions != static_cast<std::uint64_t>(m.scheme.region_count())) throw DataError("model region count mismatch");
    for (std::uint64_t r = 0; r < regions; ++r) {
        RegionModel rm;
        rm.pca = detail::get_pca(in);
        const auto mods = detail::get_u64(in);
        for (std::uint64_t k = 0; k < mods; ++k) {
            const auto mod = detail::get_u64(in);
            if (mod > static_cast<std::uint64_t>(Modality::vis)) throw DataError("model file has an unknown modality");
            rm.per_modality[static_cast<Modality>(mod)] = detail::get_pca(in);
        }
        rm.lda.basis = detail::get_matrix(in);
        rm.lda.epsilon = detail::get_f64(in);
        m.regions.push_back(std::move(rm));
    }
    return m;
}

}  // namespace sgrda
