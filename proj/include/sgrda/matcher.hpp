#pragma once

// Similarity scoring, score fusion and rank statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgrda/error.hpp"

namespace sgrda {

/// a·b / (|a||b|); 0 when either vector is zero.
inline double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw UsageError("cosine similarity of vectors with different lengths");
    const double na = a.norm(), nb = b.norm();
    if (na == 0 || nb == 0) return 0.0;
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

struct ScoreMatrix {
    Eigen::MatrixXd scores;  // probes × gallery
    std::vector<std::string> probe_ids, gallery_ids;
    std::string provenance;

    void check_shape() const {
        if (scores.rows() != static_cast<Eigen::Index>(probe_ids.size()) ||
            scores.cols() != static_cast<Eigen::Index>(gallery_ids.size()))
            throw DataError("score matrix shape does not match its ids");
        if (!scores.allFinite()) throw NumericError("score matrix has non-finite entries");
    }
};

inline ScoreMatrix score_features(const std::vector<Eigen::VectorXd>& probes, const std::vector<std::string>& probe_ids,
                                  const std::vector<Eigen::VectorXd>& gallery,
                                  const std::vector<std::string>& gallery_ids, std::string provenance) {
    if (probes.size() != probe_ids.size() || gallery.size() != gallery_ids.size())
        throw UsageError("one id per feature required");
    ScoreMatrix s{Eigen::MatrixXd(static_cast<Eigen::Index>(probes.size()), static_cast<Eigen::Index>(gallery.size())),
                  probe_ids, gallery_ids, std::move(provenance)};
    for (std::size_t p = 0; p < probes.size(); ++p)
        for (std::size_t g = 0; g < gallery.size(); ++g)
            s.scores(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g)) = cosine_similarity(probes[p], gallery[g]);
    return s;
}

/// (s − min)/(max − min) over the whole matrix; a constant matrix becomes all 0.5.
inline ScoreMatrix min_max_normalize(ScoreMatrix m) {
    m.check_shape();
    if (m.scores.size() == 0) return m;
    const double lo = m.scores.minCoeff(), hi = m.scores.maxCoeff();
    if (!(hi > lo)) {
        warn("constant score matrix (" + m.provenance + ") normalized to 0.5");
        m.scores.setConstant(0.5);
        return m;
    }
    m.scores = (m.scores.array() - lo) / (hi - lo);
    return m;
}

/// Element-wise sum of matrices over identical probe and gallery orderings.
inline ScoreMatrix fuse(const std::vector<ScoreMatrix>& parts) {
    if (parts.empty()) throw UsageError("nothing to fuse");
    for (const auto& p : parts) p.check_shape();
    if (parts.size() == 1) return parts.front();
    ScoreMatrix out = parts.front();
    for (std::size_t k = 1; k < parts.size(); ++k) {
        if (parts[k].probe_ids != out.probe_ids || parts[k].gallery_ids != out.gallery_ids)
            throw DataError("fused score matrices disagree on probe or gallery ids");
        out.scores += parts[k].scores;
    }
    out.provenance = "fused";
    return out;
}

/// Normalizes every part, then sums.
inline ScoreMatrix normalize_and_fuse(const std::vector<ScoreMatrix>& parts) {
    std::vector<ScoreMatrix> normalized;
    normalized.reserve(parts.size());
    for (const auto& p : parts) normalized.push_back(min_max_normalize(p));
    return fuse(normalized);
}

enum class FusionOrder { schemes_then_kinds, kinds_then_schemes };

/// Two-level fusion of a grid of matrices indexed [kind][scheme]: the inner level is
/// normalized and summed, then the sums are normalized and summed again.
inline ScoreMatrix fuse_two_level(const std::vector<std::vector<ScoreMatrix>>& by_kind_then_scheme, FusionOrder order) {
    if (by_kind_then_scheme.empty() || by_kind_then_scheme.front().empty()) throw UsageError("nothing to fuse");
    const std::size_t kinds = by_kind_then_scheme.size(), schemes = by_kind_then_scheme.front().size();
    for (const auto& row : by_kind_then_scheme)
        if (row.size() != schemes) throw UsageError("every descriptor kind needs the same schemes");
    std::vector<ScoreMatrix> level;
    if (order == FusionOrder::schemes_then_kinds) {
        for (std::size_t k = 0; k < kinds; ++k) level.push_back(normalize_and_fuse(by_kind_then_scheme[k]));
    } else {
        for (std::size_t s = 0; s < schemes; ++s) {
            std::vector<ScoreMatrix> col;
            for (std::size_t k = 0; k < kinds; ++k) col.push_back(by_kind_then_scheme[k][s]);
            level.push_back(normalize_and_fuse(col));
        }
    }
    ScoreMatrix out = normalize_and_fuse(level);
    out.provenance = "fused";
    return out;
}

struct CmcCurve {
    std::vector<double> accuracy_at_rank;  // index k−1 holds rank-k accuracy
    int probes = 0;

    /// Rank-k accuracy; ranks beyond the gallery size report the final value.
    double at(int rank) const {
        if (rank < 1) throw UsageError("rank must be at least 1");
        if (accuracy_at_rank.empty()) return 0.0;
        return accuracy_at_rank[static_cast<std::size_t>(std::min<int>(rank, static_cast<int>(accuracy_at_rank.size())) - 1)];
    }
};

struct RankResult {
    CmcCurve cmc;
    std::vector<std::string> ranked_probes;  // probes whose mate is in the gallery
    std::vector<int> ranks;
    int excluded = 0;  // probes whose mate is absent from the gallery
};

/// Rank of each probe's mate = 1 + number of gallery entries scoring at least as high,
/// other than the mate itself (ties count against the mate).
inline RankResult rank_and_cmc(const ScoreMatrix& m, const std::map<std::string, std::string>& mate_of) {
    m.check_shape();
    std::map<std::string, Eigen::Index> column;
    for (std::size_t g = 0; g < m.gallery_ids.size(); ++g)
        if (!column.emplace(m.gallery_ids[g], static_cast<Eigen::Index>(g)).second)
            throw DataError("duplicate gallery id '" + m.gallery_ids[g] + "'");
    RankResult res;
    const auto gallery = static_cast<int>(m.gallery_ids.size());
    std::vector<int> hist(static_cast<std::size_t>(gallery) + 1, 0);
    for (std::size_t p = 0; p < m.probe_ids.size(); ++p) {
        auto mate = mate_of.find(m.probe_ids[p]);
        if (mate == mate_of.end()) throw DataError("probe '" + m.probe_ids[p] + "' has no mate assignment");
        auto col = column.find(mate->second);
        if (col == column.end()) {
            ++res.excluded;
            continue;
        }
        const auto row = m.scores.row(static_cast<Eigen::Index>(p));
        const double s = row[col->second];
        int rank = 1;
        for (Eigen::Index g = 0; g < row.size(); ++g)
            if (g != col->second && row[g] >= s) ++rank;
        res.ranked_probes.push_back(m.probe_ids[p]);
        res.ranks.push_back(rank);
        ++hist[static_cast<std::size_t>(rank)];
    }
    res.cmc.probes = static_cast<int>(res.ranks.size());
    res.cmc.accuracy_at_rank.assign(static_cast<std::size_t>(gallery), 0.0);
    int acc = 0;
    for (int k = 1; k <= gallery; ++k) {
        acc += hist[static_cast<std::size_t>(k)];
        res.cmc.accuracy_at_rank[static_cast<std::size_t>(k - 1)] =
            res.cmc.probes ? static_cast<double>(acc) / res.cmc.probes : 0.0;
    }
    return res;
}

/// Splits subjects into `folds` test sets of near-equal size from a seeded shuffle of the
/// sorted ids.
inline std::vector<std::vector<std::string>> assign_folds(std::vector<std::string> subjects, int folds,
                                                          std::uint64_t seed) {
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    const auto n = static_cast<int>(subjects.size());
    if (folds < 2) throw UsageError("cross validation needs at least 2 folds");
    if (n < folds || n - (n + folds - 1) / folds < 2)
        throw DataError("cannot split " + std::to_string(n) + " subjects into " + std::to_string(folds) + " folds");
    std::mt19937_64 rng(seed);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(subjects[static_cast<std::size_t>(i)], subjects[static_cast<std::size_t>(j)]);
    }
    std::vector<std::vector<std::string>> out(static_cast<std::size_t>(folds));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i % folds)].push_back(subjects[static_cast<std::size_t>(i)]);
    for (auto& f : out) std::sort(f.begin(), f.end());
    return out;
}

struct CrossValidation {
    std::vector<CmcCurve> folds;
    std::vector<double> mean, stddev;  // per rank, curves padded with their final value
};

/// Runs `evaluate(train_subjects, test_subjects)` once per fold and aggregates the curves.
inline CrossValidation cross_validate(
    const std::vector<std::string>& subjects, int folds, std::uint64_t seed,
    const std::function<CmcCurve(const std::vector<std::string>&, const std::vector<std::string>&)>& evaluate) {
    const auto tests = assign_folds(subjects, folds, seed);
    CrossValidation cv;
    std::size_t longest = 0;
    for (const auto& test : tests) {
        std::vector<std::string> train;
        for (const auto& other : tests)
            if (&other != &test) train.insert(train.end(), other.begin(), other.end());
        std::sort(train.begin(), train.end());
        cv.folds.push_back(evaluate(train, test));
        longest = std::max(longest, cv.folds.back().accuracy_at_rank.size());
    }
    cv.mean.assign(longest, 0.0);
    cv.stddev.assign(longest, 0.0);
    const double f = static_cast<double>(cv.folds.size());
    for (std::size_t k = 0; k < longest; ++k) {
        double sum = 0.0, sq = 0.0;
        for (const auto& c : cv.folds) {
            const double v = c.at(static_cast<int>(k + 1));
            sum += v;
            sq += v * v;
        }
        cv.mean[k] = sum / f;
        cv.stddev[k] = std::sqrt(std::max(0.0, sq / f - cv.mean[k] * cv.mean[k]));
    }
    return cv;
}

namespace detail {

inline std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

}  // namespace detail

/// Header row of gallery ids, then one row per probe.
inline std::string scores_csv(const ScoreMatrix& m) {
    m.check_shape();
    std::string out = "probe";
    for (const auto& g : m.gallery_ids) out += "," + g;
    out += '\n';
    for (std::size_t p = 0; p < m.probe_ids.size(); ++p) {
        out += m.probe_ids[p];
        for (Eigen::Index g = 0; g < m.scores.cols(); ++g)
            out += "," + detail::fmt("%.17g", m.scores(static_cast<Eigen::Index>(p), g));
        out += '\n';
    }
    return out;
}

inline std::string cmc_csv(const CmcCurve& c) {
    std::string out = "rank,accuracy\n";
    for (std::size_t k = 0; k < c.accuracy_at_rank.size(); ++k)
        out += std::to_string(k + 1) + "," + detail::fmt("%.6f", c.accuracy_at_rank[k]) + '\n';
    return out;
}

/// Line plot of one or more labelled curves, ranks 1..max_rank.
inline std::string cmc_svg(const std::vector<std::pair<std::string, CmcCurve>>& curves, int max_rank = 50) {
    const double w = 640, h = 420, left = 60, right = 170, top = 20, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;
    int ranks = 1;
    for (const auto& [name, c] : curves) ranks = std::max(ranks, std::min<int>(max_rank, static_cast<int>(c.accuracy_at_rank.size())));
    auto x = [&](int r) { return left + (ranks == 1 ? 0.0 : pw * (r - 1) / (ranks - 1)); };
    auto y = [&](double a) { return top + ph * (1.0 - a); };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect x=\"" + detail::fmt("%.1f", left) + "\" y=\"" + detail::fmt("%.1f", top) + "\" width=\"" +
         detail::fmt("%.1f", pw) + "\" height=\"" + detail::fmt("%.1f", ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double a = t / 5.0;
        s += "<text x=\"" + detail::fmt("%.1f", left - 8) + "\" y=\"" + detail::fmt("%.1f", y(a) + 4) +
             "\" text-anchor=\"end\">" + detail::fmt("%.1f", a) + "</text>\n";
    }
    s += "<text x=\"" + detail::fmt("%.1f", left + pw / 2) + "\" y=\"" + detail::fmt("%.1f", h - 12) +
         "\" text-anchor=\"middle\">rank (1.." + std::to_string(ranks) + ")</text>\n";
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& [name, c] = curves[i];
        const char* color = palette[i % (sizeof palette / sizeof *palette)];
        s += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(color) + "\" points=\"";
        for (int r = 1; r <= ranks; ++r)
            s += detail::fmt("%.2f", x(r)) + "," + detail::fmt("%.2f", y(c.at(r))) + (r < ranks ? " " : "");
        s += "\"/>\n";
        s += "<text x=\"" + detail::fmt("%.1f", left + pw + 10) + "\" y=\"" + detail::fmt("%.1f", top + 16 + 18.0 * static_cast<double>(i)) +
             "\" fill=\"" + color + "\">" + name + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace sgrda
