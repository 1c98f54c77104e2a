#pragma once

// End-to-end orchestration over a manifest: representation set, encoding with a content-hash
// cache, partition schemes, model training and fused evaluation.

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sgrda/discriminant.hpp"
#include "sgrda/graphrep.hpp"
#include "sgrda/io.hpp"
#include "sgrda/matcher.hpp"
#include "sgrda/partition.hpp"
#include "sgrda/synthdata.hpp"

namespace sgrda {

/// Runs task(i) for i in [0, count) on at most `workers` threads (0: hardware concurrency).
/// The first exception is rethrown after all workers stop.
template <class Task>
void parallel_for(std::size_t count, int workers, Task&& task) {
    unsigned n = workers > 0 ? static_cast<unsigned>(workers) : std::max(1u, std::thread::hardware_concurrency());
    n = static_cast<unsigned>(std::min<std::size_t>(n, count));
    if (n <= 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < count;) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = count;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

/// An image referenced by a manifest, decoded, with the hash of its file bytes.
struct LoadedImage {
    ManifestEntry entry;
    FaceImage image;
    std::string content_hash;
};

inline LoadedImage load_entry(const Manifest& m, const ManifestEntry& e, const PipelineConfig& cfg) {
    const fs::path p = m.resolve(e);
    LoadedImage li{e, load_image(p, e.modality, {cfg.width, cfg.height}, e.subject_id), sha256_hex(read_file(p))};
    return li;
}

inline std::vector<LoadedImage> load_entries(const Manifest& m, const std::vector<const ManifestEntry*>& entries,
                                             const PipelineConfig& cfg) {
    std::vector<LoadedImage> out(entries.size());
    parallel_for(entries.size(), cfg.workers, [&](std::size_t i) { out[i] = load_entry(m, *entries[i], cfg); });
    return out;
}

/// Representation pairs described with every configured kind, plus a fingerprint of their
/// content used in cache keys.
struct Representation {
    RepresentationDataset data;
    std::string fingerprint;
};

inline Representation make_representation(const std::vector<LoadedImage>& loaded, const PipelineConfig& cfg) {
    std::map<std::string, RepresentationEntry> by_subject;
    std::string fp = "rep-v1\n";
    for (const auto& li : loaded) {
        auto& e = by_subject[li.entry.subject_id];
        e.subject_id = li.entry.subject_id;
        if (!e.images.emplace(li.entry.modality, li.image).second)
            throw DataError("representation subject '" + e.subject_id + "' lists modality " +
                            std::string(to_string(li.entry.modality)) + " twice");
        fp += li.entry.subject_id + "," + std::string(to_string(li.entry.modality)) + "," + li.content_hash + "\n";
    }
    std::vector<RepresentationEntry> entries;
    for (auto& [id, e] : by_subject) {
        for (auto mod : {cfg.probe_modality, cfg.gallery_modality})
            if (!e.images.count(mod))
                throw DataError("representation subject '" + id + "' lacks modality " + std::string(to_string(mod)));
        entries.push_back(std::move(e));
    }
    return {build_representation(std::move(entries), cfg.grid(), cfg.kinds), sha256_hex(fp)};
}

/// The settings an encoding depends on.
inline std::string encode_settings_text(const PipelineConfig& cfg) {
    PipelineConfig c;
    c.width = cfg.width;
    c.height = cfg.height;
    c.patch_size = cfg.patch_size;
    c.overlap = cfg.overlap;
    c.search_region = cfg.search_region;
    c.alpha = cfg.alpha;
    c.mode = cfg.mode;
    c.top_k = cfg.mode == NeighborMode::top_k ? cfg.top_k : 0;
    c.max_sweeps = cfg.max_sweeps;
    c.rel_tol = cfg.rel_tol;
    c.kkt_tol = cfg.kkt_tol;
    std::string out;
    std::istringstream in(c.to_text());
    for (std::string line; std::getline(in, line);) {
        const std::string key = line.substr(0, line.find('='));
        for (const char* k : {"width", "height", "patch_size", "overlap", "search_region", "alpha", "mode", "K",
                              "max_sweeps", "rel_tol", "kkt_tol"})
            if (key == k) out += line + "\n";
    }
    return out;
}

inline std::string code_cache_key(const LoadedImage& li, DescriptorKind kind, const Representation& rep,
                                  const PipelineConfig& cfg) {
    return sha256_hex("code-v1\n" + li.content_hash + "\n" + li.entry.subject_id + "\n" +
                      std::string(to_string(li.entry.modality)) + "\n" + std::string(to_string(kind)) + "\n" +
                      rep.fingerprint + "\n" + encode_settings_text(cfg));
}

struct EncodeStats {
    int hits = 0, computed = 0, failed = 0;
    std::vector<std::string> failures;
};

/// Encodes every image with one descriptor kind. With a cache directory, fresh entries are
/// read back and new codes written atomically. Solver non-convergence is reported as a
/// failure but the code is still returned.
inline std::vector<SparseFaceCode> encode_images(const std::vector<const LoadedImage*>& images, const Representation& rep,
                                                 DescriptorKind kind, const PipelineConfig& cfg,
                                                 const std::optional<fs::path>& cache = std::nullopt,
                                                 EncodeStats* stats = nullptr, bool cached_only = false) {
    std::vector<SparseFaceCode> out(images.size());
    std::vector<int> hit(images.size(), 0);
    const EncodeOptions opt = cfg.encode_options();
    parallel_for(images.size(), cfg.workers, [&](std::size_t i) {
        const auto& li = *images[i];
        std::optional<fs::path> file;
        if (cache) {
            file = *cache / (code_cache_key(li, kind, rep, cfg) + ".code");
            if (fs::exists(*file)) {
                try {
                    out[i] = decode_code(read_file(*file));
                    hit[i] = 1;
                    return;
                } catch (const DataError&) {
                    // unreadable entry: recompute and overwrite
                }
            }
        }
        if (cached_only)
            throw DataError("no cached " + std::string(to_string(kind)) + " code for " + li.entry.subject_id + "/" +
                            std::string(to_string(li.entry.modality)) + "; run encode first");
        out[i] = encode(li.image, rep.data, kind, opt);
        out[i].image_id = li.entry.subject_id;
        if (file) write_atomic(*file, encode_code(out[i]));
    });
    if (stats) {
        for (std::size_t i = 0; i < images.size(); ++i) {
            hit[i] ? ++stats->hits : ++stats->computed;
            if (!out[i].converged) {
                ++stats->failed;
                stats->failures.push_back(images[i]->entry.subject_id + "/" +
                                          std::string(to_string(images[i]->entry.modality)) + " (" +
                                          std::string(to_string(kind)) + "): solver stopped at KKT residual " +
                                          std::to_string(out[i].kkt_residual));
            }
        }
    }
    return out;
}

inline std::vector<DescriptorBank> describe_images(const std::vector<const LoadedImage*>& images, const PatchGrid& grid,
                                                   DescriptorKind kind, int workers) {
    std::vector<DescriptorBank> out(images.size());
    parallel_for(images.size(), workers, [&](std::size_t i) {
        out[i] = describe_image(images[i]->image, grid, kind);
        out[i].image_id = images[i]->entry.subject_id;
    });
    return out;
}

/// The representation handed to discriminant analysis: code weights, or descriptors
/// transposed to one row per patch.
inline LabelledRepresentation as_sample(const LoadedImage& li, const SparseFaceCode& code) {
    return {li.entry.subject_id, li.entry.modality, code.weights};
}

inline LabelledRepresentation as_sample(const LoadedImage& li, const DescriptorBank& bank) {
    return {li.entry.subject_id, li.entry.modality, bank.columns.transpose()};
}

inline const std::vector<std::string>& scheme_names() {
    static const std::vector<std::string> names{"column", "row", "learned"};
    return names;
}

/// Column, row and learned schemes for one descriptor kind; the learned scheme clusters the
/// training banks of that kind.
inline std::vector<PartitionScheme> make_schemes(const PipelineConfig& cfg, const std::vector<DescriptorBank>& train_banks) {
    const PatchGrid grid = cfg.grid();
    return {column_partition(grid, cfg.k_c), row_partition(grid, cfg.k_r), learned_partition(train_banks, cfg.k_l, cfg.seed)};
}

inline PartitionScheme baseline_scheme(const PipelineConfig& cfg) {
    return block_partition(cfg.grid(), cfg.block_rows, cfg.block_cols);
}

/// Models indexed [kind][scheme].
struct TrainedSystem {
    std::vector<DescriptorKind> kinds;
    std::vector<std::string> schemes;
    std::vector<std::vector<ProjectionModel>> models;
};

inline TrainedSystem train_system(const std::vector<std::vector<LabelledRepresentation>>& train_by_kind,
                                  const std::vector<std::vector<PartitionScheme>>& schemes_by_kind,
                                  const std::vector<std::string>& names, const PipelineConfig& cfg, FeatureSource source) {
    TrainedSystem sys{cfg.kinds, names, {}};
    TrainOptions opt{cfg.variance_keep, cfg.per_modality_pca};
    for (std::size_t k = 0; k < cfg.kinds.size(); ++k) {
        std::vector<ProjectionModel> row(schemes_by_kind[k].size());
        parallel_for(row.size(), cfg.workers, [&](std::size_t s) {
            row[s] = train_models(train_by_kind[k], schemes_by_kind[k][s], cfg.kinds[k], source, opt);
        });
        sys.models.push_back(std::move(row));
    }
    return sys;
}

struct EvalReport {
    ScoreMatrix fused;
    RankResult fused_rank;
    std::vector<RankResult> per_scheme;               // each scheme fused over kinds
    std::vector<std::vector<RankResult>> per_single;  // [kind][scheme]
};

/// Projects probes and gallery through every model, scores them, and fuses the grid of
/// score matrices in the configured order.
inline EvalReport evaluate_system(const TrainedSystem& sys,
                                  const std::vector<std::vector<LabelledRepresentation>>& probes_by_kind,
                                  const std::vector<std::vector<LabelledRepresentation>>& gallery_by_kind,
                                  const std::map<std::string, std::string>& mates, FusionOrder order, int workers = 1) {
    std::vector<std::vector<ScoreMatrix>> grid(sys.kinds.size());
    EvalReport rep;
    for (std::size_t k = 0; k < sys.kinds.size(); ++k) {
        const auto& probes = probes_by_kind[k];
        const auto& gallery = gallery_by_kind[k];
        std::vector<std::string> pid, gid;
        for (const auto& p : probes) pid.push_back(p.subject_id);
        for (const auto& g : gallery) gid.push_back(g.subject_id);
        grid[k].resize(sys.models[k].size());
        parallel_for(sys.models[k].size(), workers, [&](std::size_t s) {
            const auto& model = sys.models[k][s];
            std::vector<Eigen::VectorXd> pf, gf;
            for (const auto& p : probes) pf.push_back(project(p.rows, p.modality, model));
            for (const auto& g : gallery) gf.push_back(project(g.rows, g.modality, model));
            grid[k][s] = score_features(pf, pid, gf, gid, sys.schemes[s] + "/" + std::string(to_string(sys.kinds[k])));
        });
        std::vector<RankResult> singles;
        for (const auto& m : grid[k]) singles.push_back(rank_and_cmc(m, mates));
        rep.per_single.push_back(std::move(singles));
    }
    for (std::size_t s = 0; s < sys.schemes.size(); ++s) {
        std::vector<ScoreMatrix> across;
        for (std::size_t k = 0; k < sys.kinds.size(); ++k) across.push_back(grid[k][s]);
        rep.per_scheme.push_back(rank_and_cmc(normalize_and_fuse(across), mates));
    }
    rep.fused = fuse_two_level(grid, order);
    rep.fused_rank = rank_and_cmc(rep.fused, mates);
    return rep;
}

/// Rank-k accuracies at the usual reporting ranks.
inline std::string rank_table_csv(const std::vector<std::pair<std::string, CmcCurve>>& rows) {
    std::string out = "method,rank1,rank5,rank10,rank20,rank50\n";
    for (const auto& [name, c] : rows) {
        out += name;
        for (int r : {1, 5, 10, 20, 50}) out += "," + detail::fmt("%.6f", c.at(r));
        out += '\n';
    }
    return out;
}

/// Every image of a benchmark, decoded.
struct Dataset {
    std::vector<LoadedImage> images;

    std::vector<const LoadedImage*> with_role(Role r) const {
        std::vector<const LoadedImage*> out;
        for (const auto& li : images)
            if (li.entry.role == r) out.push_back(&li);
        return out;
    }

    std::vector<LoadedImage> copies(Role r) const {
        std::vector<LoadedImage> out;
        for (const auto* li : with_role(r)) out.push_back(*li);
        return out;
    }
};

inline Dataset load_dataset(const Manifest& m, const PipelineConfig& cfg) {
    m.validate();
    std::vector<const ManifestEntry*> all;
    for (const auto& e : m.entries) all.push_back(&e);
    return {load_entries(m, all, cfg)};
}

/// The in-memory twin of write_dataset followed by load_dataset: pixels are quantized to
/// 8 bits and hashed exactly as the PGM files would be.
inline Dataset dataset_from_synth(const SynthDataset& ds) {
    Dataset out;
    for (const auto& im : ds.images) {
        const std::string bytes = encode_pgm(im.pixels);
        PixelMatrix px = im.pixels.cwiseMax(0.0).cwiseMin(1.0).unaryExpr([](double v) {
            return static_cast<double>(std::lround(v * 255.0)) / 255.0;
        });
        out.images.push_back({{im.subject_id, im.modality, "images/" + synth_file_name(im), im.role},
                              FaceImage{std::move(px), im.subject_id, im.modality},
                              sha256_hex(bytes)});
    }
    return out;
}

using ImageKey = std::pair<std::string, Modality>;

/// Per-kind features of every non-representation image: the representation handed to
/// discriminant analysis and the raw descriptor bank (used for learned partitions).
struct FeatureTable {
    FeatureSource source = FeatureSource::sparse_code;
    std::vector<DescriptorKind> kinds;
    std::vector<std::map<ImageKey, LabelledRepresentation>> samples;
    std::vector<std::map<ImageKey, DescriptorBank>> banks;
    std::vector<std::string> distractors;
    EncodeStats stats;

    const LabelledRepresentation& sample(std::size_t kind, const std::string& id, Modality m) const {
        auto it = samples[kind].find({id, m});
        if (it == samples[kind].end())
            throw DataError("no " + std::string(to_string(m)) + " image for subject '" + id + "'");
        return it->second;
    }
};

struct FeatureOptions {
    std::optional<fs::path> cache;
    bool cached_only = false;            // a missing cache entry is an error
    std::optional<std::set<Role>> roles;  // default: every role except representation
};

/// Builds the table from sparse codes (when `rep` is given) or from the descriptors
/// themselves.
inline FeatureTable build_features(const Dataset& ds, const Representation* rep, const PipelineConfig& cfg,
                                   const FeatureOptions& fo) {
    FeatureTable t;
    t.source = rep ? FeatureSource::sparse_code : FeatureSource::descriptor;
    t.kinds = cfg.kinds;
    std::vector<const LoadedImage*> images;
    for (const auto& li : ds.images) {
        if (li.entry.role == Role::representation) continue;
        if (fo.roles && !fo.roles->count(li.entry.role)) continue;
        images.push_back(&li);
        if (li.entry.role == Role::gallery_distractor) t.distractors.push_back(li.entry.subject_id);
    }
    const PatchGrid grid = cfg.grid();
    for (auto kind : cfg.kinds) {
        auto banks = describe_images(images, grid, kind, cfg.workers);
        std::map<ImageKey, LabelledRepresentation> samples;
        std::map<ImageKey, DescriptorBank> bank_map;
        if (rep) {
            auto codes = encode_images(images, *rep, kind, cfg, fo.cache, &t.stats, fo.cached_only);
            for (std::size_t i = 0; i < images.size(); ++i)
                samples[{images[i]->entry.subject_id, images[i]->entry.modality}] = as_sample(*images[i], codes[i]);
        } else {
            for (std::size_t i = 0; i < images.size(); ++i)
                samples[{images[i]->entry.subject_id, images[i]->entry.modality}] = as_sample(*images[i], banks[i]);
        }
        for (std::size_t i = 0; i < images.size(); ++i)
            bank_map[{images[i]->entry.subject_id, images[i]->entry.modality}] = std::move(banks[i]);
        t.samples.push_back(std::move(samples));
        t.banks.push_back(std::move(bank_map));
    }
    return t;
}

inline FeatureTable build_features(const Dataset& ds, const Representation* rep, const PipelineConfig& cfg,
                                   const std::optional<fs::path>& cache = std::nullopt) {
    return build_features(ds, rep, cfg, FeatureOptions{cache, false, std::nullopt});
}

/// Subjects used for training and for testing.
struct Split {
    std::vector<std::string> train, test;
};

inline Split default_split(const Dataset& ds) {
    Split s;
    std::set<std::string> train, test;
    for (const auto& li : ds.images) {
        if (li.entry.role == Role::train) train.insert(li.entry.subject_id);
        if (li.entry.role == Role::test_probe) test.insert(li.entry.subject_id);
    }
    s.train.assign(train.begin(), train.end());
    s.test.assign(test.begin(), test.end());
    return s;
}

/// Trains one model per kind and scheme on the given subjects (both modalities each). With
/// `baseline` the single block scheme replaces the three proposed ones.
inline TrainedSystem train_on(const FeatureTable& t, const std::vector<std::string>& subjects, const PipelineConfig& cfg,
                              bool baseline = false) {
    std::vector<std::vector<LabelledRepresentation>> train_by_kind(t.kinds.size());
    std::vector<std::vector<PartitionScheme>> schemes_by_kind;
    for (std::size_t k = 0; k < t.kinds.size(); ++k) {
        std::vector<DescriptorBank> banks;
        for (const auto& id : subjects)
            for (auto m : {cfg.probe_modality, cfg.gallery_modality}) {
                train_by_kind[k].push_back(t.sample(k, id, m));
                banks.push_back(t.banks[k].at({id, m}));
            }
        schemes_by_kind.push_back(baseline ? std::vector<PartitionScheme>{baseline_scheme(cfg)} : make_schemes(cfg, banks));
    }
    const std::vector<std::string> names = baseline ? std::vector<std::string>{"block"} : scheme_names();
    return train_system(train_by_kind, schemes_by_kind, names, cfg, t.source);
}

/// Evaluates probes of the test subjects against their gallery mates, optionally with the
/// distractors added to the gallery.
inline EvalReport evaluate_on(const TrainedSystem& sys, const FeatureTable& t, const std::vector<std::string>& test,
                              bool with_distractors, const PipelineConfig& cfg) {
    std::vector<std::vector<LabelledRepresentation>> probes(t.kinds.size()), gallery(t.kinds.size());
    std::map<std::string, std::string> mates;
    for (std::size_t k = 0; k < t.kinds.size(); ++k) {
        for (const auto& id : test) {
            probes[k].push_back(t.sample(k, id, cfg.probe_modality));
            gallery[k].push_back(t.sample(k, id, cfg.gallery_modality));
        }
        if (with_distractors)
            for (const auto& id : t.distractors) gallery[k].push_back(t.sample(k, id, cfg.gallery_modality));
    }
    for (const auto& id : test) mates[id] = id;
    return evaluate_system(sys, probes, gallery, mates, cfg.fusion, cfg.workers);
}

/// Models are stored one file per kind and scheme next to an index listing them.
inline void save_system(const TrainedSystem& sys, const fs::path& dir) {
    std::string index = "sgrda-system 1\n";
    for (std::size_t k = 0; k < sys.kinds.size(); ++k)
        for (std::size_t s = 0; s < sys.schemes.size(); ++s) {
            const std::string file = std::string(to_string(sys.kinds[k])) + "_" + sys.schemes[s] + ".model";
            write_atomic(dir / file, encode_model(sys.models[k][s]));
            index += std::string(to_string(sys.kinds[k])) + "," + sys.schemes[s] + "," + file + "\n";
        }
    write_atomic(dir / "system.txt", index);
}

inline TrainedSystem load_system(const fs::path& dir) {
    std::istringstream in(read_file(dir / "system.txt"));
    std::string line;
    if (!std::getline(in, line) || line != "sgrda-system 1") throw DataError((dir / "system.txt").string() + ": bad header");
    TrainedSystem sys;
    std::map<std::pair<std::string, std::string>, ProjectionModel> found;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() != 3) throw DataError((dir / "system.txt").string() + ": bad line '" + line + "'");
        const auto kind = parse_descriptor_kind(cells[0]);
        if (std::find(sys.kinds.begin(), sys.kinds.end(), kind) == sys.kinds.end()) sys.kinds.push_back(kind);
        if (std::find(sys.schemes.begin(), sys.schemes.end(), cells[1]) == sys.schemes.end()) sys.schemes.push_back(cells[1]);
        found[{cells[0], cells[1]}] = decode_model(read_file(dir / cells[2]));
    }
    for (auto kind : sys.kinds) {
        std::vector<ProjectionModel> row;
        for (const auto& s : sys.schemes) {
            auto it = found.find({std::string(to_string(kind)), s});
            if (it == found.end())
                throw DataError(dir.string() + ": no model for " + std::string(to_string(kind)) + "/" + s);
            row.push_back(std::move(it->second));
        }
        sys.models.push_back(std::move(row));
    }
    if (sys.models.empty()) throw DataError(dir.string() + ": no models listed");
    return sys;
}

}  // namespace sgrda
