// sgrda: synth, encode, train, eval and sweep over manifests.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cmath>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/opensslv.h>

#include "sgrda/pipeline.hpp"

using namespace sgrda;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "1.0.0";

struct CommonArgs {
    std::string manifest;
    std::string config;
    std::vector<std::string> overrides;
    std::string cache;
    int workers = -1;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--manifest", a.manifest, "manifest CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--config", a.config, "key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", a.overrides, "config override key=value (repeatable)");
    cmd->add_option("--cache", a.cache, "code cache directory (default $SGRDA_CACHE_DIR or <manifest dir>/cache)");
    cmd->add_option("--workers", a.workers, "worker threads (0: all cores)");
}

PipelineConfig load_config(const CommonArgs& a) {
    PipelineConfig cfg = a.config.empty() ? PipelineConfig{} : PipelineConfig::parse(read_file(a.config));
    for (const auto& kv : a.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (a.workers >= 0) cfg.workers = a.workers;
    cfg.validate();
    return cfg;
}

fs::path code_cache(const CommonArgs& a) {
    if (!a.cache.empty()) return a.cache;
    return cache_dir(fs::path(a.manifest).parent_path() / "cache");
}

std::string manifest_hash(const std::string& path) { return sha256_hex(read_file(path)); }

/// Writes the reproducibility record next to the outputs it describes.
void write_run_record(const fs::path& dir, const std::string& command, const PipelineConfig* cfg,
                      const std::string& manifest_sha, const std::vector<fs::path>& outputs, json extra = json::object()) {
    json rec;
    rec["command"] = command;
    rec["version"] = {{"sgrda", kVersion},
                      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
                      {"openssl", OPENSSL_VERSION_TEXT},
                      {"compiler", __VERSION__}};
    if (cfg) {
        rec["config_hash"] = cfg->hash();
        rec["seed"] = cfg->seed;
        rec["config"] = cfg->to_text();
    }
    if (!manifest_sha.empty()) rec["manifest_hash"] = manifest_sha;
    for (auto& [k, v] : extra.items()) rec[k] = v;
    json outs = json::object();
    for (const auto& p : outputs) outs[p.filename().string()] = sha256_hex(read_file(p));
    rec["outputs"] = outs;
    write_atomic(dir / "run.json", rec.dump(2) + "\n");
}

std::set<Role> parse_roles(const std::string& text) {
    std::set<Role> out;
    std::istringstream in(text);
    for (std::string r; std::getline(in, r, ',');) {
        try {
            out.insert(parse_role(detail::trim(r)));
        } catch (const DataError& e) {
            throw UsageError(e.what());
        }
    }
    if (out.empty()) throw UsageError("--roles lists no roles");
    if (out.count(Role::representation)) throw UsageError("representation images are not encoded");
    return out;
}

Representation representation_of(const Dataset& ds, const PipelineConfig& cfg) {
    auto rep = ds.copies(Role::representation);
    if (rep.empty()) throw DataError("manifest has no representation images");
    return make_representation(rep, cfg);
}

std::string model_subdir(bool direct, bool baseline) {
    return std::string(direct ? "direct" : "sgrda") + (baseline ? "-block" : "");
}

std::string kind_label(const TrainedSystem& sys, std::size_t k, std::size_t s) {
    return sys.schemes[s] + "/" + std::string(to_string(sys.kinds[k]));
}

// ---------------------------------------------------------------------------------------------

struct SynthArgs {
    SynthSpec spec;
    std::string out, style = "edge_emphasis";
};

int cmd_synth(const SynthArgs& a) {
    SynthSpec spec = a.spec;
    spec.style = parse_synth_style(a.style);
    const auto ds = generate(spec);
    const fs::path dir(a.out);
    write_dataset(ds, dir);
    write_run_record(dir, "synth", nullptr, manifest_hash((dir / "manifest.csv").string()), {dir / "manifest.csv"},
                     {{"seed", spec.seed},
                      {"subjects", spec.subjects},
                      {"distractors", spec.distractors},
                      {"style", std::string(to_string(spec.style))},
                      {"noise_sigma", spec.noise_sigma},
                      {"identity_components", spec.identity_components},
                      {"mate_consistency", ds.mate_consistency}});
    std::printf("wrote %zu images and %s\n", ds.images.size(), (dir / "manifest.csv").c_str());
    if (mild_style(spec.style)) std::printf("mate consistency %.3f\n", ds.mate_consistency);
    return 0;
}

// ---------------------------------------------------------------------------------------------

struct EncodeArgs {
    CommonArgs common;
    std::string roles = "train,test-probe,test-gallery,gallery-distractor";
};

int cmd_encode(const EncodeArgs& a) {
    const PipelineConfig cfg = load_config(a.common);
    const Manifest m = load_manifest(a.common.manifest);
    const Dataset ds = load_dataset(m, cfg);
    const Representation rep = representation_of(ds, cfg);
    const fs::path cache = code_cache(a.common);
    const FeatureTable t = build_features(ds, &rep, cfg, FeatureOptions{cache, false, parse_roles(a.roles)});
    for (const auto& f : t.stats.failures) std::fprintf(stderr, "solver failure: %s\n", f.c_str());
    std::printf("codes: %d computed, %d cache hits, %d solver failures (cache %s)\n", t.stats.computed, t.stats.hits,
                t.stats.failed, cache.c_str());
    write_run_record(cache, "encode", &cfg, manifest_hash(a.common.manifest), {},
                     {{"representation_fingerprint", rep.fingerprint},
                      {"computed", t.stats.computed},
                      {"hits", t.stats.hits},
                      {"failed", t.stats.failed}});
    return t.stats.failed > 0 ? 3 : 0;
}

// ---------------------------------------------------------------------------------------------

struct TrainArgs {
    CommonArgs common;
    std::string models;
    bool direct = false;
};

FeatureTable features_for(const Dataset& ds, const PipelineConfig& cfg, bool direct, const fs::path& cache,
                          std::set<Role> roles, bool cached_only) {
    if (direct) return build_features(ds, nullptr, cfg, FeatureOptions{std::nullopt, false, std::move(roles)});
    const Representation rep = representation_of(ds, cfg);
    return build_features(ds, &rep, cfg, FeatureOptions{cache, cached_only, std::move(roles)});
}

int cmd_train(const TrainArgs& a) {
    const PipelineConfig cfg = load_config(a.common);
    const Manifest m = load_manifest(a.common.manifest);
    const Dataset ds = load_dataset(m, cfg);
    const FeatureTable t = features_for(ds, cfg, a.direct, code_cache(a.common), {Role::train}, true);
    const auto subjects = default_split(ds).train;
    if (subjects.size() < 2) throw DataError("training needs at least 2 train subjects");
    const fs::path root(a.models);
    std::vector<fs::path> outputs;
    for (bool baseline : {false, true}) {
        const TrainedSystem sys = train_on(t, subjects, cfg, baseline);
        const fs::path dir = root / model_subdir(a.direct, baseline);
        save_system(sys, dir);
        for (std::size_t k = 0; k < sys.kinds.size(); ++k)
            for (std::size_t s = 0; s < sys.schemes.size(); ++s) {
                const auto& model = sys.models[k][s];
                std::printf("%-8s %-18s %2d regions, feature dim %d\n", model_subdir(a.direct, baseline).c_str(),
                            kind_label(sys, k, s).c_str(), model.scheme.region_count(), model.output_dim());
                outputs.push_back(dir / (std::string(to_string(sys.kinds[k])) + "_" + sys.schemes[s] + ".model"));
            }
        outputs.push_back(dir / "system.txt");
    }
    write_run_record(root, "train", &cfg, manifest_hash(a.common.manifest), outputs,
                     {{"feature_source", a.direct ? "descriptor" : "sparse_code"}, {"train_subjects", subjects.size()}});
    return 0;
}

// ---------------------------------------------------------------------------------------------

struct EvalArgs {
    CommonArgs common;
    std::string models, out, extend;
    bool direct = false, svg = false;
    int folds = 0;
};

/// Adds the distractor entries of another manifest (or, when it marks none, all of its
/// gallery-modality images) to the gallery.
void add_extension(FeatureTable& t, const std::string& path, const PipelineConfig& cfg, const Dataset& main_ds,
                   bool direct, const fs::path& cache, const std::set<std::string>& reserved) {
    Manifest ext = load_manifest(path);
    const bool marked = !ext.with_role(Role::gallery_distractor).empty();
    Dataset extra;
    std::vector<const ManifestEntry*> picked;
    for (auto& e : ext.entries) {
        if (e.modality != cfg.gallery_modality || (marked && e.role != Role::gallery_distractor)) continue;
        if (reserved.count(e.subject_id))
            throw DataError("distractor id '" + e.subject_id + "' collides with an evaluated subject");
        e.role = Role::gallery_distractor;
        picked.push_back(&e);
    }
    extra.images = load_entries(ext, picked, cfg);
    for (const auto& li : main_ds.images)
        if (li.entry.role == Role::representation) extra.images.push_back(li);
    const FeatureTable more = features_for(extra, cfg, direct, cache, {Role::gallery_distractor}, false);
    for (std::size_t k = 0; k < t.kinds.size(); ++k)
        for (const auto& [key, sample] : more.samples[k])
            if (!t.samples[k].emplace(key, sample).second)
                throw DataError("distractor id '" + key.first + "' appears twice in the gallery");
    t.distractors.insert(t.distractors.end(), more.distractors.begin(), more.distractors.end());
}

std::set<std::string> evaluated_subjects(const Dataset& ds) {
    std::set<std::string> out;
    for (const auto& li : ds.images)
        if (li.entry.role != Role::representation) out.insert(li.entry.subject_id);
    return out;
}

std::string folds_csv(const CrossValidation& cv) {
    std::string out = "fold,rank1,rank5,rank10,rank20,rank50\n";
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
        out += std::to_string(f + 1);
        for (int r : {1, 5, 10, 20, 50}) out += "," + detail::fmt("%.6f", cv.folds[f].at(r));
        out += '\n';
    }
    return out;
}

std::string cv_cmc_csv(const CrossValidation& cv) {
    std::string out = "rank,mean,stddev\n";
    for (std::size_t k = 0; k < cv.mean.size(); ++k)
        out += std::to_string(k + 1) + "," + detail::fmt("%.6f", cv.mean[k]) + "," + detail::fmt("%.6f", cv.stddev[k]) + '\n';
    return out;
}

int cmd_eval(const EvalArgs& a) {
    const PipelineConfig cfg = load_config(a.common);
    const Manifest m = load_manifest(a.common.manifest);
    const Dataset ds = load_dataset(m, cfg);
    const fs::path cache = code_cache(a.common), out(a.out);
    std::set<Role> roles{Role::test_probe, Role::test_gallery, Role::gallery_distractor};
    if (a.folds > 0) roles.insert(Role::train);
    FeatureTable t = features_for(ds, cfg, a.direct, cache, roles, true);
    if (!a.extend.empty()) add_extension(t, a.extend, cfg, ds, a.direct, cache, evaluated_subjects(ds));

    std::vector<fs::path> outputs;
    auto emit = [&](const std::string& name, const std::string& bytes) {
        write_atomic(out / name, bytes);
        outputs.push_back(out / name);
    };
    const Split split = default_split(ds);
    if (split.test.empty()) throw DataError("manifest has no test-probe subjects");
    json extra{{"feature_source", a.direct ? "descriptor" : "sparse_code"}, {"extend_gallery", a.extend},
               {"gallery_size", split.test.size() + t.distractors.size()}};

    if (a.folds > 0) {
        std::vector<std::string> subjects = split.train;
        subjects.insert(subjects.end(), split.test.begin(), split.test.end());
        const auto cv = cross_validate(subjects, a.folds, cfg.seed, [&](const auto& train, const auto& test) {
            return evaluate_on(train_on(t, train, cfg), t, test, true, cfg).fused_rank.cmc;
        });
        emit("folds.csv", folds_csv(cv));
        emit("cmc.csv", cv_cmc_csv(cv));
        CmcCurve mean{cv.mean, 0};
        emit("rank_table.csv", rank_table_csv({{"fused_mean", mean}}));
        if (a.svg) emit("cmc.svg", cmc_svg({{"fused (mean of " + std::to_string(a.folds) + " folds)", mean}}));
        extra["folds"] = a.folds;
        std::printf("rank-1 over %d folds: %.4f (std %.4f)\n", a.folds, cv.mean.empty() ? 0.0 : cv.mean[0],
                    cv.stddev.empty() ? 0.0 : cv.stddev[0]);
    } else {
        const fs::path models(a.models);
        if (a.models.empty()) throw UsageError("--models is required without --folds");
        const TrainedSystem sys = load_system(models / model_subdir(a.direct, false));
        if (sys.kinds != cfg.kinds) throw DataError("models were trained for different descriptor kinds");
        const EvalReport r = evaluate_on(sys, t, split.test, true, cfg);
        std::vector<std::pair<std::string, CmcCurve>> rows{{"fused", r.fused_rank.cmc}};
        for (std::size_t s = 0; s < sys.schemes.size(); ++s) rows.push_back({sys.schemes[s], r.per_scheme[s].cmc});
        for (std::size_t k = 0; k < sys.kinds.size(); ++k)
            for (std::size_t s = 0; s < sys.schemes.size(); ++s)
                rows.push_back({kind_label(sys, k, s), r.per_single[k][s].cmc});
        const fs::path block_dir = models / model_subdir(a.direct, true);
        if (fs::exists(block_dir / "system.txt")) {
            const EvalReport b = evaluate_on(load_system(block_dir), t, split.test, true, cfg);
            rows.push_back({"block_baseline", b.fused_rank.cmc});
        }
        emit("scores.csv", scores_csv(r.fused));
        emit("cmc.csv", cmc_csv(r.fused_rank.cmc));
        emit("rank_table.csv", rank_table_csv(rows));
        if (a.svg) emit("cmc.svg", cmc_svg(rows));
        std::printf("%s", rank_table_csv(rows).c_str());
    }
    write_run_record(out, "eval", &cfg, manifest_hash(a.common.manifest), outputs, extra);
    return 0;
}

// ---------------------------------------------------------------------------------------------

struct SweepArgs {
    CommonArgs common;
    std::string param, out;
    std::vector<std::string> values;
    bool direct = false;
    int folds = 0;
};

int cmd_sweep(const SweepArgs& a) {
    const PipelineConfig base = load_config(a.common);
    if (a.param != "K_c" && a.param != "K_r" && a.param != "K_l" && a.param != "K")
        throw UsageError("--param must be one of K_c, K_r, K_l, K");
    if (a.param == "K" && a.direct) throw UsageError("a K sweep needs sparse codes");
    if (a.values.empty()) throw UsageError("--values lists nothing");
    const Manifest m = load_manifest(a.common.manifest);
    const Dataset ds = load_dataset(m, base);
    const fs::path cache = code_cache(a.common), out(a.out);
    const Split split = default_split(ds);
    std::optional<FeatureTable> shared;
    std::string csv = "value,rank1_mean,rank1_std\n";
    for (const auto& v : a.values) {
        PipelineConfig cfg = base;
        cfg.set(a.param, v);
        if (a.param == "K") cfg.mode = NeighborMode::top_k;
        cfg.validate();
        // partition parameters share one set of encodings; K changes them
        if (a.param == "K" || !shared)
            shared = features_for(ds, cfg, a.direct, cache,
                                  {Role::train, Role::test_probe, Role::test_gallery, Role::gallery_distractor}, false);
        const FeatureTable& t = *shared;
        double mean = 0, sd = 0;
        if (a.folds > 0) {
            std::vector<std::string> subjects = split.train;
            subjects.insert(subjects.end(), split.test.begin(), split.test.end());
            const auto cv = cross_validate(subjects, a.folds, cfg.seed, [&](const auto& train, const auto& test) {
                return evaluate_on(train_on(t, train, cfg), t, test, true, cfg).fused_rank.cmc;
            });
            mean = cv.mean.empty() ? 0.0 : cv.mean[0];
            sd = cv.stddev.empty() ? 0.0 : cv.stddev[0];
        } else {
            mean = evaluate_on(train_on(t, split.train, cfg), t, split.test, true, cfg).fused_rank.cmc.at(1);
        }
        csv += v + "," + detail::fmt("%.6f", mean) + "," + detail::fmt("%.6f", sd) + "\n";
        std::printf("%s=%s rank-1 %.4f\n", a.param.c_str(), v.c_str(), mean);
    }
    const std::string name = "sweep_" + a.param + ".csv";
    write_atomic(out / name, csv);
    write_run_record(out, "sweep", &base, manifest_hash(a.common.manifest), {out / name},
                     {{"param", a.param}, {"folds", a.folds}, {"feature_source", a.direct ? "descriptor" : "sparse_code"}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse graphical representation face matching across modalities"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate a synthetic photo/sketch dataset and manifest");
    s->add_option("--subjects", synth.spec.subjects, "number of subjects")->capture_default_str();
    s->add_option("--seed", synth.spec.seed, "random seed")->capture_default_str();
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--distractors", synth.spec.distractors, "gallery-only identities")->capture_default_str();
    s->add_option("--style", synth.style, "identity | edge_emphasis | tone_inversion | blur_contrast")->capture_default_str();
    s->add_option("--noise", synth.spec.noise_sigma, "sketch pixel noise sigma")->capture_default_str();
    s->add_option("--components", synth.spec.identity_components, "latent texture components")->capture_default_str();
    s->add_option("--width", synth.spec.width)->capture_default_str();
    s->add_option("--height", synth.spec.height)->capture_default_str();

    EncodeArgs enc;
    auto* e = app.add_subcommand("encode", "compute and cache sparse codes");
    add_common(e, enc.common);
    e->add_option("--roles", enc.roles, "comma-separated roles to encode")->capture_default_str();
    std::string mode;
    int top_k = 0;
    e->add_option("--mode", mode, "all_M | top_K");
    e->add_option("--K", top_k, "neighbours kept in top_K mode");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "fit projection models for every scheme and descriptor kind");
    add_common(t, tr.common);
    t->add_option("--models", tr.models, "model output directory")->required();
    t->add_flag("--direct-feature", tr.direct, "train on descriptors instead of sparse codes");

    EvalArgs ev;
    auto* v = app.add_subcommand("eval", "score, fuse and rank the test set");
    add_common(v, ev.common);
    v->add_option("--models", ev.models, "model directory written by train");
    v->add_option("--out", ev.out, "report directory")->required();
    v->add_flag("--direct-feature", ev.direct, "use descriptors instead of sparse codes");
    v->add_option("--extend-gallery", ev.extend, "manifest whose gallery-modality images join the gallery")
        ->check(CLI::ExistingFile);
    v->add_option("--folds", ev.folds, "cross-validate over train and test subjects with k folds");
    v->add_flag("--svg", ev.svg, "also write cmc.svg");

    SweepArgs sw;
    auto* w = app.add_subcommand("sweep", "rank-1 accuracy across values of one parameter");
    add_common(w, sw.common);
    w->add_option("--param", sw.param, "K_c | K_r | K_l | K")->required();
    w->add_option("--values", sw.values, "values to try")->required()->delimiter(',');
    w->add_option("--out", sw.out, "output directory")->required();
    w->add_option("--folds", sw.folds, "cross-validation folds per value");
    w->add_flag("--direct-feature", sw.direct, "use descriptors instead of sparse codes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& ok) {
        return app.exit(ok);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return 1;
    }

    try {
        if (*s) return cmd_synth(synth);
        if (*e) {
            if (!mode.empty()) enc.common.overrides.push_back("mode=" + mode);
            if (top_k > 0) enc.common.overrides.push_back("K=" + std::to_string(top_k));
            return cmd_encode(enc);
        }
        if (*t) return cmd_train(tr);
        if (*v) {
            if (ev.folds < 0) throw UsageError("--folds must be positive");
            return cmd_eval(ev);
        }
        if (*w) return cmd_sweep(sw);
    } catch (const UsageError& err) {
        std::fprintf(stderr, "usage error: %s\n", err.what());
        return 1;
    } catch (const DataError& err) {
        std::fprintf(stderr, "data error: %s\n", err.what());
        return 2;
    } catch (const NumericError& err) {
        std::fprintf(stderr, "numeric failure: %s\n", err.what());
        return 3;
    } catch (const fs::filesystem_error& err) {
        std::fprintf(stderr, "data error: %s\n", err.what());
        return 2;
    }
    return 1;
}
