#pragma once

// Manifests, configuration files, atomic writes, content hashes and binary caches.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <openssl/evp.h>

#include <Eigen/Dense>

#include "sgrda/descriptors.hpp"
#include "sgrda/discriminant.hpp"
#include "sgrda/error.hpp"
#include "sgrda/graphrep.hpp"
#include "sgrda/imagegrid.hpp"
#include "sgrda/matcher.hpp"

namespace sgrda {

namespace fs = std::filesystem;

enum class Role { representation, train, test_probe, test_gallery, gallery_distractor };

inline std::string_view to_string(Role r) {
    switch (r) {
        case Role::representation: return "representation";
        case Role::train: return "train";
        case Role::test_probe: return "test-probe";
        case Role::test_gallery: return "test-gallery";
        case Role::gallery_distractor: return "gallery-distractor";
    }
    return "?";
}

inline Role parse_role(std::string_view s) {
    for (auto r : {Role::representation, Role::train, Role::test_probe, Role::test_gallery, Role::gallery_distractor})
        if (s == to_string(r)) return r;
    throw DataError("unknown role '" + std::string(s) + "'");
}

struct ManifestEntry {
    std::string subject_id;
    Modality modality = Modality::photo;
    std::string path;  // relative paths resolve against the manifest's directory
    Role role = Role::train;

    bool operator==(const ManifestEntry&) const = default;
};

inline constexpr std::string_view kManifestHeader = "subject_id,modality,path,role";

struct Manifest {
    std::vector<ManifestEntry> entries;
    fs::path base_dir;

    fs::path resolve(const ManifestEntry& e) const {
        fs::path p(e.path);
        return p.is_absolute() ? p : base_dir / p;
    }

    std::vector<const ManifestEntry*> with_role(Role r) const {
        std::vector<const ManifestEntry*> out;
        for (const auto& e : entries)
            if (e.role == r) out.push_back(&e);
        return out;
    }

    std::set<std::string> subjects(Role r) const {
        std::set<std::string> out;
        for (const auto& e : entries)
            if (e.role == r) out.insert(e.subject_id);
        return out;
    }

    /// Role disjointness and one gallery mate per probe subject.
    void validate() const {
        const auto rep = subjects(Role::representation), train = subjects(Role::train);
        auto test_ids = subjects(Role::test_probe);
        for (const auto& s : subjects(Role::test_gallery)) test_ids.insert(s);
        const auto& test = test_ids;
        auto overlap = [](const std::set<std::string>& a, const std::set<std::string>& b) {
            for (const auto& s : a)
                if (b.count(s)) return s;
            return std::string();
        };
        for (auto [a, b, what] : {std::tuple{&rep, &train, "representation and train"},
                                  std::tuple{&rep, &test, "representation and test"},
                                  std::tuple{&train, &test, "train and test"}}) {
            const std::string shared = overlap(*a, *b);
            if (!shared.empty()) throw DataError("subject '" + shared + "' appears in both " + what + " roles");
        }
        std::map<std::string, int> gallery;
        for (const auto* e : with_role(Role::test_gallery)) ++gallery[e->subject_id];
        for (const auto& s : subjects(Role::test_probe)) {
            auto it = gallery.find(s);
            if (it == gallery.end() || it->second != 1)
                throw DataError("test probe subject '" + s + "' needs exactly one gallery image");
        }
    }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string trim(std::string s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline Manifest parse_manifest(const std::string& text, const fs::path& base_dir) {
    Manifest m;
    m.base_dir = base_dir;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != kManifestHeader)
        throw DataError("manifest must start with the header '" + std::string(kManifestHeader) + "'");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() != 4) throw DataError("manifest line " + std::to_string(lineno) + " needs 4 fields");
        ManifestEntry e;
        e.subject_id = detail::trim(cells[0]);
        if (e.subject_id.empty()) throw DataError("manifest line " + std::to_string(lineno) + " has no subject id");
        try {
            e.modality = parse_modality(detail::trim(cells[1]));
        } catch (const UsageError& err) {
            throw DataError("manifest line " + std::to_string(lineno) + ": " + err.what());
        }
        e.path = detail::trim(cells[2]);
        e.role = parse_role(detail::trim(cells[3]));
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline std::string serialize_manifest(const Manifest& m) {
    std::string out(kManifestHeader);
    out += '\n';
    for (const auto& e : m.entries)
        out += e.subject_id + "," + std::string(to_string(e.modality)) + "," + e.path + "," + std::string(to_string(e.role)) + "\n";
    return out;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes through a temporary sibling and renames it into place.
inline void write_atomic(const fs::path& p, std::string_view bytes) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, p);
}

inline Manifest load_manifest(const fs::path& p) { return parse_manifest(read_file(p), p.parent_path()); }

inline std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw NumericError("SHA-256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

/// Pipeline settings; every key has a default and may be overridden from a key=value file.
struct PipelineConfig {
    int width = 100, height = 125;
    int patch_size = 10;
    double overlap = 0.5;
    int search_region = 16;
    double alpha = 0.25;
    std::vector<DescriptorKind> kinds{DescriptorKind::sift_like, DescriptorKind::hog};
    NeighborMode mode = NeighborMode::all_m;
    int top_k = 10;
    int k_c = 4, k_r = 5, k_l = 9;
    int block_rows = 7, block_cols = 5;
    double variance_keep = 0.99;
    bool per_modality_pca = false;
    int max_sweeps = 200;
    double rel_tol = 1e-8;
    double kkt_tol = 1e-9;
    std::uint64_t seed = 0;
    FusionOrder fusion = FusionOrder::schemes_then_kinds;
    Modality probe_modality = Modality::sketch, gallery_modality = Modality::photo;
    int workers = 0;  // 0: hardware concurrency

    PatchGrid grid() const { return build_grid(width, height, patch_size, overlap); }

    EncodeOptions encode_options() const {
        EncodeOptions o;
        o.alpha = alpha;
        o.search_region = search_region;
        o.mode = mode;
        o.top_k = top_k;
        o.solver.max_sweeps = max_sweeps;
        o.solver.rel_tol = rel_tol;
        o.solver.kkt_tol = kkt_tol;
        return o;
    }

    /// Canonical key=value text; also the basis of the config hash.
    std::string to_text() const {
        auto num = [](double v) {
            std::array<char, 32> buf{};
            return std::string(buf.data(), std::to_chars(buf.data(), buf.data() + buf.size(), v).ptr);
        };
        std::ostringstream o;
        std::string kinds_text;
        for (auto k : kinds) kinds_text += (kinds_text.empty() ? "" : ",") + std::string(to_string(k));
        o << "width=" << width << "\nheight=" << height << "\npatch_size=" << patch_size << "\noverlap=" << num(overlap)
          << "\nsearch_region=" << search_region << "\nalpha=" << num(alpha) << "\nkinds=" << kinds_text
          << "\nmode=" << (mode == NeighborMode::all_m ? "all_M" : "top_K") << "\nK=" << top_k << "\nK_c=" << k_c
          << "\nK_r=" << k_r << "\nK_l=" << k_l << "\nblock_rows=" << block_rows << "\nblock_cols=" << block_cols
          << "\nvariance_keep=" << num(variance_keep) << "\nper_modality_pca=" << (per_modality_pca ? 1 : 0)
          << "\nmax_sweeps=" << max_sweeps << "\nrel_tol=" << num(rel_tol) << "\nkkt_tol=" << num(kkt_tol) << "\nseed=" << seed
          << "\nfusion_order=" << (fusion == FusionOrder::schemes_then_kinds ? "schemes_then_kinds" : "kinds_then_schemes")
          << "\nprobe_modality=" << to_string(probe_modality) << "\ngallery_modality=" << to_string(gallery_modality)
          << "\nworkers=" << workers << "\n";
        return o.str();
    }

    void set(const std::string& key, const std::string& value) {
        auto as_int = [&] {
            std::size_t used = 0;
            const long v = std::stol(value, &used);
            if (used != value.size()) throw UsageError("config key '" + key + "' expects an integer");
            return static_cast<int>(v);
        };
        auto as_double = [&] {
            std::size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size()) throw UsageError("config key '" + key + "' expects a number");
            return v;
        };
        try {
            if (key == "width") width = as_int();
            else if (key == "height") height = as_int();
            else if (key == "patch_size") patch_size = as_int();
            else if (key == "overlap") overlap = as_double();
            else if (key == "search_region") search_region = as_int();
            else if (key == "alpha") alpha = as_double();
            else if (key == "kinds") {
                kinds.clear();
                std::istringstream in(value);
                for (std::string k; std::getline(in, k, ',');) kinds.push_back(parse_descriptor_kind(detail::trim(k)));
                if (kinds.empty()) throw UsageError("kinds must list at least one descriptor");
            } else if (key == "mode") {
                if (value == "all_M") mode = NeighborMode::all_m;
                else if (value == "top_K") mode = NeighborMode::top_k;
                else throw UsageError("mode must be all_M or top_K");
            } else if (key == "K") top_k = as_int();
            else if (key == "K_c") k_c = as_int();
            else if (key == "K_r") k_r = as_int();
            else if (key == "K_l") k_l = as_int();
            else if (key == "block_rows") block_rows = as_int();
            else if (key == "block_cols") block_cols = as_int();
            else if (key == "variance_keep") variance_keep = as_double();
            else if (key == "per_modality_pca") per_modality_pca = as_int() != 0;
            else if (key == "max_sweeps") max_sweeps = as_int();
            else if (key == "rel_tol") rel_tol = as_double();
            else if (key == "kkt_tol") kkt_tol = as_double();
            else if (key == "seed") seed = static_cast<std::uint64_t>(std::stoull(value));
            else if (key == "fusion_order") {
                if (value == "schemes_then_kinds") fusion = FusionOrder::schemes_then_kinds;
                else if (value == "kinds_then_schemes") fusion = FusionOrder::kinds_then_schemes;
                else throw UsageError("fusion_order must be schemes_then_kinds or kinds_then_schemes");
            } else if (key == "probe_modality") probe_modality = parse_modality(value);
            else if (key == "gallery_modality") gallery_modality = parse_modality(value);
            else if (key == "workers") workers = as_int();
            else throw UsageError("unknown config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw UsageError("bad value '" + value + "' for config key '" + key + "'");
        } catch (const std::out_of_range&) {
            throw UsageError("value out of range for config key '" + key + "'");
        }
    }

    /// Lines of key=value; '#' starts a comment.
    static PipelineConfig parse(const std::string& text) {
        PipelineConfig c;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            line = detail::trim(line.substr(0, line.find('#')));
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw UsageError("config line '" + line + "' lacks '='");
            c.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        }
        c.validate();
        return c;
    }

    void validate() const {
        auto need = [](bool ok, const char* what) {
            if (!ok) throw UsageError(std::string("config: ") + what);
        };
        need(patch_size > 0 && width >= patch_size && height >= patch_size, "image must hold at least one patch");
        need(overlap >= 0.0 && overlap < 1.0, "overlap must lie in [0, 1)");
        need(search_region >= 0, "search_region must be non-negative");
        need(alpha >= 0.0, "alpha must be non-negative");
        need(!kinds.empty(), "kinds must list at least one descriptor");
        need(top_k >= 1, "K must be at least 1");
        need(k_c >= 1 && k_r >= 1 && k_l >= 1, "K_c, K_r and K_l must be at least 1");
        need(block_rows >= 1 && block_cols >= 1, "block grid must be at least 1x1");
        need(variance_keep > 0.0 && variance_keep <= 1.0, "variance_keep must lie in (0, 1]");
        need(max_sweeps >= 1 && rel_tol > 0.0 && kkt_tol > 0.0, "solver limits must be positive");
        need(workers >= 0, "workers must be non-negative");
        need(probe_modality != gallery_modality, "probe and gallery modalities must differ");
    }

    std::string hash() const { return sha256_hex(to_text()); }
};

// Binary caches share the little-endian helpers of the model container.

inline std::string encode_code(const SparseFaceCode& c) {
    std::ostringstream out;
    out.write("SGRDASC1", 8);
    detail::put_u64(out, static_cast<std::uint64_t>(c.weights.rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(c.weights.cols()));
    detail::put_u64(out, static_cast<std::uint64_t>(c.kind));
    detail::put_u64(out, static_cast<std::uint64_t>(c.modality));
    detail::put_u64(out, c.image_id.size());
    out.write(c.image_id.data(), static_cast<std::streamsize>(c.image_id.size()));
    for (Eigen::Index r = 0; r < c.weights.rows(); ++r)
        for (Eigen::Index k = 0; k < c.weights.cols(); ++k) detail::put_f64(out, c.weights(r, k));
    detail::put_f64(out, c.objective);
    detail::put_f64(out, c.kkt_residual);
    detail::put_u64(out, static_cast<std::uint64_t>(c.sweeps));
    detail::put_u64(out, c.converged ? 1 : 0);
    return out.str();
}

inline SparseFaceCode decode_code(const std::string& bytes) {
    std::istringstream in(bytes);
    char magic[8];
    if (!in.read(magic, 8) || std::string_view(magic, 8) != "SGRDASC1") throw DataError("not a code cache file");
    SparseFaceCode c;
    const auto n = detail::get_u64(in), m = detail::get_u64(in);
    const auto kind = detail::get_u64(in), mod = detail::get_u64(in);
    const auto len = detail::get_u64(in);
    if (n > (1u << 20) || m > (1u << 20) || kind > 1 || mod > 4 || len > 4096) throw DataError("corrupt code cache header");
    c.kind = static_cast<DescriptorKind>(kind);
    c.modality = static_cast<Modality>(mod);
    c.image_id.resize(len);
    if (!in.read(c.image_id.data(), static_cast<std::streamsize>(len))) throw DataError("code cache truncated");
    c.weights.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (Eigen::Index r = 0; r < c.weights.rows(); ++r)
        for (Eigen::Index k = 0; k < c.weights.cols(); ++k) c.weights(r, k) = detail::get_f64(in);
    c.objective = detail::get_f64(in);
    c.kkt_residual = detail::get_f64(in);
    c.sweeps = static_cast<int>(detail::get_u64(in));
    c.converged = detail::get_u64(in) != 0;
    return c;
}

inline std::string encode_model(const ProjectionModel& m) {
    std::ostringstream out;
    write_model(out, m);
    return out.str();
}

inline ProjectionModel decode_model(const std::string& bytes) {
    std::istringstream in(bytes);
    return read_model(in);
}

/// Cache directory: $SGRDA_CACHE_DIR when set, else `fallback`.
inline fs::path cache_dir(const fs::path& fallback) {
    if (const char* env = std::getenv("SGRDA_CACHE_DIR"); env && *env) return fs::path(env);
    return fallback;
}

}  // namespace sgrda
