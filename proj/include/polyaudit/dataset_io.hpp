#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "polyaudit/json_util.hpp"
#include "polyaudit/synthgen.hpp"

namespace polyaudit {

// Dataset on disk:
//   <dir>/manifest.jsonl  - line 1: header (schema id, config echo, cohort),
//                           then one JSON object per frame with ids, scalars,
//                           bbox geometry and byte offsets into the payload.
//   <dir>/payload.bin     - little-endian float32 maps, row-major, depth map
//                           then appearance map per frame, at the offsets
//                           declared in the manifest.
// Round-trips are bit-exact: scalars go through shortest-round-trip JSON
// doubles, maps are copied verbatim.

inline constexpr const char* kDatasetSchema = "polyaudit.dataset.v1";

static_assert(sizeof(float) == 4, "payload format assumes 32-bit floats");

// --- config <-> json -------------------------------------------------------

inline json to_json(const CohortConfig& c) {
    return {{"n_patients", c.n_patients},
            {"n_polyps", c.n_polyps},
            {"large_fraction", c.large_fraction}};
}

inline CohortConfig cohort_from_json(const json& j, const std::string& ctx) {
    JsonReader r(j, ctx);
    CohortConfig c;
    c.n_patients = r.get_or("n_patients", c.n_patients);
    c.n_polyps = r.get_or("n_polyps", c.n_polyps);
    c.large_fraction = r.get_or("large_fraction", c.large_fraction);
    r.done();
    return c;
}

inline json to_json(const ConfoundConfig& c) {
    return {{"confound_strength_rho", c.confound_strength_rho},
            {"behavior_exponent_gamma", c.behavior_exponent_gamma},
            {"base_distance_mm", c.base_distance_mm},
            {"reference_size_mm", c.reference_size_mm},
            {"clip_jitter_sigma", c.clip_jitter_sigma},
            {"frames_per_polyp", c.frames_per_polyp},
            {"distance_noise_sigma", c.distance_noise_sigma}};
}

inline ConfoundConfig confound_from_json(const json& j, const std::string& ctx) {
    JsonReader r(j, ctx);
    ConfoundConfig c;
    c.confound_strength_rho =
        r.get_or("confound_strength_rho", c.confound_strength_rho);
    c.behavior_exponent_gamma =
        r.get_or("behavior_exponent_gamma", c.behavior_exponent_gamma);
    c.base_distance_mm = r.get_or("base_distance_mm", c.base_distance_mm);
    c.reference_size_mm = r.get_or("reference_size_mm", c.reference_size_mm);
    c.clip_jitter_sigma = r.get_or("clip_jitter_sigma", c.clip_jitter_sigma);
    c.frames_per_polyp = r.get_or("frames_per_polyp", c.frames_per_polyp);
    c.distance_noise_sigma =
        r.get_or("distance_noise_sigma", c.distance_noise_sigma);
    r.done();
    return c;
}

inline json to_json(const PhotometryConfig& c) {
    return {{"source_constant_k", c.source_constant_k},
            {"auto_exposure_enabled", c.auto_exposure_enabled},
            {"ae_target_luminance", c.ae_target_luminance},
            {"ae_tolerance", c.ae_tolerance},
            {"luminance_noise_sigma", c.luminance_noise_sigma}};
}

inline PhotometryConfig photometry_from_json(const json& j,
                                             const std::string& ctx) {
    JsonReader r(j, ctx);
    PhotometryConfig c;
    c.source_constant_k = r.get_or("source_constant_k", c.source_constant_k);
    c.auto_exposure_enabled =
        r.get_or("auto_exposure_enabled", c.auto_exposure_enabled);
    c.ae_target_luminance =
        r.get_or("ae_target_luminance", c.ae_target_luminance);
    c.ae_tolerance = r.get_or("ae_tolerance", c.ae_tolerance);
    c.luminance_noise_sigma =
        r.get_or("luminance_noise_sigma", c.luminance_noise_sigma);
    r.done();
    return c;
}

inline json to_json(const RenderConfig& c) {
    return {{"map_size", c.map_size},
            {"focal_length_px", c.focal_length_px},
            {"relief_fraction", c.relief_fraction},
            {"dome_fraction", c.dome_fraction},
            {"background_slope", c.background_slope},
            {"bbox_jitter_sigma", c.bbox_jitter_sigma},
            {"depth_noise_sigma", c.depth_noise_sigma},
            {"center_jitter_frac", c.center_jitter_frac},
            {"max_bbox_frac", c.max_bbox_frac},
            {"min_bbox_px", c.min_bbox_px},
            {"retry_budget", c.retry_budget},
            {"rel_scale_clip_min", c.rel_scale_clip_min},
            {"rel_scale_clip_max", c.rel_scale_clip_max},
            {"rel_scale_frame_sigma", c.rel_scale_frame_sigma}};
}

inline RenderConfig render_from_json(const json& j, const std::string& ctx) {
    JsonReader r(j, ctx);
    RenderConfig c;
    c.map_size = r.get_or("map_size", c.map_size);
    c.focal_length_px = r.get_or("focal_length_px", c.focal_length_px);
    c.relief_fraction = r.get_or("relief_fraction", c.relief_fraction);
    c.dome_fraction = r.get_or("dome_fraction", c.dome_fraction);
    c.background_slope = r.get_or("background_slope", c.background_slope);
    c.bbox_jitter_sigma = r.get_or("bbox_jitter_sigma", c.bbox_jitter_sigma);
    c.depth_noise_sigma = r.get_or("depth_noise_sigma", c.depth_noise_sigma);
    c.center_jitter_frac = r.get_or("center_jitter_frac", c.center_jitter_frac);
    c.max_bbox_frac = r.get_or("max_bbox_frac", c.max_bbox_frac);
    c.min_bbox_px = r.get_or("min_bbox_px", c.min_bbox_px);
    c.retry_budget = r.get_or("retry_budget", c.retry_budget);
    c.rel_scale_clip_min = r.get_or("rel_scale_clip_min", c.rel_scale_clip_min);
    c.rel_scale_clip_max = r.get_or("rel_scale_clip_max", c.rel_scale_clip_max);
    c.rel_scale_frame_sigma =
        r.get_or("rel_scale_frame_sigma", c.rel_scale_frame_sigma);
    r.done();
    return c;
}

inline json to_json(const EnvironmentSpec& e) {
    return {{"z0_scale", e.z0_scale},
            {"k_scale", e.k_scale},
            {"focal_scale", e.focal_scale}};
}

inline EnvironmentSpec environment_from_json(const json& j,
                                             const std::string& ctx) {
    JsonReader r(j, ctx);
    EnvironmentSpec e;
    e.z0_scale = r.get_or("z0_scale", e.z0_scale);
    e.k_scale = r.get_or("k_scale", e.k_scale);
    e.focal_scale = r.get_or("focal_scale", e.focal_scale);
    r.done();
    return e;
}

inline json to_json(const GenConfig& c) {
    json envs = json::array();
    for (const auto& e : c.environments) envs.push_back(to_json(e));
    return {{"cohort", to_json(c.cohort)},
            {"confound", to_json(c.confound)},
            {"photometry", to_json(c.photometry)},
            {"render", to_json(c.render)},
            {"environments", envs},
            {"seed", c.seed}};
}

inline GenConfig genconfig_from_json(const json& j, const std::string& ctx) {
    JsonReader r(j, ctx);
    GenConfig c;
    if (const json* s = r.sub_if_present("cohort"))
        c.cohort = cohort_from_json(*s, ctx + ".cohort");
    if (const json* s = r.sub_if_present("confound"))
        c.confound = confound_from_json(*s, ctx + ".confound");
    if (const json* s = r.sub_if_present("photometry"))
        c.photometry = photometry_from_json(*s, ctx + ".photometry");
    if (const json* s = r.sub_if_present("render"))
        c.render = render_from_json(*s, ctx + ".render");
    if (const json* s = r.sub_if_present("environments")) {
        require_config(s->is_array() && !s->empty(),
                       ctx + ".environments: expected a non-empty array");
        c.environments.clear();
        for (size_t i = 0; i < s->size(); ++i)
            c.environments.push_back(environment_from_json(
                (*s)[i], ctx + ".environments[" + std::to_string(i) + "]"));
    }
    c.seed = r.get_or<std::uint64_t>("seed", c.seed);
    r.done();
    c.validate();
    return c;
}

// --- dataset writer / reader ------------------------------------------------

namespace detail {

inline json bbox_to_json(const BBox& b) {
    return json::array({b.cx, b.cy, b.w, b.h});
}

inline BBox bbox_from_json(const json& j, const std::string& what) {
    require_data(j.is_array() && j.size() == 4, what + ": expected [cx,cy,w,h]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
            j[3].get<double>()};
}

inline void append_map(std::ofstream& out, const Map2D& m) {
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(float)));
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path manifest_path = fs::path(dir) / "manifest.jsonl";
    const fs::path payload_path = fs::path(dir) / "payload.bin";

    std::ofstream payload(payload_path, std::ios::binary | std::ios::trunc);
    require_data(payload.good(), "cannot open for writing: " +
                                     payload_path.string());
    std::ofstream manifest(manifest_path, std::ios::trunc);
    require_data(manifest.good(), "cannot open for writing: " +
                                      manifest_path.string());

    json cohort = json::array();
    for (const PolypInstance& p : ds.cohort)
        cohort.push_back(
            {{"polyp_id", p.polyp_id},
             {"patient_id", p.patient_id},
             {"diameter_mm", p.true_diameter_mm},
             {"size_class",
              p.size_class == SizeClass::Large ? "large" : "small"}});

    const json header = {{"schema", kDatasetSchema},
                         {"tool_version", kToolVersion},
                         {"frame_count", ds.frames.size()},
                         {"map_height",
                          ds.frames.empty() ? ds.config.render.map_size
                                            : ds.frames[0].relative_depth_map.height},
                         {"map_width",
                          ds.frames.empty() ? ds.config.render.map_size
                                            : ds.frames[0].relative_depth_map.width},
                         {"config", to_json(ds.config)},
                         {"cohort", cohort}};
    manifest << header.dump() << "\n";

    std::uint64_t offset = 0;
    for (const FrameSample& f : ds.frames) {
        const std::uint64_t map_bytes =
            static_cast<std::uint64_t>(f.relative_depth_map.size()) *
            sizeof(float);
        const json line = {{"frame_id", f.frame_id},
                           {"polyp_id", f.polyp_id},
                           {"patient_id", f.patient_id},
                           {"env_id", f.env_id},
                           {"focal_px", f.intrinsics.focal_length_px},
                           {"z_mm", f.hidden_true_z_mm},
                           {"p", f.background_luminance_p},
                           {"bbox", detail::bbox_to_json(f.apparent_bbox)},
                           {"gt_bbox", detail::bbox_to_json(f.gt_mask_bbox)},
                           {"depth_offset", offset},
                           {"appearance_offset", offset + map_bytes}};
        manifest << line.dump() << "\n";
        detail::append_map(payload, f.relative_depth_map);
        detail::append_map(payload, f.appearance_map);
        offset += 2 * map_bytes;
    }
    manifest.flush();
    payload.flush();
    require_data(manifest.good() && payload.good(),
                 "I/O failure while writing dataset to " + dir);
}

inline Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = fs::path(dir) / "manifest.jsonl";
    const fs::path payload_path = fs::path(dir) / "payload.bin";
    std::ifstream manifest(manifest_path);
    require_data(manifest.good(),
                 "cannot open dataset manifest: " + manifest_path.string());
    std::ifstream payload(payload_path, std::ios::binary);
    require_data(payload.good(),
                 "cannot open dataset payload: " + payload_path.string());
    payload.seekg(0, std::ios::end);
    const std::uint64_t payload_size =
        static_cast<std::uint64_t>(payload.tellg());

    std::string line;
    require_data(static_cast<bool>(std::getline(manifest, line)),
                 "dataset manifest is empty");
    const json header = parse_json_text(line, "dataset manifest header");
    JsonReader hr(header, "manifest");
    require_data(hr.get<std::string>("schema") == kDatasetSchema,
                 "dataset manifest has unknown schema id");
    hr.get_or<std::string>("tool_version", "");
    const auto frame_count = hr.get<std::uint64_t>("frame_count");
    const int map_h = hr.get<int>("map_height");
    const int map_w = hr.get<int>("map_width");
    require_data(map_h > 0 && map_w > 0, "dataset manifest: bad map dims");

    Dataset ds;
    ds.config = genconfig_from_json(hr.sub("config"), "manifest.config");
    for (const json& pj : hr.sub("cohort")) {
        JsonReader pr(pj, "manifest.cohort[]");
        PolypInstance p;
        p.polyp_id = pr.get<int>("polyp_id");
        p.patient_id = pr.get<int>("patient_id");
        p.true_diameter_mm = pr.get<double>("diameter_mm");
        const auto cls = pr.get<std::string>("size_class");
        require_data(cls == "small" || cls == "large",
                     "manifest.cohort: bad size_class");
        p.size_class = cls == "large" ? SizeClass::Large : SizeClass::Small;
        p.validate();
        ds.cohort.push_back(p);
    }
    hr.done();

    const std::uint64_t map_bytes =
        static_cast<std::uint64_t>(map_h) * map_w * sizeof(float);
    const auto read_map = [&](std::uint64_t off) {
        require_data(off + map_bytes <= payload_size,
                     "dataset payload dimension mismatch (truncated file)");
        Map2D m(map_h, map_w);
        payload.seekg(static_cast<std::streamoff>(off));
        payload.read(reinterpret_cast<char*>(m.data.data()),
                     static_cast<std::streamsize>(map_bytes));
        require_data(payload.good(), "dataset payload read failure");
        return m;
    };

    ds.frames.reserve(frame_count);
    for (std::uint64_t i = 0; i < frame_count; ++i) {
        require_data(static_cast<bool>(std::getline(manifest, line)),
                     "dataset manifest ends before declared frame count");
        const json fj = parse_json_text(line, "dataset manifest frame");
        JsonReader fr(fj, "manifest.frame");
        FrameSample f;
        f.frame_id = fr.get<int>("frame_id");
        f.polyp_id = fr.get<int>("polyp_id");
        f.patient_id = fr.get<int>("patient_id");
        f.env_id = fr.get<int>("env_id");
        f.intrinsics = {fr.get<double>("focal_px"), map_w, map_h};
        f.hidden_true_z_mm = fr.get<double>("z_mm");
        f.background_luminance_p = fr.get<double>("p");
        f.apparent_bbox = detail::bbox_from_json(fr.sub("bbox"), "frame.bbox");
        f.gt_mask_bbox =
            detail::bbox_from_json(fr.sub("gt_bbox"), "frame.gt_bbox");
        f.relative_depth_map = read_map(fr.get<std::uint64_t>("depth_offset"));
        f.appearance_map = read_map(fr.get<std::uint64_t>("appearance_offset"));
        fr.done();
        ds.frames.push_back(std::move(f));
    }
    return ds;
}

}  // namespace polyaudit
