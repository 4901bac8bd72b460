#pragma once

// One JSON document drives everything: dataset generation, the probe list,
// the training recipe, and the intervention grid.  Parsing is strict — every
// unknown or mistyped key raises a ConfigError naming the key — and the
// canonical echo of the parsed config is embedded in all output artifacts so
// results stay traceable to their exact inputs.

#include <cstdint>
#include <string>
#include <vector>

#include "polyaudit/common.hpp"
#include "polyaudit/features.hpp"
#include "polyaudit/interventions.hpp"
#include "polyaudit/json_util.hpp"
#include "polyaudit/probes.hpp"
#include "polyaudit/synthgen.hpp"

namespace polyaudit {

inline constexpr const char* kRunConfigSchema = "polyaudit.run.v1";

struct RunConfig {
    GenConfig gen;
    std::vector<ProbeKind> probes{ProbeKind::FeatureMLP};
    TrainConfig train;
    std::vector<InterventionPlan> plans;
    int folds = 5;
    std::vector<uint64_t> seeds{1};
    std::string output_dir = "out";
    bool leak_check = false;

    // The full probe x plan cross product must be coherent before any
    // training starts; a single bad pairing voids the run.
    void validate() const {
        gen.validate();
        train.validate();
        require_config(!probes.empty(), "run.probes must not be empty");
        require_config(!plans.empty(), "run: no plans");
        require_config(folds >= 2, "run.folds must be >= 2");
        require_config(!seeds.empty(), "run.seeds must not be empty");
        require_config(!output_dir.empty(), "run.output_dir must not be empty");
        for (ProbeKind kind : probes)
            for (const InterventionPlan& plan : plans)
                validate_plan(kind, plan);
    }
};

// --- JSON round trips -------------------------------------------------------------

inline json scale_regime_to_json(const ScaleRegime& s) {
    json j;
    switch (s.kind) {
        case ScaleRegimeKind::None: j["kind"] = "None"; break;
        case ScaleRegimeKind::Global: j["kind"] = "Global"; break;
        case ScaleRegimeKind::OraclePolyp: j["kind"] = "OraclePolyp"; break;
        case ScaleRegimeKind::OracleFrame: j["kind"] = "OracleFrame"; break;
        case ScaleRegimeKind::MetricEstimate:
            j["kind"] = "MetricEstimate";
            j["bias"] = s.metric_bias;
            j["sigma"] = s.metric_sigma;
            break;
    }
    return j;
}

inline ScaleRegime parse_scale_regime(const json& j) {
    JsonReader r(j, "plan.scale");
    const std::string kind = r.get<std::string>("kind");
    ScaleRegime s;
    if (kind == "None") {
        s.kind = ScaleRegimeKind::None;
    } else if (kind == "Global") {
        s.kind = ScaleRegimeKind::Global;
    } else if (kind == "OraclePolyp") {
        s.kind = ScaleRegimeKind::OraclePolyp;
    } else if (kind == "OracleFrame") {
        s.kind = ScaleRegimeKind::OracleFrame;
    } else if (kind == "MetricEstimate") {
        s.kind = ScaleRegimeKind::MetricEstimate;
        s.metric_bias = r.get_or<double>("bias", 1.0);
        s.metric_sigma = r.get_or<double>("sigma", 0.0);
    } else {
        throw ConfigError("plan.scale.kind: unknown regime '" + kind + "'");
    }
    r.done();
    s.validate();
    return s;
}

inline json mask_source_to_json(const MaskSource& m) {
    json j;
    switch (m.kind) {
        case MaskSourceKind::GroundTruth: j["kind"] = "GroundTruth"; break;
        case MaskSourceKind::Scaled:
            j["kind"] = "Scaled";
            j["param"] = m.param;
            break;
        case MaskSourceKind::Degraded:
            j["kind"] = "Degraded";
            j["param"] = m.param;
            break;
    }
    return j;
}

inline MaskSource parse_mask_source(const json& j) {
    JsonReader r(j, "plan.mask");
    const std::string kind = r.get<std::string>("kind");
    MaskSource m;
    if (kind == "GroundTruth") {
        m.kind = MaskSourceKind::GroundTruth;
    } else if (kind == "Scaled") {
        m.kind = MaskSourceKind::Scaled;
        m.param = r.get<double>("param");
    } else if (kind == "Degraded") {
        m.kind = MaskSourceKind::Degraded;
        m.param = r.get<double>("param");
    } else {
        throw ConfigError("plan.mask.kind: unknown source '" + kind + "'");
    }
    r.done();
    m.validate();
    return m;
}

inline json plan_to_json(const InterventionPlan& p) {
    json j;
    j["scale"] = scale_regime_to_json(p.scale);
    j["mask"] = mask_source_to_json(p.mask);
    if (p.photometric_q.has_value()) j["photometric_q"] = *p.photometric_q;
    if (p.feature_ablation.has_value())
        j["ablate"] = feature_group_name(*p.feature_ablation);
    return j;
}

inline InterventionPlan parse_plan(const json& j) {
    JsonReader r(j, "plan");
    InterventionPlan p;
    if (const json* s = r.sub_if_present("scale")) p.scale = parse_scale_regime(*s);
    if (const json* m = r.sub_if_present("mask")) p.mask = parse_mask_source(*m);
    if (r.has("photometric_q")) p.photometric_q = r.get<double>("photometric_q");
    if (r.has("ablate"))
        p.feature_ablation = feature_group_from_name(r.get<std::string>("ablate"));
    r.done();
    p.validate();
    return p;
}

inline json gen_config_to_json(const GenConfig& g) {
    json j;
    j["cohort"] = {{"n_patients", g.cohort.n_patients},
                   {"n_polyps", g.cohort.n_polyps},
                   {"large_fraction", g.cohort.large_fraction}};
    j["confound"] = {
        {"confound_strength_rho", g.confound.confound_strength_rho},
        {"behavior_exponent_gamma", g.confound.behavior_exponent_gamma},
        {"base_distance_mm", g.confound.base_distance_mm},
        {"reference_size_mm", g.confound.reference_size_mm},
        {"clip_jitter_sigma", g.confound.clip_jitter_sigma},
        {"frames_per_polyp", g.confound.frames_per_polyp},
        {"distance_noise_sigma", g.confound.distance_noise_sigma}};
    j["photometry"] = {
        {"source_constant_k", g.photometry.source_constant_k},
        {"auto_exposure_enabled", g.photometry.auto_exposure_enabled},
        {"ae_target_luminance", g.photometry.ae_target_luminance},
        {"ae_tolerance", g.photometry.ae_tolerance},
        {"luminance_noise_sigma", g.photometry.luminance_noise_sigma}};
    j["render"] = {{"map_size", g.render.map_size},
                   {"focal_length_px", g.render.focal_length_px},
                   {"relief_fraction", g.render.relief_fraction},
                   {"dome_fraction", g.render.dome_fraction},
                   {"background_slope", g.render.background_slope},
                   {"bbox_jitter_sigma", g.render.bbox_jitter_sigma},
                   {"depth_noise_sigma", g.render.depth_noise_sigma},
                   {"center_jitter_frac", g.render.center_jitter_frac},
                   {"max_bbox_frac", g.render.max_bbox_frac},
                   {"min_bbox_px", g.render.min_bbox_px},
                   {"retry_budget", g.render.retry_budget},
                   {"rel_scale_clip_min", g.render.rel_scale_clip_min},
                   {"rel_scale_clip_max", g.render.rel_scale_clip_max},
                   {"rel_scale_frame_sigma", g.render.rel_scale_frame_sigma}};
    j["environments"] = json::array();
    for (const EnvironmentSpec& e : g.environments)
        j["environments"].push_back({{"z0_scale", e.z0_scale},
                                     {"k_scale", e.k_scale},
                                     {"focal_scale", e.focal_scale}});
    j["seed"] = g.seed;
    return j;
}

inline GenConfig parse_gen_config(const json& j) {
    JsonReader r(j, "generator");
    GenConfig g;
    if (const json* c = r.sub_if_present("cohort")) {
        JsonReader rc(*c, "generator.cohort");
        g.cohort.n_patients = rc.get_or("n_patients", g.cohort.n_patients);
        g.cohort.n_polyps = rc.get_or("n_polyps", g.cohort.n_polyps);
        g.cohort.large_fraction =
            rc.get_or("large_fraction", g.cohort.large_fraction);
        rc.done();
    }
    if (const json* c = r.sub_if_present("confound")) {
        JsonReader rc(*c, "generator.confound");
        ConfoundConfig& f = g.confound;
        f.confound_strength_rho =
            rc.get_or("confound_strength_rho", f.confound_strength_rho);
        f.behavior_exponent_gamma =
            rc.get_or("behavior_exponent_gamma", f.behavior_exponent_gamma);
        f.base_distance_mm = rc.get_or("base_distance_mm", f.base_distance_mm);
        f.reference_size_mm =
            rc.get_or("reference_size_mm", f.reference_size_mm);
        f.clip_jitter_sigma =
            rc.get_or("clip_jitter_sigma", f.clip_jitter_sigma);
        f.frames_per_polyp = rc.get_or("frames_per_polyp", f.frames_per_polyp);
        f.distance_noise_sigma =
            rc.get_or("distance_noise_sigma", f.distance_noise_sigma);
        rc.done();
    }
    if (const json* c = r.sub_if_present("photometry")) {
        JsonReader rc(*c, "generator.photometry");
        PhotometryConfig& p = g.photometry;
        p.source_constant_k =
            rc.get_or("source_constant_k", p.source_constant_k);
        p.auto_exposure_enabled =
            rc.get_or("auto_exposure_enabled", p.auto_exposure_enabled);
        p.ae_target_luminance =
            rc.get_or("ae_target_luminance", p.ae_target_luminance);
        p.ae_tolerance = rc.get_or("ae_tolerance", p.ae_tolerance);
        p.luminance_noise_sigma =
            rc.get_or("luminance_noise_sigma", p.luminance_noise_sigma);
        rc.done();
    }
    if (const json* c = r.sub_if_present("render")) {
        JsonReader rc(*c, "generator.render");
        RenderConfig& v = g.render;
        v.map_size = rc.get_or("map_size", v.map_size);
        v.focal_length_px = rc.get_or("focal_length_px", v.focal_length_px);
        v.relief_fraction = rc.get_or("relief_fraction", v.relief_fraction);
        v.dome_fraction = rc.get_or("dome_fraction", v.dome_fraction);
        v.background_slope = rc.get_or("background_slope", v.background_slope);
        v.bbox_jitter_sigma =
            rc.get_or("bbox_jitter_sigma", v.bbox_jitter_sigma);
        v.depth_noise_sigma =
            rc.get_or("depth_noise_sigma", v.depth_noise_sigma);
        v.center_jitter_frac =
            rc.get_or("center_jitter_frac", v.center_jitter_frac);
        v.max_bbox_frac = rc.get_or("max_bbox_frac", v.max_bbox_frac);
        v.min_bbox_px = rc.get_or("min_bbox_px", v.min_bbox_px);
        v.retry_budget = rc.get_or("retry_budget", v.retry_budget);
        v.rel_scale_clip_min =
            rc.get_or("rel_scale_clip_min", v.rel_scale_clip_min);
        v.rel_scale_clip_max =
            rc.get_or("rel_scale_clip_max", v.rel_scale_clip_max);
        v.rel_scale_frame_sigma =
            rc.get_or("rel_scale_frame_sigma", v.rel_scale_frame_sigma);
        rc.done();
    }
    if (const json* c = r.sub_if_present("environments")) {
        require_config(c->is_array(),
                       "generator.environments: expected an array");
        g.environments.clear();
        for (const json& e : *c) {
            JsonReader re(e, "generator.environments[]");
            EnvironmentSpec spec;
            spec.z0_scale = re.get_or("z0_scale", 1.0);
            spec.k_scale = re.get_or("k_scale", 1.0);
            spec.focal_scale = re.get_or("focal_scale", 1.0);
            re.done();
            g.environments.push_back(spec);
        }
    }
    g.seed = r.get_or<uint64_t>("seed", g.seed);
    r.done();
    g.validate();
    return g;
}

inline json train_config_to_json(const TrainConfig& t) {
    return {{"learning_rate", t.learning_rate},
            {"weight_decay", t.weight_decay},
            {"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"vrex_beta", t.vrex_beta},
            {"hidden_width", t.hidden_width},
            {"cnn_input_side", t.cnn_input_side}};
}

inline TrainConfig parse_train_config(const json& j) {
    JsonReader r(j, "train");
    TrainConfig t;
    t.learning_rate = r.get_or("learning_rate", t.learning_rate);
    t.weight_decay = r.get_or("weight_decay", t.weight_decay);
    t.epochs = r.get_or("epochs", t.epochs);
    t.batch_size = r.get_or("batch_size", t.batch_size);
    t.vrex_beta = r.get_or("vrex_beta", t.vrex_beta);
    t.hidden_width = r.get_or("hidden_width", t.hidden_width);
    t.cnn_input_side = r.get_or("cnn_input_side", t.cnn_input_side);
    r.done();
    t.validate();
    return t;
}

inline json run_config_to_json(const RunConfig& rc) {
    json j;
    j["schema"] = kRunConfigSchema;
    j["generator"] = gen_config_to_json(rc.gen);
    j["probes"] = json::array();
    for (ProbeKind k : rc.probes) j["probes"].push_back(probe_kind_name(k));
    j["train"] = train_config_to_json(rc.train);
    j["plans"] = json::array();
    for (const InterventionPlan& p : rc.plans)
        j["plans"].push_back(plan_to_json(p));
    j["folds"] = rc.folds;
    j["seeds"] = rc.seeds;
    j["output_dir"] = rc.output_dir;
    j["leak_check"] = rc.leak_check;
    return j;
}

inline RunConfig parse_run_config(const json& j) {
    JsonReader r(j, "run");
    const std::string schema = r.get_or<std::string>("schema", kRunConfigSchema);
    require_data(schema == kRunConfigSchema,
                 "run.schema: expected " + std::string(kRunConfigSchema) +
                     ", got " + schema);
    RunConfig rc;
    if (const json* g = r.sub_if_present("generator"))
        rc.gen = parse_gen_config(*g);
    if (const json* p = r.sub_if_present("probes")) {
        require_config(p->is_array(), "run.probes: expected an array");
        rc.probes.clear();
        for (const json& name : *p) {
            require_config(name.is_string(),
                           "run.probes: entries must be strings");
            rc.probes.push_back(probe_kind_from_name(name.get<std::string>()));
        }
    }
    if (const json* t = r.sub_if_present("train"))
        rc.train = parse_train_config(*t);
    if (const json* p = r.sub_if_present("plans")) {
        require_config(p->is_array(), "run.plans: expected an array");
        rc.plans.clear();
        for (const json& plan : *p) rc.plans.push_back(parse_plan(plan));
    }
    rc.folds = r.get_or("folds", rc.folds);
    if (r.has("seeds")) rc.seeds = r.get<std::vector<uint64_t>>("seeds");
    rc.output_dir = r.get_or<std::string>("output_dir", rc.output_dir);
    rc.leak_check = r.get_or("leak_check", rc.leak_check);
    r.done();
    rc.validate();
    return rc;
}

inline RunConfig parse_run_config_text(const std::string& text) {
    return parse_run_config(parse_json_text(text, "run config"));
}

// Canonical serialized form: compact dump with sorted keys (nlohmann objects
// iterate in key order).  The hash ties every artifact back to this text.
inline std::string canonical_config_text(const RunConfig& rc) {
    return run_config_to_json(rc).dump();
}

inline std::string config_hash(const RunConfig& rc) {
    return hex64(fnv1a64(canonical_config_text(rc)));
}

}  // namespace polyaudit
