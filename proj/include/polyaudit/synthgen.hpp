#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "polyaudit/common.hpp"
#include "polyaudit/geometry.hpp"
#include "polyaudit/image.hpp"
#include "polyaudit/rng.hpp"

namespace polyaudit {

// Synthetic cohort generator.
//
// The causal story baked into the data: true lesion size S drives the
// examiner's working distance Z (small lesions are approached, large ones
// viewed from afar), and Z in turn drives both the apparent extent A = fS/Z
// and the scene luminance P ~ k/Z^2.  Size class is therefore predictable
// from apparent cues even though nothing metric is observable — exactly the
// shortcut this framework exists to audit.

inline constexpr double kSizeThresholdMm = 5.0;

enum class SizeClass { Small, Large };

inline SizeClass size_class_for(double diameter_mm) {
    return diameter_mm > kSizeThresholdMm ? SizeClass::Large : SizeClass::Small;
}

struct PolypInstance {
    int polyp_id = 0;
    int patient_id = 0;
    double true_diameter_mm = 0.0;
    SizeClass size_class = SizeClass::Small;

    void validate() const {
        require_data(true_diameter_mm >= 1.0 && true_diameter_mm <= 25.0,
                     "polyp diameter must lie in [1, 25] mm");
        require_data(size_class == size_class_for(true_diameter_mm),
                     "size class inconsistent with diameter");
    }
};

struct CohortConfig {
    int n_patients = 100;
    int n_polyps = 200;
    double large_fraction = 0.37;

    void validate() const {
        require_config(n_patients >= 1, "cohort.n_patients must be >= 1");
        require_config(n_polyps >= n_patients,
                       "cohort.n_polyps must be >= n_patients");
        require_config(n_polyps <= 3 * n_patients,
                       "cohort.n_polyps must be <= 3 * n_patients "
                       "(1-3 polyps per patient)");
        require_config(large_fraction > 0.0 && large_fraction < 1.0,
                       "cohort.large_fraction must lie in (0, 1)");
    }
};

// Size -> behavior -> distance law: Z = Z0 * (S/S_ref)^(gamma*rho) * exp(eps).
struct ConfoundConfig {
    double confound_strength_rho = 0.7;
    double behavior_exponent_gamma = 1.0;
    double base_distance_mm = 50.0;
    double reference_size_mm = 4.0;
    double clip_jitter_sigma = 0.10;
    int frames_per_polyp = 20;
    double distance_noise_sigma = 0.10;

    void validate() const {
        require_config(confound_strength_rho >= 0.0 && confound_strength_rho <= 1.0,
                       "confound.confound_strength_rho must lie in [0, 1]");
        require_config(behavior_exponent_gamma > 0.0,
                       "confound.behavior_exponent_gamma must be positive");
        require_config(base_distance_mm > 0.0,
                       "confound.base_distance_mm must be positive");
        require_config(reference_size_mm > 0.0,
                       "confound.reference_size_mm must be positive");
        require_config(clip_jitter_sigma >= 0.0,
                       "confound.clip_jitter_sigma must be non-negative");
        require_config(frames_per_polyp >= 1,
                       "confound.frames_per_polyp must be >= 1");
        require_config(distance_noise_sigma >= 0.0,
                       "confound.distance_noise_sigma must be non-negative");
    }
};

struct PhotometryConfig {
    double source_constant_k = 2500.0;
    bool auto_exposure_enabled = true;
    double ae_target_luminance = 1.0;
    double ae_tolerance = 0.05;
    double luminance_noise_sigma = 0.05;

    void validate() const {
        require_config(source_constant_k > 0.0,
                       "photometry.source_constant_k must be positive");
        require_config(ae_target_luminance > 0.0,
                       "photometry.ae_target_luminance must be positive");
        require_config(ae_tolerance >= 0.0 && ae_tolerance < ae_target_luminance,
                       "photometry.ae_tolerance must lie in [0, ae_target)");
        require_config(luminance_noise_sigma >= 0.0,
                       "photometry.luminance_noise_sigma must be non-negative");
    }
};

struct RenderConfig {
    int map_size = 64;
    double focal_length_px = 120.0;
    // Background sits at Z*(1+relief); the lesion dome rises to Z*(1-dome).
    // relief_fraction and dome_fraction are the UPPER bounds of per-frame
    // uniform draws (see render_frame): every frame gets its own dome height
    // and background setback.  Randomizing the scene structure is what makes
    // a depth read at the wrong place irrecoverably wrong — with fixed
    // fractions the offset between lesion and background is a learnable
    // constant, and segmentation quality could never gate metric sizing.
    double relief_fraction = 1.80;
    double dome_fraction = 0.85;
    double background_slope = 0.35;
    double bbox_jitter_sigma = 0.04;
    double depth_noise_sigma = 0.02;
    double center_jitter_frac = 0.10;
    double max_bbox_frac = 0.85;
    double min_bbox_px = 3.0;
    int retry_budget = 16;
    // Per-clip relative-depth normalizer range (the unknown monocular scale)
    // plus a small per-frame wobble of that normalizer.
    double rel_scale_clip_min = 0.5;
    double rel_scale_clip_max = 2.0;
    double rel_scale_frame_sigma = 0.10;

    void validate() const {
        require_config(map_size >= 16, "render.map_size must be >= 16");
        require_config(focal_length_px > 0.0,
                       "render.focal_length_px must be positive");
        require_config(relief_fraction >= 0.0 && relief_fraction <= 2.0,
                       "render.relief_fraction must lie in [0, 2]");
        require_config(dome_fraction >= 0.0 && dome_fraction <= 0.9,
                       "render.dome_fraction must lie in [0, 0.9]");
        require_config(background_slope >= 0.0 && background_slope < 0.7,
                       "render.background_slope must lie in [0, 0.7)");
        require_config(bbox_jitter_sigma >= 0.0 && bbox_jitter_sigma <= 0.5,
                       "render.bbox_jitter_sigma must lie in [0, 0.5]");
        require_config(depth_noise_sigma >= 0.0 && depth_noise_sigma <= 0.5,
                       "render.depth_noise_sigma must lie in [0, 0.5]");
        require_config(center_jitter_frac >= 0.0 && center_jitter_frac <= 0.3,
                       "render.center_jitter_frac must lie in [0, 0.3]");
        require_config(max_bbox_frac > 0.0 && max_bbox_frac <= 0.95,
                       "render.max_bbox_frac must lie in (0, 0.95]");
        require_config(min_bbox_px >= 2.0,
                       "render.min_bbox_px must be >= 2 px");
        require_config(retry_budget >= 1, "render.retry_budget must be >= 1");
        require_config(rel_scale_clip_min > 0.0 &&
                           rel_scale_clip_max >= rel_scale_clip_min,
                       "render.rel_scale_clip range must satisfy 0 < min <= max");
        require_config(rel_scale_frame_sigma >= 0.0,
                       "render.rel_scale_frame_sigma must be non-negative");
    }

    // Bound on |mean(bbox w,h) - fS/Z| / (fS/Z).  Bbox jitter draws are
    // re-sampled beyond 3.5 sigma, so the bound is exact.
    double bbox_jitter_bound() const {
        return std::exp(3.5 * bbox_jitter_sigma) - 1.0;
    }
};

// Acquisition environments ("centers") differ mildly in working distance,
// illumination and optics; frames carry their environment id so invariance
// penalties can group risks by it.
struct EnvironmentSpec {
    double z0_scale = 1.0;
    double k_scale = 1.0;
    double focal_scale = 1.0;

    void validate() const {
        require_config(z0_scale > 0.0 && k_scale > 0.0 && focal_scale > 0.0,
                       "environment scales must be positive");
    }
};

struct GenConfig {
    CohortConfig cohort;
    ConfoundConfig confound;
    PhotometryConfig photometry;
    RenderConfig render;
    std::vector<EnvironmentSpec> environments{{1.0, 1.0, 1.0},
                                              {0.9, 0.8, 1.05}};
    std::uint64_t seed = 1;

    void validate() const {
        cohort.validate();
        confound.validate();
        photometry.validate();
        render.validate();
        require_config(!environments.empty(),
                       "environments must contain at least one entry");
        for (const auto& e : environments) e.validate();
    }
};

struct FrameSample {
    int frame_id = 0;
    int polyp_id = 0;
    int patient_id = 0;
    int env_id = 0;
    CameraIntrinsics intrinsics;
    // Ground truth, visible only to oracle and evaluation code paths.
    double hidden_true_z_mm = 0.0;
    BBox apparent_bbox;
    BBox gt_mask_bbox;
    double background_luminance_p = 0.0;
    Map2D relative_depth_map;
    Map2D appearance_map;
};

struct Dataset {
    GenConfig config;
    std::vector<PolypInstance> cohort;
    std::vector<FrameSample> frames;

    int n_environments() const {
        return static_cast<int>(config.environments.size());
    }
};

// ---------------------------------------------------------------------------
// Cohort sampling

namespace detail {

// Diameter mixture components.  Each class is a truncated log-normal kept
// strictly on its side of the 5 mm boundary and inside [1, 25] mm.
inline double sample_diameter(SizeClass cls, RngStream& rng) {
    for (;;) {
        const double d = cls == SizeClass::Small
                             ? rng.lognormal(std::log(3.2), 0.35)
                             : rng.lognormal(std::log(8.5), 0.40);
        if (cls == SizeClass::Small && d >= 1.0 && d <= kSizeThresholdMm)
            return d;
        if (cls == SizeClass::Large && d > kSizeThresholdMm && d <= 25.0)
            return d;
    }
}

// Normal draw re-sampled until |x| <= clip sigmas; keeps multiplicative
// jitter inside a provable bound without distorting the bulk.
inline double truncated_normal(RngStream& rng, double sigma, double clip) {
    if (sigma == 0.0) return 0.0;
    for (;;) {
        const double x = rng.normal(0.0, sigma);
        if (std::abs(x) <= clip * sigma) return x;
    }
}

}  // namespace detail

inline std::vector<PolypInstance> sample_cohort(int n_patients, int n_polyps,
                                                double large_fraction,
                                                std::uint64_t seed) {
    CohortConfig cfg{n_patients, n_polyps, large_fraction};
    cfg.validate();
    RngStream rng = make_stream(seed, stream_tag::kCohort);

    const int n_large =
        static_cast<int>(std::lround(large_fraction * n_polyps));
    std::vector<SizeClass> classes(static_cast<size_t>(n_polyps),
                                   SizeClass::Small);
    for (int i = 0; i < n_large; ++i) classes[i] = SizeClass::Large;
    rng.shuffle(classes);

    // Every patient gets one polyp; the remainder lands on random patients
    // that still have capacity (at most 3 polyps each).
    std::vector<int> patient_of(static_cast<size_t>(n_polyps), 0);
    std::vector<int> load(static_cast<size_t>(n_patients), 0);
    for (int i = 0; i < n_patients; ++i) {
        patient_of[i] = i;
        load[i] = 1;
    }
    for (int i = n_patients; i < n_polyps; ++i) {
        for (;;) {
            const int p = static_cast<int>(rng.uniform_index(n_patients));
            if (load[p] < 3) {
                patient_of[i] = p;
                ++load[p];
                break;
            }
        }
    }

    std::vector<PolypInstance> cohort;
    cohort.reserve(static_cast<size_t>(n_polyps));
    for (int i = 0; i < n_polyps; ++i) {
        PolypInstance p;
        p.polyp_id = i;
        p.patient_id = patient_of[i];
        p.size_class = classes[i];
        p.true_diameter_mm = detail::sample_diameter(classes[i], rng);
        p.validate();
        cohort.push_back(p);
    }
    return cohort;
}

// ---------------------------------------------------------------------------
// Behavior law

inline double sample_behavior_distance(double size_mm,
                                       const ConfoundConfig& cfg,
                                       RngStream& rng) {
    require_data(size_mm > 0.0, "behavior distance: size must be positive");
    const double exponent =
        cfg.behavior_exponent_gamma * cfg.confound_strength_rho;
    const double z = cfg.base_distance_mm *
                     std::pow(size_mm / cfg.reference_size_mm, exponent) *
                     std::exp(rng.normal(0.0, cfg.distance_noise_sigma));
    require_finite(z, "behavior distance");
    return z;
}

// ---------------------------------------------------------------------------
// Frame rendering

// Per-clip state shared by all frames of one polyp.
struct ClipState {
    double z_clip_mm = 0.0;      // clip-level working distance
    double clip_jitter_sigma = 0.0;
    double rel_scale_clip = 1.0; // clip-level depth normalizer
};

inline FrameSample render_frame(const PolypInstance& polyp,
                                const ClipState& clip,
                                const CameraIntrinsics& intrinsics,
                                const PhotometryConfig& photometry,
                                const RenderConfig& render, RngStream& rng) {
    intrinsics.validate();
    require_data(clip.z_clip_mm > 0.0, "render: clip distance must be positive");
    require_data(clip.rel_scale_clip > 0.0,
                 "render: clip depth normalizer must be positive");
    const int W = intrinsics.image_width_px;
    const int H = intrinsics.image_height_px;
    const double f = intrinsics.focal_length_px;
    const double S = polyp.true_diameter_mm;

    double z = 0.0;
    BBox box;
    bool placed = false;
    for (int attempt = 0; attempt < render.retry_budget && !placed; ++attempt) {
        z = clip.z_clip_mm * std::exp(rng.normal(0.0, clip.clip_jitter_sigma));
        const double A = project_apparent_diameter(f, S, z);
        const double jw = std::exp(
            detail::truncated_normal(rng, render.bbox_jitter_sigma, 3.5));
        const double jh = std::exp(
            detail::truncated_normal(rng, render.bbox_jitter_sigma, 3.5));
        const double w = A * jw;
        const double h = A * jh;
        const double limit = render.max_bbox_frac * W;
        if (w < render.min_bbox_px || h < render.min_bbox_px || w > limit ||
            h > limit)
            continue;
        double cx = 0.5 * W + rng.normal(0.0, render.center_jitter_frac * W);
        double cy = 0.5 * H + rng.normal(0.0, render.center_jitter_frac * H);
        cx = std::min(std::max(cx, 0.5 * w + 1.0), W - 0.5 * w - 1.0);
        cy = std::min(std::max(cy, 0.5 * h + 1.0), H - 0.5 * h - 1.0);
        box = {cx, cy, w, h};
        placed = true;
    }
    if (!placed)
        throw DataError("render: bbox cannot fit in image for polyp " +
                        std::to_string(polyp.polyp_id) +
                        " after retry budget");

    // Scene depth: an elliptical dome at distance z against a tilted
    // background plane at z*(1+relief).  Dome height and background setback
    // are drawn per frame: a pipeline that reads depth away from the lesion
    // sees z times an unidentifiable structure factor, while reads anchored
    // at the true lesion surface stay exact.
    const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double gx = std::cos(theta), gy = std::sin(theta);
    const double dome = render.dome_fraction * rng.uniform(0.06, 1.0);
    const double relief = render.relief_fraction * rng.uniform(0.20, 1.0);
    const double s_frame =
        clip.rel_scale_clip *
        std::exp(rng.normal(0.0, render.rel_scale_frame_sigma));

    Map2D rel(H, W);
    Map2D metric(H, W);
    for (int yi = 0; yi < H; ++yi) {
        for (int xi = 0; xi < W; ++xi) {
            const double px = xi + 0.5, py = yi + 0.5;
            const double du = (px - box.cx) / (0.5 * box.w);
            const double dv = (py - box.cy) / (0.5 * box.h);
            const double r2 = du * du + dv * dv;
            double depth;
            if (r2 <= 1.0) {
                depth = z * (1.0 - dome * std::sqrt(1.0 - r2));
            } else {
                const double u = (px - box.cx) / W;
                const double v = (py - box.cy) / H;
                depth = z * (1.0 + relief) *
                        (1.0 + render.background_slope * (u * gx + v * gy));
            }
            depth *= std::exp(rng.normal(0.0, render.depth_noise_sigma));
            require_data(depth > 0.0, "render: non-positive scene depth");
            metric.at(yi, xi) = static_cast<float>(depth);
            rel.at(yi, xi) = static_cast<float>(depth / s_frame);
        }
    }

    // Photometry: inverse-square luminance; auto-exposure rescales the frame
    // so the reported luminance lands inside target +- tolerance, severing
    // the P-Z relation.
    const double p_raw =
        photometry.source_constant_k / (z * z) *
        std::exp(rng.normal(0.0, photometry.luminance_noise_sigma));
    double gain = 1.0;
    if (photometry.auto_exposure_enabled) {
        const double t = photometry.ae_target_luminance;
        const double lo = std::log((t - photometry.ae_tolerance) / t);
        const double hi = std::log((t + photometry.ae_tolerance) / t);
        const double p_report = t * std::exp(rng.uniform(lo, hi));
        gain = p_report / p_raw;
    }
    const double p = p_raw * gain;

    Map2D appearance(H, W);
    for (int yi = 0; yi < H; ++yi) {
        for (int xi = 0; xi < W; ++xi) {
            const double d = metric.at(yi, xi);
            const double lum =
                gain * photometry.source_constant_k / (d * d) *
                std::exp(rng.normal(0.0, photometry.luminance_noise_sigma));
            appearance.at(yi, xi) = static_cast<float>(lum);
        }
    }

    FrameSample frame;
    frame.polyp_id = polyp.polyp_id;
    frame.patient_id = polyp.patient_id;
    frame.intrinsics = intrinsics;
    frame.hidden_true_z_mm = z;
    frame.apparent_bbox = box;
    frame.gt_mask_bbox = box;
    frame.background_luminance_p = p;
    frame.relative_depth_map = std::move(rel);
    frame.appearance_map = std::move(appearance);
    return frame;
}

inline void validate_frame(const FrameSample& frame, const PolypInstance& polyp,
                           const RenderConfig& render) {
    const BBox& b = frame.apparent_bbox;
    const int W = frame.intrinsics.image_width_px;
    const int H = frame.intrinsics.image_height_px;
    require_data(b.w >= 2.0 && b.h >= 2.0, "frame bbox smaller than 2 px");
    require_data(b.left() >= 0.0 && b.right() <= W && b.top() >= 0.0 &&
                     b.bottom() <= H,
                 "frame bbox extends outside the image");
    require_data(frame.hidden_true_z_mm > 0.0, "frame distance not positive");
    for (float v : frame.relative_depth_map.data)
        require_data(v > 0.0f, "relative depth map has non-positive entries");
    require_data(frame.background_luminance_p > 0.0,
                 "frame luminance not positive");
    const double expected = project_apparent_diameter(
        frame.intrinsics.focal_length_px, polyp.true_diameter_mm,
        frame.hidden_true_z_mm);
    const double bound = render.bbox_jitter_bound() * expected + 1e-9;
    require_data(std::abs(0.5 * (b.w + b.h) - expected) <= bound,
                 "frame bbox inconsistent with projection law");
}

// ---------------------------------------------------------------------------
// Mask degradation

// Perturbs the ground-truth box by a randomized rescale + translation whose
// translation magnitude is bisected until IoU with the original hits the
// target.  Under-/over-segmentation is the dominant failure mode of predicted
// masks, so the rescale must corrupt box AREA, not just position: a joint
// log-area factor is drawn U-shaped (fifth-root transform of a uniform) over
// the full span |log r| <= -log(t) that concentric boxes allow at target IoU
// t, an aspect jitter decorrelates the two axes where slack remains, and
// only the translation magnitude is bisected.  At t = 0.3 this yields a
// log-area spread of ~1.0 (log-diameter ~0.5), which breaks both the
// apparent-size cue and the depth readout inside the box.
inline BBox degrade_mask(const BBox& gt, double target_iou, int image_w,
                         int image_h, RngStream& rng) {
    require_config(target_iou >= 0.05 && target_iou <= 1.0,
                   "degrade_mask: target IoU must lie in [0.05, 1]");
    if (target_iou == 1.0) return gt;

    const auto clip_box = [&](BBox b) {
        const double x0 = std::max(0.0, b.left());
        const double x1 = std::min<double>(image_w, b.right());
        const double y0 = std::max(0.0, b.top());
        const double y1 = std::min<double>(image_h, b.bottom());
        BBox out;
        out.w = std::max(0.0, x1 - x0);
        out.h = std::max(0.0, y1 - y0);
        out.cx = 0.5 * (x0 + x1);
        out.cy = 0.5 * (y0 + y1);
        return out;
    };

    // Concentric boxes at area ratio r have IoU = min(r, 1/r); the guards
    // below skip draws whose |log r| leaves no slack for the translation
    // step, so the span can cover the full -log(t).
    const double log_area_span = -std::log(target_iou);
    for (int attempt = 0; attempt < 8; ++attempt) {
        const double t = rng.uniform(-1.0, 1.0);
        const double u = log_area_span * std::copysign(
                             std::pow(std::abs(t), 0.2), t);
        double aspect = rng.uniform(-0.25, 0.25);
        const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const auto scaled_box = [&](double a) {
            BBox b = gt;
            b.w = gt.w * std::exp(0.5 * u + a);
            b.h = gt.h * std::exp(0.5 * u - a);
            return b;
        };
        // Drop the aspect jitter when it would eat the translation slack.
        if (iou(scaled_box(aspect), gt) < target_iou + 0.01) aspect = 0.0;
        const BBox scaled = scaled_box(aspect);
        if (iou(scaled, gt) < target_iou + 0.005) continue;
        // Translation drives the IoU from its concentric value (> target by
        // the span/aspect choices above) down to ~0 at full magnitude, so the
        // bisection always brackets the target even when clipping pins the
        // box at an image border.
        const double reach =
            1.5 * (std::max(scaled.w, scaled.h) + std::max(gt.w, gt.h));
        const auto box_at = [&](double m) {
            BBox b = scaled;
            b.cx = gt.cx + m * reach * std::cos(theta);
            b.cy = gt.cy + m * reach * std::sin(theta);
            return clip_box(b);
        };
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (iou(box_at(mid), gt) > target_iou)
                lo = mid;
            else
                hi = mid;
        }
        const BBox out = box_at(0.5 * (lo + hi));
        if (std::abs(iou(out, gt) - target_iou) <= 0.02 && out.area() > 0.0)
            return out;
    }
    throw DataError("degrade_mask: could not reach target IoU " +
                    std::to_string(target_iou));
}

// ---------------------------------------------------------------------------
// Whole-dataset generation

inline Dataset generate_dataset(const GenConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    ds.cohort = sample_cohort(cfg.cohort.n_patients, cfg.cohort.n_polyps,
                              cfg.cohort.large_fraction, cfg.seed);

    const int fpp = cfg.confound.frames_per_polyp;
    ds.frames.reserve(ds.cohort.size() * static_cast<size_t>(fpp));
    const int n_envs = static_cast<int>(cfg.environments.size());

    for (const PolypInstance& polyp : ds.cohort) {
        // Independent stream per polyp: parallel and serial generation agree.
        RngStream rng = make_stream(cfg.seed, stream_tag::kPolyp,
                                    static_cast<std::uint64_t>(polyp.polyp_id));
        const int env_id = polyp.patient_id % n_envs;
        const EnvironmentSpec& env = cfg.environments[env_id];

        CameraIntrinsics intr{cfg.render.focal_length_px * env.focal_scale,
                              cfg.render.map_size, cfg.render.map_size};
        PhotometryConfig photo = cfg.photometry;
        photo.source_constant_k *= env.k_scale;

        ClipState clip;
        clip.z_clip_mm =
            env.z0_scale *
            sample_behavior_distance(polyp.true_diameter_mm, cfg.confound, rng);
        clip.clip_jitter_sigma = cfg.confound.clip_jitter_sigma;
        clip.rel_scale_clip = rng.loguniform(cfg.render.rel_scale_clip_min,
                                             cfg.render.rel_scale_clip_max);

        for (int j = 0; j < fpp; ++j) {
            FrameSample frame =
                render_frame(polyp, clip, intr, photo, cfg.render, rng);
            frame.frame_id = polyp.polyp_id * fpp + j;
            frame.env_id = env_id;
            validate_frame(frame, polyp, cfg.render);
            ds.frames.push_back(std::move(frame));
        }
    }
    return ds;
}

}  // namespace polyaudit
