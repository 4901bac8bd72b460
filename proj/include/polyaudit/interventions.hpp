#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "polyaudit/common.hpp"
#include "polyaudit/features.hpp"
#include "polyaudit/geometry.hpp"
#include "polyaudit/image.hpp"
#include "polyaudit/probes.hpp"
#include "polyaudit/rng.hpp"
#include "polyaudit/synthgen.hpp"

namespace polyaudit {

// Controlled interventions applied to a split before probing:
//   - the scale-regime ladder (None / Global / OraclePolyp / OracleFrame)
//     plus a simulated metric-depth estimator with bias and noise dials;
//   - mask substitution (ground truth, scaled, degraded to a target IoU);
//   - photometric correction A / P^q;
//   - feature-group ablation (implemented with the feature schema).

// --- scale regimes ------------------------------------------------------------

enum class ScaleRegimeKind { None, Global, OraclePolyp, OracleFrame, MetricEstimate };

struct ScaleRegime {
    ScaleRegimeKind kind = ScaleRegimeKind::None;
    double metric_bias = 1.0;    // MetricEstimate only
    double metric_sigma = 0.0;   // MetricEstimate only

    void validate() const {
        if (kind == ScaleRegimeKind::MetricEstimate) {
            require_config(metric_bias > 0.0,
                           "scale.metric_bias must be positive");
            require_config(metric_sigma >= 0.0,
                           "scale.metric_sigma must be non-negative");
        }
    }

    bool is_none() const { return kind == ScaleRegimeKind::None; }

    std::string name() const {
        switch (kind) {
            case ScaleRegimeKind::None: return "None";
            case ScaleRegimeKind::Global: return "Global";
            case ScaleRegimeKind::OraclePolyp: return "OraclePolyp";
            case ScaleRegimeKind::OracleFrame: return "OracleFrame";
            case ScaleRegimeKind::MetricEstimate:
                return "MetricEstimate(bias=" + format_double(metric_bias) +
                       ",sigma=" + format_double(metric_sigma) + ")";
        }
        throw ConfigError("unknown scale regime");
    }
};

// --- mask sources ----------------------------------------------------------------

enum class MaskSourceKind { GroundTruth, Scaled, Degraded };

struct MaskSource {
    MaskSourceKind kind = MaskSourceKind::GroundTruth;
    double param = 1.0;  // Scaled: factor; Degraded: target IoU

    void validate() const {
        if (kind == MaskSourceKind::Scaled)
            require_config(param > 0.0, "mask.factor must be positive");
        if (kind == MaskSourceKind::Degraded)
            require_config(param >= 0.05 && param <= 1.0,
                           "mask.target_iou must lie in [0.05, 1]");
    }

    std::string name() const {
        switch (kind) {
            case MaskSourceKind::GroundTruth: return "GroundTruth";
            case MaskSourceKind::Scaled:
                return "Scaled(" + format_double(param) + ")";
            case MaskSourceKind::Degraded:
                return "Degraded(" + format_double(param) + ")";
        }
        throw ConfigError("unknown mask source");
    }
};

// --- the plan ---------------------------------------------------------------------

struct InterventionPlan {
    ScaleRegime scale;
    MaskSource mask;
    std::optional<double> photometric_q;         // adds the A/P^q feature
    std::optional<FeatureGroup> feature_ablation;

    void validate() const {
        scale.validate();
        mask.validate();
        if (photometric_q.has_value())
            require_config(*photometric_q >= 0.0,
                           "plan.photometric_q must be non-negative");
    }

    std::string name() const {
        std::string out = "scale=" + scale.name() + ",mask=" + mask.name();
        if (photometric_q.has_value())
            out += ",photo_q=" + format_double(*photometric_q);
        if (feature_ablation.has_value())
            out += ",ablate=" + feature_group_name(*feature_ablation);
        return out;
    }
};

// A plan is only meaningful for probes that can react to it; mismatches are
// rejected before any training starts.
inline void validate_plan(ProbeKind kind, const InterventionPlan& plan) {
    plan.validate();
    if (!plan.scale.is_none())
        require_config(probe_consumes_depth(kind),
                       "plan: scale regime '" + plan.scale.name() +
                           "' requested for probe " + probe_kind_name(kind) +
                           ", which has no depth input");
    if (kind == ProbeKind::HeuristicPhysics)
        require_config(!plan.scale.is_none(),
                       "plan: HeuristicPhysics needs a metric scale regime "
                       "(scale=None leaves depth unit-less)");
    if (plan.feature_ablation.has_value()) {
        require_config(kind == ProbeKind::FeatureMLP,
                       "plan: feature ablation only applies to FeatureMLP");
        require_config(*plan.feature_ablation != FeatureGroup::Geometric ||
                           plan.scale.is_none(),
                       "plan: scale regime requested for FeatureMLP with its "
                       "geometric (depth) features ablated");
    }
    if (plan.photometric_q.has_value())
        require_config(kind == ProbeKind::FeatureMLP,
                       "plan: photometric correction only applies to "
                       "FeatureMLP (it adds a derived feature)");
}

// --- scale factor computation --------------------------------------------------------

// Per-frame metric anchor: the true distance divided by the lower-median
// relative depth inside the anchor box.  This is the quantity the oracle
// ladder hands out at different granularities.  Callers pass the lesion's
// TRUE box as the anchor: the factor is ground-truth information, so it is
// defined by where the lesion really is, independent of how well the
// perception pipeline segmented it.  (Tests may pass other anchors to probe
// the geometry directly.)
inline double frame_oracle_factor(const FrameSample& frame,
                                  const BBox& anchor_bbox) {
    const IRect rect = pixel_rect(anchor_bbox,
                                  frame.intrinsics.image_width_px,
                                  frame.intrinsics.image_height_px);
    require_data(!rect.empty(), "oracle factor: anchor bbox covers no pixels");
    const double stat = median_in_rect(frame.relative_depth_map, rect);
    return oracle_frame_factor(stat, frame.hidden_true_z_mm).value;
}

// One multiplier per frame (aligned with `frames`), converting relative depth
// to millimetres under the requested regime.  Global fits its single factor
// on frames flagged in `is_training`; oracle variants read hidden truth at
// the per-frame anchor boxes; MetricEstimate perturbs the per-frame truth by
// bias and log-normal noise; None returns all ones.
inline std::vector<double> compute_scale_factors(
    const std::vector<FrameSample>& frames,
    const std::vector<BBox>& anchor_boxes, const ScaleRegime& regime,
    const std::vector<bool>& is_training, uint64_t seed) {
    regime.validate();
    require_data(is_training.size() == frames.size(),
                 "scale factors: training-flag length mismatch");
    require_data(anchor_boxes.size() == frames.size(),
                 "scale factors: anchor-box length mismatch");
    std::vector<double> out(frames.size(), 1.0);
    switch (regime.kind) {
        case ScaleRegimeKind::None:
            return out;
        case ScaleRegimeKind::OracleFrame: {
            for (size_t i = 0; i < frames.size(); ++i)
                out[i] = frame_oracle_factor(frames[i], anchor_boxes[i]);
            return out;
        }
        case ScaleRegimeKind::OraclePolyp: {
            std::map<int, std::vector<double>> by_polyp;
            for (size_t i = 0; i < frames.size(); ++i)
                by_polyp[frames[i].polyp_id].push_back(
                    frame_oracle_factor(frames[i], anchor_boxes[i]));
            std::map<int, double> clip_factor;
            for (const auto& [pid, factors] : by_polyp)
                clip_factor[pid] = oracle_polyp_factor(factors).value;
            for (size_t i = 0; i < frames.size(); ++i)
                out[i] = clip_factor[frames[i].polyp_id];
            return out;
        }
        case ScaleRegimeKind::Global: {
            std::vector<double> train_factors;
            for (size_t i = 0; i < frames.size(); ++i)
                if (is_training[i])
                    train_factors.push_back(
                        frame_oracle_factor(frames[i], anchor_boxes[i]));
            require_config(!train_factors.empty(),
                           "scale regime Global needs a training subset to "
                           "fit its factor");
            const double g = global_factor(train_factors).value;
            for (double& v : out) v = g;
            return out;
        }
        case ScaleRegimeKind::MetricEstimate: {
            for (size_t i = 0; i < frames.size(); ++i) {
                auto rng = make_stream(seed, stream_tag::kScale,
                                       static_cast<uint64_t>(frames[i].frame_id));
                out[i] = frame_oracle_factor(frames[i], anchor_boxes[i]) *
                         regime.metric_bias *
                         std::exp(rng.normal(0.0, regime.metric_sigma));
            }
            return out;
        }
    }
    throw ConfigError("unknown scale regime");
}

// Contract form of the regime application: returns frames whose depth maps
// are multiplied by the computed factors.  The audit pipeline uses
// compute_scale_factors directly and applies factors inside feature/tensor
// extraction instead of copying maps.
inline std::vector<FrameSample> apply_scale_regime(
    const std::vector<FrameSample>& frames,
    const std::vector<BBox>& anchor_boxes, const ScaleRegime& regime,
    const std::vector<bool>& is_training, uint64_t seed) {
    const std::vector<double> factors =
        compute_scale_factors(frames, anchor_boxes, regime, is_training, seed);
    std::vector<FrameSample> out = frames;
    for (size_t i = 0; i < out.size(); ++i) {
        if (factors[i] == 1.0) continue;
        out[i].relative_depth_map = apply_scale(
            out[i].relative_depth_map,
            ScaleFactor{factors[i], ScaleGranularity::Frame});
    }
    return out;
}

// --- mask substitution -----------------------------------------------------------------

inline BBox clip_bbox_to_image(const BBox& b, int image_w, int image_h) {
    const double x0 = std::max(0.0, b.left());
    const double x1 = std::min<double>(image_w, b.right());
    const double y0 = std::max(0.0, b.top());
    const double y1 = std::min<double>(image_h, b.bottom());
    BBox out;
    out.cx = 0.5 * (x0 + x1);
    out.cy = 0.5 * (y0 + y1);
    out.w = std::max(0.0, x1 - x0);
    out.h = std::max(0.0, y1 - y0);
    return out;
}

// Replaces the active bbox for one frame.  Depth and photometry payloads are
// untouched; only the box that downstream extraction reads changes.
inline BBox substitute_mask(const FrameSample& frame, const MaskSource& source,
                            RngStream& rng) {
    source.validate();
    const int W = frame.intrinsics.image_width_px;
    const int H = frame.intrinsics.image_height_px;
    switch (source.kind) {
        case MaskSourceKind::GroundTruth:
            return frame.gt_mask_bbox;
        case MaskSourceKind::Scaled: {
            BBox b = frame.gt_mask_bbox;
            b.w *= source.param;
            b.h *= source.param;
            b = clip_bbox_to_image(b, W, H);
            require_data(b.area() > 0.0 && !pixel_rect(b, W, H).empty(),
                         "mask substitution: scaled bbox degenerate after "
                         "clipping");
            return b;
        }
        case MaskSourceKind::Degraded:
            return degrade_mask(frame.gt_mask_bbox, source.param, W, H, rng);
    }
    throw ConfigError("unknown mask source");
}

// Stream used for per-frame mask randomization: degraded masks re-randomize
// per frame, modeling per-frame segmentation failure.
inline RngStream mask_stream(uint64_t seed, int frame_id) {
    return make_stream(seed, stream_tag::kMask, static_cast<uint64_t>(frame_id));
}

// --- photometric correction ----------------------------------------------------------------

// Distance-compensated apparent size A / P^q.  Under P = k / Z^2 the choice
// q = 0.5 cancels Z exactly; q = 1 is the form the headroom comparison uses.
inline double photometric_correction(double apparent_px, double luminance_p,
                                     double q) {
    require_config(q >= 0.0, "photometric correction: q must be >= 0");
    require_data(luminance_p > 0.0,
                 "photometric correction: luminance must be positive");
    require_data(apparent_px >= 0.0,
                 "photometric correction: apparent size must be >= 0");
    return apparent_px / std::pow(luminance_p, q);
}

}  // namespace polyaudit
