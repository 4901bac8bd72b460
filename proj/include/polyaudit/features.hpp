#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "polyaudit/common.hpp"
#include "polyaudit/synthgen.hpp"

namespace polyaudit {

// Handcrafted per-frame features in two ablatable groups.  The geometric
// (size-related) group holds everything that encodes the lesion's on-image
// extent: bbox shape, depth statistics inside it, and region appearance
// statistics whose support is the lesion footprint.  The photometric group
// holds scene-illumination scalars that are independent of the active bbox.
// Depth statistics are computed on normalized log depth:
//   - scale-free units: log depth minus the median log depth inside the
//     active bbox, so the unknown per-frame normalizer cancels exactly and
//     the reference point moves with the pipeline's own localization (a
//     frame-wide reference would leak the lesion's on-image extent back in
//     through the median's lesion/background mixture, bypassing the bbox);
//   - metric units: log depth minus log(reference depth), so absolute
//     distance stays observable.

inline constexpr double kReferenceDepthMm = 50.0;

enum class FeatureGroup { Geometric, Photometric };

enum class DepthUnits { ScaleFree, Millimeters };

inline FeatureGroup feature_group_from_name(const std::string& name) {
    if (name == "geometric") return FeatureGroup::Geometric;
    if (name == "photometric") return FeatureGroup::Photometric;
    throw ConfigError("unknown feature group: " + name);
}

inline std::string feature_group_name(FeatureGroup g) {
    return g == FeatureGroup::Geometric ? "geometric" : "photometric";
}

struct FeatureSchema {
    std::vector<std::string> names;
    std::vector<FeatureGroup> groups;

    size_t size() const { return names.size(); }

    int index_of(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return static_cast<int>(i);
        return -1;
    }

    size_t count(FeatureGroup g) const {
        size_t n = 0;
        for (FeatureGroup fg : groups) n += (fg == g);
        return n;
    }
};

// Side-channel quantities for the physics heuristic; not part of the
// learnable schema.
struct FeatureAux {
    double apparent_diameter_px = 0.0;
    // Median metric depth inside the active bbox; NaN under scale-free units.
    double depth_median_mm = std::numeric_limits<double>::quiet_NaN();
    double focal_px = 0.0;
};

struct FeatureVector {
    std::vector<double> values;
    FeatureAux aux;
};

// with_size_proxy appends the photometric-correction feature
// log(A / P^q); its exponent q is supplied at extraction time.
inline FeatureSchema make_feature_schema(bool with_size_proxy) {
    FeatureSchema s;
    const auto add = [&](const char* name, FeatureGroup g) {
        s.names.emplace_back(name);
        s.groups.push_back(g);
    };
    add("apparent_area_frac", FeatureGroup::Geometric);
    add("bbox_aspect", FeatureGroup::Geometric);
    add("bbox_center_x_offset", FeatureGroup::Geometric);
    add("bbox_center_y_offset", FeatureGroup::Geometric);
    add("log_bbox_diagonal", FeatureGroup::Geometric);
    add("depth_mean", FeatureGroup::Geometric);
    add("depth_median", FeatureGroup::Geometric);
    add("depth_std", FeatureGroup::Geometric);
    add("depth_min", FeatureGroup::Geometric);
    add("depth_max", FeatureGroup::Geometric);
    add("depth_contrast", FeatureGroup::Geometric);
    add("lum_bbox_mean", FeatureGroup::Photometric);
    add("lum_bbox_std", FeatureGroup::Photometric);
    add("lum_gradient_mag", FeatureGroup::Photometric);
    add("background_luminance", FeatureGroup::Photometric);
    add("log_background_luminance", FeatureGroup::Photometric);
    // The corrected size A/P^q is a size estimate, so it carries the
    // geometric tag: ablating the photometric group then asks whether this
    // single derived quantity can stand in for the raw luminance channel.
    if (with_size_proxy) add("log_size_proxy", FeatureGroup::Geometric);
    return s;
}

inline FeatureVector extract_features(const FrameSample& frame,
                                      const BBox& active_bbox,
                                      double depth_scale_factor,
                                      DepthUnits units,
                                      std::optional<double> size_proxy_q) {
    const int W = frame.intrinsics.image_width_px;
    const int H = frame.intrinsics.image_height_px;
    require_data(active_bbox.area() > 0.0,
                 "feature extraction: degenerate bbox (zero area)");
    const IRect rect = pixel_rect(active_bbox, W, H);
    require_data(!rect.empty(),
                 "feature extraction: bbox covers no pixels");
    require_data(depth_scale_factor > 0.0,
                 "feature extraction: depth scale factor must be positive");

    const Map2D& rel = frame.relative_depth_map;
    std::vector<double> log_depth(rel.size());
    for (size_t i = 0; i < rel.size(); ++i) {
        require_data(rel.data[i] > 0.0f,
                     "feature extraction: non-positive depth");
        log_depth[i] = std::log(static_cast<double>(rel.data[i]));
    }
    double offset;
    if (units == DepthUnits::Millimeters) {
        offset = std::log(depth_scale_factor / kReferenceDepthMm);
    } else {
        std::vector<double> rect_logs;
        rect_logs.reserve(static_cast<size_t>(rect.pixels()));
        for (int y = rect.y0; y < rect.y1; ++y)
            for (int x = rect.x0; x < rect.x1; ++x)
                rect_logs.push_back(log_depth[static_cast<size_t>(y) * W + x]);
        offset = -lower_median(rect_logs);
    }

    std::vector<double> inside, outside;
    inside.reserve(static_cast<size_t>(rect.pixels()));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double v = log_depth[static_cast<size_t>(y) * W + x] + offset;
            const bool in = y >= rect.y0 && y < rect.y1 && x >= rect.x0 &&
                            x < rect.x1;
            (in ? inside : outside).push_back(v);
        }
    }
    require_data(!inside.empty(), "feature extraction: empty bbox interior");

    double mean = 0.0, mn = inside[0], mx = inside[0];
    for (double v : inside) {
        mean += v;
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    mean /= static_cast<double>(inside.size());
    double var = 0.0;
    for (double v : inside) var += (v - mean) * (v - mean);
    var /= static_cast<double>(inside.size());
    const double med = lower_median(inside);
    const double contrast =
        outside.empty() ? 0.0 : med - lower_median(outside);

    const double p = frame.background_luminance_p;
    require_data(p > 0.0, "feature extraction: non-positive luminance");
    const RectStats lum = stats_in_rect(frame.appearance_map, rect);
    const double grad = mean_gradient_magnitude(frame.appearance_map, rect);
    const double diameter = 0.5 * (active_bbox.w + active_bbox.h);

    FeatureVector fv;
    fv.values = {active_bbox.area() / (static_cast<double>(W) * H),
                 active_bbox.w / active_bbox.h,
                 (active_bbox.cx - 0.5 * W) / W,
                 (active_bbox.cy - 0.5 * H) / H,
                 std::log(std::hypot(active_bbox.w, active_bbox.h)),
                 mean,
                 med,
                 std::sqrt(var),
                 mn,
                 mx,
                 contrast,
                 lum.mean,
                 lum.stddev,
                 grad,
                 p,
                 std::log(p)};
    if (size_proxy_q.has_value()) {
        require_config(*size_proxy_q >= 0.0,
                       "size proxy exponent q must be non-negative");
        fv.values.push_back(std::log(diameter) - *size_proxy_q * std::log(p));
    }
    for (double v : fv.values) require_finite(v, "feature value");
    require_data(fv.values[0] > 0.0 && fv.values[0] <= 1.0,
                 "apparent_area_frac must lie in (0, 1]");

    fv.aux.apparent_diameter_px = diameter;
    if (units == DepthUnits::Millimeters) {
        fv.aux.depth_median_mm =
            depth_scale_factor * median_in_rect(rel, rect);
    }
    fv.aux.focal_px = frame.intrinsics.focal_length_px;
    return fv;
}

// Removes one group from the schema (widths shrink; values are dropped, not
// zeroed).
inline FeatureSchema ablate_schema(const FeatureSchema& schema,
                                   FeatureGroup group) {
    FeatureSchema out;
    for (size_t i = 0; i < schema.size(); ++i) {
        if (schema.groups[i] == group) continue;
        out.names.push_back(schema.names[i]);
        out.groups.push_back(schema.groups[i]);
    }
    return out;
}

inline FeatureVector ablate_features(const FeatureVector& fv,
                                     const FeatureSchema& schema,
                                     FeatureGroup group) {
    require_data(fv.values.size() == schema.size(),
                 "ablate: feature vector does not match schema width");
    FeatureVector out;
    out.aux = fv.aux;
    for (size_t i = 0; i < schema.size(); ++i)
        if (schema.groups[i] != group) out.values.push_back(fv.values[i]);
    return out;
}

}  // namespace polyaudit
