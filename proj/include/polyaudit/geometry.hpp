#pragma once

#include <cmath>
#include <vector>

#include "polyaudit/common.hpp"
#include "polyaudit/image.hpp"

namespace polyaudit {

// Pinhole size-distance relations.
//
// A frontal object of physical diameter S (mm) at optical distance Z (mm)
// under focal length f (px) subtends A = f * S / Z pixels.  The mapping is
// invariant under (S, Z) -> (c*S, c*Z): apparent extent alone cannot
// separate size from distance.  Everything else in this project probes what
// happens when a classifier is (or is not) given the missing metric scale.

struct CameraIntrinsics {
    double focal_length_px = 0.0;
    int image_width_px = 0;
    int image_height_px = 0;

    void validate() const {
        require_config(focal_length_px > 0.0,
                       "intrinsics.focal_length_px must be positive");
        require_config(image_width_px >= 16 && image_height_px >= 16,
                       "intrinsics image dimensions must be >= 16 px");
    }
};

enum class ScaleGranularity { Frame, Polyp, Global };

// Multiplier that converts relative depth units to millimetres.
struct ScaleFactor {
    double value = 1.0;
    ScaleGranularity granularity = ScaleGranularity::Frame;

    void validate() const {
        require_data(value > 0.0 && std::isfinite(value),
                     "scale factor must be positive and finite");
    }
};

// Apparent diameter in pixels subtended by size_mm at distance z_mm.
inline double project_apparent_diameter(double focal_px, double size_mm,
                                        double z_mm) {
    require_data(focal_px > 0.0, "projection: focal must be positive");
    require_data(size_mm >= 0.0, "projection: size must be non-negative");
    require_data(z_mm > 0.0, "projection: distance must be positive");
    return focal_px * size_mm / z_mm;
}

// Physical diameter recovered from apparent extent and known distance.
inline double invert_size(double focal_px, double apparent_px, double z_mm) {
    require_data(focal_px > 0.0, "invert_size: focal must be positive");
    require_data(apparent_px >= 0.0,
                 "invert_size: apparent extent must be non-negative");
    require_data(z_mm > 0.0, "invert_size: distance must be positive");
    return apparent_px * z_mm / focal_px;
}

// Metric calibration for one frame, anchored on a robust statistic of the
// relative depth inside the lesion box (this project uses the lower median).
inline ScaleFactor oracle_frame_factor(double rel_depth_stat, double true_z_mm) {
    require_data(rel_depth_stat > 0.0,
                 "oracle_frame_factor: depth statistic must be positive");
    require_data(true_z_mm > 0.0,
                 "oracle_frame_factor: true distance must be positive");
    return {true_z_mm / rel_depth_stat, ScaleGranularity::Frame};
}

// One factor per clip: the lower median of that clip's frame factors.
inline ScaleFactor oracle_polyp_factor(const std::vector<double>& frame_factors) {
    require_data(!frame_factors.empty(),
                 "oracle_polyp_factor: no frame factors");
    for (double f : frame_factors)
        require_data(f > 0.0, "oracle_polyp_factor: factors must be positive");
    return {lower_median(frame_factors), ScaleGranularity::Polyp};
}

// One factor for the whole corpus, fitted on training-fold frames only.
inline ScaleFactor global_factor(const std::vector<double>& training_factors) {
    require_data(!training_factors.empty(), "global_factor: no frame factors");
    for (double f : training_factors)
        require_data(f > 0.0, "global_factor: factors must be positive");
    return {lower_median(training_factors), ScaleGranularity::Global};
}

// Rescales a relative depth map into millimetres.
inline Map2D apply_scale(const Map2D& rel_depth, const ScaleFactor& alpha) {
    alpha.validate();
    Map2D out = rel_depth;
    for (float& v : out.data) {
        require_data(v > 0.0f, "apply_scale: depth values must be positive");
        v = static_cast<float>(v * alpha.value);
    }
    return out;
}

}  // namespace polyaudit
