#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "polyaudit/common.hpp"

namespace polyaudit {

// Axis-aligned box in pixel coordinates, stored as center + extent.
struct BBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double left() const { return cx - 0.5 * w; }
    double right() const { return cx + 0.5 * w; }
    double top() const { return cy - 0.5 * h; }
    double bottom() const { return cy + 0.5 * h; }
    double area() const { return w * h; }
};

inline double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(
        0.0, std::min(a.right(), b.right()) - std::max(a.left(), b.left()));
    const double iy = std::max(
        0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top()));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

// Integer pixel range [x0, x1) x [y0, y1).
struct IRect {
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long long pixels() const {
        return static_cast<long long>(width()) * height();
    }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
};

// Pixels whose index lies inside the box, clipped to the image.
inline IRect pixel_rect(const BBox& b, int width, int height) {
    IRect r;
    r.x0 = std::max(0, static_cast<int>(std::floor(b.left())));
    r.x1 = std::min(width, static_cast<int>(std::ceil(b.right())));
    r.y0 = std::max(0, static_cast<int>(std::floor(b.top())));
    r.y1 = std::min(height, static_cast<int>(std::ceil(b.bottom())));
    r.x0 = std::min(r.x0, width);
    r.y0 = std::min(r.y0, height);
    r.x1 = std::max(r.x1, r.x0);
    r.y1 = std::max(r.y1, r.y0);
    return r;
}

// Dense single-channel float raster, row-major.
struct Map2D {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Map2D() = default;
    Map2D(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

    float& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    float at(int y, int x) const {
        return data[static_cast<size_t>(y) * width + x];
    }
    size_t size() const { return data.size(); }
};

inline std::vector<double> collect_rect(const Map2D& m, const IRect& r) {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(std::max(0ll, r.pixels())));
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) out.push_back(m.at(y, x));
    return out;
}

inline double median_in_rect(const Map2D& m, const IRect& r) {
    auto v = collect_rect(m, r);
    require_data(!v.empty(), "median over empty pixel rect");
    return lower_median(std::move(v));
}

struct RectStats {
    double mean = 0.0, stddev = 0.0, minimum = 0.0, maximum = 0.0;
};

inline RectStats stats_in_rect(const Map2D& m, const IRect& r) {
    require_data(!r.empty(), "statistics over empty pixel rect");
    RectStats s;
    s.minimum = m.at(r.y0, r.x0);
    s.maximum = s.minimum;
    double sum = 0.0, sumsq = 0.0;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            const double v = m.at(y, x);
            sum += v;
            sumsq += v * v;
            s.minimum = std::min(s.minimum, v);
            s.maximum = std::max(s.maximum, v);
        }
    }
    const double n = static_cast<double>(r.pixels());
    s.mean = sum / n;
    const double var = std::max(0.0, sumsq / n - s.mean * s.mean);
    s.stddev = std::sqrt(var);
    return s;
}

// Mean magnitude of the forward-difference gradient over the whole map.
inline double mean_gradient_magnitude(const Map2D& m) {
    require_data(m.height > 1 && m.width > 1, "gradient needs a 2x2 map");
    double total = 0.0;
    long long count = 0;
    for (int y = 0; y + 1 < m.height; ++y) {
        for (int x = 0; x + 1 < m.width; ++x) {
            const double gx = m.at(y, x + 1) - m.at(y, x);
            const double gy = m.at(y + 1, x) - m.at(y, x);
            total += std::sqrt(gx * gx + gy * gy);
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// Same statistic restricted to a pixel rect (both difference endpoints must
// lie inside the rect).  A rect too small to host a forward difference has
// no gradient content and yields 0.
inline double mean_gradient_magnitude(const Map2D& m, const IRect& r) {
    require_data(!r.empty(), "gradient over empty pixel rect");
    double total = 0.0;
    long long count = 0;
    for (int y = r.y0; y + 1 < r.y1; ++y) {
        for (int x = r.x0; x + 1 < r.x1; ++x) {
            const double gx = m.at(y, x + 1) - m.at(y, x);
            const double gy = m.at(y + 1, x) - m.at(y, x);
            total += std::sqrt(gx * gx + gy * gy);
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

// Area-weighted resampling (box filter).  Each output pixel averages the
// input region it covers, so the spatial mean of the raster is preserved for
// any size ratio.  Mask-area statistics therefore survive resizing.
inline Map2D resize_area(const Map2D& in, int out_h, int out_w) {
    require_config(out_h > 0 && out_w > 0, "resize target must be positive");
    require_data(in.height > 0 && in.width > 0, "resize of empty map");
    Map2D out(out_h, out_w);
    const double sy = static_cast<double>(in.height) / out_h;
    const double sx = static_cast<double>(in.width) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        const double y_lo = oy * sy;
        const double y_hi = (oy + 1) * sy;
        const int y0 = static_cast<int>(std::floor(y_lo));
        const int y1 = std::min(in.height, static_cast<int>(std::ceil(y_hi)));
        for (int ox = 0; ox < out_w; ++ox) {
            const double x_lo = ox * sx;
            const double x_hi = (ox + 1) * sx;
            const int x0 = static_cast<int>(std::floor(x_lo));
            const int x1 =
                std::min(in.width, static_cast<int>(std::ceil(x_hi)));
            double acc = 0.0;
            for (int y = y0; y < y1; ++y) {
                const double wy = std::min<double>(y + 1, y_hi) -
                                  std::max<double>(y, y_lo);
                for (int x = x0; x < x1; ++x) {
                    const double wx = std::min<double>(x + 1, x_hi) -
                                      std::max<double>(x, x_lo);
                    acc += wy * wx * in.at(y, x);
                }
            }
            out.at(oy, ox) = static_cast<float>(acc / (sy * sx));
        }
    }
    return out;
}

}  // namespace polyaudit
