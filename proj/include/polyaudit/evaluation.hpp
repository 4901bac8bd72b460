#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "polyaudit/common.hpp"
#include "polyaudit/rng.hpp"
#include "polyaudit/synthgen.hpp"

namespace polyaudit {

// Patient-stratified cross-validation, classification metrics, the
// consistent/inconsistent frame partition, and a histogram mutual-information
// estimator.  Everything here is pure and deterministic.

// --- confusion counts and derived metrics -------------------------------------

struct Confusion {
    // first letter = truth, second = prediction (s = Small, l = Large)
    long ss = 0, sl = 0, ls = 0, ll = 0;

    long total() const { return ss + sl + ls + ll; }
};

inline Confusion confusion(const std::vector<SizeClass>& y_true,
                           const std::vector<SizeClass>& y_pred) {
    require_data(y_true.size() == y_pred.size(),
                 "confusion: length mismatch between truth and predictions");
    require_data(!y_true.empty(), "confusion: empty inputs");
    Confusion c;
    for (size_t i = 0; i < y_true.size(); ++i) {
        const bool t = y_true[i] == SizeClass::Large;
        const bool p = y_pred[i] == SizeClass::Large;
        if (!t && !p) ++c.ss;
        else if (!t && p) ++c.sl;
        else if (t && !p) ++c.ls;
        else ++c.ll;
    }
    return c;
}

// Unweighted mean of the two per-class F1 scores.  A class absent from both
// truth and prediction has an undefined F1; it contributes 0, which keeps the
// metric total on tiny folds.
inline double macro_f1(const Confusion& c) {
    require_data(c.total() >= 1, "macro_f1: empty confusion");
    const auto f1 = [](long tp, long fp, long fn) {
        const long denom = 2 * tp + fp + fn;
        return denom == 0 ? 0.0 : 2.0 * tp / static_cast<double>(denom);
    };
    const double f1_small = f1(c.ss, c.ls, c.sl);
    const double f1_large = f1(c.ll, c.sl, c.ls);
    return 0.5 * (f1_small + f1_large);
}

// True-positive rate of the Large class; undefined when no Large is present.
inline double recall_large(const Confusion& c) {
    const long n_large = c.ll + c.ls;
    require_data(n_large >= 1, "recall_large: no Large ground truth");
    return static_cast<double>(c.ll) / static_cast<double>(n_large);
}

// (mean, sample std) across folds.
inline std::pair<double, double> aggregate_folds(
    const std::vector<double>& per_fold) {
    require_data(per_fold.size() >= 2,
                 "aggregate_folds: need at least two fold values");
    const double n = static_cast<double>(per_fold.size());
    const double mean =
        std::accumulate(per_fold.begin(), per_fold.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : per_fold) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

// --- patient-stratified folds ---------------------------------------------------

struct FoldSplit {
    int k = 0;
    std::vector<int> assignment;  // patient_id -> fold index in [0, k)

    int fold_of_patient(int patient_id) const {
        require_data(patient_id >= 0 &&
                         patient_id < static_cast<int>(assignment.size()),
                     "fold lookup: unknown patient id");
        return assignment[patient_id];
    }
};

// Random round-robin assignment (fold sizes differ by at most one patient),
// then greedy one-for-one patient swaps until every fold's Large-polyp
// fraction sits within ±10 pp of the global fraction, when such swaps exist.
inline FoldSplit stratified_folds(const std::vector<PolypInstance>& cohort,
                                  int n_patients, int k, uint64_t seed) {
    require_config(k >= 2, "stratified_folds: k must be >= 2");
    require_config(n_patients >= k,
                   "stratified_folds: fewer patients than folds");
    require_data(!cohort.empty(), "stratified_folds: empty cohort");
    for (const PolypInstance& p : cohort)
        require_data(p.patient_id >= 0 && p.patient_id < n_patients,
                     "stratified_folds: patient id out of range");

    std::vector<int> order(static_cast<size_t>(n_patients));
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_stream(seed, stream_tag::kFolds);
    rng.shuffle(order);

    FoldSplit split;
    split.k = k;
    split.assignment.assign(static_cast<size_t>(n_patients), 0);
    for (int i = 0; i < n_patients; ++i)
        split.assignment[order[static_cast<size_t>(i)]] = i % k;

    // per-patient polyp counts by class
    std::vector<long> small_of(static_cast<size_t>(n_patients), 0);
    std::vector<long> large_of(static_cast<size_t>(n_patients), 0);
    long total_large = 0;
    for (const PolypInstance& p : cohort) {
        if (p.size_class == SizeClass::Large) {
            ++large_of[static_cast<size_t>(p.patient_id)];
            ++total_large;
        } else {
            ++small_of[static_cast<size_t>(p.patient_id)];
        }
    }
    const double global_frac =
        static_cast<double>(total_large) / static_cast<double>(cohort.size());
    constexpr double kTolerance = 0.10;

    std::vector<long> fold_small(static_cast<size_t>(k), 0);
    std::vector<long> fold_large(static_cast<size_t>(k), 0);
    for (int pid = 0; pid < n_patients; ++pid) {
        const int f = split.assignment[static_cast<size_t>(pid)];
        fold_small[static_cast<size_t>(f)] += small_of[static_cast<size_t>(pid)];
        fold_large[static_cast<size_t>(f)] += large_of[static_cast<size_t>(pid)];
    }
    // objective: total deviation beyond the tolerance (primary), then total
    // deviation (tiebreak); the tiebreak lets the search cross plateaus of
    // the primary objective instead of stalling on them
    const auto objective = [&]() {
        double excess = 0.0, total = 0.0;
        for (int f = 0; f < k; ++f) {
            const long n = fold_small[static_cast<size_t>(f)] +
                           fold_large[static_cast<size_t>(f)];
            const double frac =
                n == 0 ? global_frac + 1.0
                       : static_cast<double>(fold_large[static_cast<size_t>(f)]) /
                             static_cast<double>(n);
            const double d = std::abs(frac - global_frac);
            total += d;
            if (d > kTolerance) excess += d - kTolerance;
        }
        return std::pair<double, double>{excess, total};
    };
    const auto apply_swap = [&](int a, int b, int direction) {
        const int fa = split.assignment[static_cast<size_t>(a)];
        const int fb = split.assignment[static_cast<size_t>(b)];
        fold_small[static_cast<size_t>(fa)] += direction * (small_of[static_cast<size_t>(b)] - small_of[static_cast<size_t>(a)]);
        fold_large[static_cast<size_t>(fa)] += direction * (large_of[static_cast<size_t>(b)] - large_of[static_cast<size_t>(a)]);
        fold_small[static_cast<size_t>(fb)] += direction * (small_of[static_cast<size_t>(a)] - small_of[static_cast<size_t>(b)]);
        fold_large[static_cast<size_t>(fb)] += direction * (large_of[static_cast<size_t>(a)] - large_of[static_cast<size_t>(b)]);
    };

    for (int iter = 0; iter < 2000 && objective().first > 0.0; ++iter) {
        const auto before = objective();
        auto best = before;
        int best_a = -1, best_b = -1;
        for (int a = 0; a < n_patients; ++a) {
            for (int b = a + 1; b < n_patients; ++b) {
                if (split.assignment[static_cast<size_t>(a)] ==
                    split.assignment[static_cast<size_t>(b)])
                    continue;
                apply_swap(a, b, +1);
                const auto after = objective();
                apply_swap(a, b, -1);
                if (after.first < best.first - 1e-12 ||
                    (after.first < best.first + 1e-12 &&
                     after.second < best.second - 1e-12)) {
                    best = after;
                    best_a = a;
                    best_b = b;
                }
            }
        }
        if (best_a < 0) break;  // no improving swap exists
        apply_swap(best_a, best_b, +1);
        std::swap(split.assignment[static_cast<size_t>(best_a)],
                  split.assignment[static_cast<size_t>(best_b)]);
    }
    return split;
}

// --- consistent / inconsistent partition ----------------------------------------

enum class FrameGroup { Consistent, Inconsistent };

// Splits a fold's test frames at the median apparent area fraction.  A frame
// is Consistent when its apparent size agrees with its true class; ties at
// the median count as apparently large.
inline std::vector<FrameGroup> shortcut_partition(
    const std::vector<double>& area_fracs,
    const std::vector<SizeClass>& labels) {
    require_data(area_fracs.size() == labels.size(),
                 "shortcut_partition: length mismatch");
    require_data(!area_fracs.empty(), "shortcut_partition: empty fold");
    const double m = lower_median(area_fracs);
    std::vector<FrameGroup> out(area_fracs.size());
    for (size_t i = 0; i < area_fracs.size(); ++i) {
        const bool apparently_large = area_fracs[i] >= m;
        const bool truly_large = labels[i] == SizeClass::Large;
        out[i] = apparently_large == truly_large ? FrameGroup::Consistent
                                                 : FrameGroup::Inconsistent;
    }
    return out;
}

// --- mutual information ------------------------------------------------------------

// Plug-in discrete MI (bits) between a real feature and a binary label.  The
// feature is discretized by equal-frequency binning on ranks, so the value is
// invariant under strictly monotone transforms; tied values share the bin of
// their first sorted position.  A constant feature yields 0.
inline double mutual_information(const std::vector<double>& values,
                                 const std::vector<int>& labels,
                                 int n_bins = 16) {
    require_data(values.size() == labels.size(),
                 "mutual_information: length mismatch");
    require_data(values.size() >= 100,
                 "mutual_information: need at least 100 samples");
    require_config(n_bins >= 2, "mutual_information: n_bins must be >= 2");
    const size_t n = values.size();
    for (int l : labels)
        require_data(l == 0 || l == 1,
                     "mutual_information: labels must be binary");
    for (double v : values) require_finite(v, "mutual_information feature");

    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        return values[a] < values[b] || (values[a] == values[b] && a < b);
    });
    std::vector<int> bin(n, 0);
    size_t group_start = 0;
    for (size_t r = 0; r < n; ++r) {
        if (r > 0 && values[idx[r]] != values[idx[r - 1]]) group_start = r;
        bin[idx[r]] = static_cast<int>(group_start * n_bins / n);
    }

    std::vector<double> joint(static_cast<size_t>(n_bins) * 2, 0.0);
    std::vector<double> pb(static_cast<size_t>(n_bins), 0.0);
    double pl[2] = {0.0, 0.0};
    const double w = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        joint[static_cast<size_t>(bin[i]) * 2 + labels[i]] += w;
        pb[static_cast<size_t>(bin[i])] += w;
        pl[labels[i]] += w;
    }
    double mi = 0.0;
    for (int b = 0; b < n_bins; ++b)
        for (int l = 0; l < 2; ++l) {
            const double pij = joint[static_cast<size_t>(b) * 2 + l];
            if (pij <= 0.0) continue;
            mi += pij * std::log2(pij / (pb[static_cast<size_t>(b)] * pl[l]));
        }
    return mi < 0.0 ? 0.0 : mi;
}

}  // namespace polyaudit
