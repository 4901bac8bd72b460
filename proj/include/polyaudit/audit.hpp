#pragma once

// Orchestration: dataset files on disk, the (probe x plan x seed) execution
// grid, fold-wise intervention application, report assembly, and the
// hidden-information leak guard.  Everything here is deterministic: job
// results land in pre-indexed slots, so the worker count never changes a
// single output byte.

#include <atomic>
#include <cstdint>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "polyaudit/common.hpp"
#include "polyaudit/config.hpp"
#include "polyaudit/evaluation.hpp"
#include "polyaudit/features.hpp"
#include "polyaudit/interventions.hpp"
#include "polyaudit/json_util.hpp"
#include "polyaudit/probes.hpp"
#include "polyaudit/synthgen.hpp"

namespace polyaudit {

inline constexpr const char* kDatasetSchema = "polyaudit.dataset.v1";
inline constexpr const char* kReportSchema = "polyaudit.report.v1";

// --- plain file helpers ---------------------------------------------------------------

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require_data(in.good(), "cannot open file: " + path);
    std::string out((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    require_data(!in.bad(), "read failed: " + path);
    return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require_data(out.good(), "cannot open file for writing: " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    require_data(out.good(), "write failed: " + path);
}

// --- dataset files ----------------------------------------------------------------------

// Single self-describing file: one JSON header line (config echo, cohort,
// per-frame metadata), then raw little-endian f32 payloads, two maps per
// frame in frame order.

inline std::string serialize_dataset(const Dataset& ds) {
    json header;
    header["schema"] = kDatasetSchema;
    header["tool_version"] = kToolVersion;
    header["generator"] = gen_config_to_json(ds.config);
    header["map_height"] = ds.config.render.map_size;
    header["map_width"] = ds.config.render.map_size;
    json cohort = json::array();
    for (const PolypInstance& p : ds.cohort)
        cohort.push_back(
            {{"polyp_id", p.polyp_id},
             {"patient_id", p.patient_id},
             {"true_diameter_mm", p.true_diameter_mm},
             {"size_class",
              p.size_class == SizeClass::Large ? "Large" : "Small"}});
    header["cohort"] = std::move(cohort);
    json frames = json::array();
    for (const FrameSample& f : ds.frames) {
        frames.push_back(
            {{"frame_id", f.frame_id},
             {"polyp_id", f.polyp_id},
             {"patient_id", f.patient_id},
             {"env_id", f.env_id},
             {"focal_px", f.intrinsics.focal_length_px},
             {"image_w", f.intrinsics.image_width_px},
             {"image_h", f.intrinsics.image_height_px},
             {"hidden_true_z_mm", f.hidden_true_z_mm},
             {"bbox", {f.apparent_bbox.cx, f.apparent_bbox.cy,
                       f.apparent_bbox.w, f.apparent_bbox.h}},
             {"gt_bbox", {f.gt_mask_bbox.cx, f.gt_mask_bbox.cy,
                          f.gt_mask_bbox.w, f.gt_mask_bbox.h}},
             {"background_p", f.background_luminance_p}});
    }
    header["frames"] = std::move(frames);

    std::string out = header.dump();
    out.push_back('\n');
    for (const FrameSample& f : ds.frames) {
        detail::append_tensor_f32(out, f.relative_depth_map.data);
        detail::append_tensor_f32(out, f.appearance_map.data);
    }
    return out;
}

inline BBox parse_bbox4(const json& j, const std::string& what) {
    require_data(j.is_array() && j.size() == 4, what + ": expected [cx,cy,w,h]");
    BBox b;
    b.cx = j[0].get<double>();
    b.cy = j[1].get<double>();
    b.w = j[2].get<double>();
    b.h = j[3].get<double>();
    return b;
}

inline Dataset parse_dataset(const std::string& blob) {
    const size_t nl = blob.find('\n');
    require_data(nl != std::string::npos, "dataset file: missing header line");
    const json header = parse_json_text(blob.substr(0, nl), "dataset header");
    JsonReader r(header, "dataset");
    require_data(r.get<std::string>("schema") == kDatasetSchema,
                 "dataset file: unknown schema id");
    r.get<std::string>("tool_version");  // informational

    Dataset ds;
    ds.config = parse_gen_config(r.sub("generator"));
    const int mh = r.get<int>("map_height");
    const int mw = r.get<int>("map_width");
    require_data(mh == ds.config.render.map_size &&
                     mw == ds.config.render.map_size,
                 "dataset file: map shape disagrees with its config echo");

    for (const json& p : r.sub("cohort")) {
        JsonReader rp(p, "dataset.cohort[]");
        PolypInstance inst;
        inst.polyp_id = rp.get<int>("polyp_id");
        inst.patient_id = rp.get<int>("patient_id");
        inst.true_diameter_mm = rp.get<double>("true_diameter_mm");
        const std::string cls = rp.get<std::string>("size_class");
        require_data(cls == "Large" || cls == "Small",
                     "dataset.cohort[].size_class: unknown label");
        inst.size_class = cls == "Large" ? SizeClass::Large : SizeClass::Small;
        rp.done();
        inst.validate();
        ds.cohort.push_back(inst);
    }
    require_data(!ds.cohort.empty(), "dataset file: empty cohort");

    size_t off = nl + 1;
    for (const json& fj : r.sub("frames")) {
        JsonReader rf(fj, "dataset.frames[]");
        FrameSample f;
        f.frame_id = rf.get<int>("frame_id");
        f.polyp_id = rf.get<int>("polyp_id");
        f.patient_id = rf.get<int>("patient_id");
        f.env_id = rf.get<int>("env_id");
        f.intrinsics.focal_length_px = rf.get<double>("focal_px");
        f.intrinsics.image_width_px = rf.get<int>("image_w");
        f.intrinsics.image_height_px = rf.get<int>("image_h");
        f.hidden_true_z_mm = rf.get<double>("hidden_true_z_mm");
        f.apparent_bbox = parse_bbox4(rf.sub("bbox"), "dataset.frames[].bbox");
        f.gt_mask_bbox =
            parse_bbox4(rf.sub("gt_bbox"), "dataset.frames[].gt_bbox");
        f.background_luminance_p = rf.get<double>("background_p");
        rf.done();
        require_data(f.intrinsics.image_width_px == mw &&
                         f.intrinsics.image_height_px == mh,
                     "dataset file: frame image size disagrees with maps");
        require_data(f.polyp_id >= 0 &&
                         f.polyp_id < static_cast<int>(ds.cohort.size()),
                     "dataset file: frame references unknown polyp");
        const size_t px = static_cast<size_t>(mh) * mw;
        f.relative_depth_map.height = mh;
        f.relative_depth_map.width = mw;
        f.relative_depth_map.data = detail::read_tensor_f32(blob, off, px);
        f.appearance_map.height = mh;
        f.appearance_map.width = mw;
        f.appearance_map.data = detail::read_tensor_f32(blob, off, px);
        ds.frames.push_back(std::move(f));
    }
    r.done();
    require_data(off == blob.size(), "dataset file: trailing bytes");
    require_data(!ds.frames.empty(), "dataset file: no frames");
    return ds;
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
    write_text_file(path, serialize_dataset(ds));
}

inline Dataset read_dataset(const std::string& path) {
    return parse_dataset(read_text_file(path));
}

// --- report structures --------------------------------------------------------------

struct FoldResult {
    int fold = 0;
    double macro_f1 = 0.0;
    double recall_large = 0.0;
};

// One audit-table row: a (probe, plan, seed) cell with per-fold metrics and
// their mean +/- sample std.
struct SummaryRow {
    ProbeKind probe = ProbeKind::FeatureMLP;
    InterventionPlan plan;
    uint64_t seed = 0;
    std::string input_label;
    std::vector<FoldResult> per_fold;
    double macro_f1_mean = 0.0, macro_f1_std = 0.0;
    double recall_large_mean = 0.0, recall_large_std = 0.0;
};

// Shortcut-partition comparison: per-group Macro-F1 under a baseline plan
// (scale None) and its intervened twin (scale OracleFrame), averaged over all
// (seed, fold) cells.
struct PartitionRow {
    ProbeKind probe = ProbeKind::FeatureMLP;
    std::string input_label;
    std::string mask_label;
    double consistent_baseline = 0.0, inconsistent_baseline = 0.0;
    double consistent_intervened = 0.0, inconsistent_intervened = 0.0;
    double delta_consistent_pp = 0.0, delta_inconsistent_pp = 0.0;
};

struct LeakCheckResult {
    bool ran = false;
    bool passed = true;
    long n_predictions = 0;
};

struct AuditReport {
    std::string config_hash;
    json config_echo;
    int n_patients = 0, n_polyps = 0, n_small = 0, n_large = 0, n_frames = 0;
    std::vector<SummaryRow> rows;
    std::vector<PartitionRow> partitions;
    LeakCheckResult leak_check;
};

namespace detail {

inline std::string input_label(ProbeKind kind, const InterventionPlan& plan) {
    std::string out = probe_input_name(kind);
    if (plan.feature_ablation.has_value())
        out += "-" + feature_group_name(*plan.feature_ablation);
    if (plan.photometric_q.has_value())
        out += "+photo_q=" + format_double(*plan.photometric_q);
    return out;
}

// Everything the partition analysis and the leak guard need about one scored
// test frame.
struct PredictionRecord {
    int frame_id = 0;
    int fold = 0;
    double area_frac = 0.0;
    SizeClass truth = SizeClass::Small;
    SizeClass pred = SizeClass::Small;
    double score = 0.0;
};

struct CellResult {
    std::vector<FoldResult> per_fold;
    std::vector<PredictionRecord> predictions;  // fold-major, frame order
};

// Runs one (probe, plan, seed) cell over all folds: substitute masks, apply
// the scale regime (Global is re-fit per fold on its training frames), build
// the probe's input modality, train, and score the held-out fold.
inline CellResult run_cell(const Dataset& ds, const FoldSplit& folds,
                           ProbeKind kind, const InterventionPlan& plan,
                           uint64_t seed, TrainConfig tc) {
    const std::vector<FrameSample>& frames = ds.frames;
    const size_t n = frames.size();
    tc.seed = seed;  // shared across plans so paired cells share init/shuffle

    std::vector<BBox> active(n);
    std::vector<BBox> true_boxes(n);
    std::vector<double> area_frac(n);
    std::vector<int> labels(n);
    std::vector<int> envs(n);
    std::vector<SizeClass> truth(n);
    for (size_t i = 0; i < n; ++i) {
        auto rng = mask_stream(seed, frames[i].frame_id);
        active[i] = substitute_mask(frames[i], plan.mask, rng);
        true_boxes[i] = frames[i].gt_mask_bbox;
        area_frac[i] = active[i].area() /
                       (static_cast<double>(frames[i].intrinsics.image_width_px) *
                        frames[i].intrinsics.image_height_px);
        truth[i] = ds.cohort[static_cast<size_t>(frames[i].polyp_id)].size_class;
        labels[i] = truth[i] == SizeClass::Large ? 1 : 0;
        envs[i] = frames[i].env_id;
    }

    const DepthUnits units = plan.scale.is_none() ? DepthUnits::ScaleFree
                                                  : DepthUnits::Millimeters;
    const bool per_fold_factors = plan.scale.kind == ScaleRegimeKind::Global;
    // Oracle factors are anchored at the TRUE boxes: the oracle grants the
    // frame's ground-truth metric scale, which does not depend on how well
    // the perception pipeline segmented the lesion.  Mask quality gates the
    // pipeline downstream instead — every feature and CNN crop reads the
    // depth/appearance maps at the ACTIVE (possibly substituted) box, so a
    // bad mask converts oracle-metric depth at the wrong tissue into a wrong
    // physical size.  (Anchoring the oracle at the active box would make the
    // in-box median depth cancel back to the true lesion depth identically,
    // leaving the metric path immune to mask damage.)
    std::vector<double> shared_factors;
    if (!per_fold_factors)
        shared_factors = compute_scale_factors(
            frames, true_boxes, plan.scale, std::vector<bool>(n, true), seed);

    const FeatureSchema full_schema =
        make_feature_schema(plan.photometric_q.has_value());

    const auto build_features =
        [&](const std::vector<double>& factors) -> FeatureDataset {
        FeatureDataset out;
        out.schema = full_schema;
        out.labels = labels;
        out.envs = envs;
        out.rows.reserve(n);
        for (size_t i = 0; i < n; ++i)
            out.rows.push_back(extract_features(frames[i], active[i],
                                                factors[i], units,
                                                plan.photometric_q));
        if (plan.feature_ablation.has_value()) {
            for (FeatureVector& fv : out.rows)
                fv = ablate_features(fv, full_schema, *plan.feature_ablation);
            out.schema = ablate_schema(full_schema, *plan.feature_ablation);
        }
        return out;
    };
    const auto build_tensors =
        [&](const std::vector<double>& factors) -> TensorDataset {
        TensorDataset out;
        out.channels = 2;
        out.side = tc.cnn_input_side;
        out.labels = labels;
        out.envs = envs;
        out.samples.reserve(n);
        for (size_t i = 0; i < n; ++i)
            out.samples.push_back(make_cnn_input(frames[i], active[i],
                                                 factors[i], units, kind,
                                                 tc.cnn_input_side));
        return out;
    };

    FeatureDataset shared_feats;
    TensorDataset shared_tensors;
    if (!per_fold_factors) {
        if (probe_is_cnn(kind))
            shared_tensors = build_tensors(shared_factors);
        else
            shared_feats = build_features(shared_factors);
    }

    CellResult result;
    for (int f = 0; f < folds.k; ++f) {
        std::vector<bool> in_train(n);
        std::vector<int> train_idx, test_idx;
        for (size_t i = 0; i < n; ++i) {
            in_train[i] = folds.fold_of_patient(frames[i].patient_id) != f;
            (in_train[i] ? train_idx : test_idx)
                .push_back(static_cast<int>(i));
        }
        require_data(!train_idx.empty() && !test_idx.empty(),
                     "audit: fold with empty train or test side");

        std::vector<double> fold_factors;
        const FeatureDataset* feats = &shared_feats;
        const TensorDataset* tensors = &shared_tensors;
        FeatureDataset fold_feats;
        TensorDataset fold_tensors;
        if (per_fold_factors) {
            fold_factors = compute_scale_factors(frames, true_boxes,
                                                 plan.scale, in_train, seed);
            if (probe_is_cnn(kind)) {
                fold_tensors = build_tensors(fold_factors);
                tensors = &fold_tensors;
            } else {
                fold_feats = build_features(fold_factors);
                feats = &fold_feats;
            }
        }

        TrainedProbe probe;
        if (probe_is_cnn(kind)) {
            TensorDataset train_set;
            train_set.channels = tensors->channels;
            train_set.side = tensors->side;
            for (int i : train_idx) {
                train_set.samples.push_back(
                    tensors->samples[static_cast<size_t>(i)]);
                train_set.labels.push_back(labels[static_cast<size_t>(i)]);
                train_set.envs.push_back(envs[static_cast<size_t>(i)]);
            }
            probe = train_probe(kind, train_set, tc, f);
        } else {
            FeatureDataset train_set;
            train_set.schema = feats->schema;
            for (int i : train_idx) {
                train_set.rows.push_back(feats->rows[static_cast<size_t>(i)]);
                train_set.labels.push_back(labels[static_cast<size_t>(i)]);
                train_set.envs.push_back(envs[static_cast<size_t>(i)]);
            }
            probe = train_probe(kind, train_set, tc, f);
        }

        std::vector<SizeClass> y_true, y_pred;
        y_true.reserve(test_idx.size());
        y_pred.reserve(test_idx.size());
        for (int i : test_idx) {
            const Prediction p =
                probe_is_cnn(kind)
                    ? predict(probe, tensors->samples[static_cast<size_t>(i)])
                    : predict(probe, feats->rows[static_cast<size_t>(i)]);
            y_true.push_back(truth[static_cast<size_t>(i)]);
            y_pred.push_back(p.cls);
            PredictionRecord rec;
            rec.frame_id = frames[static_cast<size_t>(i)].frame_id;
            rec.fold = f;
            rec.area_frac = area_frac[static_cast<size_t>(i)];
            rec.truth = truth[static_cast<size_t>(i)];
            rec.pred = p.cls;
            rec.score = p.score;
            result.predictions.push_back(rec);
        }
        const Confusion c = confusion(y_true, y_pred);
        result.per_fold.push_back({f, macro_f1(c), recall_large(c)});
    }
    return result;
}

// Fixed-size job list executed by an optional thread pool; results go into
// slots indexed by job id, so scheduling order cannot affect output.
template <typename Body>
void run_jobs(size_t n_jobs, int workers, const Body& body) {
    if (workers <= 1 || n_jobs <= 1) {
        for (size_t i = 0; i < n_jobs; ++i) body(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    const int n_threads =
        static_cast<int>(std::min<size_t>(static_cast<size_t>(workers), n_jobs));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&]() {
            while (true) {
                const size_t i = next.fetch_add(1);
                if (i >= n_jobs) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Mean Macro-F1 within each shortcut group over all (seed, fold) cells of one
// (baseline, intervened) plan pair.
inline PartitionRow partition_compare(
    ProbeKind kind, const InterventionPlan& baseline_plan,
    const std::vector<const CellResult*>& baseline_cells,
    const std::vector<const CellResult*>& intervened_cells, int k) {
    PartitionRow row;
    row.probe = kind;
    row.input_label = input_label(kind, baseline_plan);
    row.mask_label = baseline_plan.mask.name();
    double sums[2][2] = {{0.0, 0.0}, {0.0, 0.0}};  // [condition][group]
    long counts = 0;
    for (size_t cell = 0; cell < baseline_cells.size(); ++cell) {
        const CellResult& base = *baseline_cells[cell];
        const CellResult& interv = *intervened_cells[cell];
        require_data(base.predictions.size() == interv.predictions.size(),
                     "partition: paired cells scored different frame counts");
        for (int f = 0; f < k; ++f) {
            std::vector<double> areas;
            std::vector<SizeClass> truths, base_pred, interv_pred;
            for (size_t i = 0; i < base.predictions.size(); ++i) {
                const PredictionRecord& b = base.predictions[i];
                if (b.fold != f) continue;
                const PredictionRecord& v = interv.predictions[i];
                require_data(v.frame_id == b.frame_id && v.fold == b.fold,
                             "partition: paired cells disagree on fold layout");
                areas.push_back(b.area_frac);
                truths.push_back(b.truth);
                base_pred.push_back(b.pred);
                interv_pred.push_back(v.pred);
            }
            const std::vector<FrameGroup> groups =
                shortcut_partition(areas, truths);
            for (int g = 0; g < 2; ++g) {
                const FrameGroup want =
                    g == 0 ? FrameGroup::Consistent : FrameGroup::Inconsistent;
                std::vector<SizeClass> gt, pb, pv;
                for (size_t i = 0; i < groups.size(); ++i) {
                    if (groups[i] != want) continue;
                    gt.push_back(truths[i]);
                    pb.push_back(base_pred[i]);
                    pv.push_back(interv_pred[i]);
                }
                require_data(!gt.empty(),
                             "partition: a fold produced an empty group");
                sums[0][g] += macro_f1(confusion(gt, pb));
                sums[1][g] += macro_f1(confusion(gt, pv));
            }
            counts += 1;
        }
    }
    require_data(counts > 0, "partition: no cells to compare");
    row.consistent_baseline = sums[0][0] / counts;
    row.inconsistent_baseline = sums[0][1] / counts;
    row.consistent_intervened = sums[1][0] / counts;
    row.inconsistent_intervened = sums[1][1] / counts;
    row.delta_consistent_pp =
        100.0 * (row.consistent_intervened - row.consistent_baseline);
    row.delta_inconsistent_pp =
        100.0 * (row.inconsistent_intervened - row.inconsistent_baseline);
    return row;
}

// True when two plans differ only in their scale regime, i.e. they form a
// baseline/intervened pair for the partition analysis.
inline bool plans_differ_only_in_scale(const InterventionPlan& a,
                                       const InterventionPlan& b) {
    return a.mask.kind == b.mask.kind && a.mask.param == b.mask.param &&
           a.photometric_q == b.photometric_q &&
           a.feature_ablation == b.feature_ablation;
}

}  // namespace detail

// --- the audit ------------------------------------------------------------------------

inline AuditReport run_audit(const Dataset& ds, const RunConfig& rc,
                             int workers = 1) {
    rc.validate();
    require_data(!ds.frames.empty(), "audit: dataset has no frames");
    const int n_patients = ds.config.cohort.n_patients;

    AuditReport report;
    report.config_hash = config_hash(rc);
    report.config_echo = run_config_to_json(rc);
    report.n_patients = n_patients;
    report.n_polyps = static_cast<int>(ds.cohort.size());
    report.n_frames = static_cast<int>(ds.frames.size());
    for (const PolypInstance& p : ds.cohort)
        (p.size_class == SizeClass::Large ? report.n_large : report.n_small) +=
            1;

    std::map<uint64_t, FoldSplit> folds_by_seed;
    for (uint64_t seed : rc.seeds)
        folds_by_seed.emplace(
            seed, stratified_folds(ds.cohort, n_patients, rc.folds, seed));

    struct Job {
        ProbeKind probe;
        size_t plan_index;
        uint64_t seed;
    };
    std::vector<Job> jobs;
    for (ProbeKind probe : rc.probes)
        for (size_t pi = 0; pi < rc.plans.size(); ++pi)
            for (uint64_t seed : rc.seeds) jobs.push_back({probe, pi, seed});

    std::vector<detail::CellResult> cells(jobs.size());
    detail::run_jobs(jobs.size(), workers, [&](size_t i) {
        const Job& job = jobs[i];
        cells[i] = detail::run_cell(ds, folds_by_seed.at(job.seed), job.probe,
                                    rc.plans[job.plan_index], job.seed,
                                    rc.train);
    });

    for (size_t i = 0; i < jobs.size(); ++i) {
        const Job& job = jobs[i];
        SummaryRow row;
        row.probe = job.probe;
        row.plan = rc.plans[job.plan_index];
        row.seed = job.seed;
        row.input_label = detail::input_label(job.probe, row.plan);
        row.per_fold = cells[i].per_fold;
        std::vector<double> f1s, recalls;
        for (const FoldResult& fr : row.per_fold) {
            f1s.push_back(fr.macro_f1);
            recalls.push_back(fr.recall_large);
        }
        std::tie(row.macro_f1_mean, row.macro_f1_std) = aggregate_folds(f1s);
        std::tie(row.recall_large_mean, row.recall_large_std) =
            aggregate_folds(recalls);
        report.rows.push_back(std::move(row));
    }
    std::sort(report.rows.begin(), report.rows.end(),
              [](const SummaryRow& a, const SummaryRow& b) {
                  const std::string an = probe_kind_name(a.probe);
                  const std::string bn = probe_kind_name(b.probe);
                  if (an != bn) return an < bn;
                  const std::string ap = a.plan.name();
                  const std::string bp = b.plan.name();
                  if (ap != bp) return ap < bp;
                  return a.seed < b.seed;
              });

    // Partition analysis for every None/OracleFrame plan pair that shares all
    // other dials.
    for (ProbeKind probe : rc.probes) {
        for (size_t bi = 0; bi < rc.plans.size(); ++bi) {
            if (rc.plans[bi].scale.kind != ScaleRegimeKind::None) continue;
            for (size_t vi = 0; vi < rc.plans.size(); ++vi) {
                if (rc.plans[vi].scale.kind != ScaleRegimeKind::OracleFrame)
                    continue;
                if (!detail::plans_differ_only_in_scale(rc.plans[bi],
                                                        rc.plans[vi]))
                    continue;
                if (!probe_consumes_depth(probe)) continue;
                std::vector<const detail::CellResult*> base, interv;
                for (size_t i = 0; i < jobs.size(); ++i) {
                    if (jobs[i].probe != probe) continue;
                    if (jobs[i].plan_index == bi) base.push_back(&cells[i]);
                    if (jobs[i].plan_index == vi) interv.push_back(&cells[i]);
                }
                report.partitions.push_back(detail::partition_compare(
                    probe, rc.plans[bi], base, interv, rc.folds));
            }
        }
    }

    // Leak guard: zero the hidden metric field and re-run every scale-None
    // cell; any changed prediction means non-depth code read ground truth.
    if (rc.leak_check) {
        report.leak_check.ran = true;
        Dataset blind = ds;
        for (FrameSample& f : blind.frames) f.hidden_true_z_mm = 0.0;
        std::vector<size_t> guard_jobs;
        for (size_t i = 0; i < jobs.size(); ++i)
            if (rc.plans[jobs[i].plan_index].scale.is_none())
                guard_jobs.push_back(i);
        std::vector<detail::CellResult> blind_cells(guard_jobs.size());
        detail::run_jobs(guard_jobs.size(), workers, [&](size_t gi) {
            const Job& job = jobs[guard_jobs[gi]];
            blind_cells[gi] = detail::run_cell(
                blind, folds_by_seed.at(job.seed), job.probe,
                rc.plans[job.plan_index], job.seed, rc.train);
        });
        for (size_t gi = 0; gi < guard_jobs.size(); ++gi) {
            const auto& a = cells[guard_jobs[gi]].predictions;
            const auto& b = blind_cells[gi].predictions;
            if (a.size() != b.size()) {
                report.leak_check.passed = false;
                continue;
            }
            for (size_t i = 0; i < a.size(); ++i) {
                report.leak_check.n_predictions += 1;
                if (a[i].frame_id != b[i].frame_id || a[i].pred != b[i].pred ||
                    a[i].score != b[i].score)
                    report.leak_check.passed = false;
            }
        }
    }
    return report;
}

// --- report files -----------------------------------------------------------------------

inline json report_to_json(const AuditReport& r) {
    json j;
    j["schema"] = kReportSchema;
    j["tool_version"] = kToolVersion;
    j["config_hash"] = r.config_hash;
    j["config"] = r.config_echo;
    j["dataset"] = {{"n_patients", r.n_patients},
                    {"n_polyps", r.n_polyps},
                    {"n_small", r.n_small},
                    {"n_large", r.n_large},
                    {"n_frames", r.n_frames}};
    j["rows"] = json::array();
    for (const SummaryRow& row : r.rows) {
        json per_fold = json::array();
        for (const FoldResult& fr : row.per_fold)
            per_fold.push_back({{"fold", fr.fold},
                                {"macro_f1", fr.macro_f1},
                                {"recall_large", fr.recall_large}});
        j["rows"].push_back({{"probe", probe_kind_name(row.probe)},
                             {"input", row.input_label},
                             {"scale", row.plan.scale.name()},
                             {"mask", row.plan.mask.name()},
                             {"seed", row.seed},
                             {"per_fold", std::move(per_fold)},
                             {"macro_f1_mean", row.macro_f1_mean},
                             {"macro_f1_std", row.macro_f1_std},
                             {"recall_large_mean", row.recall_large_mean},
                             {"recall_large_std", row.recall_large_std}});
    }
    j["partitions"] = json::array();
    for (const PartitionRow& p : r.partitions)
        j["partitions"].push_back(
            {{"probe", probe_kind_name(p.probe)},
             {"input", p.input_label},
             {"mask", p.mask_label},
             {"baseline_scale", "None"},
             {"intervened_scale", "OracleFrame"},
             {"consistent_baseline", p.consistent_baseline},
             {"inconsistent_baseline", p.inconsistent_baseline},
             {"consistent_intervened", p.consistent_intervened},
             {"inconsistent_intervened", p.inconsistent_intervened},
             {"delta_consistent_pp", p.delta_consistent_pp},
             {"delta_inconsistent_pp", p.delta_inconsistent_pp}});
    j["leak_check"] = {{"ran", r.leak_check.ran},
                       {"passed", r.leak_check.passed},
                       {"n_predictions", r.leak_check.n_predictions}};
    return j;
}

inline std::string report_to_csv(const AuditReport& r) {
    std::string out = "probe,input,scale,mask,seed,fold,macro_f1,recall_large\n";
    for (const SummaryRow& row : r.rows) {
        for (const FoldResult& fr : row.per_fold) {
            out += probe_kind_name(row.probe);
            out += ',' + row.input_label;
            out += ',' + row.plan.scale.name();
            out += ',' + row.plan.mask.name();
            out += ',' + std::to_string(row.seed);
            out += ',' + std::to_string(fr.fold);
            out += ',' + format_double(fr.macro_f1);
            out += ',' + format_double(fr.recall_large);
            out.push_back('\n');
        }
    }
    return out;
}

}  // namespace polyaudit
