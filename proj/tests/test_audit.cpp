#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "polyaudit/audit.hpp"
#include "polyaudit/config.hpp"
#include "polyaudit/report.hpp"
#include "polyaudit/synthgen.hpp"

using namespace polyaudit;

namespace {

// Small but non-degenerate: every fold keeps both classes with margin.
RunConfig small_run_config() {
    RunConfig rc;
    rc.gen.cohort = {8, 16, 0.45};
    rc.gen.confound.frames_per_polyp = 8;
    rc.gen.render.map_size = 32;
    rc.gen.seed = 5;
    rc.probes = {ProbeKind::FeatureMLP};
    rc.train.epochs = 4;
    rc.train.hidden_width = 16;
    InterventionPlan none;
    InterventionPlan oracle;
    oracle.scale.kind = ScaleRegimeKind::OracleFrame;
    rc.plans = {none, oracle};
    rc.folds = 4;
    rc.seeds = {3, 4};
    return rc;
}

}  // namespace

TEST(RunConfigJson, DefaultsRoundTripAndHashIsStable) {
    const RunConfig rc = small_run_config();
    const json j = run_config_to_json(rc);
    const RunConfig back = parse_run_config(j);
    EXPECT_EQ(run_config_to_json(back).dump(), j.dump());
    EXPECT_EQ(config_hash(back), config_hash(rc));
    EXPECT_EQ(config_hash(rc).size(), 16u);
}

TEST(RunConfigJson, ParsesPartialDocumentsWithDefaults) {
    const std::string text = R"({
        "generator": {"cohort": {"n_polyps": 150}},
        "probes": ["DepthCNN3", "HeuristicPhysics"],
        "plans": [{"scale": {"kind": "OracleFrame"}}],
        "seeds": [7]
    })";
    const RunConfig rc = parse_run_config_text(text);
    EXPECT_EQ(rc.gen.cohort.n_polyps, 150);
    EXPECT_EQ(rc.gen.cohort.n_patients, 100);  // default
    ASSERT_EQ(rc.probes.size(), 2u);
    EXPECT_EQ(rc.probes[1], ProbeKind::HeuristicPhysics);
    ASSERT_EQ(rc.plans.size(), 1u);
    EXPECT_EQ(rc.plans[0].scale.kind, ScaleRegimeKind::OracleFrame);
    EXPECT_EQ(rc.folds, 5);
    EXPECT_EQ(rc.seeds, std::vector<uint64_t>{7});
}

TEST(RunConfigJson, RejectsUnknownAndInvalidKeys) {
    EXPECT_THROW(parse_run_config_text(R"({"folds": 5, "bogus_key": 1})"),
                 ConfigError);
    EXPECT_THROW(
        parse_run_config_text(R"({"generator": {"cohort": {"patients": 5}}})"),
        ConfigError);  // misspelled key is named, not ignored
    EXPECT_THROW(parse_run_config_text(R"({"probes": ["NotAProbe"]})"),
                 ConfigError);
    EXPECT_THROW(parse_run_config_text(R"({"plans": []})"), ConfigError);
    EXPECT_THROW(parse_run_config_text("{]"), DataError);
    // scale params on a non-estimate regime are rejected as unknown keys
    EXPECT_THROW(
        parse_run_config_text(
            R"({"plans": [{"scale": {"kind": "None", "sigma": 1.0}}]})"),
        ConfigError);
}

TEST(RunConfigJson, CrossValidatesProbesAgainstPlans) {
    RunConfig rc = small_run_config();
    rc.probes = {ProbeKind::HeuristicApparent};  // cannot take OracleFrame
    EXPECT_THROW(rc.validate(), ConfigError);
    rc = small_run_config();
    rc.probes = {ProbeKind::HeuristicPhysics};  // cannot take None
    EXPECT_THROW(rc.validate(), ConfigError);
}

TEST(RunConfigJson, PlanRoundTripKeepsAllDials) {
    InterventionPlan p;
    p.scale.kind = ScaleRegimeKind::MetricEstimate;
    p.scale.metric_bias = 1.5;
    p.scale.metric_sigma = 2.0;
    p.mask = {MaskSourceKind::Degraded, 0.3};
    p.photometric_q = 0.5;
    p.feature_ablation = FeatureGroup::Geometric;
    const InterventionPlan back = parse_plan(plan_to_json(p));
    EXPECT_EQ(back.name(), p.name());
    EXPECT_EQ(back.scale.metric_sigma, 2.0);
    EXPECT_EQ(back.mask.param, 0.3);
    EXPECT_EQ(back.photometric_q, p.photometric_q);
    EXPECT_EQ(back.feature_ablation, p.feature_ablation);
}

TEST(DatasetFile, RoundTripIsExact) {
    GenConfig g;
    g.cohort = {4, 8, 0.4};
    g.confound.frames_per_polyp = 3;
    g.render.map_size = 32;
    g.seed = 9;
    const Dataset ds = generate_dataset(g);
    const std::string blob = serialize_dataset(ds);
    const Dataset back = parse_dataset(blob);

    ASSERT_EQ(back.cohort.size(), ds.cohort.size());
    for (size_t i = 0; i < ds.cohort.size(); ++i) {
        EXPECT_EQ(back.cohort[i].polyp_id, ds.cohort[i].polyp_id);
        EXPECT_EQ(back.cohort[i].true_diameter_mm,
                  ds.cohort[i].true_diameter_mm);
        EXPECT_EQ(back.cohort[i].size_class, ds.cohort[i].size_class);
    }
    ASSERT_EQ(back.frames.size(), ds.frames.size());
    for (size_t i = 0; i < ds.frames.size(); ++i) {
        const FrameSample& a = ds.frames[i];
        const FrameSample& b = back.frames[i];
        EXPECT_EQ(b.frame_id, a.frame_id);
        EXPECT_EQ(b.hidden_true_z_mm, a.hidden_true_z_mm);
        EXPECT_EQ(b.apparent_bbox.cx, a.apparent_bbox.cx);
        EXPECT_EQ(b.gt_mask_bbox.w, a.gt_mask_bbox.w);
        EXPECT_EQ(b.background_luminance_p, a.background_luminance_p);
        ASSERT_EQ(b.relative_depth_map.data, a.relative_depth_map.data);
        ASSERT_EQ(b.appearance_map.data, a.appearance_map.data);
    }
    // serialize(parse(.)) is byte-stable
    EXPECT_EQ(serialize_dataset(back), blob);
}

TEST(DatasetFile, RejectsCorruption) {
    GenConfig g;
    g.cohort = {3, 6, 0.4};
    g.confound.frames_per_polyp = 2;
    g.render.map_size = 32;
    const std::string blob = serialize_dataset(generate_dataset(g));
    EXPECT_THROW(parse_dataset("not a dataset"), DataError);
    EXPECT_THROW(parse_dataset(blob.substr(0, blob.size() - 3)), DataError);
    EXPECT_THROW(parse_dataset(blob + "x"), DataError);
    std::string wrong_schema = blob;
    const size_t pos = wrong_schema.find("polyaudit.dataset.v1");
    wrong_schema.replace(pos, 20, "polyaudit.dataset.v9");
    EXPECT_THROW(parse_dataset(wrong_schema), DataError);
}

TEST(Audit, ReportShapeSortingAndDeterminism) {
    const RunConfig rc = small_run_config();
    const Dataset ds = generate_dataset(rc.gen);
    const AuditReport a = run_audit(ds, rc);
    const AuditReport b = run_audit(ds, rc);

    ASSERT_EQ(a.rows.size(), 4u);  // 1 probe x 2 plans x 2 seeds
    for (const SummaryRow& row : a.rows) {
        ASSERT_EQ(row.per_fold.size(), 4u);
        for (const FoldResult& fr : row.per_fold) {
            EXPECT_GE(fr.macro_f1, 0.0);
            EXPECT_LE(fr.macro_f1, 1.0);
            EXPECT_GE(fr.recall_large, 0.0);
            EXPECT_LE(fr.recall_large, 1.0);
        }
        EXPECT_GE(row.macro_f1_std, 0.0);
        EXPECT_LE(row.macro_f1_std, 0.5);
    }
    // sorted by (probe, plan name, seed); plan "None" < "OracleFrame"
    EXPECT_EQ(a.rows[0].plan.scale.kind, ScaleRegimeKind::None);
    EXPECT_EQ(a.rows[0].seed, 3u);
    EXPECT_EQ(a.rows[1].seed, 4u);
    EXPECT_EQ(a.rows[2].plan.scale.kind, ScaleRegimeKind::OracleFrame);

    // byte-identical artifacts on rerun
    EXPECT_EQ(report_to_json(a).dump(2), report_to_json(b).dump(2));
    EXPECT_EQ(report_to_csv(a), report_to_csv(b));
    EXPECT_EQ(a.config_hash, b.config_hash);

    // the None/OracleFrame pair produces one partition comparison
    ASSERT_EQ(a.partitions.size(), 1u);
    const PartitionRow& p = a.partitions[0];
    for (double v : {p.consistent_baseline, p.inconsistent_baseline,
                     p.consistent_intervened, p.inconsistent_intervened}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_NEAR(p.delta_inconsistent_pp,
                100.0 * (p.inconsistent_intervened - p.inconsistent_baseline),
                1e-9);
}

TEST(Audit, WorkerCountDoesNotChangeOutput) {
    RunConfig rc = small_run_config();
    rc.seeds = {3};
    const Dataset ds = generate_dataset(rc.gen);
    const AuditReport serial = run_audit(ds, rc, 1);
    const AuditReport parallel = run_audit(ds, rc, 4);
    EXPECT_EQ(report_to_json(serial).dump(), report_to_json(parallel).dump());
}

TEST(Audit, LeakGuardPassesOnHonestPipeline) {
    RunConfig rc = small_run_config();
    rc.seeds = {3};
    rc.leak_check = true;
    const Dataset ds = generate_dataset(rc.gen);
    const AuditReport report = run_audit(ds, rc);
    EXPECT_TRUE(report.leak_check.ran);
    EXPECT_TRUE(report.leak_check.passed);
    EXPECT_GT(report.leak_check.n_predictions, 0);
}

TEST(Audit, HeuristicProbesAndEstimateRegimeRun) {
    RunConfig rc = small_run_config();
    rc.probes = {ProbeKind::FeatureMLP, ProbeKind::HeuristicApparent};
    InterventionPlan none;
    rc.plans = {none};
    rc.seeds = {11};
    const Dataset ds = generate_dataset(rc.gen);
    const AuditReport a = run_audit(ds, rc);
    ASSERT_EQ(a.rows.size(), 2u);
    EXPECT_TRUE(a.partitions.empty());  // no OracleFrame plan to pair with

    // physics + estimate regime in a metric-only grid
    RunConfig rp = small_run_config();
    rp.probes = {ProbeKind::HeuristicPhysics};
    InterventionPlan est;
    est.scale.kind = ScaleRegimeKind::MetricEstimate;
    est.scale.metric_sigma = 0.5;
    rp.plans = {est};
    rp.seeds = {11};
    const AuditReport b = run_audit(ds, rp);
    ASSERT_EQ(b.rows.size(), 1u);
    EXPECT_GT(b.rows[0].macro_f1_mean, 0.4);  // noisy scale, but not broken
}

TEST(ReportTable, RendersWithBaselineDeltas) {
    const RunConfig rc = small_run_config();
    const Dataset ds = generate_dataset(rc.gen);
    const AuditReport report = run_audit(ds, rc);

    LoadedReport lr;
    lr.path = "mem";
    lr.config_hash = report.config_hash;
    lr.body = report_to_json(report);
    std::string csv;
    const std::string table = render_report_table({lr}, false, &csv);
    EXPECT_NE(table.find("FeatureMLP"), std::string::npos);
    EXPECT_NE(table.find("OracleFrame"), std::string::npos);
    EXPECT_NE(table.find('+'), std::string::npos);  // a signed delta rendered
    // merged CSV carries every per-fold row plus one header line
    size_t lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    EXPECT_EQ(lines, 1u + 4u * 4u);

    LoadedReport other = lr;
    other.config_hash = "deadbeefdeadbeef";
    EXPECT_THROW(render_report_table({lr, other}, false, nullptr), DataError);
    EXPECT_NO_THROW(render_report_table({lr, other}, true, nullptr));
}

int main(int argc, char** argv) {
    ::testing::InitGoogleTest(&argc, argv);
    return RUN_ALL_TESTS();
}
