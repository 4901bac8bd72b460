#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "polyaudit/common.hpp"
#include "polyaudit/features.hpp"
#include "polyaudit/interventions.hpp"
#include "polyaudit/probes.hpp"
#include "polyaudit/rng.hpp"
#include "polyaudit/synthgen.hpp"

using namespace polyaudit;

namespace {

FrameSample flat_frame(int wh, double depth = 1.0, double lum = 1.0) {
    FrameSample f;
    f.intrinsics = {120.0, wh, wh};
    f.hidden_true_z_mm = 50.0;
    f.background_luminance_p = 1.0;
    f.relative_depth_map = Map2D(wh, wh, static_cast<float>(depth));
    f.appearance_map = Map2D(wh, wh, static_cast<float>(lum));
    f.apparent_bbox = {wh / 2.0, wh / 2.0, 50.0, 40.0};
    f.gt_mask_bbox = f.apparent_bbox;
    return f;
}

GenConfig small_config(int patients, int polyps, int fpp, uint64_t seed,
                       bool clean = false) {
    GenConfig cfg;
    cfg.cohort = {patients, polyps, 0.4};
    cfg.confound.frames_per_polyp = fpp;
    cfg.seed = seed;
    if (clean) {
        cfg.render.bbox_jitter_sigma = 0.0;
        cfg.render.depth_noise_sigma = 0.0;
    }
    return cfg;
}

std::vector<BBox> gt_anchors(const Dataset& ds) {
    std::vector<BBox> boxes;
    boxes.reserve(ds.frames.size());
    for (const FrameSample& f : ds.frames) boxes.push_back(f.gt_mask_bbox);
    return boxes;
}

FeatureDataset features_of(const Dataset& ds, DepthUnits units,
                           const std::vector<double>& factors) {
    FeatureDataset out;
    out.schema = make_feature_schema(false);
    for (size_t i = 0; i < ds.frames.size(); ++i) {
        const FrameSample& f = ds.frames[i];
        out.rows.push_back(extract_features(f, f.gt_mask_bbox,
                                            factors.empty() ? 1.0 : factors[i],
                                            units, std::nullopt));
        out.labels.push_back(
            ds.cohort[static_cast<size_t>(f.polyp_id)].size_class ==
                    SizeClass::Large
                ? 1
                : 0);
        out.envs.push_back(f.env_id);
    }
    return out;
}

}  // namespace

TEST(ExtractFeatures, AreaFractionHandCase) {
    const FrameSample f = flat_frame(512);
    const FeatureVector fv = extract_features(f, f.gt_mask_bbox, 1.0,
                                              DepthUnits::ScaleFree,
                                              std::nullopt);
    const FeatureSchema schema = make_feature_schema(false);
    ASSERT_EQ(fv.values.size(), schema.size());
    EXPECT_DOUBLE_EQ(fv.values[static_cast<size_t>(
                         schema.index_of("apparent_area_frac"))],
                     2000.0 / 262144.0);
    EXPECT_DOUBLE_EQ(
        fv.values[static_cast<size_t>(schema.index_of("bbox_aspect"))],
        50.0 / 40.0);
    // constant depth map -> zero spread inside the bbox
    EXPECT_DOUBLE_EQ(
        fv.values[static_cast<size_t>(schema.index_of("depth_std"))], 0.0);
}

TEST(ExtractFeatures, DegenerateBboxRejected) {
    const FrameSample f = flat_frame(64);
    BBox zero = f.gt_mask_bbox;
    zero.w = 0.0;
    EXPECT_THROW(extract_features(f, zero, 1.0, DepthUnits::ScaleFree,
                                  std::nullopt),
                 DataError);
}

TEST(ExtractFeatures, MaskChangesGeometryNotBackground) {
    const Dataset ds = generate_dataset(small_config(4, 8, 3, 17));
    const FrameSample& f = ds.frames[5];
    auto rng = mask_stream(17, f.frame_id);
    const BBox degraded =
        substitute_mask(f, {MaskSourceKind::Degraded, 0.3}, rng);
    EXPECT_NEAR(iou(degraded, f.gt_mask_bbox), 0.30, 0.02);

    const FeatureSchema schema = make_feature_schema(false);
    const FeatureVector a = extract_features(f, f.gt_mask_bbox, 1.0,
                                             DepthUnits::ScaleFree,
                                             std::nullopt);
    const FeatureVector b = extract_features(f, degraded, 1.0,
                                             DepthUnits::ScaleFree,
                                             std::nullopt);
    const auto at = [&](const FeatureVector& fv, const char* name) {
        return fv.values[static_cast<size_t>(schema.index_of(name))];
    };
    EXPECT_NE(at(a, "apparent_area_frac"), at(b, "apparent_area_frac"));
    // box-interior appearance statistics move with the box
    EXPECT_NE(at(a, "lum_gradient_mag"), at(b, "lum_gradient_mag"));
    // whole-scene features do not depend on the box
    EXPECT_EQ(at(a, "background_luminance"), at(b, "background_luminance"));
    EXPECT_EQ(at(a, "log_background_luminance"),
              at(b, "log_background_luminance"));
}

TEST(ExtractFeatures, ScaleFreeDepthIgnoresMapRescaling) {
    const Dataset ds = generate_dataset(small_config(3, 6, 2, 23));
    const FrameSample& f = ds.frames[1];
    FrameSample scaled = f;
    scaled.relative_depth_map =
        apply_scale(f.relative_depth_map, {4.0, ScaleGranularity::Frame});

    const FeatureSchema schema = make_feature_schema(false);
    const FeatureVector a = extract_features(f, f.gt_mask_bbox, 1.0,
                                             DepthUnits::ScaleFree,
                                             std::nullopt);
    const FeatureVector b = extract_features(scaled, f.gt_mask_bbox, 1.0,
                                             DepthUnits::ScaleFree,
                                             std::nullopt);
    for (const char* name :
         {"depth_mean", "depth_median", "depth_std", "depth_min", "depth_max",
          "depth_contrast"}) {
        const size_t i = static_cast<size_t>(schema.index_of(name));
        EXPECT_NEAR(a.values[i], b.values[i], 1e-9) << name;
    }
}

TEST(Ablation, CardinalitiesAndMembership) {
    const FeatureSchema full = make_feature_schema(true);
    const FeatureSchema no_geo = ablate_schema(full, FeatureGroup::Geometric);
    const FeatureSchema no_photo =
        ablate_schema(full, FeatureGroup::Photometric);
    EXPECT_EQ(no_geo.size(), full.count(FeatureGroup::Photometric));
    EXPECT_EQ(no_photo.size(), full.count(FeatureGroup::Geometric));
    EXPECT_GE(no_photo.index_of("apparent_area_frac"), 0);
    EXPECT_LT(no_geo.index_of("apparent_area_frac"), 0);
    const FeatureSchema none =
        ablate_schema(no_geo, FeatureGroup::Photometric);
    EXPECT_EQ(none.size(), 0u);
}

TEST(Ablation, ExhaustedSchemaFailsTraining) {
    FeatureDataset ds;
    ds.schema = FeatureSchema{};
    ds.rows.resize(4);
    ds.labels = {0, 1, 0, 1};
    ds.envs = {0, 0, 0, 0};
    EXPECT_THROW(train_probe(ProbeKind::FeatureMLP, ds, TrainConfig{}, 0),
                 DataError);
}

TEST(Train, ClassWeightsMatchPaperCounts) {
    std::vector<int> labels(147, 0);
    labels.insert(labels.end(), 85, 1);
    const auto w = detail::class_weights_from_labels(labels);
    EXPECT_NEAR(w[0], 232.0 / 294.0, 1e-15);  // 0.789...
    EXPECT_NEAR(w[1], 232.0 / 170.0, 1e-15);  // 1.365...
}

TEST(Train, SingleClassSplitRejected) {
    FeatureDataset ds;
    ds.schema = make_feature_schema(false);
    const FrameSample f = flat_frame(64);
    for (int i = 0; i < 4; ++i) {
        ds.rows.push_back(extract_features(f, f.gt_mask_bbox, 1.0,
                                           DepthUnits::ScaleFree,
                                           std::nullopt));
        ds.labels.push_back(1);
        ds.envs.push_back(0);
    }
    EXPECT_THROW(train_probe(ProbeKind::FeatureMLP, ds, TrainConfig{}, 0),
                 DataError);
}

namespace {

// four informative dims with a wide margin, plus noise dims
FeatureDataset separable_set(int n, uint64_t seed) {
    FeatureDataset ds;
    ds.schema.names = {"a", "b", "c", "d", "n1", "n2"};
    ds.schema.groups.assign(6, FeatureGroup::Geometric);
    auto rng = make_stream(seed, 0x51);
    for (int i = 0; i < n; ++i) {
        const int y = i % 2;
        const double m = y == 0 ? -1.0 : 1.0;
        FeatureVector fv;
        fv.values = {m + 0.2 * rng.normal(), m + 0.2 * rng.normal(),
                     m + 0.2 * rng.normal(), m + 0.2 * rng.normal(),
                     rng.normal(), rng.normal()};
        ds.rows.push_back(fv);
        ds.labels.push_back(y);
        ds.envs.push_back(0);
    }
    return ds;
}

double train_macro_f1(const TrainedProbe& probe, const FeatureDataset& ds) {
    std::vector<SizeClass> truth, pred;
    for (size_t i = 0; i < ds.rows.size(); ++i) {
        truth.push_back(ds.labels[i] == 1 ? SizeClass::Large
                                          : SizeClass::Small);
        pred.push_back(predict(probe, ds.rows[i]).cls);
    }
    return macro_f1(confusion(truth, pred));
}

}  // namespace

TEST(Train, SeparableToyReachesPerfectTrainingF1) {
    const FeatureDataset ds = separable_set(240, 3);
    TrainConfig cfg;
    cfg.hidden_width = 16;
    cfg.learning_rate = 3e-3;
    const TrainedProbe probe = train_probe(ProbeKind::FeatureMLP, ds, cfg, 0);
    EXPECT_DOUBLE_EQ(train_macro_f1(probe, ds), 1.0);
    ASSERT_EQ(probe.epoch_losses.size(), 30u);
    EXPECT_LT(probe.epoch_losses.back(), probe.epoch_losses.front());
}

TEST(Train, BitDeterministicUnderSeed) {
    const FeatureDataset ds = separable_set(100, 4);
    TrainConfig cfg;
    cfg.hidden_width = 16;
    cfg.epochs = 5;
    cfg.seed = 42;
    const TrainedProbe a = train_probe(ProbeKind::FeatureMLP, ds, cfg, 2);
    const TrainedProbe b = train_probe(ProbeKind::FeatureMLP, ds, cfg, 2);
    ASSERT_EQ(a.mlp.w1.size(), b.mlp.w1.size());
    for (size_t i = 0; i < a.mlp.w1.size(); ++i)
        ASSERT_EQ(a.mlp.w1[i], b.mlp.w1[i]);
    for (size_t i = 0; i < a.mlp.w3.size(); ++i)
        ASSERT_EQ(a.mlp.w3[i], b.mlp.w3[i]);
    ASSERT_EQ(a.epoch_losses, b.epoch_losses);

    // a different fold id draws a different stream
    const TrainedProbe c = train_probe(ProbeKind::FeatureMLP, ds, cfg, 3);
    bool any_diff = false;
    for (size_t i = 0; i < a.mlp.w1.size(); ++i)
        any_diff = any_diff || a.mlp.w1[i] != c.mlp.w1[i];
    EXPECT_TRUE(any_diff);
}

TEST(Predict, UntrainedMlpScoresExactlyHalf) {
    TrainedProbe probe;
    probe.kind = ProbeKind::FeatureMLP;
    probe.schema = make_feature_schema(false);
    const size_t d = probe.schema.size();
    probe.feat_mean.assign(d, 0.0);
    probe.feat_std.assign(d, 1.0);
    auto rng = make_stream(5, 0x52);
    probe.mlp.init(static_cast<int>(d), 32, rng);  // output layer stays zero

    const FrameSample f = flat_frame(64);
    const FeatureVector fv = extract_features(f, f.gt_mask_bbox, 1.0,
                                              DepthUnits::ScaleFree,
                                              std::nullopt);
    const Prediction p = predict(probe, fv);
    EXPECT_DOUBLE_EQ(p.score, 0.5);
    EXPECT_EQ(p.cls, SizeClass::Large);  // >= 0.5 convention
}

TEST(HeuristicApparent, FitsThresholdAndBreaksTiesLarge) {
    FeatureDataset ds;
    ds.schema = make_feature_schema(false);
    const int fi = ds.schema.index_of("apparent_area_frac");
    const FrameSample f = flat_frame(64);
    const FeatureVector base = extract_features(f, f.gt_mask_bbox, 1.0,
                                                DepthUnits::ScaleFree,
                                                std::nullopt);
    const std::vector<double> areas = {0.1, 0.2, 0.3, 0.4};
    const std::vector<int> labels = {0, 0, 1, 1};
    for (size_t i = 0; i < areas.size(); ++i) {
        FeatureVector fv = base;
        fv.values[static_cast<size_t>(fi)] = areas[i];
        ds.rows.push_back(fv);
        ds.labels.push_back(labels[i]);
        ds.envs.push_back(0);
    }
    const TrainedProbe probe =
        train_probe(ProbeKind::HeuristicApparent, ds, TrainConfig{}, 0);
    // several thresholds reach F1=1; the fit keeps the smallest candidate
    EXPECT_DOUBLE_EQ(probe.apparent_threshold, 0.3);

    FeatureVector tie = base;
    tie.values[static_cast<size_t>(fi)] = 0.3;
    const Prediction p = predict(probe, tie);
    EXPECT_EQ(p.cls, SizeClass::Large);
    EXPECT_DOUBLE_EQ(p.score, 1.0);
    FeatureVector below = base;
    below.values[static_cast<size_t>(fi)] = 0.299;
    EXPECT_EQ(predict(probe, below).cls, SizeClass::Small);
}

TEST(HeuristicPhysics, ExactOnCleanOracleScaledData) {
    const Dataset ds = generate_dataset(small_config(8, 16, 4, 29, true));
    const std::vector<bool> train_flags(ds.frames.size(), true);
    const std::vector<double> factors = compute_scale_factors(
        ds.frames, gt_anchors(ds), {ScaleRegimeKind::OracleFrame}, train_flags, 29);

    FeatureDataset feats = features_of(ds, DepthUnits::Millimeters, factors);
    const TrainedProbe probe =
        train_probe(ProbeKind::HeuristicPhysics, feats, TrainConfig{}, 0);
    for (size_t i = 0; i < ds.frames.size(); ++i) {
        const FrameSample& f = ds.frames[i];
        const Prediction p = predict(probe, feats.rows[i]);
        const SizeClass truth =
            ds.cohort[static_cast<size_t>(f.polyp_id)].size_class;
        ASSERT_EQ(p.cls, truth) << "frame " << f.frame_id;
        // the size estimate itself reproduces the true diameter
        const double s_hat = invert_size(feats.rows[i].aux.focal_px,
                                         feats.rows[i].aux.apparent_diameter_px,
                                         feats.rows[i].aux.depth_median_mm);
        EXPECT_NEAR(
            s_hat,
            ds.cohort[static_cast<size_t>(f.polyp_id)].true_diameter_mm,
            1e-9);
    }
}

TEST(HeuristicPhysics, RejectsScaleFreeInputs) {
    const Dataset ds = generate_dataset(small_config(3, 6, 2, 31));
    FeatureDataset feats = features_of(ds, DepthUnits::ScaleFree, {});
    EXPECT_THROW(
        train_probe(ProbeKind::HeuristicPhysics, feats, TrainConfig{}, 0),
        DataError);
}

TEST(CnnInput, CoverageChannelPreservesAreaFraction) {
    const Dataset ds = generate_dataset(small_config(3, 6, 2, 37));
    const FrameSample& f = ds.frames[0];
    const int side = 16;
    const auto x = make_cnn_input(f, f.gt_mask_bbox, 1.0,
                                  DepthUnits::ScaleFree, ProbeKind::DepthCNN3,
                                  side);
    ASSERT_EQ(x.size(), static_cast<size_t>(2) * side * side);
    const IRect rect = pixel_rect(f.gt_mask_bbox,
                                  f.intrinsics.image_width_px,
                                  f.intrinsics.image_height_px);
    const double pixel_frac =
        static_cast<double>(rect.pixels()) /
        (static_cast<double>(f.intrinsics.image_width_px) *
         f.intrinsics.image_height_px);
    double mean = 0.0;
    for (int i = 0; i < side * side; ++i)
        mean += x[static_cast<size_t>(side) * side + i];
    mean /= side * side;
    EXPECT_NEAR(mean, pixel_frac, 1e-5);
}

TEST(CnnInput, Validation) {
    const FrameSample f = flat_frame(64);
    EXPECT_THROW(make_cnn_input(f, f.gt_mask_bbox, 1.0,
                                DepthUnits::ScaleFree, ProbeKind::FeatureMLP,
                                16),
                 ConfigError);
    EXPECT_THROW(make_cnn_input(f, f.gt_mask_bbox, 1.0,
                                DepthUnits::ScaleFree, ProbeKind::DepthCNN3,
                                12),
                 ConfigError);
}

namespace {

TensorDataset tensor_set(const Dataset& ds, ProbeKind kind, int side) {
    TensorDataset out;
    out.channels = 2;
    out.side = side;
    for (const FrameSample& f : ds.frames) {
        out.samples.push_back(make_cnn_input(f, f.gt_mask_bbox, 1.0,
                                             DepthUnits::ScaleFree, kind,
                                             side));
        out.labels.push_back(
            ds.cohort[static_cast<size_t>(f.polyp_id)].size_class ==
                    SizeClass::Large
                ? 1
                : 0);
        out.envs.push_back(f.env_id);
    }
    return out;
}

}  // namespace

TEST(CnnTrain, DeterministicAndLossDecreases) {
    const Dataset ds = generate_dataset(small_config(6, 12, 3, 41));
    const TensorDataset tset = tensor_set(ds, ProbeKind::DepthCNN3, 16);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.cnn_input_side = 16;
    cfg.learning_rate = 1e-3;
    const TrainedProbe a = train_probe(ProbeKind::DepthCNN3, tset, cfg, 0);
    const TrainedProbe b = train_probe(ProbeKind::DepthCNN3, tset, cfg, 0);
    ASSERT_EQ(a.epoch_losses, b.epoch_losses);
    for (size_t i = 0; i < a.cnn.conv[0].w.size(); ++i)
        ASSERT_EQ(a.cnn.conv[0].w[i], b.cnn.conv[0].w[i]);
    EXPECT_LT(a.epoch_losses.back(), a.epoch_losses.front());

    const Prediction pa = predict(a, tset.samples[0]);
    const Prediction pb = predict(b, tset.samples[0]);
    EXPECT_EQ(pa.score, pb.score);
}

TEST(CnnTrain, SideMismatchRejected) {
    const Dataset ds = generate_dataset(small_config(3, 6, 2, 43));
    const TensorDataset tset = tensor_set(ds, ProbeKind::DepthCNN3, 16);
    TrainConfig cfg;
    cfg.cnn_input_side = 24;
    EXPECT_THROW(train_probe(ProbeKind::DepthCNN3, tset, cfg, 0), ConfigError);
    EXPECT_THROW(train_probe(ProbeKind::FeatureMLP, tset, cfg, 0),
                 ConfigError);
}

TEST(Predict, SchemaMismatchRejected) {
    const FeatureDataset ds = separable_set(50, 6);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.hidden_width = 8;
    const TrainedProbe mlp = train_probe(ProbeKind::FeatureMLP, ds, cfg, 0);
    FeatureVector wrong;
    wrong.values = {1.0, 2.0};
    EXPECT_THROW(predict(mlp, wrong), DataError);
    EXPECT_THROW(predict(mlp, std::vector<float>(512, 0.0f)), DataError);
}

TEST(Serialization, MlpRoundTripKeepsPredictions) {
    const FeatureDataset ds = separable_set(80, 7);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.hidden_width = 16;
    const TrainedProbe probe = train_probe(ProbeKind::FeatureMLP, ds, cfg, 1);
    const std::string blob = serialize_probe(probe);
    const TrainedProbe back = parse_probe(blob);
    EXPECT_EQ(back.kind, ProbeKind::FeatureMLP);
    EXPECT_EQ(back.fold, 1);
    EXPECT_EQ(back.config.epochs, 3);
    for (size_t i = 0; i < ds.rows.size(); ++i)
        EXPECT_EQ(predict(probe, ds.rows[i]).score,
                  predict(back, ds.rows[i]).score);
}

TEST(Serialization, CnnAndHeuristicRoundTrip) {
    const Dataset ds = generate_dataset(small_config(4, 8, 2, 47));
    const TensorDataset tset = tensor_set(ds, ProbeKind::AppearanceCNN, 8);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.cnn_input_side = 8;
    const TrainedProbe cnn = train_probe(ProbeKind::AppearanceCNN, tset, cfg, 0);
    const TrainedProbe cnn2 = parse_probe(serialize_probe(cnn));
    for (int i = 0; i < 5; ++i)
        EXPECT_EQ(predict(cnn, tset.samples[static_cast<size_t>(i)]).score,
                  predict(cnn2, tset.samples[static_cast<size_t>(i)]).score);

    FeatureDataset feats = features_of(ds, DepthUnits::ScaleFree, {});
    const TrainedProbe heur =
        train_probe(ProbeKind::HeuristicApparent, feats, TrainConfig{}, 2);
    const TrainedProbe heur2 = parse_probe(serialize_probe(heur));
    EXPECT_EQ(heur2.apparent_threshold, heur.apparent_threshold);
    EXPECT_EQ(heur2.fold, 2);
}

TEST(Serialization, RejectsCorruptBlobs) {
    EXPECT_THROW(parse_probe("no newline at all"), DataError);
    EXPECT_THROW(parse_probe("{\"schema\":\"bogus.v9\"}\n"), DataError);
    const FeatureDataset ds = separable_set(50, 8);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.hidden_width = 8;
    const TrainedProbe probe = train_probe(ProbeKind::FeatureMLP, ds, cfg, 0);
    std::string blob = serialize_probe(probe);
    blob.resize(blob.size() - 5);  // truncate tensor payload
    EXPECT_THROW(parse_probe(blob), DataError);
}

TEST(GradientCheckDispatch, MlpInstanceAndHeuristicRejection) {
    EXPECT_LE(gradient_check(ProbeKind::FeatureMLP, 4, 1e-5), 1e-5);
    EXPECT_THROW(gradient_check(ProbeKind::HeuristicApparent, 4, 1e-5),
                 ConfigError);
}

int main(int argc, char** argv) {
    ::testing::InitGoogleTest(&argc, argv);
    return RUN_ALL_TESTS();
}
