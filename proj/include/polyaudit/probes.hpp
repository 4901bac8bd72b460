#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyaudit/common.hpp"
#include "polyaudit/evaluation.hpp"
#include "polyaudit/features.hpp"
#include "polyaudit/image.hpp"
#include "polyaudit/json_util.hpp"
#include "polyaudit/nn.hpp"
#include "polyaudit/rng.hpp"
#include "polyaudit/synthgen.hpp"

namespace polyaudit {

// The probe zoo: each classifier is restricted to a single input modality so
// the audit can attribute performance to specific cues.
//   FeatureMLP        handcrafted features -> small MLP
//   DepthCNN3         masked depth map -> three-block CNN
//   AppearanceCNN     masked luminance map -> same architecture
//   HeuristicApparent one threshold on apparent area fraction
//   HeuristicPhysics  S_hat = A * Z_hat / f against the 5 mm boundary
// All trainable probes share one recipe: decoupled-weight-decay adaptive
// moments, cosine-annealed step size, class-weighted cross-entropy, optional
// environment-variance penalty.

enum class ProbeKind {
    FeatureMLP,
    DepthCNN3,
    AppearanceCNN,
    HeuristicApparent,
    HeuristicPhysics,
};

inline const char* probe_kind_name(ProbeKind k) {
    switch (k) {
        case ProbeKind::FeatureMLP: return "FeatureMLP";
        case ProbeKind::DepthCNN3: return "DepthCNN3";
        case ProbeKind::AppearanceCNN: return "AppearanceCNN";
        case ProbeKind::HeuristicApparent: return "HeuristicApparent";
        case ProbeKind::HeuristicPhysics: return "HeuristicPhysics";
    }
    throw ConfigError("unknown probe kind");
}

inline ProbeKind probe_kind_from_name(const std::string& name) {
    for (ProbeKind k :
         {ProbeKind::FeatureMLP, ProbeKind::DepthCNN3, ProbeKind::AppearanceCNN,
          ProbeKind::HeuristicApparent, ProbeKind::HeuristicPhysics})
        if (name == probe_kind_name(k)) return k;
    throw ConfigError("unknown probe kind: " + name);
}

// Input modality, reported in the audit table's "input" column.
inline const char* probe_input_name(ProbeKind k) {
    switch (k) {
        case ProbeKind::FeatureMLP: return "features";
        case ProbeKind::DepthCNN3: return "depth";
        case ProbeKind::AppearanceCNN: return "appearance";
        case ProbeKind::HeuristicApparent: return "bbox";
        case ProbeKind::HeuristicPhysics: return "depth+bbox";
    }
    throw ConfigError("unknown probe kind");
}

inline bool probe_is_cnn(ProbeKind k) {
    return k == ProbeKind::DepthCNN3 || k == ProbeKind::AppearanceCNN;
}

inline bool probe_consumes_depth(ProbeKind k) {
    return k == ProbeKind::FeatureMLP || k == ProbeKind::DepthCNN3 ||
           k == ProbeKind::HeuristicPhysics;
}

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    int epochs = 30;
    int batch_size = 64;
    double vrex_beta = 0.0;
    int hidden_width = 64;   // MLP hidden layers
    int cnn_input_side = 64; // CNN input after area resize
    uint64_t seed = 1;

    void validate() const {
        require_config(learning_rate > 0.0, "train.learning_rate must be > 0");
        require_config(weight_decay >= 0.0, "train.weight_decay must be >= 0");
        require_config(epochs >= 1, "train.epochs must be >= 1");
        require_config(batch_size >= 1, "train.batch_size must be >= 1");
        require_config(vrex_beta >= 0.0, "train.vrex_beta must be >= 0");
        require_config(hidden_width >= 1, "train.hidden_width must be >= 1");
        require_config(cnn_input_side >= 8 && cnn_input_side % 8 == 0,
                       "train.cnn_input_side must be a positive multiple of 8");
    }
};

// --- training inputs -----------------------------------------------------------

struct FeatureDataset {
    FeatureSchema schema;
    std::vector<FeatureVector> rows;
    std::vector<int> labels;  // 0 = Small, 1 = Large
    std::vector<int> envs;

    void validate() const {
        require_data(rows.size() == labels.size() && rows.size() == envs.size(),
                     "feature dataset: column length mismatch");
        for (const FeatureVector& fv : rows)
            require_data(fv.values.size() == schema.size(),
                         "feature dataset: row width does not match schema");
    }
};

struct TensorDataset {
    int channels = 0;
    int side = 0;
    std::vector<std::vector<float>> samples;  // each [channels][side][side]
    std::vector<int> labels;
    std::vector<int> envs;

    void validate() const {
        require_data(samples.size() == labels.size() &&
                         samples.size() == envs.size(),
                     "tensor dataset: column length mismatch");
        const size_t expect = static_cast<size_t>(channels) * side * side;
        for (const auto& s : samples)
            require_data(s.size() == expect,
                         "tensor dataset: sample size does not match shape");
    }
};

// Builds the 2-channel CNN input for one frame: channel 0 is the map value
// inside the active bbox (zero outside), channel 1 is the coverage mask.
// The full-frame masked map is resized as a whole by an area filter, so the
// bbox-to-image area ratio survives into the tensor.  Depth values enter as
// normalized log depth (scale-free: minus the median log depth inside the
// active bbox, so the reference moves with the pipeline's own localization
// instead of leaking frame-wide extent; metric: plus log(factor/reference));
// luminance enters as log luminance.
inline std::vector<float> make_cnn_input(const FrameSample& frame,
                                         const BBox& active_bbox,
                                         double depth_scale_factor,
                                         DepthUnits units, ProbeKind kind,
                                         int side) {
    require_config(probe_is_cnn(kind), "make_cnn_input: not a CNN probe");
    require_config(side >= 8 && side % 8 == 0,
                   "make_cnn_input: side must be a positive multiple of 8");
    const int W = frame.intrinsics.image_width_px;
    const int H = frame.intrinsics.image_height_px;
    const IRect rect = pixel_rect(active_bbox, W, H);
    require_data(!rect.empty(), "make_cnn_input: bbox covers no pixels");

    const Map2D& src = kind == ProbeKind::DepthCNN3 ? frame.relative_depth_map
                                                    : frame.appearance_map;
    double offset = 0.0;
    if (kind == ProbeKind::DepthCNN3) {
        require_data(depth_scale_factor > 0.0,
                     "make_cnn_input: depth scale factor must be positive");
        if (units == DepthUnits::Millimeters) {
            offset = std::log(depth_scale_factor / kReferenceDepthMm);
        } else {
            std::vector<double> logs;
            logs.reserve(static_cast<size_t>(rect.pixels()));
            for (int y = rect.y0; y < rect.y1; ++y)
                for (int x = rect.x0; x < rect.x1; ++x) {
                    const float v = src.at(y, x);
                    require_data(v > 0.0f,
                                 "make_cnn_input: non-positive depth");
                    logs.push_back(std::log(static_cast<double>(v)));
                }
            offset = -lower_median(logs);
        }
    }

    Map2D value(H, W);
    Map2D cover(H, W);
    for (int y = rect.y0; y < rect.y1; ++y)
        for (int x = rect.x0; x < rect.x1; ++x) {
            const float v = src.at(y, x);
            require_data(v > 0.0f, "make_cnn_input: non-positive map value");
            value.at(y, x) = static_cast<float>(
                std::log(static_cast<double>(v)) + offset);
            cover.at(y, x) = 1.0f;
        }
    const Map2D value_r = resize_area(value, side, side);
    const Map2D cover_r = resize_area(cover, side, side);

    std::vector<float> out(static_cast<size_t>(2) * side * side);
    std::copy(value_r.data.begin(), value_r.data.end(), out.begin());
    std::copy(cover_r.data.begin(), cover_r.data.end(),
              out.begin() + static_cast<size_t>(side) * side);
    for (float v : out) require_finite(v, "cnn input value");
    return out;
}

// --- the trained artifact --------------------------------------------------------

struct Prediction {
    SizeClass cls = SizeClass::Small;
    double score = 0.0;  // probability of Large for nets, {0,1} for heuristics
};

struct TrainedProbe {
    ProbeKind kind = ProbeKind::FeatureMLP;
    TrainConfig config;
    int fold = -1;

    // FeatureMLP / heuristics
    FeatureSchema schema;
    std::vector<double> feat_mean, feat_std;
    nn::MlpModel<float> mlp;

    // CNNs
    nn::Cnn3Model<float> cnn;

    // HeuristicApparent
    double apparent_threshold = 0.0;

    // mean training objective per epoch, for the loss-decrease checks
    std::vector<double> epoch_losses;
};

namespace detail {

inline std::vector<double> class_weights_from_labels(
    const std::vector<int>& labels) {
    long n0 = 0, n1 = 0;
    for (int l : labels) {
        require_data(l == 0 || l == 1, "train: labels must be binary");
        (l == 1 ? n1 : n0) += 1;
    }
    require_data(n0 >= 1 && n1 >= 1, "train: split must contain both classes");
    const double n = static_cast<double>(n0 + n1);
    return {n / (2.0 * n0), n / (2.0 * n1)};
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// One epoch-driving loop shared by both network probes.  batch_input(indices)
// must return the stacked forward input for those samples.
template <typename Model, typename BatchInput>
std::vector<double> run_training(Model& model, int n_samples,
                                 const std::vector<int>& labels,
                                 const std::vector<int>& envs,
                                 const std::vector<double>& class_weights,
                                 const TrainConfig& cfg, RngStream& rng,
                                 const BatchInput& batch_input) {
    Model grads = model.zeros_like();
    auto params = model.param_views();
    auto gviews = grads.param_views();
    size_t n_params = 0;
    for (const auto* p : params) n_params += p->size();
    nn::AdamW<float> opt(n_params);

    std::vector<int> perm(static_cast<size_t>(n_samples));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<double> epoch_losses;
    epoch_losses.reserve(static_cast<size_t>(cfg.epochs));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = nn::cosine_lr(cfg.learning_rate, epoch, cfg.epochs);
        rng.shuffle(perm);
        double loss_sum = 0.0;
        for (int start = 0; start < n_samples; start += cfg.batch_size) {
            const int stop = std::min(start + cfg.batch_size, n_samples);
            const int B = stop - start;
            std::vector<int> batch(perm.begin() + start, perm.begin() + stop);
            const std::vector<float> X = batch_input(batch);
            std::vector<int> by(static_cast<size_t>(B));
            std::vector<int> be(static_cast<size_t>(B));
            for (int i = 0; i < B; ++i) {
                by[static_cast<size_t>(i)] = labels[static_cast<size_t>(batch[static_cast<size_t>(i)])];
                be[static_cast<size_t>(i)] = envs[static_cast<size_t>(batch[static_cast<size_t>(i)])];
            }
            typename Model::Cache cache;
            const std::vector<float> logits = model.forward(X, B, &cache);
            const nn::LossResult<float> lres = nn::weighted_ce_loss<float>(
                logits, by, class_weights, be, cfg.vrex_beta);
            for (auto* g : gviews) g->assign(g->size(), 0.0f);
            model.backward(cache, lres.dlogits, grads);
            opt.step(params, gviews, lr, cfg.weight_decay);
            loss_sum += lres.loss * B;
        }
        epoch_losses.push_back(loss_sum / n_samples);
    }
    return epoch_losses;
}

}  // namespace detail

// --- training -----------------------------------------------------------------------

// FeatureMLP and the two heuristics train from a FeatureDataset.
inline TrainedProbe train_probe(ProbeKind kind, const FeatureDataset& ds,
                                const TrainConfig& cfg, int fold) {
    cfg.validate();
    ds.validate();
    require_config(!probe_is_cnn(kind),
                   "train_probe: CNN probes take a tensor dataset");
    require_data(!ds.rows.empty(), "train_probe: empty split");
    const std::vector<double> weights =
        detail::class_weights_from_labels(ds.labels);

    TrainedProbe probe;
    probe.kind = kind;
    probe.config = cfg;
    probe.fold = fold;
    probe.schema = ds.schema;

    if (kind == ProbeKind::HeuristicApparent) {
        const int fi = ds.schema.index_of("apparent_area_frac");
        require_data(fi >= 0,
                     "train_probe: schema lacks apparent_area_frac");
        // candidate cut points: every observed value plus one above the max,
        // rule x >= theta -> Large; ties in Macro-F1 keep the smallest theta
        std::vector<double> cand;
        cand.reserve(ds.rows.size() + 1);
        for (const FeatureVector& fv : ds.rows)
            cand.push_back(fv.values[static_cast<size_t>(fi)]);
        cand.push_back(*std::max_element(cand.begin(), cand.end()) + 1.0);
        std::sort(cand.begin(), cand.end());
        cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

        std::vector<SizeClass> truth(ds.rows.size());
        for (size_t i = 0; i < ds.rows.size(); ++i)
            truth[i] = ds.labels[i] == 1 ? SizeClass::Large : SizeClass::Small;
        double best_f1 = -1.0, best_theta = cand.front();
        std::vector<SizeClass> pred(ds.rows.size());
        for (double theta : cand) {
            for (size_t i = 0; i < ds.rows.size(); ++i)
                pred[i] = ds.rows[i].values[static_cast<size_t>(fi)] >= theta
                              ? SizeClass::Large
                              : SizeClass::Small;
            const double f1 = macro_f1(confusion(truth, pred));
            if (f1 > best_f1 + 1e-12) {
                best_f1 = f1;
                best_theta = theta;
            }
        }
        probe.apparent_threshold = best_theta;
        return probe;
    }

    if (kind == ProbeKind::HeuristicPhysics) {
        // nothing to fit: the rule is S_hat > 5 mm; verify the inputs carry
        // the metric side channel it needs
        for (const FeatureVector& fv : ds.rows)
            require_data(std::isfinite(fv.aux.depth_median_mm),
                         "train_probe: physics heuristic requires metric "
                         "depth (non-None scale regime)");
        return probe;
    }

    // FeatureMLP
    require_data(ds.schema.size() >= 1, "train_probe: empty feature schema");
    const int d = static_cast<int>(ds.schema.size());
    const int n = static_cast<int>(ds.rows.size());
    probe.feat_mean.assign(static_cast<size_t>(d), 0.0);
    probe.feat_std.assign(static_cast<size_t>(d), 0.0);
    for (const FeatureVector& fv : ds.rows)
        for (int j = 0; j < d; ++j)
            probe.feat_mean[static_cast<size_t>(j)] += fv.values[static_cast<size_t>(j)];
    for (int j = 0; j < d; ++j) probe.feat_mean[static_cast<size_t>(j)] /= n;
    for (const FeatureVector& fv : ds.rows)
        for (int j = 0; j < d; ++j) {
            const double c = fv.values[static_cast<size_t>(j)] -
                             probe.feat_mean[static_cast<size_t>(j)];
            probe.feat_std[static_cast<size_t>(j)] += c * c;
        }
    for (int j = 0; j < d; ++j) {
        probe.feat_std[static_cast<size_t>(j)] =
            std::sqrt(probe.feat_std[static_cast<size_t>(j)] / n);
        if (probe.feat_std[static_cast<size_t>(j)] == 0.0)
            probe.feat_std[static_cast<size_t>(j)] = 1.0;  // constant feature
    }
    std::vector<float> Xall(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            Xall[static_cast<size_t>(i) * d + j] = static_cast<float>(
                (ds.rows[static_cast<size_t>(i)].values[static_cast<size_t>(j)] -
                 probe.feat_mean[static_cast<size_t>(j)]) /
                probe.feat_std[static_cast<size_t>(j)]);

    auto rng = make_stream(cfg.seed, stream_tag::kTrain,
                           static_cast<uint64_t>(kind), static_cast<uint64_t>(fold + 1));
    probe.mlp.init(d, cfg.hidden_width, rng);
    probe.epoch_losses = detail::run_training(
        probe.mlp, n, ds.labels, ds.envs, weights, cfg, rng,
        [&](const std::vector<int>& batch) {
            std::vector<float> X(batch.size() * static_cast<size_t>(d));
            for (size_t i = 0; i < batch.size(); ++i)
                std::copy_n(Xall.begin() +
                                static_cast<size_t>(batch[i]) * d,
                            d, X.begin() + i * static_cast<size_t>(d));
            return X;
        });
    return probe;
}

// DepthCNN3 and AppearanceCNN train from a TensorDataset.
inline TrainedProbe train_probe(ProbeKind kind, const TensorDataset& ds,
                                const TrainConfig& cfg, int fold) {
    cfg.validate();
    ds.validate();
    require_config(probe_is_cnn(kind),
                   "train_probe: feature probes take a feature dataset");
    require_data(!ds.samples.empty(), "train_probe: empty split");
    require_config(ds.side == cfg.cnn_input_side,
                   "train_probe: tensor side does not match cnn_input_side");
    const std::vector<double> weights =
        detail::class_weights_from_labels(ds.labels);

    TrainedProbe probe;
    probe.kind = kind;
    probe.config = cfg;
    probe.fold = fold;

    auto rng = make_stream(cfg.seed, stream_tag::kTrain,
                           static_cast<uint64_t>(kind), static_cast<uint64_t>(fold + 1));
    probe.cnn.init(ds.channels, ds.side, rng);
    const int n = static_cast<int>(ds.samples.size());
    const size_t plane = static_cast<size_t>(ds.side) * ds.side;
    probe.epoch_losses = detail::run_training(
        probe.cnn, n, ds.labels, ds.envs, weights, cfg, rng,
        [&](const std::vector<int>& batch) {
            // gather into the channel-major batch layout [C][B][S][S]
            const size_t B = batch.size();
            std::vector<float> X(static_cast<size_t>(ds.channels) * B * plane);
            for (int c = 0; c < ds.channels; ++c)
                for (size_t b = 0; b < B; ++b)
                    std::copy_n(ds.samples[static_cast<size_t>(batch[b])].begin() +
                                    static_cast<size_t>(c) * plane,
                                plane,
                                X.begin() + (static_cast<size_t>(c) * B + b) * plane);
            return X;
        });
    return probe;
}

// --- prediction ----------------------------------------------------------------------

inline Prediction prediction_from_score(double score) {
    Prediction p;
    p.score = score;
    p.cls = score >= 0.5 ? SizeClass::Large : SizeClass::Small;
    return p;
}

inline Prediction predict(const TrainedProbe& probe, const FeatureVector& fv) {
    switch (probe.kind) {
        case ProbeKind::FeatureMLP: {
            require_data(fv.values.size() == probe.schema.size(),
                         "predict: feature width does not match probe schema");
            const int d = static_cast<int>(probe.schema.size());
            std::vector<float> x(static_cast<size_t>(d));
            for (int j = 0; j < d; ++j)
                x[static_cast<size_t>(j)] = static_cast<float>(
                    (fv.values[static_cast<size_t>(j)] -
                     probe.feat_mean[static_cast<size_t>(j)]) /
                    probe.feat_std[static_cast<size_t>(j)]);
            const std::vector<float> logits = probe.mlp.forward(x, 1, nullptr);
            return prediction_from_score(detail::stable_sigmoid(
                static_cast<double>(logits[1]) - static_cast<double>(logits[0])));
        }
        case ProbeKind::HeuristicApparent: {
            const int fi = probe.schema.index_of("apparent_area_frac");
            require_data(fi >= 0,
                         "predict: schema lacks apparent_area_frac");
            require_data(fv.values.size() == probe.schema.size(),
                         "predict: feature width does not match probe schema");
            const bool large =
                fv.values[static_cast<size_t>(fi)] >= probe.apparent_threshold;
            return prediction_from_score(large ? 1.0 : 0.0);
        }
        case ProbeKind::HeuristicPhysics: {
            require_data(std::isfinite(fv.aux.depth_median_mm) &&
                             fv.aux.depth_median_mm > 0.0,
                         "predict: physics heuristic requires metric depth");
            require_data(fv.aux.focal_px > 0.0,
                         "predict: physics heuristic requires focal length");
            const double s_hat = invert_size(fv.aux.focal_px,
                                             fv.aux.apparent_diameter_px,
                                             fv.aux.depth_median_mm);
            return prediction_from_score(s_hat > kSizeThresholdMm ? 1.0 : 0.0);
        }
        default:
            throw DataError("predict: probe expects a map tensor, not features");
    }
}

inline Prediction predict(const TrainedProbe& probe,
                          const std::vector<float>& tensor) {
    require_data(probe_is_cnn(probe.kind),
                 "predict: probe expects features, not a map tensor");
    const size_t expect = static_cast<size_t>(probe.cnn.in_channels) *
                          probe.cnn.input_side * probe.cnn.input_side;
    require_data(tensor.size() == expect,
                 "predict: tensor shape does not match probe input");
    const std::vector<float> logits = probe.cnn.forward(tensor, 1, nullptr);
    return prediction_from_score(detail::stable_sigmoid(
        static_cast<double>(logits[1]) - static_cast<double>(logits[0])));
}

// --- gradient verification entry point -------------------------------------------

// Builds a small double-precision instance of the requested network and
// compares analytic gradients against central finite differences.
inline double gradient_check(ProbeKind kind, int batch_size, double epsilon,
                             uint64_t seed = 7) {
    require_config(batch_size >= 1, "gradient_check: batch_size must be >= 1");
    auto rng = make_stream(seed, stream_tag::kTrain, 0xabcd);
    std::vector<int> labels(static_cast<size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) labels[static_cast<size_t>(i)] = i % 2;
    const std::vector<double> weights = {0.8, 1.3};
    if (kind == ProbeKind::FeatureMLP) {
        nn::MlpModel<double> mlp;
        mlp.init(8, 16, rng);
        for (double& v : mlp.w3) v = rng.normal(0.0, 0.3);
        for (double& v : mlp.b3) v = rng.normal(0.0, 0.3);
        std::vector<double> X(static_cast<size_t>(batch_size) * 8);
        for (double& v : X) v = rng.normal();
        return nn::gradient_check(mlp, X, batch_size, labels, weights, {}, 0.0,
                                  epsilon);
    }
    if (probe_is_cnn(kind)) {
        nn::Cnn3Model<double> cnn;
        cnn.init(2, 16, rng);
        for (double& v : cnn.wh) v = rng.normal(0.0, 0.3);
        for (double& v : cnn.bh) v = rng.normal(0.0, 0.3);
        std::vector<double> X(static_cast<size_t>(2) * batch_size * 16 * 16);
        for (double& v : X) v = rng.normal();
        return nn::gradient_check(cnn, X, batch_size, labels, weights, {}, 0.0,
                                  epsilon);
    }
    throw ConfigError("gradient_check: heuristic probes have no gradients");
}

// --- serialization ----------------------------------------------------------------------

inline constexpr const char* kProbeSchema = "polyaudit.probe.v1";

namespace detail {

inline void append_tensor_f32(std::string& out, const std::vector<float>& v) {
    for (float f : v) {
        uint32_t bits;
        static_assert(sizeof(bits) == sizeof(f));
        std::memcpy(&bits, &f, sizeof(bits));
        for (int b = 0; b < 4; ++b)
            out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
}

inline std::vector<float> read_tensor_f32(const std::string& blob,
                                          size_t& off, size_t count) {
    require_data(off + 4 * count <= blob.size(),
                 "probe blob: truncated tensor payload");
    std::vector<float> v(count);
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<uint32_t>(
                        static_cast<unsigned char>(blob[off + 4 * i + b]))
                    << (8 * b);
        std::memcpy(&v[i], &bits, sizeof(bits));
    }
    off += 4 * count;
    return v;
}

inline std::vector<const std::vector<float>*> probe_tensors(
    const TrainedProbe& p) {
    if (p.kind == ProbeKind::FeatureMLP)
        return {&p.mlp.w1, &p.mlp.b1, &p.mlp.w2,
                &p.mlp.b2, &p.mlp.w3, &p.mlp.b3};
    if (probe_is_cnn(p.kind))
        return {&p.cnn.conv[0].w, &p.cnn.conv[0].b, &p.cnn.conv[1].w,
                &p.cnn.conv[1].b, &p.cnn.conv[2].w, &p.cnn.conv[2].b,
                &p.cnn.wh,        &p.cnn.bh};
    return {};
}

}  // namespace detail

inline std::string serialize_probe(const TrainedProbe& probe) {
    json header;
    header["schema"] = kProbeSchema;
    header["kind"] = probe_kind_name(probe.kind);
    header["fold"] = probe.fold;
    header["config"] = {{"learning_rate", probe.config.learning_rate},
                        {"weight_decay", probe.config.weight_decay},
                        {"epochs", probe.config.epochs},
                        {"batch_size", probe.config.batch_size},
                        {"vrex_beta", probe.config.vrex_beta},
                        {"hidden_width", probe.config.hidden_width},
                        {"cnn_input_side", probe.config.cnn_input_side},
                        {"seed", probe.config.seed}};
    header["feature_names"] = probe.schema.names;
    std::vector<std::string> groups;
    for (FeatureGroup g : probe.schema.groups)
        groups.push_back(feature_group_name(g));
    header["feature_groups"] = groups;
    header["feat_mean"] = probe.feat_mean;
    header["feat_std"] = probe.feat_std;
    header["apparent_threshold"] = probe.apparent_threshold;
    header["epoch_losses"] = probe.epoch_losses;
    if (probe_is_cnn(probe.kind)) {
        header["cnn_channels"] = probe.cnn.in_channels;
        header["cnn_side"] = probe.cnn.input_side;
    }
    std::vector<size_t> dims;
    for (const auto* t : detail::probe_tensors(probe)) dims.push_back(t->size());
    header["tensor_sizes"] = dims;

    std::string out = header.dump();
    out.push_back('\n');
    for (const auto* t : detail::probe_tensors(probe))
        detail::append_tensor_f32(out, *t);
    return out;
}

inline TrainedProbe parse_probe(const std::string& blob) {
    const size_t nl = blob.find('\n');
    require_data(nl != std::string::npos, "probe blob: missing header line");
    const json header = parse_json_text(blob.substr(0, nl), "probe blob");
    JsonReader r(header, "probe");
    require_data(r.get<std::string>("schema") == kProbeSchema,
                 "probe blob: unknown schema id");

    TrainedProbe p;
    p.kind = probe_kind_from_name(r.get<std::string>("kind"));
    p.fold = r.get<int>("fold");
    {
        JsonReader c(r.sub("config"), "probe.config");
        p.config.learning_rate = c.get<double>("learning_rate");
        p.config.weight_decay = c.get<double>("weight_decay");
        p.config.epochs = c.get<int>("epochs");
        p.config.batch_size = c.get<int>("batch_size");
        p.config.vrex_beta = c.get<double>("vrex_beta");
        p.config.hidden_width = c.get<int>("hidden_width");
        p.config.cnn_input_side = c.get<int>("cnn_input_side");
        p.config.seed = c.get<uint64_t>("seed");
        c.done();
    }
    p.schema.names = r.get<std::vector<std::string>>("feature_names");
    for (const std::string& g :
         r.get<std::vector<std::string>>("feature_groups"))
        p.schema.groups.push_back(feature_group_from_name(g));
    require_data(p.schema.names.size() == p.schema.groups.size(),
                 "probe blob: schema name/group length mismatch");
    p.feat_mean = r.get<std::vector<double>>("feat_mean");
    p.feat_std = r.get<std::vector<double>>("feat_std");
    p.apparent_threshold = r.get<double>("apparent_threshold");
    p.epoch_losses = r.get<std::vector<double>>("epoch_losses");

    const auto sizes = r.get<std::vector<size_t>>("tensor_sizes");
    size_t off = nl + 1;
    if (p.kind == ProbeKind::FeatureMLP) {
        const int d = static_cast<int>(p.schema.size());
        require_data(d >= 1, "probe blob: empty schema for FeatureMLP");
        auto init_rng = make_stream(0, 0);
        p.mlp.init(d, p.config.hidden_width, init_rng);  // shapes only
        std::vector<std::vector<float>*> views = p.mlp.param_views();
        require_data(sizes.size() == views.size(),
                     "probe blob: tensor count mismatch");
        for (size_t i = 0; i < views.size(); ++i) {
            require_data(sizes[i] == views[i]->size(),
                         "probe blob: tensor size mismatch");
            *views[i] = detail::read_tensor_f32(blob, off, sizes[i]);
        }
    } else if (probe_is_cnn(p.kind)) {
        const int ch = r.get<int>("cnn_channels");
        const int side = r.get<int>("cnn_side");
        auto init_rng = make_stream(0, 0);
        p.cnn.init(ch, side, init_rng);  // shapes only
        std::vector<std::vector<float>*> views = p.cnn.param_views();
        require_data(sizes.size() == views.size(),
                     "probe blob: tensor count mismatch");
        for (size_t i = 0; i < views.size(); ++i) {
            require_data(sizes[i] == views[i]->size(),
                         "probe blob: tensor size mismatch");
            *views[i] = detail::read_tensor_f32(blob, off, sizes[i]);
        }
    } else {
        require_data(sizes.empty(), "probe blob: unexpected tensors");
    }
    r.done();
    require_data(off == blob.size(), "probe blob: trailing bytes");
    return p;
}

}  // namespace polyaudit
