#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "polyaudit/common.hpp"
#include "polyaudit/rng.hpp"

namespace polyaudit {

// Minimal dense/conv network kernels, templated on the scalar type: float
// for training speed, double for finite-difference gradient verification.
// All loops are sequential with a fixed order, so results are bit-stable
// for a given scalar type.

namespace nn {

// --- GEMM kernels (row-major) ------------------------------------------------

// C[M x N] += A[M x K] * B[K x N].  Four-row blocking keeps four accumulator
// rows of C live while streaming B.
template <typename S>
void gemm_nn(const S* A, const S* B, S* C, int M, int K, int N) {
    int m = 0;
    for (; m + 4 <= M; m += 4) {
        const S *a0 = A + static_cast<size_t>(m) * K, *a1 = a0 + K,
                *a2 = a1 + K, *a3 = a2 + K;
        S *c0 = C + static_cast<size_t>(m) * N, *c1 = c0 + N, *c2 = c1 + N,
          *c3 = c2 + N;
        for (int k = 0; k < K; ++k) {
            const S* b = B + static_cast<size_t>(k) * N;
            const S v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            for (int n = 0; n < N; ++n) {
                const S bn = b[n];
                c0[n] += v0 * bn;
                c1[n] += v1 * bn;
                c2[n] += v2 * bn;
                c3[n] += v3 * bn;
            }
        }
    }
    for (; m < M; ++m) {
        const S* a = A + static_cast<size_t>(m) * K;
        S* c = C + static_cast<size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const S* b = B + static_cast<size_t>(k) * N;
            const S v = a[k];
            for (int n = 0; n < N; ++n) c[n] += v * b[n];
        }
    }
}

// C[M x N] += A[M x K] * B[N x K]^T
template <typename S>
void gemm_nt(const S* A, const S* B, S* C, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        const S* a = A + static_cast<size_t>(m) * K;
        S* c = C + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) {
            const S* b = B + static_cast<size_t>(n) * K;
            S acc = 0;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            c[n] += acc;
        }
    }
}

// C[M x N] += A[K x M]^T * B[K x N]
template <typename S>
void gemm_tn(const S* A, const S* B, S* C, int M, int K, int N) {
    for (int k = 0; k < K; ++k) {
        const S* a = A + static_cast<size_t>(k) * M;
        const S* b = B + static_cast<size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const S v = a[m];
            S* c = C + static_cast<size_t>(m) * N;
            for (int n = 0; n < N; ++n) c[n] += v * b[n];
        }
    }
}

// --- initialization -----------------------------------------------------------

template <typename S>
void he_init(std::vector<S>& w, int fan_in, RngStream& rng) {
    const double sigma = std::sqrt(2.0 / fan_in);
    for (S& v : w) v = static_cast<S>(rng.normal(0.0, sigma));
}

// --- MLP -----------------------------------------------------------------------

// features -> hidden -> hidden -> 2 logits, ReLU activations.  The output
// layer is zero-initialized, so an untrained net scores exactly 0.5.
template <typename S>
struct MlpModel {
    int in = 0;
    int hidden = 64;
    std::vector<S> w1, b1, w2, b2, w3, b3;

    void init(int in_features, int hidden_width, RngStream& rng) {
        in = in_features;
        hidden = hidden_width;
        w1.assign(static_cast<size_t>(hidden) * in, 0);
        b1.assign(static_cast<size_t>(hidden), 0);
        w2.assign(static_cast<size_t>(hidden) * hidden, 0);
        b2.assign(static_cast<size_t>(hidden), 0);
        w3.assign(static_cast<size_t>(2) * hidden, 0);
        b3.assign(2, 0);
        he_init(w1, in, rng);
        he_init(w2, hidden, rng);
    }

    std::vector<std::vector<S>*> param_views() {
        return {&w1, &b1, &w2, &b2, &w3, &b3};
    }

    MlpModel<S> zeros_like() const {
        MlpModel<S> g = *this;
        for (auto* p : g.param_views()) p->assign(p->size(), 0);
        return g;
    }

    struct Cache {
        int batch = 0;
        std::vector<S> x, h1, h2;  // h1/h2 post-ReLU
    };

    // X: [B x in] row-major; returns logits [B x 2].
    std::vector<S> forward(const std::vector<S>& X, int B, Cache* cache) const {
        std::vector<S> h1(static_cast<size_t>(B) * hidden);
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < hidden; ++j)
                h1[static_cast<size_t>(b) * hidden + j] = b1[j];
        gemm_nt(X.data(), w1.data(), h1.data(), B, in, hidden);
        for (S& v : h1) v = v > 0 ? v : 0;

        std::vector<S> h2(static_cast<size_t>(B) * hidden);
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < hidden; ++j)
                h2[static_cast<size_t>(b) * hidden + j] = b2[j];
        gemm_nt(h1.data(), w2.data(), h2.data(), B, hidden, hidden);
        for (S& v : h2) v = v > 0 ? v : 0;

        std::vector<S> logits(static_cast<size_t>(B) * 2);
        for (int b = 0; b < B; ++b) {
            logits[static_cast<size_t>(b) * 2] = b3[0];
            logits[static_cast<size_t>(b) * 2 + 1] = b3[1];
        }
        gemm_nt(h2.data(), w3.data(), logits.data(), B, hidden, 2);
        if (cache) {
            cache->batch = B;
            cache->x = X;
            cache->h1 = std::move(h1);
            cache->h2 = std::move(h2);
        }
        return logits;
    }

    void backward(const Cache& c, const std::vector<S>& dlogits,
                  MlpModel<S>& grads) const {
        const int B = c.batch;
        gemm_tn(dlogits.data(), c.h2.data(), grads.w3.data(), 2, B, hidden);
        for (int b = 0; b < B; ++b) {
            grads.b3[0] += dlogits[static_cast<size_t>(b) * 2];
            grads.b3[1] += dlogits[static_cast<size_t>(b) * 2 + 1];
        }
        std::vector<S> dh2(static_cast<size_t>(B) * hidden, 0);
        gemm_nn(dlogits.data(), w3.data(), dh2.data(), B, 2, hidden);
        for (size_t i = 0; i < dh2.size(); ++i)
            if (c.h2[i] <= 0) dh2[i] = 0;

        gemm_tn(dh2.data(), c.h1.data(), grads.w2.data(), hidden, B, hidden);
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < hidden; ++j)
                grads.b2[j] += dh2[static_cast<size_t>(b) * hidden + j];
        std::vector<S> dh1(static_cast<size_t>(B) * hidden, 0);
        gemm_nn(dh2.data(), w2.data(), dh1.data(), B, hidden, hidden);
        for (size_t i = 0; i < dh1.size(); ++i)
            if (c.h1[i] <= 0) dh1[i] = 0;

        gemm_tn(dh1.data(), c.x.data(), grads.w1.data(), hidden, B, in);
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < hidden; ++j)
                grads.b1[j] += dh1[static_cast<size_t>(b) * hidden + j];
    }
};

// --- CNN3 ----------------------------------------------------------------------

// Activations use a channel-major [C][B][S][S] layout so one im2col + GEMM
// per layer covers the whole batch and the output lands in the same layout.
template <typename S>
struct ConvLayer {
    int cin = 0, cout = 0;
    std::vector<S> w;  // [cout x cin*9]
    std::vector<S> b;  // [cout]

    void init(int in_c, int out_c, RngStream& rng) {
        cin = in_c;
        cout = out_c;
        w.assign(static_cast<size_t>(cout) * cin * 9, 0);
        b.assign(static_cast<size_t>(cout), 0);
        he_init(w, cin * 9, rng);
    }
};

template <typename S>
void im2col_3x3(const S* x, int C, int B, int side, std::vector<S>& col) {
    const int cols = B * side * side;
    col.assign(static_cast<size_t>(C) * 9 * cols, 0);
    for (int c = 0; c < C; ++c) {
        const S* xc = x + static_cast<size_t>(c) * B * side * side;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                S* row = col.data() +
                         (static_cast<size_t>(c) * 9 + ky * 3 + kx) * cols;
                for (int b = 0; b < B; ++b) {
                    const S* xb = xc + static_cast<size_t>(b) * side * side;
                    S* rb = row + static_cast<size_t>(b) * side * side;
                    for (int y = 0; y < side; ++y) {
                        const int sy = y + ky - 1;
                        if (sy < 0 || sy >= side) continue;
                        const S* src = xb + static_cast<size_t>(sy) * side;
                        S* dst = rb + static_cast<size_t>(y) * side;
                        const int x0 = kx - 1 < 0 ? 1 : 0;
                        const int x1 = kx - 1 > 0 ? side - 1 : side;
                        for (int xx = x0; xx < x1; ++xx)
                            dst[xx] = src[xx + kx - 1];
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im_3x3(const std::vector<S>& dcol, int C, int B, int side, S* dx) {
    const int cols = B * side * side;
    for (int c = 0; c < C; ++c) {
        S* xc = dx + static_cast<size_t>(c) * B * side * side;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const S* row =
                    dcol.data() +
                    (static_cast<size_t>(c) * 9 + ky * 3 + kx) * cols;
                for (int b = 0; b < B; ++b) {
                    S* xb = xc + static_cast<size_t>(b) * side * side;
                    const S* rb = row + static_cast<size_t>(b) * side * side;
                    for (int y = 0; y < side; ++y) {
                        const int sy = y + ky - 1;
                        if (sy < 0 || sy >= side) continue;
                        S* dst = xb + static_cast<size_t>(sy) * side;
                        const S* src = rb + static_cast<size_t>(y) * side;
                        const int x0 = kx - 1 < 0 ? 1 : 0;
                        const int x1 = kx - 1 > 0 ? side - 1 : side;
                        for (int xx = x0; xx < x1; ++xx)
                            dst[xx + kx - 1] += src[xx];
                    }
                }
            }
        }
    }
}

// Three blocks of (3x3 conv -> ReLU -> 2x average pool), widths 16/32/64,
// global average pooling, linear head.  Input side must be a multiple of 8.
// The head is zero-initialized like the MLP output layer.
template <typename S>
struct Cnn3Model {
    int in_channels = 2;
    int input_side = 16;
    int widths[3] = {16, 32, 64};
    ConvLayer<S> conv[3];
    std::vector<S> wh;  // [2 x widths[2]]
    std::vector<S> bh;  // [2]

    void init(int channels, int side, RngStream& rng) {
        require_config(side >= 8 && side % 8 == 0,
                       "cnn input side must be a positive multiple of 8");
        in_channels = channels;
        input_side = side;
        conv[0].init(channels, widths[0], rng);
        conv[1].init(widths[0], widths[1], rng);
        conv[2].init(widths[1], widths[2], rng);
        wh.assign(static_cast<size_t>(2) * widths[2], 0);
        bh.assign(2, 0);
    }

    std::vector<std::vector<S>*> param_views() {
        return {&conv[0].w, &conv[0].b, &conv[1].w, &conv[1].b,
                &conv[2].w, &conv[2].b, &wh,        &bh};
    }

    Cnn3Model<S> zeros_like() const {
        Cnn3Model<S> g = *this;
        for (auto* p : g.param_views()) p->assign(p->size(), 0);
        return g;
    }

    struct Cache {
        int batch = 0;
        std::vector<S> act[3];     // post-ReLU conv outputs
        std::vector<S> pooled[3];  // post-pool activations
        std::vector<S> gap;        // [B x widths[2]]
        std::vector<S> col[3];     // im2col buffers reused by backward
    };

    static void avgpool2(const std::vector<S>& x, int C, int B, int side,
                         std::vector<S>& out) {
        const int half = side / 2;
        out.assign(static_cast<size_t>(C) * B * half * half, 0);
        for (int c = 0; c < C; ++c) {
            for (int b = 0; b < B; ++b) {
                const S* src =
                    x.data() + (static_cast<size_t>(c) * B + b) * side * side;
                S* dst = out.data() +
                         (static_cast<size_t>(c) * B + b) * half * half;
                for (int y = 0; y < half; ++y)
                    for (int xx = 0; xx < half; ++xx)
                        dst[y * half + xx] =
                            static_cast<S>(0.25) *
                            (src[(2 * y) * side + 2 * xx] +
                             src[(2 * y) * side + 2 * xx + 1] +
                             src[(2 * y + 1) * side + 2 * xx] +
                             src[(2 * y + 1) * side + 2 * xx + 1]);
            }
        }
    }

    // input: [C][B][S][S]; returns logits [B x 2].
    std::vector<S> forward(const std::vector<S>& input, int B,
                           Cache* cache) const {
        Cache local;
        Cache& cc = cache ? *cache : local;
        cc.batch = B;
        const std::vector<S>* cur = &input;
        int side = input_side;
        int cin = in_channels;
        for (int l = 0; l < 3; ++l) {
            im2col_3x3(cur->data(), cin, B, side, cc.col[l]);
            const int cols = B * side * side;
            std::vector<S> out(static_cast<size_t>(conv[l].cout) * cols);
            for (int co = 0; co < conv[l].cout; ++co)
                for (int i = 0; i < cols; ++i)
                    out[static_cast<size_t>(co) * cols + i] = conv[l].b[co];
            gemm_nn(conv[l].w.data(), cc.col[l].data(), out.data(),
                    conv[l].cout, cin * 9, cols);
            for (S& v : out) v = v > 0 ? v : 0;
            cc.act[l] = std::move(out);
            avgpool2(cc.act[l], conv[l].cout, B, side, cc.pooled[l]);
            cur = &cc.pooled[l];
            side /= 2;
            cin = conv[l].cout;
        }
        const int c3 = widths[2];
        const int spatial = side * side;
        cc.gap.assign(static_cast<size_t>(B) * c3, 0);
        for (int c = 0; c < c3; ++c)
            for (int b = 0; b < B; ++b) {
                const S* src =
                    cur->data() + (static_cast<size_t>(c) * B + b) * spatial;
                S acc = 0;
                for (int i = 0; i < spatial; ++i) acc += src[i];
                cc.gap[static_cast<size_t>(b) * c3 + c] =
                    acc / static_cast<S>(spatial);
            }
        std::vector<S> logits(static_cast<size_t>(B) * 2);
        for (int b = 0; b < B; ++b) {
            logits[static_cast<size_t>(b) * 2] = bh[0];
            logits[static_cast<size_t>(b) * 2 + 1] = bh[1];
        }
        gemm_nt(cc.gap.data(), wh.data(), logits.data(), B, c3, 2);
        return logits;
    }

    void backward(const Cache& cc, const std::vector<S>& dlogits,
                  Cnn3Model<S>& grads) const {
        const int B = cc.batch;
        const int c3 = widths[2];
        int side = input_side / 8;  // side after the last pool
        const int spatial = side * side;

        gemm_tn(dlogits.data(), cc.gap.data(), grads.wh.data(), 2, B, c3);
        for (int b = 0; b < B; ++b) {
            grads.bh[0] += dlogits[static_cast<size_t>(b) * 2];
            grads.bh[1] += dlogits[static_cast<size_t>(b) * 2 + 1];
        }
        std::vector<S> dgap(static_cast<size_t>(B) * c3, 0);
        gemm_nn(dlogits.data(), wh.data(), dgap.data(), B, 2, c3);

        // un-GAP into the last pooled activation's gradient
        std::vector<S> dcur(static_cast<size_t>(c3) * B * spatial);
        for (int c = 0; c < c3; ++c)
            for (int b = 0; b < B; ++b) {
                const S g = dgap[static_cast<size_t>(b) * c3 + c] /
                            static_cast<S>(spatial);
                S* dst =
                    dcur.data() + (static_cast<size_t>(c) * B + b) * spatial;
                for (int i = 0; i < spatial; ++i) dst[i] = g;
            }

        for (int l = 2; l >= 0; --l) {
            const int cin = l == 0 ? in_channels : conv[l - 1].cout;
            const int cout = conv[l].cout;
            side *= 2;  // conv-output side at this layer
            const int cols = B * side * side;
            const int half = side / 2;

            // un-pool: spread each pooled gradient over its 2x2 window
            std::vector<S> dact(static_cast<size_t>(cout) * cols);
            for (int c = 0; c < cout; ++c)
                for (int b = 0; b < B; ++b) {
                    const S* src =
                        dcur.data() +
                        (static_cast<size_t>(c) * B + b) * half * half;
                    S* dst = dact.data() +
                             (static_cast<size_t>(c) * B + b) * side * side;
                    for (int y = 0; y < half; ++y)
                        for (int xx = 0; xx < half; ++xx) {
                            const S g =
                                static_cast<S>(0.25) * src[y * half + xx];
                            dst[(2 * y) * side + 2 * xx] = g;
                            dst[(2 * y) * side + 2 * xx + 1] = g;
                            dst[(2 * y + 1) * side + 2 * xx] = g;
                            dst[(2 * y + 1) * side + 2 * xx + 1] = g;
                        }
                }
            for (size_t i = 0; i < dact.size(); ++i)
                if (cc.act[l][i] <= 0) dact[i] = 0;

            gemm_nt(dact.data(), cc.col[l].data(), grads.conv[l].w.data(),
                    cout, cols, cin * 9);
            for (int co = 0; co < cout; ++co) {
                S acc = 0;
                const S* row = dact.data() + static_cast<size_t>(co) * cols;
                for (int i = 0; i < cols; ++i) acc += row[i];
                grads.conv[l].b[co] += acc;
            }
            if (l > 0) {
                std::vector<S> dcol(static_cast<size_t>(cin) * 9 * cols, 0);
                gemm_tn(conv[l].w.data(), dact.data(), dcol.data(), cin * 9,
                        cout, cols);
                dcur.assign(static_cast<size_t>(cin) * B * side * side, 0);
                col2im_3x3(dcol, cin, B, side, dcur.data());
            }
        }
    }
};

// --- loss ----------------------------------------------------------------------

template <typename S>
struct LossResult {
    double loss = 0.0;
    std::vector<S> dlogits;  // [B x 2]
};

inline double vrex_loss(const std::vector<double>& env_risks, double beta) {
    require_data(!env_risks.empty(), "vrex_loss: no environment risks");
    require_config(beta >= 0.0, "vrex_loss: beta must be non-negative");
    double mean = 0.0;
    for (double r : env_risks) mean += r;
    mean /= static_cast<double>(env_risks.size());
    double var = 0.0;
    for (double r : env_risks) var += (r - mean) * (r - mean);
    var /= static_cast<double>(env_risks.size());
    return mean + beta * var;
}

// Class-weighted softmax cross-entropy over two classes.  With beta > 0 the
// batch is grouped by environment and the objective becomes
// mean(per-env risks) + beta * population-variance(per-env risks); beta == 0
// takes the plain path, so a zero penalty is bit-identical to no penalty.
template <typename S>
LossResult<S> weighted_ce_loss(const std::vector<S>& logits,
                               const std::vector<int>& labels,
                               const std::vector<double>& class_weights,
                               const std::vector<int>& envs, double beta) {
    const int B = static_cast<int>(labels.size());
    require_data(B >= 1, "loss: empty batch");
    require_data(logits.size() == static_cast<size_t>(B) * 2,
                 "loss: logits shape mismatch");
    LossResult<S> res;
    res.dlogits.assign(static_cast<size_t>(B) * 2, 0);

    std::vector<double> sample_loss(B), p1(B);
    for (int b = 0; b < B; ++b) {
        const double l0 = logits[static_cast<size_t>(b) * 2];
        const double l1 = logits[static_cast<size_t>(b) * 2 + 1];
        const double mx = l0 > l1 ? l0 : l1;
        const double lse =
            mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
        const int y = labels[b];
        const double ly = y == 1 ? l1 : l0;
        const double w = class_weights[y];
        sample_loss[b] = w * (lse - ly);
        p1[b] = std::exp(l1 - lse);
    }

    if (beta <= 0.0 || envs.empty()) {
        double total = 0.0;
        for (int b = 0; b < B; ++b) total += sample_loss[b];
        res.loss = total / B;
        for (int b = 0; b < B; ++b) {
            const int y = labels[b];
            const double w = class_weights[y] / B;
            const double g1 = w * (p1[b] - (y == 1 ? 1.0 : 0.0));
            res.dlogits[static_cast<size_t>(b) * 2] = static_cast<S>(-g1);
            res.dlogits[static_cast<size_t>(b) * 2 + 1] = static_cast<S>(g1);
        }
    } else {
        require_data(envs.size() == static_cast<size_t>(B),
                     "loss: env tags shape mismatch");
        // environments present in this batch, in first-appearance order
        std::vector<int> env_ids;
        std::vector<int> env_slot(B);
        for (int b = 0; b < B; ++b) {
            int slot = -1;
            for (size_t e = 0; e < env_ids.size(); ++e)
                if (env_ids[e] == envs[b]) slot = static_cast<int>(e);
            if (slot < 0) {
                slot = static_cast<int>(env_ids.size());
                env_ids.push_back(envs[b]);
            }
            env_slot[b] = slot;
        }
        const int E = static_cast<int>(env_ids.size());
        std::vector<double> risk(E, 0.0);
        std::vector<int> count(E, 0);
        for (int b = 0; b < B; ++b) {
            risk[env_slot[b]] += sample_loss[b];
            ++count[env_slot[b]];
        }
        for (int e = 0; e < E; ++e) risk[e] /= count[e];
        double mean = 0.0;
        for (double r : risk) mean += r;
        mean /= E;
        res.loss = vrex_loss(risk, beta);
        for (int b = 0; b < B; ++b) {
            const int e = env_slot[b];
            const double drisk = 1.0 / E + beta * 2.0 * (risk[e] - mean) / E;
            const int y = labels[b];
            const double w = drisk * class_weights[y] / count[e];
            const double g1 = w * (p1[b] - (y == 1 ? 1.0 : 0.0));
            res.dlogits[static_cast<size_t>(b) * 2] = static_cast<S>(-g1);
            res.dlogits[static_cast<size_t>(b) * 2 + 1] = static_cast<S>(g1);
        }
    }
    if (!std::isfinite(res.loss)) throw NumericError("training loss");
    return res;
}

// --- optimizer -------------------------------------------------------------------

// Decoupled weight decay: the L2 pull is applied directly to the parameter,
// outside the adaptive moment estimate.
template <typename S>
class AdamW {
  public:
    AdamW(size_t n_params, double beta1 = 0.9, double beta2 = 0.999,
          double epsilon = 1e-8)
        : m_(n_params, 0), v_(n_params, 0), beta1_(beta1), beta2_(beta2),
          eps_(epsilon) {}

    void step(std::vector<std::vector<S>*>& params,
              const std::vector<std::vector<S>*>& grads, double lr,
              double weight_decay) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        size_t off = 0;
        for (size_t g = 0; g < params.size(); ++g) {
            std::vector<S>& p = *params[g];
            const std::vector<S>& gr = *grads[g];
            for (size_t i = 0; i < p.size(); ++i, ++off) {
                const double grad = static_cast<double>(gr[i]);
                m_[off] = beta1_ * m_[off] + (1.0 - beta1_) * grad;
                v_[off] = beta2_ * v_[off] + (1.0 - beta2_) * grad * grad;
                const double mhat = m_[off] / bc1;
                const double vhat = v_[off] / bc2;
                const double upd = mhat / (std::sqrt(vhat) + eps_) +
                                   weight_decay * static_cast<double>(p[i]);
                p[i] = static_cast<S>(static_cast<double>(p[i]) - lr * upd);
            }
        }
    }

  private:
    std::vector<double> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

// Per-epoch cosine annealing from base toward zero.
inline double cosine_lr(double base, int epoch, int total_epochs) {
    return base * 0.5 *
           (1.0 + std::cos(3.14159265358979323846 * epoch / total_epochs));
}

// --- gradient verification ---------------------------------------------------

// Compares the analytic gradient of every parameter against central finite
// differences of the loss.  Model must be instantiated with double scalars;
// works for MlpModel<double> and Cnn3Model<double>.
template <typename Model>
double gradient_check(Model& model, const std::vector<double>& X, int B,
                      const std::vector<int>& labels,
                      const std::vector<double>& class_weights,
                      const std::vector<int>& envs, double beta,
                      double epsilon) {
    require_config(epsilon >= 1e-7 && epsilon <= 1e-4,
                   "gradient_check: epsilon out of [1e-7, 1e-4]");
    auto loss_at = [&]() {
        const std::vector<double> logits = model.forward(X, B, nullptr);
        return weighted_ce_loss<double>(logits, labels, class_weights, envs,
                                        beta)
            .loss;
    };
    typename Model::Cache cache;
    const std::vector<double> logits = model.forward(X, B, &cache);
    const LossResult<double> lr =
        weighted_ce_loss<double>(logits, labels, class_weights, envs, beta);
    Model grads = model.zeros_like();
    model.backward(cache, lr.dlogits, grads);

    auto params = model.param_views();
    auto gviews = grads.param_views();
    double max_rel = 0.0;
    for (size_t g = 0; g < params.size(); ++g) {
        std::vector<double>& p = *params[g];
        const std::vector<double>& an = *gviews[g];
        for (size_t i = 0; i < p.size(); ++i) {
            const double orig = p[i];
            p[i] = orig + epsilon;
            const double lp = loss_at();
            p[i] = orig - epsilon;
            const double lm = loss_at();
            p[i] = orig;
            const double fd = (lp - lm) / (2.0 * epsilon);
            const double rel = std::abs(an[i] - fd) /
                               std::max(1.0, std::abs(an[i]) + std::abs(fd));
            if (rel > max_rel) max_rel = rel;
        }
    }
    require_finite(max_rel, "gradient_check result");
    return max_rel;
}

}  // namespace nn
}  // namespace polyaudit
