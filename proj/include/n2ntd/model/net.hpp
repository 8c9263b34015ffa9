#pragma once

#include "n2ntd/core/logging.hpp"
#include "n2ntd/core/parallel.hpp"
#include "n2ntd/core/rng.hpp"
#include "n2ntd/core/tensor.hpp"
#include "n2ntd/kernels/conv2d.hpp"
#include "n2ntd/model/config.hpp"
#include "n2ntd/projsim/projection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

// Time-distributed Bi-ConvLSTM denoising network. All convolutions are
// bias-free with replicate padding; the per-frame U-Net has no pooling, so
// every activation keeps the input's H x W. Scalar type T is templated so
// training runs in float while gradient checks instantiate double.

namespace n2ntd::model {

template <typename T>
struct SeWeights {
    Tensor<T> w1;  // [cr, C]
    Tensor<T> w2;  // [C, cr]
};

template <typename T>
struct BlockWeights {
    Tensor<T> c1;  // [oc, ic, k, k]
    Tensor<T> c2;  // [oc, oc, k, k]
};

template <typename T>
struct BiLstmWeights {
    Tensor<T> fwd;  // [4H, Cin+H, k, k]
    Tensor<T> bwd;  // independent parameters per direction
};

template <typename T>
struct ModelState {
    ModelConfig config;
    BlockWeights<T> enc1, enc2, enc3, dec2, dec1;
    SeWeights<T> se2, se3, sed2;
    BiLstmWeights<T> bot, tail;
    Tensor<T> head1, head2;   // [ht, ht, k, k]
    Tensor<T> head_out;       // [2, ht, 1, 1]

    // Visits every parameter tensor in a fixed order; the checkpoint block
    // order and the Adam state layout both follow this.
    template <typename F>
    void for_each_param(F&& f)
    {
        f("enc1.c1", enc1.c1);   f("enc1.c2", enc1.c2);
        f("enc2.c1", enc2.c1);   f("enc2.c2", enc2.c2);
        f("se2.w1", se2.w1);     f("se2.w2", se2.w2);
        f("enc3.c1", enc3.c1);   f("enc3.c2", enc3.c2);
        f("se3.w1", se3.w1);     f("se3.w2", se3.w2);
        f("bot.fwd", bot.fwd);   f("bot.bwd", bot.bwd);
        f("dec2.c1", dec2.c1);   f("dec2.c2", dec2.c2);
        f("sed2.w1", sed2.w1);   f("sed2.w2", sed2.w2);
        f("dec1.c1", dec1.c1);   f("dec1.c2", dec1.c2);
        f("tail.fwd", tail.fwd); f("tail.bwd", tail.bwd);
        f("head1", head1);       f("head2", head2);
        f("head_out", head_out);
    }
    template <typename F>
    void for_each_param(F&& f) const
    {
        const_cast<ModelState<T>*>(this)->for_each_param(
            [&](const std::string& n, Tensor<T>& t) { f(n, const_cast<const Tensor<T>&>(t)); });
    }

    size_t param_count() const
    {
        size_t n = 0;
        for_each_param([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
        return n;
    }
};

inline int se_reduced(int channels, int reduction)
{
    return std::max(1, channels / reduction);
}

// Fan-in-scaled uniform init: limit sqrt(6 / fan_in), where fan_in counts
// the receptive inputs of one output unit. Draw order is the registry order.
template <typename T>
ModelState<T> init_model(const ModelConfig& cfg, uint64_t seed)
{
    validate_config(cfg);
    const int c1 = cfg.channels[0], c2 = cfg.channels[1], c3 = cfg.channels[2];
    const int hb = cfg.lstm_hidden_bottleneck, ht = cfg.lstm_hidden_tail;
    const int k = cfg.kernel_size;
    const int r2 = se_reduced(c2, cfg.attention_reduction);
    const int r3 = se_reduced(c3, cfg.attention_reduction);

    ModelState<T> st;
    st.config = cfg;
    st.enc1.c1.resize({c1, 1, k, k});        st.enc1.c2.resize({c1, c1, k, k});
    st.enc2.c1.resize({c2, c1, k, k});       st.enc2.c2.resize({c2, c2, k, k});
    st.se2.w1.resize({r2, c2});              st.se2.w2.resize({c2, r2});
    st.enc3.c1.resize({c3, c2, k, k});       st.enc3.c2.resize({c3, c3, k, k});
    st.se3.w1.resize({r3, c3});              st.se3.w2.resize({c3, r3});
    st.bot.fwd.resize({4 * hb, c3 + hb, k, k});
    st.bot.bwd.resize({4 * hb, c3 + hb, k, k});
    st.dec2.c1.resize({c2, hb + c2, k, k});  st.dec2.c2.resize({c2, c2, k, k});
    st.sed2.w1.resize({r2, c2});             st.sed2.w2.resize({c2, r2});
    st.dec1.c1.resize({c1, c2 + c1, k, k});  st.dec1.c2.resize({c1, c1, k, k});
    st.tail.fwd.resize({4 * ht, c1 + ht, k, k});
    st.tail.bwd.resize({4 * ht, c1 + ht, k, k});
    st.head1.resize({ht, ht, k, k});
    st.head2.resize({ht, ht, k, k});
    st.head_out.resize({2, ht, 1, 1});

    Rng rng(seed);
    st.for_each_param([&](const std::string&, Tensor<T>& t) {
        // fan_in: product of all dims but the first (ic*k*k, or the dense
        // input width for SE matrices)
        size_t fan_in = 1;
        for (int d = 1; d < t.rank(); ++d) fan_in *= size_t(t.dim(d));
        const double lim = std::sqrt(6.0 / double(fan_in));
        for (auto& v : t.v) v = T(rng.uniform(-lim, lim));
    });
    return st;
}

// Zero-filled gradient twin with the same tensor shapes.
template <typename T>
ModelState<T> zero_like(const ModelState<T>& st)
{
    ModelState<T> g = st;
    g.for_each_param([](const std::string&, Tensor<T>& t) { t.fill(T(0)); });
    return g;
}

// ---- elementwise helpers ----

template <typename T>
inline T sigmoid_scalar(T x)
{
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
void relu_inplace(Tensor<T>& t)
{
    T* p = t.data();
    const size_t n = t.size();
#pragma omp simd
    for (size_t i = 0; i < n; ++i) p[i] = p[i] > T(0) ? p[i] : T(0);
}

// [n, Ca, H, W] ++ [n, Cb, H, W] -> [n, Ca+Cb, H, W]
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b)
{
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const int h = a.dim(2), w = a.dim(3);
    Tensor<T> out({n, ca + cb, h, w});
    const size_t plane = size_t(h) * w;
    for (int i = 0; i < n; ++i) {
        std::copy(a.v.begin() + size_t(i) * ca * plane,
                  a.v.begin() + size_t(i + 1) * ca * plane,
                  out.v.begin() + size_t(i) * (ca + cb) * plane);
        std::copy(b.v.begin() + size_t(i) * cb * plane,
                  b.v.begin() + size_t(i + 1) * cb * plane,
                  out.v.begin() + (size_t(i) * (ca + cb) + ca) * plane);
    }
    return out;
}

// Splits a gradient of concat_channels back into the two parts (+=).
template <typename T>
void split_channels_add(const Tensor<T>& g, Tensor<T>& ga, Tensor<T>& gb)
{
    const int n = ga.dim(0), ca = ga.dim(1), cb = gb.dim(1);
    const int h = ga.dim(2), w = ga.dim(3);
    const size_t plane = size_t(h) * w;
    for (int i = 0; i < n; ++i) {
        const T* src = g.data() + size_t(i) * (ca + cb) * plane;
        T* pa = ga.data() + size_t(i) * ca * plane;
        T* pb = gb.data() + size_t(i) * cb * plane;
        for (size_t j = 0; j < ca * plane; ++j) pa[j] += src[j];
        for (size_t j = 0; j < cb * plane; ++j) pb[j] += src[ca * plane + j];
    }
}

// ---- two-conv block (conv -> relu -> conv -> relu) ----

template <typename T>
struct BlockCache {
    Tensor<T> in;   // [n, ic, H, W]
    Tensor<T> a1;   // post-relu after conv1
    Tensor<T> out;  // post-relu after conv2
};

template <typename T>
void block_forward(const BlockWeights<T>& w, const Tensor<T>& in,
                   BlockCache<T>& cc)
{
    cc.in = in;
    kernels::conv2d_fwd(in, w.c1, cc.a1);
    relu_inplace(cc.a1);
    kernels::conv2d_fwd(cc.a1, w.c2, cc.out);
    relu_inplace(cc.out);
}

// gout is consumed; gin receives the input gradient (overwritten).
template <typename T>
void block_backward(const BlockWeights<T>& w, const BlockCache<T>& cc,
                    Tensor<T> gout, Tensor<T>& gin, BlockWeights<T>& gw)
{
    const int k = w.c2.dim(2);
    for (size_t i = 0; i < gout.size(); ++i)
        if (cc.out.v[i] <= T(0)) gout.v[i] = T(0);
    Tensor<T> gw2, ga1;
    kernels::conv2d_bwd_weight(gout, cc.a1, k, gw2);
    for (size_t i = 0; i < gw2.size(); ++i) gw.c2.v[i] += gw2.v[i];
    kernels::conv2d_bwd_input(gout, w.c2, ga1);
    for (size_t i = 0; i < ga1.size(); ++i)
        if (cc.a1.v[i] <= T(0)) ga1.v[i] = T(0);
    Tensor<T> gw1;
    kernels::conv2d_bwd_weight(ga1, cc.in, w.c1.dim(2), gw1);
    for (size_t i = 0; i < gw1.size(); ++i) gw.c1.v[i] += gw1.v[i];
    kernels::conv2d_bwd_input(ga1, w.c1, gin);
}

// ---- squeeze-and-excitation channel attention ----

template <typename T>
struct SeCache {
    Tensor<T> in;    // [n, C, H, W]
    Tensor<T> gap;   // [n, C]
    Tensor<T> z1;    // [n, cr] post-relu
    Tensor<T> gate;  // [n, C] sigmoid output
};

// out[c] = gate[c] * in[c], gate = sigmoid(W2 . relu(W1 . globalavg(in))).
template <typename T>
void se_forward(const SeWeights<T>& w, const Tensor<T>& in, SeCache<T>& cc,
                Tensor<T>& out)
{
    const int n = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const int cr = w.w1.dim(0);
    cc.in = in;
    cc.gap.resize({n, C});
    cc.z1.resize({n, cr});
    cc.gate.resize({n, C});
    out.resize(in.shape);
    const size_t plane = size_t(H) * W;
    for (int b = 0; b < n; ++b) {
        for (int c = 0; c < C; ++c) {
            const T* p = in.data() + (size_t(b) * C + c) * plane;
            T acc = 0;
            for (size_t j = 0; j < plane; ++j) acc += p[j];
            cc.gap.at(b, c) = acc / T(plane);
        }
        for (int r = 0; r < cr; ++r) {
            T acc = 0;
            for (int c = 0; c < C; ++c) acc += w.w1.at(r, c) * cc.gap.at(b, c);
            cc.z1.at(b, r) = acc > T(0) ? acc : T(0);
        }
        for (int c = 0; c < C; ++c) {
            T acc = 0;
            for (int r = 0; r < cr; ++r) acc += w.w2.at(c, r) * cc.z1.at(b, r);
            cc.gate.at(b, c) = sigmoid_scalar(acc);
        }
        for (int c = 0; c < C; ++c) {
            const T g = cc.gate.at(b, c);
            const T* p = in.data() + (size_t(b) * C + c) * plane;
            T* q = out.data() + (size_t(b) * C + c) * plane;
            for (size_t j = 0; j < plane; ++j) q[j] = g * p[j];
        }
    }
}

template <typename T>
void se_backward(const SeWeights<T>& w, const SeCache<T>& cc,
                 const Tensor<T>& gout, Tensor<T>& gin, SeWeights<T>& gw)
{
    const int n = cc.in.dim(0), C = cc.in.dim(1);
    const int H = cc.in.dim(2), W = cc.in.dim(3);
    const int cr = w.w1.dim(0);
    const size_t plane = size_t(H) * W;
    gin.resize(cc.in.shape);
    for (int b = 0; b < n; ++b) {
        std::vector<T> dgate(C), dz2(C), dz1(cr), dgap(C, T(0));
        for (int c = 0; c < C; ++c) {
            const T* go = gout.data() + (size_t(b) * C + c) * plane;
            const T* p = cc.in.data() + (size_t(b) * C + c) * plane;
            T* gi = gin.data() + (size_t(b) * C + c) * plane;
            const T g = cc.gate.at(b, c);
            T acc = 0;
            for (size_t j = 0; j < plane; ++j) {
                acc += go[j] * p[j];
                gi[j] = go[j] * g;  // direct path
            }
            dgate[size_t(c)] = acc;
            dz2[size_t(c)] = acc * g * (T(1) - g);
        }
        for (int r = 0; r < cr; ++r) {
            T acc = 0;
            for (int c = 0; c < C; ++c) {
                acc += w.w2.at(c, r) * dz2[size_t(c)];
                gw.w2.at(c, r) += dz2[size_t(c)] * cc.z1.at(b, r);
            }
            dz1[size_t(r)] = cc.z1.at(b, r) > T(0) ? acc : T(0);
        }
        for (int r = 0; r < cr; ++r)
            for (int c = 0; c < C; ++c) {
                gw.w1.at(r, c) += dz1[size_t(r)] * cc.gap.at(b, c);
                dgap[size_t(c)] += w.w1.at(r, c) * dz1[size_t(r)];
            }
        for (int c = 0; c < C; ++c) {
            const T d = dgap[size_t(c)] / T(plane);  // mean-pool path
            T* gi = gin.data() + (size_t(b) * C + c) * plane;
            for (size_t j = 0; j < plane; ++j) gi[j] += d;
        }
    }
}

// ---- ConvLSTM ----

// Gate combination seam: c = f*c_prev + i*g, h = o*tanh(c). Exposed so tests
// can pin gates to exact values without weight surgery.
template <typename T>
void lstm_combine(const Tensor<T>& i, const Tensor<T>& f, const Tensor<T>& g,
                  const Tensor<T>& o, const Tensor<T>& c_prev,
                  Tensor<T>& h, Tensor<T>& c, Tensor<T>& tanh_c)
{
    c.resize(c_prev.shape);
    h.resize(c_prev.shape);
    tanh_c.resize(c_prev.shape);
    for (size_t j = 0; j < c.size(); ++j) {
        c.v[j] = f.v[j] * c_prev.v[j] + i.v[j] * g.v[j];
        tanh_c.v[j] = std::tanh(c.v[j]);
        h.v[j] = o.v[j] * tanh_c.v[j];
    }
}

template <typename T>
struct LstmStepCache {
    Tensor<T> xcat;                // [1, Cin+H, Hh, Ww]
    Tensor<T> i, f, g, o;          // post-nonlinearity gates [1, H, Hh, Ww]
    Tensor<T> c_prev, c, tanh_c;
};

// One ConvLSTM step: gates from a single bias-free convolution over
// [x_t, h_prev], channel blocks ordered (i, f, g, o); no peephole terms.
template <typename T>
void convlstm_step(const Tensor<T>& x_t, const Tensor<T>& h_prev,
                   const Tensor<T>& c_prev, const Tensor<T>& w,
                   Tensor<T>& h_t, Tensor<T>& c_t, LstmStepCache<T>* cache = nullptr)
{
    const int Hc = w.dim(0) / 4;
    const int Hh = x_t.dim(2), Ww = x_t.dim(3);
    Tensor<T> xcat = concat_channels(x_t, h_prev);
    Tensor<T> z;
    kernels::conv2d_fwd(xcat, w, z);
    const size_t plane = size_t(Hh) * Ww;
    Tensor<T> gi({1, Hc, Hh, Ww}), gf({1, Hc, Hh, Ww}), gg({1, Hc, Hh, Ww}),
        go({1, Hc, Hh, Ww});
    for (int c = 0; c < Hc; ++c)
        for (size_t j = 0; j < plane; ++j) {
            gi.v[size_t(c) * plane + j] = sigmoid_scalar(z.v[(size_t(0 * Hc) + c) * plane + j]);
            gf.v[size_t(c) * plane + j] = sigmoid_scalar(z.v[(size_t(1 * Hc) + c) * plane + j]);
            gg.v[size_t(c) * plane + j] = std::tanh(z.v[(size_t(2 * Hc) + c) * plane + j]);
            go.v[size_t(c) * plane + j] = sigmoid_scalar(z.v[(size_t(3 * Hc) + c) * plane + j]);
        }
    Tensor<T> tanh_c;
    lstm_combine(gi, gf, gg, go, c_prev, h_t, c_t, tanh_c);
    if (cache) {
        cache->xcat = std::move(xcat);
        cache->i = std::move(gi);
        cache->f = std::move(gf);
        cache->g = std::move(gg);
        cache->o = std::move(go);
        cache->c_prev = c_prev;
        cache->c = c_t;
        cache->tanh_c = std::move(tanh_c);
    }
}

template <typename T>
struct LstmDirCache {
    std::vector<LstmStepCache<T>> steps;  // in scan order
};

// Runs one direction over seq[order[0]], seq[order[1]], ... from zero
// initial state; hs[j] is the hidden output at scan position j.
template <typename T>
void lstm_scan(const Tensor<T>& seq, const std::vector<int>& order,
               const Tensor<T>& w, std::vector<Tensor<T>>& hs,
               LstmDirCache<T>* cache)
{
    const int Tn = seq.dim(0), Cin = seq.dim(1), Hh = seq.dim(2), Ww = seq.dim(3);
    const int Hc = w.dim(0) / 4;
    Tensor<T> h({1, Hc, Hh, Ww}), c({1, Hc, Hh, Ww});
    h.fill(T(0));
    c.fill(T(0));
    if (cache) cache->steps.resize(size_t(Tn));
    hs.resize(size_t(Tn));
    for (int j = 0; j < Tn; ++j) {
        Tensor<T> x({1, Cin, Hh, Ww});
        std::copy(seq.v.begin() + size_t(order[size_t(j)]) * Cin * Hh * Ww,
                  seq.v.begin() + size_t(order[size_t(j)] + 1) * Cin * Hh * Ww,
                  x.v.begin());
        Tensor<T> hn, cn;
        convlstm_step(x, h, c, w, hn, cn, cache ? &cache->steps[size_t(j)] : nullptr);
        h = hn;
        c = cn;
        hs[size_t(j)] = h;
    }
}

// Backward through one scan direction. dh_ext[j] is the gradient arriving at
// the hidden output of scan position j; dseq accumulates gradients at the
// original sequence indices (+=); gw accumulates the cell weight gradient.
template <typename T>
void lstm_scan_backward(const std::vector<int>& order, const Tensor<T>& w,
                        const LstmDirCache<T>& cache,
                        const std::vector<Tensor<T>>& dh_ext, Tensor<T>& dseq,
                        Tensor<T>& gw)
{
    const int Tn = int(cache.steps.size());
    const int Hc = w.dim(0) / 4;
    const int Cin = dseq.dim(1), Hh = dseq.dim(2), Ww = dseq.dim(3);
    const size_t plane = size_t(Hh) * Ww;
    Tensor<T> dh_carry({1, Hc, Hh, Ww}), dc_carry({1, Hc, Hh, Ww});
    dh_carry.fill(T(0));
    dc_carry.fill(T(0));
    Tensor<T> dz({1, 4 * Hc, Hh, Ww});
    for (int j = Tn - 1; j >= 0; --j) {
        const LstmStepCache<T>& sc = cache.steps[size_t(j)];
        // total gradient at h_j
        Tensor<T> dh = dh_ext[size_t(j)];
        for (size_t q = 0; q < dh.size(); ++q) dh.v[q] += dh_carry.v[q];
        for (int c = 0; c < Hc; ++c)
            for (size_t q = 0; q < plane; ++q) {
                const size_t idx = size_t(c) * plane + q;
                const T tc = sc.tanh_c.v[idx];
                const T dov = dh.v[idx] * tc;
                const T dcv = dc_carry.v[idx] + dh.v[idx] * sc.o.v[idx] * (T(1) - tc * tc);
                const T div = dcv * sc.g.v[idx];
                const T dfv = dcv * sc.c_prev.v[idx];
                const T dgv = dcv * sc.i.v[idx];
                dc_carry.v[idx] = dcv * sc.f.v[idx];
                dz.v[(size_t(0 * Hc) + c) * plane + q] = div * sc.i.v[idx] * (T(1) - sc.i.v[idx]);
                dz.v[(size_t(1 * Hc) + c) * plane + q] = dfv * sc.f.v[idx] * (T(1) - sc.f.v[idx]);
                dz.v[(size_t(2 * Hc) + c) * plane + q] = dgv * (T(1) - sc.g.v[idx] * sc.g.v[idx]);
                dz.v[(size_t(3 * Hc) + c) * plane + q] = dov * sc.o.v[idx] * (T(1) - sc.o.v[idx]);
            }
        Tensor<T> gwt, dxcat;
        kernels::conv2d_bwd_weight(dz, sc.xcat, w.dim(2), gwt);
        for (size_t q = 0; q < gwt.size(); ++q) gw.v[q] += gwt.v[q];
        kernels::conv2d_bwd_input(dz, w, dxcat);
        // split: first Cin channels -> dseq at original index, rest -> dh_carry
        T* ds = dseq.data() + size_t(order[size_t(j)]) * Cin * plane;
        for (size_t q = 0; q < size_t(Cin) * plane; ++q) ds[q] += dxcat.v[q];
        std::copy(dxcat.v.begin() + size_t(Cin) * plane, dxcat.v.end(),
                  dh_carry.v.begin());
    }
}

template <typename T>
struct BiLstmCache {
    LstmDirCache<T> fw, bw;
};

// out[t] = h_fwd[t] + h_bwd[t]; both directions start from zero states.
template <typename T>
Tensor<T> bi_convlstm(const Tensor<T>& seq, const BiLstmWeights<T>& w,
                      BiLstmCache<T>* cache = nullptr)
{
    const int Tn = seq.dim(0), Hh = seq.dim(2), Ww = seq.dim(3);
    const int Hc = w.fwd.dim(0) / 4;
    std::vector<int> fw_order(static_cast<size_t>(Tn)), bw_order(static_cast<size_t>(Tn));
    for (int t = 0; t < Tn; ++t) {
        fw_order[size_t(t)] = t;
        bw_order[size_t(t)] = Tn - 1 - t;
    }
    std::vector<Tensor<T>> hf, hbv;
    lstm_scan(seq, fw_order, w.fwd, hf, cache ? &cache->fw : nullptr);
    lstm_scan(seq, bw_order, w.bwd, hbv, cache ? &cache->bw : nullptr);
    Tensor<T> out({Tn, Hc, Hh, Ww});
    const size_t fsz = size_t(Hc) * Hh * Ww;
    for (int t = 0; t < Tn; ++t)
        for (size_t q = 0; q < fsz; ++q)
            out.v[size_t(t) * fsz + q] =
                hf[size_t(t)].v[q] + hbv[size_t(Tn - 1 - t)].v[q];
    return out;
}

template <typename T>
void bi_convlstm_backward(const BiLstmWeights<T>& w, const BiLstmCache<T>& cache,
                          const Tensor<T>& dout, Tensor<T>& dseq,
                          BiLstmWeights<T>& gw)
{
    const int Tn = dout.dim(0), Hc = dout.dim(1);
    const int Hh = dout.dim(2), Ww = dout.dim(3);
    const size_t fsz = size_t(Hc) * Hh * Ww;
    std::vector<int> fw_order(static_cast<size_t>(Tn)), bw_order(static_cast<size_t>(Tn));
    for (int t = 0; t < Tn; ++t) {
        fw_order[size_t(t)] = t;
        bw_order[size_t(t)] = Tn - 1 - t;
    }
    std::vector<Tensor<T>> dh_f(static_cast<size_t>(Tn)), dh_b(static_cast<size_t>(Tn));
    for (int t = 0; t < Tn; ++t) {
        Tensor<T> g({1, Hc, Hh, Ww});
        std::copy(dout.v.begin() + size_t(t) * fsz,
                  dout.v.begin() + size_t(t + 1) * fsz, g.v.begin());
        dh_f[size_t(t)] = g;
        dh_b[size_t(Tn - 1 - t)] = std::move(g);
    }
    lstm_scan_backward(fw_order, w.fwd, cache.fw, dh_f, dseq, gw.fwd);
    lstm_scan_backward(bw_order, w.bwd, cache.bw, dh_b, dseq, gw.bwd);
}

// ---- blind aggregation ----

// Sum over time excluding the middle frame's output. T == 1 degenerates to
// zeros with a warning.
template <typename T>
Tensor<T> aggregate_blind(const Tensor<T>& lstm_out, int middle_index)
{
    const int Tn = lstm_out.dim(0), C = lstm_out.dim(1);
    const int Hh = lstm_out.dim(2), Ww = lstm_out.dim(3);
    if (middle_index < 0 || middle_index >= Tn)
        throw Error(Err::InvalidArgument, "middle index out of range");
    Tensor<T> out({C, Hh, Ww});
    out.fill(T(0));
    if (Tn == 1) {
        log::warn("aggregate over a single frame is an empty sum; output is zero");
        return out;
    }
    const size_t fsz = size_t(C) * Hh * Ww;
    for (int t = 0; t < Tn; ++t) {
        if (t == middle_index) continue;
        for (size_t q = 0; q < fsz; ++q) out.v[q] += lstm_out.v[size_t(t) * fsz + q];
    }
    return out;
}

// ---- full forward / backward ----

template <typename T>
struct PriorPrediction {
    Tensor<T> mu;       // [H, W]
    Tensor<T> log_var;  // [H, W]; sigma_x^2 = clamp(exp, 1e-6, 1e6)
};

template <typename T>
struct PriorCache {
    Tensor<T> input;  // [Tn, 1, H, W] post strict-zeroing
    BlockCache<T> enc1, enc2, enc3, dec2, dec1;
    SeCache<T> se2, se3, sed2;
    Tensor<T> e2s, e3s, d2s;  // post-SE activations
    BiLstmCache<T> bot, tail;
    Tensor<T> bsum;   // bottleneck bi-lstm output [Tn, hb, H, W]
    Tensor<T> tsum;   // tail bi-lstm output [Tn, ht, H, W]
    Tensor<T> agg;    // [1, ht, H, W]
    Tensor<T> h1, h2; // head activations post-relu
    int middle = 0;
};

// frames: [Tn, H, W] single-channel sequence, middle at index k.
template <typename T>
PriorPrediction<T> predict_prior(const ModelState<T>& st, const Tensor<T>& frames,
                                 PriorCache<T>* cache = nullptr)
{
    const ModelConfig& cfg = st.config;
    if (frames.rank() != 3)
        throw Error(Err::InvalidArgument, "predict_prior expects [T, H, W] frames");
    const int Tn = frames.dim(0), H = frames.dim(1), W = frames.dim(2);
    if (Tn != 2 * cfg.k + 1)
        throw Error(Err::InvalidArgument, "frame count does not match config k");
    const int mid = cfg.k;

    PriorCache<T> local;
    PriorCache<T>& cc = cache ? *cache : local;
    cc.middle = mid;
    cc.input.resize({Tn, 1, H, W});
    std::copy(frames.v.begin(), frames.v.end(), cc.input.v.begin());
    if (cfg.blind_mode == BlindMode::strict) {
        T* p = cc.input.data() + size_t(mid) * H * W;
        std::fill(p, p + size_t(H) * W, T(0));
    }

    block_forward(st.enc1, cc.input, cc.enc1);
    block_forward(st.enc2, cc.enc1.out, cc.enc2);
    se_forward(st.se2, cc.enc2.out, cc.se2, cc.e2s);
    block_forward(st.enc3, cc.e2s, cc.enc3);
    se_forward(st.se3, cc.enc3.out, cc.se3, cc.e3s);

    cc.bsum = bi_convlstm(cc.e3s, st.bot, cache ? &cc.bot : nullptr);

    block_forward(st.dec2, concat_channels(cc.bsum, cc.e2s), cc.dec2);
    se_forward(st.sed2, cc.dec2.out, cc.sed2, cc.d2s);
    block_forward(st.dec1, concat_channels(cc.d2s, cc.enc1.out), cc.dec1);

    cc.tsum = bi_convlstm(cc.dec1.out, st.tail, cache ? &cc.tail : nullptr);
    cc.agg = aggregate_blind(cc.tsum, mid);
    cc.agg.shape = {1, cc.agg.dim(0), cc.agg.dim(1), cc.agg.dim(2)};

    kernels::conv2d_fwd(cc.agg, st.head1, cc.h1);
    relu_inplace(cc.h1);
    kernels::conv2d_fwd(cc.h1, st.head2, cc.h2);
    relu_inplace(cc.h2);
    Tensor<T> outc;
    kernels::conv2d_fwd(cc.h2, st.head_out, outc);

    PriorPrediction<T> pred;
    pred.mu.resize({H, W});
    pred.log_var.resize({H, W});
    std::copy(outc.v.begin(), outc.v.begin() + size_t(H) * W, pred.mu.v.begin());
    std::copy(outc.v.begin() + size_t(H) * W, outc.v.end(), pred.log_var.v.begin());
    return pred;
}

// SequenceSample entry point: frames arrive as [2k+1, Z', U'] with the
// middle at sample.middle_index.
template <typename T>
PriorPrediction<T> predict_prior(const ModelState<T>& st,
                                 const projsim::SequenceSample& sample,
                                 PriorCache<T>* cache = nullptr)
{
    if (sample.middle_index != st.config.k)
        throw Error(Err::InvalidArgument,
                    "sample middle index does not match config k");
    if constexpr (std::is_same_v<T, float>)
        return predict_prior(st, sample.frames, cache);
    else
        return predict_prior(st, sample.frames.template cast<T>(), cache);
}

// Accumulates parameter gradients into `grads` (zero_like shapes) given
// dL/dmu and dL/dlog_var.
template <typename T>
void backward_prior(const ModelState<T>& st, const PriorCache<T>& cc,
                    const Tensor<T>& dmu, const Tensor<T>& dlog_var,
                    ModelState<T>& grads)
{
    const int Tn = cc.input.dim(0), H = cc.input.dim(2), W = cc.input.dim(3);
    const size_t plane = size_t(H) * W;

    // head
    Tensor<T> doutc({1, 2, H, W});
    std::copy(dmu.v.begin(), dmu.v.end(), doutc.v.begin());
    std::copy(dlog_var.v.begin(), dlog_var.v.end(), doutc.v.begin() + plane);
    Tensor<T> gho, dh2;
    kernels::conv2d_bwd_weight(doutc, cc.h2, 1, gho);
    for (size_t q = 0; q < gho.size(); ++q) grads.head_out.v[q] += gho.v[q];
    kernels::conv2d_bwd_input(doutc, st.head_out, dh2);
    for (size_t q = 0; q < dh2.size(); ++q)
        if (cc.h2.v[q] <= T(0)) dh2.v[q] = T(0);
    Tensor<T> gh2, dh1;
    kernels::conv2d_bwd_weight(dh2, cc.h1, st.head2.dim(2), gh2);
    for (size_t q = 0; q < gh2.size(); ++q) grads.head2.v[q] += gh2.v[q];
    kernels::conv2d_bwd_input(dh2, st.head2, dh1);
    for (size_t q = 0; q < dh1.size(); ++q)
        if (cc.h1.v[q] <= T(0)) dh1.v[q] = T(0);
    Tensor<T> gh1, dagg;
    kernels::conv2d_bwd_weight(dh1, cc.agg, st.head1.dim(2), gh1);
    for (size_t q = 0; q < gh1.size(); ++q) grads.head1.v[q] += gh1.v[q];
    kernels::conv2d_bwd_input(dh1, st.head1, dagg);

    // aggregate: every non-middle step receives dagg
    const int ht = cc.tsum.dim(1);
    Tensor<T> dtsum({Tn, ht, H, W});
    dtsum.fill(T(0));
    const size_t tfsz = size_t(ht) * plane;
    for (int t = 0; t < Tn; ++t) {
        if (t == cc.middle || Tn == 1) continue;
        std::copy(dagg.v.begin(), dagg.v.end(), dtsum.v.begin() + size_t(t) * tfsz);
    }

    // tail bi-lstm
    const int c1n = cc.dec1.out.dim(1);
    Tensor<T> dd1out({Tn, c1n, H, W});
    dd1out.fill(T(0));
    bi_convlstm_backward(st.tail, cc.tail, dtsum, dd1out, grads.tail);

    // dec1 block (input = concat(d2s, enc1.out))
    Tensor<T> dd1in;
    block_backward(st.dec1, cc.dec1, dd1out, dd1in, grads.dec1);
    const int c2n = cc.d2s.dim(1);
    Tensor<T> dd2s({Tn, c2n, H, W}), de1out_skip({Tn, cc.enc1.out.dim(1), H, W});
    dd2s.fill(T(0));
    de1out_skip.fill(T(0));
    split_channels_add(dd1in, dd2s, de1out_skip);

    // dec2 SE + block (input = concat(bsum, e2s))
    Tensor<T> dd2out;
    se_backward(st.sed2, cc.sed2, dd2s, dd2out, grads.sed2);
    Tensor<T> dd2in;
    block_backward(st.dec2, cc.dec2, dd2out, dd2in, grads.dec2);
    const int hb = cc.bsum.dim(1);
    Tensor<T> dbsum({Tn, hb, H, W}), de2s_skip({Tn, c2n, H, W});
    dbsum.fill(T(0));
    de2s_skip.fill(T(0));
    split_channels_add(dd2in, dbsum, de2s_skip);

    // bottleneck bi-lstm
    const int c3n = cc.e3s.dim(1);
    Tensor<T> de3s({Tn, c3n, H, W});
    de3s.fill(T(0));
    bi_convlstm_backward(st.bot, cc.bot, dbsum, de3s, grads.bot);

    // encoder level 3 (SE then block)
    Tensor<T> de3out;
    se_backward(st.se3, cc.se3, de3s, de3out, grads.se3);
    Tensor<T> de2s_enc;
    block_backward(st.enc3, cc.enc3, de3out, de2s_enc, grads.enc3);
    for (size_t q = 0; q < de2s_enc.size(); ++q) de2s_enc.v[q] += de2s_skip.v[q];

    // encoder level 2
    Tensor<T> de2out;
    se_backward(st.se2, cc.se2, de2s_enc, de2out, grads.se2);
    Tensor<T> de1out;
    block_backward(st.enc2, cc.enc2, de2out, de1out, grads.enc2);
    for (size_t q = 0; q < de1out.size(); ++q) de1out.v[q] += de1out_skip.v[q];

    // encoder level 1 (input gradient discarded)
    Tensor<T> dinput;
    block_backward(st.enc1, cc.enc1, de1out, dinput, grads.enc1);
}

// Final-level per-frame features (the public encode contract).
template <typename T>
Tensor<T> encode_frame(const ModelState<T>& st, const Tensor<T>& frame)
{
    if (frame.rank() != 3 || frame.dim(0) != 1)
        throw Error(Err::InvalidArgument, "encode_frame expects a 1 x H x W frame");
    Tensor<T> in({1, 1, frame.dim(1), frame.dim(2)});
    std::copy(frame.v.begin(), frame.v.end(), in.v.begin());
    BlockCache<T> b1, b2, b3;
    SeCache<T> s2, s3;
    Tensor<T> e2s, e3s;
    block_forward(st.enc1, in, b1);
    block_forward(st.enc2, b1.out, b2);
    se_forward(st.se2, b2.out, s2, e2s);
    block_forward(st.enc3, e2s, b3);
    se_forward(st.se3, b3.out, s3, e3s);
    Tensor<T> out({e3s.dim(1), e3s.dim(2), e3s.dim(3)});
    std::copy(e3s.v.begin(), e3s.v.end(), out.v.begin());
    return out;
}

// Standalone channel attention on a [C, H, W] feature map.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& features, const SeWeights<T>& w)
{
    Tensor<T> in({1, features.dim(0), features.dim(1), features.dim(2)});
    std::copy(features.v.begin(), features.v.end(), in.v.begin());
    SeCache<T> cc;
    Tensor<T> out4;
    se_forward(w, in, cc, out4);
    Tensor<T> out(features.shape);
    std::copy(out4.v.begin(), out4.v.end(), out.v.begin());
    return out;
}

} // namespace n2ntd::model
