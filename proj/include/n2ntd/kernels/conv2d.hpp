#pragma once

#include "n2ntd/core/parallel.hpp"
#include "n2ntd/core/tensor.hpp"

#include <algorithm>

namespace n2ntd::kernels {

// 2-D convolution with replicate padding, stride 1, odd square kernels, no
// bias. Activations are [n, c, h, w]; weights are [oc, ic, k, k]. The fast
// entry points are OpenMP-parallel over disjoint output slices and use fused
// per-row tap kernels for k=3 (the hot case); any other k falls back to a
// generic shifted-saxpy path. The reference::* twins are naive serial loops
// kept as the test oracle and benchmarked against the fast path. Fast and
// reference results differ only by floating-point reassociation.
//
// Determinism contract: every output element is produced by exactly one
// thread with a thread-count-independent instruction sequence, so results are
// bit-identical for any OMP_NUM_THREADS and with par::set_enabled(false).

namespace reference {

template <typename T>
void conv2d_fwd(const T* in, int n, int ic, int h, int w,
                const T* wt, int oc, int k, T* out)
{
    const int p = k / 2;
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    T acc = 0;
                    for (int ci = 0; ci < ic; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int yy = std::clamp(y + ky - p, 0, h - 1);
                                const int xx = std::clamp(x + kx - p, 0, w - 1);
                                acc += wt[((size_t(o) * ic + ci) * k + ky) * k + kx]
                                     * in[((size_t(b) * ic + ci) * h + yy) * w + xx];
                            }
                    out[((size_t(b) * oc + o) * h + y) * w + x] = acc;
                }
}

template <typename T>
void conv2d_bwd_input(const T* gout, int n, int oc, int h, int w,
                      const T* wt, int ic, int k, T* gin)
{
    const int p = k / 2;
    std::fill(gin, gin + size_t(n) * ic * h * w, T(0));
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const T g = gout[((size_t(b) * oc + o) * h + y) * w + x];
                    for (int ci = 0; ci < ic; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int yy = std::clamp(y + ky - p, 0, h - 1);
                                const int xx = std::clamp(x + kx - p, 0, w - 1);
                                gin[((size_t(b) * ic + ci) * h + yy) * w + xx] +=
                                    g * wt[((size_t(o) * ic + ci) * k + ky) * k + kx];
                            }
                }
}

template <typename T>
void conv2d_bwd_weight(const T* gout, const T* in, int n, int oc, int ic,
                       int h, int w, int k, T* gwt)
{
    const int p = k / 2;
    std::fill(gwt, gwt + size_t(oc) * ic * k * k, T(0));
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const T g = gout[((size_t(b) * oc + o) * h + y) * w + x];
                    for (int ci = 0; ci < ic; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int yy = std::clamp(y + ky - p, 0, h - 1);
                                const int xx = std::clamp(x + kx - p, 0, w - 1);
                                gwt[((size_t(o) * ic + ci) * k + ky) * k + kx] +=
                                    g * in[((size_t(b) * ic + ci) * h + yy) * w + xx];
                            }
                }
}

} // namespace reference

namespace detail {

// Generic shifted-saxpy row pass, any k. Used as fallback and for 1x1 convs.
template <typename T>
void fwd_generic(const T* in, int n, int ic, int h, int w,
                 const T* wt, int oc, int k, T* out)
{
    const int p = k / 2;
    const size_t plane = size_t(h) * w;
#pragma omp parallel for collapse(2) schedule(static) if (par::enabled())
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o) {
            const T* inb = in + size_t(b) * ic * plane;
            T* outp = out + (size_t(b) * oc + o) * plane;
            for (int y = 0; y < h; ++y) {
                T* orow = outp + size_t(y) * w;
                std::fill(orow, orow + w, T(0));
                for (int ci = 0; ci < ic; ++ci) {
                    const T* inc = inb + size_t(ci) * plane;
                    for (int ky = 0; ky < k; ++ky) {
                        const int yy = std::clamp(y + ky - p, 0, h - 1);
                        const T* irow = inc + size_t(yy) * w;
                        for (int kx = 0; kx < k; ++kx) {
                            const T wv = wt[((size_t(o) * ic + ci) * k + ky) * k + kx];
                            const int dx = kx - p;
                            for (int x = 0; x < std::min(-dx, w); ++x)
                                orow[x] += wv * irow[0];
                            const int x0 = std::max(0, -dx);
                            const int x1 = std::min(w, w - dx);
                            const T* src = irow + dx;
#pragma omp simd
                            for (int x = x0; x < x1; ++x)
                                orow[x] += wv * src[x];
                            for (int x = std::max(x1, 0); x < w; ++x)
                                orow[x] += wv * irow[w - 1];
                        }
                    }
                }
            }
        }
}

// Fused 3-tap forward, k == 3 only. One pass per (ci, ky) row pair.
template <typename T>
void fwd_k3(const T* in, int n, int ic, int h, int w,
            const T* wt, int oc, T* out)
{
    const size_t plane = size_t(h) * w;
#pragma omp parallel for collapse(2) schedule(static) if (par::enabled())
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o) {
            const T* inb = in + size_t(b) * ic * plane;
            T* outp = out + (size_t(b) * oc + o) * plane;
            for (int y = 0; y < h; ++y) {
                T* orow = outp + size_t(y) * w;
                std::fill(orow, orow + w, T(0));
                for (int ci = 0; ci < ic; ++ci) {
                    const T* inc = inb + size_t(ci) * plane;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yy = std::clamp(y + ky - 1, 0, h - 1);
                        const T* irow = inc + size_t(yy) * w;
                        const T* wr = wt + ((size_t(o) * ic + ci) * 3 + ky) * 3;
                        const T w0 = wr[0], w1 = wr[1], w2 = wr[2];
                        orow[0] += w0 * irow[0] + w1 * irow[0] + w2 * irow[1];
#pragma omp simd
                        for (int x = 1; x < w - 1; ++x)
                            orow[x] += w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
                        orow[w - 1] += w0 * irow[w - 2] + w1 * irow[w - 1] + w2 * irow[w - 1];
                    }
                }
            }
        }
}

template <typename T>
void bwd_input_generic(const T* gout, int n, int oc, int h, int w,
                       const T* wt, int ic, int k, T* gin)
{
    const int p = k / 2;
    const size_t plane = size_t(h) * w;
#pragma omp parallel for collapse(2) schedule(static) if (par::enabled())
    for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < ic; ++ci) {
            T* gplane = gin + (size_t(b) * ic + ci) * plane;
            std::fill(gplane, gplane + plane, T(0));
            for (int o = 0; o < oc; ++o) {
                const T* gp = gout + (size_t(b) * oc + o) * plane;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wt[((size_t(o) * ic + ci) * k + ky) * k + kx];
                        const int dy = ky - p;
                        const int dx = kx - p;
                        for (int y = 0; y < h; ++y) {
                            const int ty = std::clamp(y + dy, 0, h - 1);
                            const T* grow = gp + size_t(y) * w;
                            T* trow = gplane + size_t(ty) * w;
                            for (int x = 0; x < std::min(-dx, w); ++x)
                                trow[0] += wv * grow[x];
                            const int x0 = std::max(0, -dx);
                            const int x1 = std::min(w, w - dx);
                            T* dst = trow + dx;
#pragma omp simd
                            for (int x = x0; x < x1; ++x)
                                dst[x] += wv * grow[x];
                            for (int x = std::max(x1, 0); x < w; ++x)
                                trow[w - 1] += wv * grow[x];
                        }
                    }
            }
        }
}

// k == 3 gather form: the interior is a correlation with the 180-degree
// rotated kernel; the handful of pixels whose scatter targets land on the
// frame border are fixed up with the exact clamped sums afterwards.
template <typename T>
void bwd_input_k3(const T* gout, int n, int oc, int h, int w,
                  const T* wt, int ic, T* gin)
{
    const size_t plane = size_t(h) * w;
#pragma omp parallel for collapse(2) schedule(static) if (par::enabled())
    for (int b = 0; b < n; ++b)
        for (int ci = 0; ci < ic; ++ci) {
            T* dplane = gin + (size_t(b) * ic + ci) * plane;
            std::fill(dplane, dplane + plane, T(0));
            for (int o = 0; o < oc; ++o) {
                const T* gp = gout + (size_t(b) * oc + o) * plane;
                const T* wr = wt + (size_t(o) * ic + ci) * 9;
                for (int y = 1; y < h - 1; ++y) {
                    T* drow = dplane + size_t(y) * w;
                    for (int ky = 0; ky < 3; ++ky) {
                        const T* grow = gp + size_t(y - (ky - 1)) * w;
                        const T w0 = wr[ky * 3 + 0], w1 = wr[ky * 3 + 1], w2 = wr[ky * 3 + 2];
#pragma omp simd
                        for (int x = 1; x < w - 1; ++x)
                            drow[x] += w0 * grow[x + 1] + w1 * grow[x] + w2 * grow[x - 1];
                    }
                }
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        const T wv = wr[ky * 3 + kx];
                        for (int y = 0; y < h; ++y) {
                            const int ty = y + dy;
                            const T* grow = gp + size_t(y) * w;
                            if (ty <= 0 || ty >= h - 1) {
                                // whole target row is on the border
                                T* trow = dplane + size_t(std::clamp(ty, 0, h - 1)) * w;
                                for (int x = 0; x < w; ++x)
                                    trow[std::clamp(x + dx, 0, w - 1)] += wv * grow[x];
                            } else {
                                // interior row: only first/last target columns
                                T* trow = dplane + size_t(ty) * w;
                                for (int x = 0; x <= -dx && x < w; ++x)
                                    trow[0] += wv * grow[x];
                                for (int x = std::max(0, w - 1 - dx); x < w; ++x)
                                    trow[w - 1] += wv * grow[x];
                            }
                        }
                    }
                }
            }
        }
}

template <typename T>
void bwd_weight_generic(const T* gout, const T* in, int n, int oc, int ic,
                        int h, int w, int k, T* gwt)
{
    const int p = k / 2;
    const size_t plane = size_t(h) * w;
#pragma omp parallel for collapse(2) schedule(static) if (par::enabled())
    for (int o = 0; o < oc; ++o)
        for (int ci = 0; ci < ic; ++ci)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const int dy = ky - p;
                    const int dx = kx - p;
                    T acc = 0;
                    for (int b = 0; b < n; ++b) {
                        const T* gp = gout + (size_t(b) * oc + o) * plane;
                        const T* ip = in + (size_t(b) * ic + ci) * plane;
                        for (int y = 0; y < h; ++y) {
                            const int yy = std::clamp(y + dy, 0, h - 1);
                            const T* grow = gp + size_t(y) * w;
                            const T* irow = ip + size_t(yy) * w;
                            T racc = 0;
                            for (int x = 0; x < std::min(-dx, w); ++x)
                                racc += grow[x] * irow[0];
                            const int x0 = std::max(0, -dx);
                            const int x1 = std::min(w, w - dx);
                            const T* src = irow + dx;
#pragma omp simd reduction(+ : racc)
                            for (int x = x0; x < x1; ++x)
                                racc += grow[x] * src[x];
                            for (int x = std::max(x1, 0); x < w; ++x)
                                racc += grow[x] * irow[w - 1];
                            acc += racc;
                        }
                    }
                    gwt[((size_t(o) * ic + ci) * k + ky) * k + kx] = acc;
                }
}

// k == 3: one pass per (y, ky) row pair accumulating the three kx taps.
template <typename T>
void bwd_weight_k3(const T* gout, const T* in, int n, int oc, int ic,
                   int h, int w, T* gwt)
{
    const size_t plane = size_t(h) * w;
#pragma omp parallel for collapse(2) schedule(static) if (par::enabled())
    for (int o = 0; o < oc; ++o)
        for (int ci = 0; ci < ic; ++ci) {
            T acc[9] = {};
            for (int b = 0; b < n; ++b) {
                const T* gp = gout + (size_t(b) * oc + o) * plane;
                const T* ip = in + (size_t(b) * ic + ci) * plane;
                for (int y = 0; y < h; ++y) {
                    const T* grow = gp + size_t(y) * w;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yy = std::clamp(y + ky - 1, 0, h - 1);
                        const T* irow = ip + size_t(yy) * w;
                        T a0 = 0, a1 = 0, a2 = 0;
#pragma omp simd reduction(+ : a0, a1, a2)
                        for (int x = 1; x < w - 1; ++x) {
                            const T g = grow[x];
                            a0 += g * irow[x - 1];
                            a1 += g * irow[x];
                            a2 += g * irow[x + 1];
                        }
                        a0 += grow[0] * irow[0] + grow[w - 1] * irow[w - 2];
                        a1 += grow[0] * irow[0] + grow[w - 1] * irow[w - 1];
                        a2 += grow[0] * irow[1] + grow[w - 1] * irow[w - 1];
                        acc[ky * 3 + 0] += a0;
                        acc[ky * 3 + 1] += a1;
                        acc[ky * 3 + 2] += a2;
                    }
                }
            }
            for (int t = 0; t < 9; ++t)
                gwt[(size_t(o) * ic + ci) * 9 + t] = acc[t];
        }
}

} // namespace detail

template <typename T>
void conv2d_fwd(const T* in, int n, int ic, int h, int w,
                const T* wt, int oc, int k, T* out)
{
    if (k == 3 && h >= 2 && w >= 2)
        detail::fwd_k3(in, n, ic, h, w, wt, oc, out);
    else
        detail::fwd_generic(in, n, ic, h, w, wt, oc, k, out);
}

template <typename T>
void conv2d_bwd_input(const T* gout, int n, int oc, int h, int w,
                      const T* wt, int ic, int k, T* gin)
{
    if (k == 3 && h >= 2 && w >= 2)
        detail::bwd_input_k3(gout, n, oc, h, w, wt, ic, gin);
    else
        detail::bwd_input_generic(gout, n, oc, h, w, wt, ic, k, gin);
}

template <typename T>
void conv2d_bwd_weight(const T* gout, const T* in, int n, int oc, int ic,
                       int h, int w, int k, T* gwt)
{
    if (k == 3 && h >= 2 && w >= 2)
        detail::bwd_weight_k3(gout, in, n, oc, ic, h, w, gwt);
    else
        detail::bwd_weight_generic(gout, in, n, oc, ic, h, w, k, gwt);
}

// Tensor-level wrappers. in: [n, ic, h, w]  wt: [oc, ic, k, k]

template <typename T>
void conv2d_fwd(const Tensor<T>& in, const Tensor<T>& wt, Tensor<T>& out)
{
    const int n = in.dim(0), ic = in.dim(1), h = in.dim(2), w = in.dim(3);
    const int oc = wt.dim(0), k = wt.dim(2);
    out.resize({n, oc, h, w});
    conv2d_fwd(in.data(), n, ic, h, w, wt.data(), oc, k, out.data());
}

template <typename T>
void conv2d_bwd_input(const Tensor<T>& gout, const Tensor<T>& wt, Tensor<T>& gin)
{
    const int n = gout.dim(0), oc = gout.dim(1), h = gout.dim(2), w = gout.dim(3);
    const int ic = wt.dim(1), k = wt.dim(2);
    gin.resize({n, ic, h, w});
    conv2d_bwd_input(gout.data(), n, oc, h, w, wt.data(), ic, k, gin.data());
}

template <typename T>
void conv2d_bwd_weight(const Tensor<T>& gout, const Tensor<T>& in, int k,
                       Tensor<T>& gwt)
{
    const int n = gout.dim(0), oc = gout.dim(1), h = gout.dim(2), w = gout.dim(3);
    const int ic = in.dim(1);
    gwt.resize({oc, ic, k, k});
    conv2d_bwd_weight(gout.data(), in.data(), n, oc, ic, h, w, k, gwt.data());
}

} // namespace n2ntd::kernels
