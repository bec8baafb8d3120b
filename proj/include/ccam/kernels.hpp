#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

// Raw array kernels shared by the plain forward pass and the tape ops, so the
// two paths produce bitwise-identical values.

namespace ccam::kern {

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// in: (ci,h,w), wgt: (co,ci,kh,kw), bias: (co), out: (co,ho,wo)
inline void conv2d(const double* in, int ci, int h, int w, const double* wgt, int co, int kh,
                   int kw, int stride, int pad, const double* bias, double* out, int ho, int wo) {
    for (int oc = 0; oc < co; ++oc) {
        double b = bias ? bias[oc] : 0.0;
        double* o = out + static_cast<std::size_t>(oc) * ho * wo;
        std::fill(o, o + static_cast<std::size_t>(ho) * wo, b);
    }
    for (int oc = 0; oc < co; ++oc) {
        double* o = out + static_cast<std::size_t>(oc) * ho * wo;
        for (int ic = 0; ic < ci; ++ic) {
            const double* x = in + static_cast<std::size_t>(ic) * h * w;
            const double* wrow = wgt + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv = wrow[ky * kw + kx];
                    if (wv == 0.0) continue;
                    // bounds hoisted out of the inner loop for stride 1
                    const int ox0 = stride == 1 ? std::max(0, pad - kx) : 0;
                    const int ox1 = stride == 1 ? std::min(wo, w - kx + pad) : wo;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        double* orow = o + static_cast<std::size_t>(oy) * wo;
                        const double* xrow = x + static_cast<std::size_t>(iy) * w;
                        if (stride == 1) {
                            const double* xs = xrow + kx - pad;
                            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xs[ox];
                        } else {
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= w) continue;
                                orow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

inline void conv2d_back_input(double* din, int ci, int h, int w, const double* wgt, int co, int kh,
                              int kw, int stride, int pad, const double* dout, int ho, int wo) {
    for (int oc = 0; oc < co; ++oc) {
        const double* go = dout + static_cast<std::size_t>(oc) * ho * wo;
        for (int ic = 0; ic < ci; ++ic) {
            double* gx = din + static_cast<std::size_t>(ic) * h * w;
            const double* wrow = wgt + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv = wrow[ky * kw + kx];
                    if (wv == 0.0) continue;
                    const int ox0 = stride == 1 ? std::max(0, pad - kx) : 0;
                    const int ox1 = stride == 1 ? std::min(wo, w - kx + pad) : wo;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const double* grow = go + static_cast<std::size_t>(oy) * wo;
                        double* xrow = gx + static_cast<std::size_t>(iy) * w;
                        if (stride == 1) {
                            double* xs = xrow + kx - pad;
                            for (int ox = ox0; ox < ox1; ++ox) xs[ox] += wv * grow[ox];
                        } else {
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= w) continue;
                                xrow[ix] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

inline void conv2d_back_params(const double* in, int ci, int h, int w, double* dwgt, double* dbias,
                               int co, int kh, int kw, int stride, int pad, const double* dout,
                               int ho, int wo) {
    for (int oc = 0; oc < co; ++oc) {
        const double* go = dout + static_cast<std::size_t>(oc) * ho * wo;
        if (dbias) {
            double s = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) s += go[i];
            dbias[oc] += s;
        }
        for (int ic = 0; ic < ci; ++ic) {
            const double* x = in + static_cast<std::size_t>(ic) * h * w;
            double* wrow = dwgt + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    const int ox0 = stride == 1 ? std::max(0, pad - kx) : 0;
                    const int ox1 = stride == 1 ? std::min(wo, w - kx + pad) : wo;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const double* grow = go + static_cast<std::size_t>(oy) * wo;
                        const double* xrow = x + static_cast<std::size_t>(iy) * w;
                        if (stride == 1) {
                            const double* xs = xrow + kx - pad;
                            for (int ox = ox0; ox < ox1; ++ox) acc += grow[ox] * xs[ox];
                        } else {
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= w) continue;
                                acc += grow[ox] * xrow[ix];
                            }
                        }
                    }
                    wrow[ky * kw + kx] += acc;
                }
            }
        }
    }
}

// 2x2 average pooling, stride 2. Truncates odd trailing rows/cols.
inline void avgpool2(const double* in, int c, int h, int w, double* out, int ho, int wo) {
    for (int ch = 0; ch < c; ++ch) {
        const double* x = in + static_cast<std::size_t>(ch) * h * w;
        double* o = out + static_cast<std::size_t>(ch) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const double* p = x + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                o[static_cast<std::size_t>(oy) * wo + ox] = (p[0] + p[1] + p[w] + p[w + 1]) * 0.25;
            }
        }
    }
}

inline void avgpool2_back(double* din, int c, int h, int w, const double* dout, int ho, int wo) {
    for (int ch = 0; ch < c; ++ch) {
        double* gx = din + static_cast<std::size_t>(ch) * h * w;
        const double* go = dout + static_cast<std::size_t>(ch) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const double g = go[static_cast<std::size_t>(oy) * wo + ox] * 0.25;
                double* p = gx + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                p[0] += g;
                p[1] += g;
                p[w] += g;
                p[w + 1] += g;
            }
        }
    }
}

inline void global_avg_pool(const double* in, int c, int hw, double* out) {
    for (int ch = 0; ch < c; ++ch) {
        const double* x = in + static_cast<std::size_t>(ch) * hw;
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += x[i];
        out[ch] = s / hw;
    }
}

// y = W x + b with W laid out (out, in) row-major.
inline void linear(const double* x, int in, const double* W, int out, const double* b, double* y) {
    for (int o = 0; o < out; ++o) {
        const double* wrow = W + static_cast<std::size_t>(o) * in;
        double acc = b ? b[o] : 0.0;
        for (int i = 0; i < in; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
    }
}

inline void softmax(const double* logits, int n, double* probs) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    for (int i = 0; i < n; ++i) probs[i] /= sum;
}

inline int argmax_first(const double* v, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace ccam::kern
