#include "ccam/autodiff.hpp"

#include <cmath>
#include <memory>

#include "ccam/error.hpp"
#include "ccam/kernels.hpp"

namespace ccam {

int Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    if (requires_grad) n.grad = Tensor(n.value.shape);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Tensor value) { return {push(std::move(value), false, nullptr)}; }

Var Tape::leaf(Tensor value) { return {push(std::move(value), true, nullptr)}; }

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.requires_grad) return n.grad;
    return Tensor(n.value.shape);
}

void Tape::backward(Var scalar) {
    Node& s = nodes_[scalar.id];
    if (s.value.numel() != 1) throw ShapeError("backward expects a scalar, got " + s.value.shape_str());
    for (Node& n : nodes_) {
        if (n.requires_grad) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    }
    if (!s.requires_grad) return;  // scalar does not depend on any leaf
    s.grad.data[0] = 1.0;
    for (int i = scalar.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.back) n.back(*this);
    }
}

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& xt = nodes_[x.id].value;
    const Tensor& wt = nodes_[w.id].value;
    if (xt.ndim() != 3 || wt.ndim() != 4) throw ShapeError("conv2d expects (C,H,W) and (O,C,kh,kw)");
    if (xt.dim(0) != wt.dim(1)) throw ShapeError("conv2d channel mismatch");
    const int ci = xt.dim(0), h = xt.dim(1), wd = xt.dim(2);
    const int co = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
    const int ho = kern::conv_out_dim(h, kh, stride, pad);
    const int wo = kern::conv_out_dim(wd, kw, stride, pad);
    Tensor out({co, ho, wo});
    const double* bias = b.valid() ? nodes_[b.id].value.data.data() : nullptr;
    kern::conv2d(xt.data.data(), ci, h, wd, wt.data.data(), co, kh, kw, stride, pad, bias,
                 out.data.data(), ho, wo);
    bool needs = rg(x) || rg(w) || (b.valid() && rg(b));
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            const Tensor& xv = t.nodes_[x.id].value;
            const Tensor& wv = t.nodes_[w.id].value;
            if (t.rg(x)) {
                kern::conv2d_back_input(t.g(x).data.data(), ci, h, wd, wv.data.data(), co, kh, kw,
                                        stride, pad, go.data.data(), ho, wo);
            }
            if (t.rg(w) || (b.valid() && t.rg(b))) {
                double* dw = t.rg(w) ? t.g(w).data.data() : nullptr;
                double* db = (b.valid() && t.rg(b)) ? t.g(b).data.data() : nullptr;
                if (dw) {
                    kern::conv2d_back_params(xv.data.data(), ci, h, wd, dw, db, co, kh, kw, stride,
                                             pad, go.data.data(), ho, wo);
                } else if (db) {
                    for (int oc = 0; oc < co; ++oc) {
                        double s = 0.0;
                        const double* p = go.data.data() + static_cast<std::size_t>(oc) * ho * wo;
                        for (int i = 0; i < ho * wo; ++i) s += p[i];
                        db[oc] += s;
                    }
                }
            }
        };
    }
    return {id};
}

Var Tape::relu(Var x) {
    const Tensor& xt = nodes_[x.id].value;
    Tensor out = xt;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            const Tensor& xv = t.nodes_[x.id].value;
            Tensor& gx = t.g(x);
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                if (xv.data[i] > 0.0) gx.data[i] += go.data[i];
        };
    }
    return {id};
}

Var Tape::tanh_op(Var x) {
    const Tensor& xt = nodes_[x.id].value;
    Tensor out = xt;
    for (double& v : out.data) v = std::tanh(v);
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            const Tensor& yv = t.nodes_[id].value;
            Tensor& gx = t.g(x);
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                gx.data[i] += go.data[i] * (1.0 - yv.data[i] * yv.data[i]);
        };
    }
    return {id};
}

Var Tape::avg_pool2x2(Var x) {
    const Tensor& xt = nodes_[x.id].value;
    if (xt.ndim() != 3) throw ShapeError("avg_pool2x2 expects (C,H,W)");
    const int c = xt.dim(0), h = xt.dim(1), w = xt.dim(2);
    const int ho = h / 2, wo = w / 2;
    Tensor out({c, ho, wo});
    kern::avgpool2(xt.data.data(), c, h, w, out.data.data(), ho, wo);
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            kern::avgpool2_back(t.g(x).data.data(), c, h, w, t.nodes_[id].grad.data.data(), ho, wo);
        };
    }
    return {id};
}

Var Tape::global_avg_pool(Var x) {
    const Tensor& xt = nodes_[x.id].value;
    if (xt.ndim() != 3) throw ShapeError("global_avg_pool expects (C,H,W)");
    const int c = xt.dim(0);
    const int hw = xt.dim(1) * xt.dim(2);
    Tensor out({c});
    kern::global_avg_pool(xt.data.data(), c, hw, out.data.data());
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            Tensor& gx = t.g(x);
            for (int ch = 0; ch < c; ++ch) {
                const double g = go.data[ch] / hw;
                double* p = gx.data.data() + static_cast<std::size_t>(ch) * hw;
                for (int i = 0; i < hw; ++i) p[i] += g;
            }
        };
    }
    return {id};
}

Var Tape::linear(Var x, Var w, Var b) {
    const Tensor& xt = nodes_[x.id].value;
    const Tensor& wt = nodes_[w.id].value;
    if (wt.ndim() != 2 || xt.numel() != wt.dim(1))
        throw ShapeError("linear: x " + xt.shape_str() + " vs w " + wt.shape_str());
    const int in = wt.dim(1), out_n = wt.dim(0);
    Tensor out({out_n});
    const double* bias = b.valid() ? nodes_[b.id].value.data.data() : nullptr;
    kern::linear(xt.data.data(), in, wt.data.data(), out_n, bias, out.data.data());
    bool needs = rg(x) || rg(w) || (b.valid() && rg(b));
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            const Tensor& xv = t.nodes_[x.id].value;
            const Tensor& wv = t.nodes_[w.id].value;
            if (t.rg(x)) {
                Tensor& gx = t.g(x);
                for (int o = 0; o < out_n; ++o) {
                    const double g = go.data[o];
                    const double* wrow = wv.data.data() + static_cast<std::size_t>(o) * in;
                    for (int i = 0; i < in; ++i) gx.data[i] += g * wrow[i];
                }
            }
            if (t.rg(w)) {
                Tensor& gw = t.g(w);
                for (int o = 0; o < out_n; ++o) {
                    const double g = go.data[o];
                    double* wrow = gw.data.data() + static_cast<std::size_t>(o) * in;
                    for (int i = 0; i < in; ++i) wrow[i] += g * xv.data[i];
                }
            }
            if (b.valid() && t.rg(b)) {
                Tensor& gb = t.g(b);
                for (int o = 0; o < out_n; ++o) gb.data[o] += go.data[o];
            }
        };
    }
    return {id};
}

Var Tape::concat(const std::vector<Var>& xs) {
    if (xs.empty()) throw ConfigError("concat of zero vectors");
    std::int64_t total = 0;
    bool needs = false;
    for (Var v : xs) {
        total += nodes_[v.id].value.numel();
        needs = needs || rg(v);
    }
    Tensor out({static_cast<int>(total)});
    std::int64_t off = 0;
    for (Var v : xs) {
        const Tensor& t = nodes_[v.id].value;
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
        off += t.numel();
    }
    std::vector<Var> parents = xs;
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            std::int64_t o = 0;
            for (Var v : parents) {
                std::int64_t n = t.nodes_[v.id].value.numel();
                if (t.rg(v)) {
                    Tensor& gx = t.g(v);
                    for (std::int64_t i = 0; i < n; ++i) gx.data[i] += go.data[o + i];
                }
                o += n;
            }
        };
    }
    return {id};
}

Var Tape::softmax(Var logits) {
    const Tensor& xt = nodes_[logits.id].value;
    const int n = static_cast<int>(xt.numel());
    Tensor out({n});
    kern::softmax(xt.data.data(), n, out.data.data());
    bool needs = rg(logits);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            const Tensor& p = t.nodes_[id].value;
            Tensor& gx = t.g(logits);
            double gp = 0.0;
            for (int i = 0; i < n; ++i) gp += go.data[i] * p.data[i];
            for (int i = 0; i < n; ++i) gx.data[i] += p.data[i] * (go.data[i] - gp);
        };
    }
    return {id};
}

Var Tape::pick(Var x, int index) {
    const Tensor& xt = nodes_[x.id].value;
    if (index < 0 || index >= xt.numel()) throw IndexError("pick out of range");
    Tensor out({1});
    out.data[0] = xt.data[index];
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) { t.g(x).data[index] += t.nodes_[id].grad.data[0]; };
    }
    return {id};
}

Var Tape::dot(Var a, Var b) {
    const Tensor& at = nodes_[a.id].value;
    const Tensor& bt = nodes_[b.id].value;
    if (at.numel() != bt.numel()) throw ShapeError("dot dimension mismatch");
    Tensor out({1});
    double s = 0.0;
    for (std::size_t i = 0; i < at.data.size(); ++i) s += at.data[i] * bt.data[i];
    out.data[0] = s;
    bool needs = rg(a) || rg(b);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const double g = t.nodes_[id].grad.data[0];
            const Tensor& av = t.nodes_[a.id].value;
            const Tensor& bv = t.nodes_[b.id].value;
            if (t.rg(a)) {
                Tensor& ga = t.g(a);
                for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g * bv.data[i];
            }
            if (t.rg(b)) {
                Tensor& gb = t.g(b);
                for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g * av.data[i];
            }
        };
    }
    return {id};
}

Var Tape::l2_normalize(Var x) {
    const Tensor& xt = nodes_[x.id].value;
    double norm = 0.0;
    for (double v : xt.data) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        // direction of a zero vector is undefined; emit zeros with no gradient
        return constant(Tensor(xt.shape));
    }
    Tensor out = xt;
    for (double& v : out.data) v /= norm;
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            const Tensor& xv = t.nodes_[x.id].value;
            Tensor& gx = t.g(x);
            double xg = 0.0;
            for (std::size_t i = 0; i < xv.data.size(); ++i) xg += xv.data[i] * go.data[i];
            const double inv = 1.0 / norm;
            const double inv3 = inv * inv * inv;
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                gx.data[i] += go.data[i] * inv - xv.data[i] * xg * inv3;
        };
    }
    return {id};
}

Var Tape::mse_to(Var x, Tensor target) {
    const Tensor& xt = nodes_[x.id].value;
    if (xt.numel() != target.numel()) throw ShapeError("mse_to dimension mismatch");
    const std::int64_t n = xt.numel();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = xt.data[i] - target.data[i];
        s += d * d;
    }
    Tensor out({1});
    out.data[0] = s / static_cast<double>(n);
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        auto tgt = std::make_shared<Tensor>(std::move(target));
        nodes_[id].back = [=](Tape& t) {
            const double g = t.nodes_[id].grad.data[0] * 2.0 / static_cast<double>(n);
            const Tensor& xv = t.nodes_[x.id].value;
            Tensor& gx = t.g(x);
            for (std::int64_t i = 0; i < n; ++i) gx.data[i] += g * (xv.data[i] - tgt->data[i]);
        };
    }
    return {id};
}

Var Tape::add(Var a, Var b) {
    const Tensor& at = nodes_[a.id].value;
    const Tensor& bt = nodes_[b.id].value;
    if (!at.same_shape(bt)) throw ShapeError("add shape mismatch");
    Tensor out = at;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bt.data[i];
    bool needs = rg(a) || rg(b);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            if (t.rg(a)) {
                Tensor& ga = t.g(a);
                for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += go.data[i];
            }
            if (t.rg(b)) {
                Tensor& gb = t.g(b);
                for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += go.data[i];
            }
        };
    }
    return {id};
}

Var Tape::sub_const(Var x, double c) {
    Tensor out = nodes_[x.id].value;
    for (double& v : out.data) v -= c;
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            Tensor& gx = t.g(x);
            for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += go.data[i];
        };
    }
    return {id};
}

Var Tape::square(Var x) {
    Tensor out = nodes_[x.id].value;
    for (double& v : out.data) v *= v;
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            const Tensor& xv = t.nodes_[x.id].value;
            Tensor& gx = t.g(x);
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                gx.data[i] += go.data[i] * 2.0 * xv.data[i];
        };
    }
    return {id};
}

Var Tape::scale(Var x, double c) {
    Tensor out = nodes_[x.id].value;
    for (double& v : out.data) v *= c;
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            Tensor& gx = t.g(x);
            for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += c * go.data[i];
        };
    }
    return {id};
}

Var Tape::add_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw ConfigError("add_scalars of empty list");
    double s = 0.0;
    bool needs = false;
    for (Var v : xs) {
        s += nodes_[v.id].value.data[0];
        needs = needs || rg(v);
    }
    Tensor out({1});
    out.data[0] = s;
    std::vector<Var> parents = xs;
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const double g = t.nodes_[id].grad.data[0];
            for (Var v : parents)
                if (t.rg(v)) t.g(v).data[0] += g;
        };
    }
    return {id};
}

Var Tape::cross_entropy(Var logits, int label) {
    const Tensor& xt = nodes_[logits.id].value;
    const int n = static_cast<int>(xt.numel());
    if (label < 0 || label >= n) throw IndexError("cross_entropy label out of range");
    // log-sum-exp with max shift
    double mx = xt.data[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, xt.data[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(xt.data[i] - mx);
    Tensor out({1});
    out.data[0] = std::log(sum) + mx - xt.data[label];
    bool needs = rg(logits);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const double g = t.nodes_[id].grad.data[0];
            const Tensor& xv = t.nodes_[logits.id].value;
            Tensor& gx = t.g(logits);
            double m = xv.data[0];
            for (int i = 1; i < n; ++i) m = std::max(m, xv.data[i]);
            double z = 0.0;
            for (int i = 0; i < n; ++i) z += std::exp(xv.data[i] - m);
            for (int i = 0; i < n; ++i) {
                double p = std::exp(xv.data[i] - m) / z;
                gx.data[i] += g * (p - (i == label ? 1.0 : 0.0));
            }
        };
    }
    return {id};
}

Var Tape::tokens_linear(Var x, Var w, Var b) {
    const Tensor& xt = nodes_[x.id].value;
    const Tensor& wt = nodes_[w.id].value;
    if (xt.ndim() != 2 || wt.ndim() != 2 || xt.dim(1) != wt.dim(1))
        throw ShapeError("tokens_linear: x " + xt.shape_str() + " vs w " + wt.shape_str());
    const int n = xt.dim(0), in = wt.dim(1), out_n = wt.dim(0);
    Tensor out({n, out_n});
    const double* bias = b.valid() ? nodes_[b.id].value.data.data() : nullptr;
    for (int tk = 0; tk < n; ++tk)
        kern::linear(xt.data.data() + static_cast<std::size_t>(tk) * in, in, wt.data.data(), out_n,
                     bias, out.data.data() + static_cast<std::size_t>(tk) * out_n);
    bool needs = rg(x) || rg(w) || (b.valid() && rg(b));
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            const Tensor& xv = t.nodes_[x.id].value;
            const Tensor& wv = t.nodes_[w.id].value;
            for (int tk = 0; tk < n; ++tk) {
                const double* grow = go.data.data() + static_cast<std::size_t>(tk) * out_n;
                const double* xrow = xv.data.data() + static_cast<std::size_t>(tk) * in;
                if (t.rg(x)) {
                    double* gxrow = t.g(x).data.data() + static_cast<std::size_t>(tk) * in;
                    for (int o = 0; o < out_n; ++o) {
                        const double gv = grow[o];
                        const double* wrow = wv.data.data() + static_cast<std::size_t>(o) * in;
                        for (int i = 0; i < in; ++i) gxrow[i] += gv * wrow[i];
                    }
                }
                if (t.rg(w)) {
                    Tensor& gw = t.g(w);
                    for (int o = 0; o < out_n; ++o) {
                        const double gv = grow[o];
                        double* wrow = gw.data.data() + static_cast<std::size_t>(o) * in;
                        for (int i = 0; i < in; ++i) wrow[i] += gv * xrow[i];
                    }
                }
                if (b.valid() && t.rg(b)) {
                    Tensor& gb = t.g(b);
                    for (int o = 0; o < out_n; ++o) gb.data[o] += grow[o];
                }
            }
        };
    }
    return {id};
}

Var Tape::token_mean(Var x) {
    const Tensor& xt = nodes_[x.id].value;
    if (xt.ndim() != 2) throw ShapeError("token_mean expects (N,D)");
    const int n = xt.dim(0), d = xt.dim(1);
    Tensor out({d});
    for (int tk = 0; tk < n; ++tk)
        for (int i = 0; i < d; ++i) out.data[i] += xt.at2(tk, i);
    for (int i = 0; i < d; ++i) out.data[i] /= n;
    bool needs = rg(x);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            Tensor& gx = t.g(x);
            for (int tk = 0; tk < n; ++tk)
                for (int i = 0; i < d; ++i) gx.at2(tk, i) += go.data[i] / n;
        };
    }
    return {id};
}

Var Tape::broadcast_add(Var tokens, Var vec) {
    const Tensor& xt = nodes_[tokens.id].value;
    const Tensor& vt = nodes_[vec.id].value;
    if (xt.ndim() != 2 || xt.dim(1) != vt.numel()) throw ShapeError("broadcast_add mismatch");
    const int n = xt.dim(0), d = xt.dim(1);
    Tensor out = xt;
    for (int tk = 0; tk < n; ++tk)
        for (int i = 0; i < d; ++i) out.at2(tk, i) += vt.data[i];
    bool needs = rg(tokens) || rg(vec);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            if (t.rg(tokens)) {
                Tensor& gx = t.g(tokens);
                for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += go.data[i];
            }
            if (t.rg(vec)) {
                Tensor& gv = t.g(vec);
                for (int tk = 0; tk < n; ++tk)
                    for (int i = 0; i < d; ++i) gv.data[i] += go.at2(tk, i);
            }
        };
    }
    return {id};
}

Var Tape::grid_from_tokens(Var tokens, int side) {
    const Tensor& xt = nodes_[tokens.id].value;
    if (xt.ndim() != 2 || xt.dim(0) != side * side)
        throw ShapeError("grid_from_tokens: token count is not side*side");
    const int n = xt.dim(0), d = xt.dim(1);
    Tensor out({d, side, side});
    for (int tk = 0; tk < n; ++tk)
        for (int c = 0; c < d; ++c) out.at3(c, tk / side, tk % side) = xt.at2(tk, c);
    bool needs = rg(tokens);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            Tensor& gx = t.g(tokens);
            for (int tk = 0; tk < n; ++tk)
                for (int c = 0; c < d; ++c) gx.at2(tk, c) += go.at3(c, tk / side, tk % side);
        };
    }
    return {id};
}

Var Tape::tokens_from_grid(Var grid) {
    const Tensor& xt = nodes_[grid.id].value;
    if (xt.ndim() != 3 || xt.dim(1) != xt.dim(2)) throw ShapeError("tokens_from_grid expects (D,S,S)");
    const int d = xt.dim(0), side = xt.dim(1);
    const int n = side * side;
    Tensor out({n, d});
    for (int tk = 0; tk < n; ++tk)
        for (int c = 0; c < d; ++c) out.at2(tk, c) = xt.at3(c, tk / side, tk % side);
    bool needs = rg(grid);
    int id = push(std::move(out), needs, nullptr);
    if (needs) {
        nodes_[id].back = [=](Tape& t) {
            const Tensor& go = t.nodes_[id].grad;
            Tensor& gx = t.g(grid);
            for (int tk = 0; tk < n; ++tk)
                for (int c = 0; c < d; ++c) gx.at3(c, tk / side, tk % side) += go.at2(tk, c);
        };
    }
    return {id};
}

}  // namespace ccam
