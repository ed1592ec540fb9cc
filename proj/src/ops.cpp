#include "dastm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dastm/error.hpp"
#include "dastm/kernels.hpp"

namespace dastm::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using Backward = std::function<void(Node&)>;

Tensor4 make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor4*> inputs,
                    Backward backward) {
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->data = std::move(data);
    bool needs = false;
    if (grad_enabled())
        for (const Tensor4* t : inputs) needs = needs || t->requires_grad();
    if (needs) {
        node->requires_grad = true;
        for (const Tensor4* t : inputs) node->parents.push_back(t->node());
        node->backward = std::move(backward);
    }
    return Tensor4::from_node(std::move(node));
}

Tensor4 make_result(Shape shape, std::vector<double> data, std::span<const Tensor4> inputs, Backward backward) {
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->data = std::move(data);
    bool needs = false;
    if (grad_enabled())
        for (const Tensor4& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
        node->requires_grad = true;
        for (const Tensor4& t : inputs) node->parents.push_back(t.node());
        node->backward = std::move(backward);
    }
    return Tensor4::from_node(std::move(node));
}

// Decomposes a shape into (outer, length, inner) around one axis.
struct AxisSplit {
    std::size_t outer, length, inner;
};

AxisSplit split_axis(const Shape& s, Axis axis) {
    switch (axis) {
        case Axis::c:
            return {static_cast<std::size_t>(s.n), static_cast<std::size_t>(s.c),
                    static_cast<std::size_t>(s.h) * static_cast<std::size_t>(s.w)};
        case Axis::h:
            return {static_cast<std::size_t>(s.n) * static_cast<std::size_t>(s.c), static_cast<std::size_t>(s.h),
                    static_cast<std::size_t>(s.w)};
        case Axis::w:
        default:
            return {static_cast<std::size_t>(s.n) * static_cast<std::size_t>(s.c) * static_cast<std::size_t>(s.h),
                    static_cast<std::size_t>(s.w), 1};
    }
}

int& axis_dim(Shape& s, Axis axis) {
    switch (axis) {
        case Axis::c:
            return s.c;
        case Axis::h:
            return s.h;
        case Axis::w:
        default:
            return s.w;
    }
}

void conv_forward(const kernels::ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                  std::span<const double> b, std::span<double> out) {
    if (kernels::backend() == kernels::Backend::serial)
        kernels::serial::conv2d_forward(g, in, w, b, out);
    else
        kernels::parallel::conv2d_forward(g, in, w, b, out);
}

void conv_backward(const kernels::ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                   std::span<const double> go, std::span<double> gi, std::span<double> gw, std::span<double> gb) {
    if (kernels::backend() == kernels::Backend::serial)
        kernels::serial::conv2d_backward(g, in, w, go, gi, gw, gb);
    else
        kernels::parallel::conv2d_backward(g, in, w, go, gi, gw, gb);
}

void gemm(int m, int n, int k, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
    if (kernels::backend() == kernels::Backend::serial)
        kernels::serial::gemm(m, n, k, a, b, c, accumulate);
    else
        kernels::parallel::gemm(m, n, k, a, b, c, accumulate);
}

void transpose(int rows, int cols, std::span<const double> in, std::span<double> out) {
    if (kernels::backend() == kernels::Backend::serial)
        kernels::serial::transpose(rows, cols, in, out);
    else
        kernels::parallel::transpose(rows, cols, in, out);
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor4 conv2d(const Tensor4& input, const Tensor4& weight, const Tensor4& bias, int stride, int pad) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (ws.h != ws.w) throw DimensionError("conv2d kernel must be square, got " + ws.str());
    if (ws.c != is.c)
        throw DimensionError("conv2d input has " + std::to_string(is.c) + " channels, kernel expects " +
                             std::to_string(ws.c));
    if (bias.numel() != 0 && bias.numel() != static_cast<std::size_t>(ws.n))
        throw DimensionError("conv2d bias length " + std::to_string(bias.numel()) + " != cout " +
                             std::to_string(ws.n));
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (pad < 0) throw ConfigError("conv2d padding must be >= 0");
    const int k = ws.h;
    const int span_h = is.h + 2 * pad - k;
    const int span_w = is.w + 2 * pad - k;
    if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0)
        throw ConfigError("conv2d output size not integral for input " + is.str() + ", k=" + std::to_string(k) +
                          ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(pad));

    kernels::ConvGeometry g{is.c, is.h, is.w, ws.n, k, stride, pad, span_h / stride + 1, span_w / stride + 1};
    const Shape os{is.n, g.cout, g.hout, g.wout};
    std::vector<double> out(os.numel());
    const std::size_t in_plane = static_cast<std::size_t>(is.c) * is.h * is.w;
    const std::size_t out_plane = static_cast<std::size_t>(g.cout) * g.hout * g.wout;
    for (int n = 0; n < is.n; ++n)
        conv_forward(g, input.data().subspan(n * in_plane, in_plane), weight.data(), bias.data(),
                     std::span(out).subspan(n * out_plane, out_plane));

    const bool has_bias = bias.numel() != 0;
    auto backward = [g, in_plane, out_plane, batch = is.n, has_bias](Node& self) {
        Node& in = *self.parents[0];
        Node& wt = *self.parents[1];
        std::span<double> gw, gb;
        if (wt.requires_grad) gw = wt.ensure_grad();
        if (has_bias && self.parents[2]->requires_grad) gb = self.parents[2]->ensure_grad();
        for (int n = 0; n < batch; ++n) {
            std::span<double> gi;
            if (in.requires_grad) gi = std::span(in.ensure_grad()).subspan(n * in_plane, in_plane);
            conv_backward(g, std::span<const double>(in.data).subspan(n * in_plane, in_plane), wt.data,
                          std::span<const double>(self.grad).subspan(n * out_plane, out_plane), gi, gw, gb);
        }
    };
    if (has_bias) return make_result(os, std::move(out), {&input, &weight, &bias}, backward);
    return make_result(os, std::move(out), {&input, &weight}, backward);
}

Tensor4 linear(const Tensor4& x, const Tensor4& weight, const Tensor4& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.h != 1 || xs.w != 1 || ws.h != 1 || ws.w != 1)
        throw DimensionError("linear expects (n,in,1,1) input and (out,in,1,1) weight, got " + xs.str() + " and " +
                             ws.str());
    if (ws.c != xs.c)
        throw DimensionError("linear input length " + std::to_string(xs.c) + " != weight columns " +
                             std::to_string(ws.c));
    if (bias.numel() != static_cast<std::size_t>(ws.n))
        throw DimensionError("linear bias length " + std::to_string(bias.numel()) + " != rows " +
                             std::to_string(ws.n));
    const int in = ws.c, out = ws.n;
    const Shape os{xs.n, out, 1, 1};
    std::vector<double> y(os.numel());
    for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < out; ++o) {
            double s = 0.0;
            for (int i = 0; i < in; ++i) s += weight[static_cast<std::size_t>(o) * in + i] * x[static_cast<std::size_t>(n) * in + i];
            y[static_cast<std::size_t>(n) * out + o] = s + bias[o];
        }
    return make_result(os, std::move(y), {&x, &weight, &bias}, [in, out, batch = xs.n](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node& bn = *self.parents[2];
        for (int n = 0; n < batch; ++n)
            for (int o = 0; o < out; ++o) {
                const double g = self.grad[static_cast<std::size_t>(n) * out + o];
                if (bn.requires_grad) bn.ensure_grad()[o] += g;
                if (wn.requires_grad) {
                    auto& gw = wn.ensure_grad();
                    for (int i = 0; i < in; ++i)
                        gw[static_cast<std::size_t>(o) * in + i] += g * xn.data[static_cast<std::size_t>(n) * in + i];
                }
                if (xn.requires_grad) {
                    auto& gx = xn.ensure_grad();
                    for (int i = 0; i < in; ++i)
                        gx[static_cast<std::size_t>(n) * in + i] += g * wn.data[static_cast<std::size_t>(o) * in + i];
                }
            }
    });
}

Tensor4 activation(Activation kind, const Tensor4& x) {
    std::vector<double> y(x.numel());
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        return make_result(x.shape(), std::move(y), {&x}, [](Node& self) {
            Node& in = *self.parents[0];
            auto& g = in.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (in.data[i] > 0.0) g[i] += self.grad[i];
        });
    }
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(x[i]);
    return make_result(x.shape(), std::move(y), {&x}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i] * (1.0 - self.data[i]);
    });
}

Tensor4 exponential(const Tensor4& x) {
    std::vector<double> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(x[i]);
    return make_result(x.shape(), std::move(y), {&x}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i];
    });
}

Tensor4 softmax(const Tensor4& x, Axis axis, double tau) {
    if (!(tau > 0.0)) throw ParameterError("softmax temperature must be > 0, got " + std::to_string(tau));
    const AxisSplit sp = split_axis(x.shape(), axis);
    if (sp.length == 0) throw DimensionError("softmax over an empty axis");
    std::vector<double> y(x.numel());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.length * sp.inner + in;
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < sp.length; ++i) m = std::max(m, x[base + i * sp.inner]);
            double s = 0.0;
            for (std::size_t i = 0; i < sp.length; ++i) {
                const double e = std::exp((x[base + i * sp.inner] - m) / tau);
                y[base + i * sp.inner] = e;
                s += e;
            }
            for (std::size_t i = 0; i < sp.length; ++i) y[base + i * sp.inner] /= s;
        }
    return make_result(x.shape(), std::move(y), {&x}, [sp, tau](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.length * sp.inner + in;
                double dot = 0.0;
                for (std::size_t i = 0; i < sp.length; ++i)
                    dot += self.grad[base + i * sp.inner] * self.data[base + i * sp.inner];
                for (std::size_t i = 0; i < sp.length; ++i) {
                    const std::size_t k = base + i * sp.inner;
                    g[k] += self.data[k] * (self.grad[k] - dot) / tau;
                }
            }
    });
}

Tensor4 pool(PoolKind kind, const Tensor4& x) {
    const Shape& s = x.shape();
    bool red_c = false, red_h = false, red_w = false;
    bool is_max = false;
    switch (kind) {
        case PoolKind::global_avg:
            red_h = red_w = true;
            break;
        case PoolKind::global_max:
            red_h = red_w = true;
            is_max = true;
            break;
        case PoolKind::avg_over_w:
            red_w = true;
            break;
        case PoolKind::avg_over_h:
            red_h = true;
            break;
        case PoolKind::mean_over_c:
            red_c = true;
            break;
        case PoolKind::max_over_c:
            red_c = true;
            is_max = true;
            break;
    }
    if ((red_c && s.c == 0) || (red_h && s.h == 0) || (red_w && s.w == 0))
        throw DimensionError("pool over an empty axis of " + s.str());
    const Shape os{s.n, red_c ? 1 : s.c, red_h ? 1 : s.h, red_w ? 1 : s.w};
    const double count = static_cast<double>((red_c ? s.c : 1) * (red_h ? s.h : 1) * (red_w ? s.w : 1));

    // Flat input index -> flat output index.
    std::vector<std::size_t> target(x.numel());
    {
        std::size_t i = 0;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int h = 0; h < s.h; ++h)
                    for (int w = 0; w < s.w; ++w, ++i)
                        target[i] = ((static_cast<std::size_t>(n) * os.c + (red_c ? 0 : c)) * os.h + (red_h ? 0 : h)) *
                                        os.w +
                                    (red_w ? 0 : w);
    }

    if (!is_max) {
        std::vector<double> y(os.numel(), 0.0);
        for (std::size_t i = 0; i < target.size(); ++i) y[target[i]] += x[i];
        for (double& v : y) v /= count;
        return make_result(os, std::move(y), {&x}, [target = std::move(target), count](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < target.size(); ++i) g[i] += self.grad[target[i]] / count;
        });
    }

    std::vector<double> y(os.numel(), -std::numeric_limits<double>::infinity());
    std::vector<std::size_t> arg(os.numel(), std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const std::size_t t = target[i];
        if (arg[t] == std::numeric_limits<std::size_t>::max() || x[i] > y[t]) {
            y[t] = x[i];
            arg[t] = i;
        }
    }
    return make_result(os, std::move(y), {&x}, [arg = std::move(arg)](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t t = 0; t < arg.size(); ++t) g[arg[t]] += self.grad[t];
    });
}

Tensor4 concat(Axis axis, std::span<const Tensor4> parts) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    Shape os = parts[0].shape();
    int total = 0;
    std::vector<std::size_t> lengths;
    for (const Tensor4& p : parts) {
        Shape probe = p.shape();
        Shape ref = os;
        axis_dim(probe, axis) = 0;
        axis_dim(ref, axis) = 0;
        if (!(probe == ref))
            throw DimensionError("concat shape mismatch: " + parts[0].shape().str() + " vs " + p.shape().str());
        Shape ps = p.shape();
        total += axis_dim(ps, axis);
        lengths.push_back(split_axis(p.shape(), axis).length);
    }
    axis_dim(os, axis) = total;
    const AxisSplit osp = split_axis(os, axis);
    std::vector<double> y(os.numel());
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const AxisSplit sp = split_axis(parts[k].shape(), axis);
        const auto src = parts[k].data();
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(src.begin() + o * sp.length * sp.inner, sp.length * sp.inner,
                        y.begin() + (o * osp.length + offset) * osp.inner);
        offset += sp.length;
    }
    return make_result(os, std::move(y), parts, [osp, lengths = std::move(lengths)](Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            const std::size_t len = lengths[k];
            if (p.requires_grad) {
                auto& g = p.ensure_grad();
                for (std::size_t o = 0; o < osp.outer; ++o)
                    for (std::size_t i = 0; i < len * osp.inner; ++i)
                        g[o * len * osp.inner + i] += self.grad[(o * osp.length + offset) * osp.inner + i];
            }
            offset += len;
        }
    });
}

Tensor4 combine(CombineKind kind, const Tensor4& a, const Tensor4& b) {
    switch (kind) {
        case CombineKind::concat_channel: {
            const Tensor4 parts[] = {a, b};
            return concat(Axis::c, parts);
        }
        case CombineKind::concat_spatial: {
            const Tensor4 parts[] = {a, b};
            return concat(Axis::h, parts);
        }
        case CombineKind::add: {
            if (!(a.shape() == b.shape()))
                throw DimensionError("add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
            std::vector<double> y(a.numel());
            for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
            return make_result(a.shape(), std::move(y), {&a, &b}, [](Node& self) {
                for (auto& p : self.parents)
                    if (p->requires_grad) {
                        auto& g = p->ensure_grad();
                        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                    }
            });
        }
        case CombineKind::mul_broadcast:
        default:
            break;
    }
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    auto ok = [](int da, int db) { return db == da || db == 1; };
    if (!ok(as.n, bs.n) || !ok(as.c, bs.c) || !ok(as.h, bs.h) || !ok(as.w, bs.w))
        throw DimensionError("mul_broadcast cannot broadcast " + bs.str() + " onto " + as.str());
    std::vector<std::size_t> bidx(a.numel());
    {
        std::size_t i = 0;
        for (int n = 0; n < as.n; ++n)
            for (int c = 0; c < as.c; ++c)
                for (int h = 0; h < as.h; ++h)
                    for (int w = 0; w < as.w; ++w, ++i)
                        bidx[i] = ((static_cast<std::size_t>(bs.n == 1 ? 0 : n) * bs.c + (bs.c == 1 ? 0 : c)) * bs.h +
                                   (bs.h == 1 ? 0 : h)) *
                                      bs.w +
                                  (bs.w == 1 ? 0 : w);
    }
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[bidx[i]];
    return make_result(as, std::move(y), {&a, &b}, [bidx = std::move(bidx)](Node& self) {
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        if (an.requires_grad) {
            auto& g = an.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.data[bidx[i]];
        }
        if (bn.requires_grad) {
            auto& g = bn.ensure_grad();
            for (std::size_t i = 0; i < bidx.size(); ++i) g[bidx[i]] += self.grad[i] * an.data[i];
        }
    });
}

Tensor4 slice(const Tensor4& x, Axis axis, int start, int length) {
    const AxisSplit sp = split_axis(x.shape(), axis);
    if (start < 0 || length < 0 || static_cast<std::size_t>(start + length) > sp.length)
        throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of range for " + x.shape().str());
    Shape os = x.shape();
    axis_dim(os, axis) = length;
    std::vector<double> y(os.numel());
    const std::size_t chunk = static_cast<std::size_t>(length) * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(x.data().begin() + (o * sp.length + start) * sp.inner, chunk, y.begin() + o * chunk);
    return make_result(os, std::move(y), {&x}, [sp, start, chunk](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < chunk; ++i) g[(o * sp.length + start) * sp.inner + i] += self.grad[o * chunk + i];
    });
}

Tensor4 reshape(const Tensor4& x, Shape shape) {
    if (shape.numel() != x.numel())
        throw DimensionError("reshape " + x.shape().str() + " -> " + shape.str() + " changes element count");
    std::vector<double> y(x.values());
    return make_result(shape, std::move(y), {&x}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor4 transpose_hw(const Tensor4& x) {
    const Shape& s = x.shape();
    const Shape os{s.n, s.c, s.w, s.h};
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    std::vector<double> y(x.numel());
    for (std::size_t p = 0; p < planes; ++p)
        transpose(s.h, s.w, x.data().subspan(p * plane, plane), std::span(y).subspan(p * plane, plane));
    return make_result(os, std::move(y), {&x}, [s, plane, planes](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        std::vector<double> back(plane);
        for (std::size_t p = 0; p < planes; ++p) {
            transpose(s.w, s.h, std::span<const double>(self.grad).subspan(p * plane, plane), back);
            for (std::size_t i = 0; i < plane; ++i) g[p * plane + i] += back[i];
        }
    });
}

Tensor4 matmul(const Tensor4& a, const Tensor4& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.c != 1 || bs.c != 1 || as.n != bs.n || as.w != bs.h)
        throw DimensionError("matmul expects (n,1,p,q) x (n,1,q,r), got " + as.str() + " x " + bs.str());
    const int p = as.h, q = as.w, r = bs.w;
    const Shape os{as.n, 1, p, r};
    std::vector<double> y(os.numel());
    const std::size_t asz = static_cast<std::size_t>(p) * q, bsz = static_cast<std::size_t>(q) * r,
                      csz = static_cast<std::size_t>(p) * r;
    for (int n = 0; n < as.n; ++n)
        gemm(p, r, q, a.data().subspan(n * asz, asz), b.data().subspan(n * bsz, bsz), std::span(y).subspan(n * csz, csz),
             false);
    return make_result(os, std::move(y), {&a, &b}, [p, q, r, asz, bsz, csz, batch = as.n](Node& self) {
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        for (int n = 0; n < batch; ++n) {
            const auto gc = std::span<const double>(self.grad).subspan(n * csz, csz);
            if (an.requires_grad) {
                // dA = dC * B^T
                std::vector<double> bt(bsz);
                transpose(q, r, std::span<const double>(bn.data).subspan(n * bsz, bsz), bt);
                gemm(p, q, r, gc, bt, std::span(an.ensure_grad()).subspan(n * asz, asz), true);
            }
            if (bn.requires_grad) {
                // dB = A^T * dC
                std::vector<double> at(asz);
                transpose(p, q, std::span<const double>(an.data).subspan(n * asz, asz), at);
                gemm(q, r, p, at, gc, std::span(bn.ensure_grad()).subspan(n * bsz, bsz), true);
            }
        }
    });
}

Tensor4 scale(const Tensor4& x, double s) {
    std::vector<double> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * s;
    return make_result(x.shape(), std::move(y), {&x}, [s](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

Tensor4 sum(const Tensor4& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({1, 1, 1, 1}, {s}, {&x}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor4 bce_with_logits(const Tensor4& logits, const Tensor4& targets, const Tensor4& mask, bool subtract_entropy) {
    if (!(logits.shape() == targets.shape()) || !(logits.shape() == mask.shape()))
        throw DimensionError("bce_with_logits shape mismatch: " + logits.shape().str() + ", " +
                             targets.shape().str() + ", " + mask.shape().str());
    double norm = 0.0;
    for (double m : mask.data()) norm += m;
    double total = 0.0;
    if (norm > 0.0) {
        for (std::size_t i = 0; i < logits.numel(); ++i) {
            if (mask[i] == 0.0) continue;
            const double x = logits[i], t = targets[i];
            double l = std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
            if (subtract_entropy) {
                if (t > 0.0) l += t * std::log(t);
                if (t < 1.0) l += (1.0 - t) * std::log1p(-t);
            }
            total += mask[i] * l;
        }
        total /= norm;
    }
    const Tensor4 tgt = targets.detach();
    const Tensor4 msk = mask.detach();
    return make_result({1, 1, 1, 1}, {total}, {&logits}, [tgt, msk, norm](Node& self) {
        if (norm <= 0.0) return;
        auto& g = self.parents[0]->ensure_grad();
        const auto& x = self.parents[0]->data;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (msk[i] != 0.0) g[i] += self.grad[0] * msk[i] * (stable_sigmoid(x[i]) - tgt[i]) / norm;
    });
}

Tensor4 iou_loss(const Tensor4& pred, const Tensor4& target, const Tensor4& mask) {
    const Shape& ps = pred.shape();
    const Shape& ms = mask.shape();
    if (!(ps == target.shape()) || ps.c != 4 || ms.n != ps.n || ms.c != 1 || ms.h != ps.h || ms.w != ps.w)
        throw DimensionError("iou_loss expects (n,4,h,w) boxes and (n,1,h,w) mask, got " + ps.str() + ", " +
                             target.shape().str() + ", " + ms.str());
    const std::size_t plane = static_cast<std::size_t>(ps.h) * ps.w;
    double norm = 0.0;
    for (double m : mask.data()) norm += m;
    double total = 0.0;
    auto at = [&](const Tensor4& t, int n, int k, std::size_t pix) {
        return t[(static_cast<std::size_t>(n) * 4 + k) * plane + pix];
    };
    if (norm > 0.0) {
        for (int n = 0; n < ps.n; ++n)
            for (std::size_t pix = 0; pix < plane; ++pix) {
                const double m = mask[n * plane + pix];
                if (m == 0.0) continue;
                const double pl = at(pred, n, 0, pix), pt = at(pred, n, 1, pix), pr = at(pred, n, 2, pix),
                             pb = at(pred, n, 3, pix);
                const double tl = at(target, n, 0, pix), tt = at(target, n, 1, pix), tr = at(target, n, 2, pix),
                             tb = at(target, n, 3, pix);
                const double inter = (std::min(pl, tl) + std::min(pr, tr)) * (std::min(pt, tt) + std::min(pb, tb));
                const double uni = (pl + pr) * (pt + pb) + (tl + tr) * (tt + tb) - inter;
                const double iou = uni > 0.0 ? inter / uni : 0.0;
                total += m * (1.0 - iou);
            }
        total /= norm;
    }
    const Tensor4 tgt = target.detach();
    const Tensor4 msk = mask.detach();
    return make_result({1, 1, 1, 1}, {total}, {&pred}, [tgt, msk, norm, plane, batch = ps.n](Node& self) {
        if (norm <= 0.0) return;
        Node& pn = *self.parents[0];
        auto& g = pn.ensure_grad();
        const double upstream = self.grad[0];
        for (int n = 0; n < batch; ++n)
            for (std::size_t pix = 0; pix < plane; ++pix) {
                const double m = msk[n * plane + pix];
                if (m == 0.0) continue;
                std::size_t idx[4];
                double p[4], t[4];
                for (int k = 0; k < 4; ++k) {
                    idx[k] = (static_cast<std::size_t>(n) * 4 + k) * plane + pix;
                    p[k] = pn.data[idx[k]];
                    t[k] = tgt[idx[k]];
                }
                const double iw = std::min(p[0], t[0]) + std::min(p[2], t[2]);
                const double ih = std::min(p[1], t[1]) + std::min(p[3], t[3]);
                const double inter = iw * ih;
                const double uni = (p[0] + p[2]) * (p[1] + p[3]) + (t[0] + t[2]) * (t[1] + t[3]) - inter;
                if (!(uni > 0.0)) continue;
                double d_inter[4], d_area[4];
                d_inter[0] = p[0] <= t[0] ? ih : 0.0;
                d_inter[2] = p[2] <= t[2] ? ih : 0.0;
                d_inter[1] = p[1] <= t[1] ? iw : 0.0;
                d_inter[3] = p[3] <= t[3] ? iw : 0.0;
                d_area[0] = d_area[2] = p[1] + p[3];
                d_area[1] = d_area[3] = p[0] + p[2];
                for (int k = 0; k < 4; ++k) {
                    const double d_uni = d_area[k] - d_inter[k];
                    const double d_iou = (d_inter[k] * uni - inter * d_uni) / (uni * uni);
                    g[idx[k]] += -upstream * m * d_iou / norm;
                }
            }
    });
}

}  // namespace dastm::ops
