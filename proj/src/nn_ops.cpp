#include "orthoct/nn_ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace orthoct {

namespace {

void check_dims(int dims)
{
    if (dims != 2 && dims != 3)
        throw std::invalid_argument("dims must be 2 or 3, got " + std::to_string(dims));
}

// Per-axis parameter list normalized to 3 entries; 2-D runs as
// depth-1 3-D with a neutral leading axis.
std::array<int, 3> axis_param(const std::vector<int>& v, int dims, int neutral, const char* what)
{
    if (!(static_cast<int>(v.size()) == dims || v.size() == 1))
        throw std::invalid_argument(std::string(what) + " must have 1 or dims entries");
    std::array<int, 3> out{neutral, neutral, neutral};
    for (int a = 0; a < dims; ++a)
        out[3 - dims + a] = v.size() == 1 ? v[0] : v[a];
    return out;
}

struct Grid3 {
    int c = 1;
    std::array<int, 3> sp{1, 1, 1};
    int64_t spatial() const { return int64_t(sp[0]) * sp[1] * sp[2]; }
};

Grid3 as_grid(const Shape& shape, int dims, const char* what)
{
    if (static_cast<int>(shape.size()) != dims + 1)
        throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(dims + 1)
            + " tensor [C,*spatial], got " + shape_str(shape));
    Grid3 g;
    g.c = shape[0];
    for (int a = 0; a < dims; ++a)
        g.sp[3 - dims + a] = shape[1 + a];
    return g;
}

Shape grid_shape(int c, const std::array<int, 3>& sp, int dims)
{
    if (dims == 2)
        return {c, sp[1], sp[2]};
    return {c, sp[0], sp[1], sp[2]};
}

template <typename T>
std::vector<T> pad_spatial(const T* src, int channels, const std::array<int, 3>& in,
    const std::array<int, 3>& pad)
{
    const std::array<int, 3> ps{in[0] + 2 * pad[0], in[1] + 2 * pad[1], in[2] + 2 * pad[2]};
    const int64_t psp = int64_t(ps[0]) * ps[1] * ps[2];
    const int64_t isp = int64_t(in[0]) * in[1] * in[2];
    std::vector<T> out(static_cast<size_t>(channels) * psp, T(0));
    for (int c = 0; c < channels; ++c) {
        const T* sc = src + c * isp;
        T* dc = out.data() + c * psp;
        for (int d = 0; d < in[0]; ++d)
            for (int h = 0; h < in[1]; ++h) {
                const T* srow = sc + (int64_t(d) * in[1] + h) * in[2];
                T* drow = dc + (int64_t(d + pad[0]) * ps[1] + (h + pad[1])) * ps[2] + pad[2];
                std::copy(srow, srow + in[2], drow);
            }
    }
    return out;
}

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<NodePtr<T>> parents, std::vector<T> value,
    std::function<void(detail::Node<T>*)> back)
{
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->is_leaf = false;
    for (auto& p : parents)
        if (p->requires_grad)
            n->requires_grad = true;
    if (n->requires_grad) {
        n->grad.assign(n->value.size(), T(0));
        n->parents = std::move(parents);
        detail::Node<T>* raw = n.get();
        n->backprop = [raw, fn = std::move(back)]() { fn(raw); };
    }
    return Tensor<T>::wrap(std::move(n));
}

struct ConvGeom {
    int ci = 0, co = 0;
    std::array<int, 3> in{}, k{}, s{}, p{}, out{};
    int64_t in_sp() const { return int64_t(in[0]) * in[1] * in[2]; }
    int64_t out_sp() const { return int64_t(out[0]) * out[1] * out[2]; }
    std::array<int, 3> padded() const { return {in[0] + 2 * p[0], in[1] + 2 * p[1], in[2] + 2 * p[2]}; }
    int64_t pad_sp() const
    {
        auto ps = padded();
        return int64_t(ps[0]) * ps[1] * ps[2];
    }
    int64_t k_sp() const { return int64_t(k[0]) * k[1] * k[2]; }
};

template <typename T>
void conv_forward(const T* in, const T* kernel, const T* bias, T* out, const ConvGeom& g)
{
    const auto ipad = pad_spatial(in, g.ci, g.in, g.p);
    const auto ps = g.padded();
    const int64_t psp = g.pad_sp(), osp = g.out_sp(), ksp = g.k_sp();
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.co; ++co) {
        T* oc = out + co * osp;
        std::fill(oc, oc + osp, bias ? bias[co] : T(0));
        const T* kc = kernel + int64_t(co) * g.ci * ksp;
        for (int ci = 0; ci < g.ci; ++ci) {
            const T* pc = ipad.data() + ci * psp;
            for (int kd = 0; kd < g.k[0]; ++kd)
                for (int kh = 0; kh < g.k[1]; ++kh)
                    for (int kw = 0; kw < g.k[2]; ++kw) {
                        const T w = kc[((int64_t(ci) * g.k[0] + kd) * g.k[1] + kh) * g.k[2] + kw];
                        for (int od = 0; od < g.out[0]; ++od) {
                            const int id = od * g.s[0] + kd;
                            for (int oh = 0; oh < g.out[1]; ++oh) {
                                const int ih = oh * g.s[1] + kh;
                                const T* ip = pc + (int64_t(id) * ps[1] + ih) * ps[2] + kw;
                                T* op = oc + (int64_t(od) * g.out[1] + oh) * g.out[2];
                                if (g.s[2] == 1)
                                    for (int ow = 0; ow < g.out[2]; ++ow)
                                        op[ow] += w * ip[ow];
                                else
                                    for (int ow = 0; ow < g.out[2]; ++ow)
                                        op[ow] += w * ip[int64_t(ow) * g.s[2]];
                            }
                        }
                    }
        }
    }
}

} // namespace

template <typename T>
Tensor<T> conv(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
    const std::vector<int>& stride, const std::vector<int>& padding, int dims)
{
    check_dims(dims);
    const Grid3 ig = as_grid(input.shape(), dims, "conv input");
    if (static_cast<int>(kernel.shape().size()) != dims + 2)
        throw std::invalid_argument("conv kernel: expected rank " + std::to_string(dims + 2)
            + " [C_out,C_in,*k], got " + shape_str(kernel.shape()));

    ConvGeom g;
    g.ci = ig.c;
    g.co = kernel.shape()[0];
    g.in = ig.sp;
    g.k = {1, 1, 1};
    for (int a = 0; a < dims; ++a)
        g.k[3 - dims + a] = kernel.shape()[2 + a];
    g.s = axis_param(stride, dims, 1, "conv stride");
    g.p = axis_param(padding, dims, 0, "conv padding");
    for (int a = 0; a < 3; ++a) {
        if (g.s[a] < 1)
            throw std::invalid_argument("conv stride must be >= 1");
        if (g.p[a] < 0)
            throw std::invalid_argument("conv padding must be >= 0");
    }
    if (kernel.shape()[1] != g.ci)
        throw std::invalid_argument("conv: kernel expects " + std::to_string(kernel.shape()[1])
            + " input channels, input has " + std::to_string(g.ci));
    if (bias.shape() != Shape{g.co})
        throw std::invalid_argument("conv: bias shape " + shape_str(bias.shape())
            + " does not match C_out " + std::to_string(g.co));
    for (int a = 0; a < 3; ++a) {
        const int padded = g.in[a] + 2 * g.p[a];
        if (g.k[a] > padded)
            throw std::invalid_argument("conv: kernel extent " + std::to_string(g.k[a])
                + " exceeds padded input extent " + std::to_string(padded) + " on axis "
                + std::to_string(a));
        g.out[a] = (padded - g.k[a]) / g.s[a] + 1;
    }

    std::vector<T> out(static_cast<size_t>(g.co) * g.out_sp());
    conv_forward(input.values().data(), kernel.values().data(), bias.values().data(), out.data(), g);

    auto pin = input.handle(), pk = kernel.handle(), pb = bias.handle();
    return make_op<T>(grid_shape(g.co, g.out, dims), {pin, pk, pb}, std::move(out),
        [pin, pk, pb, g](detail::Node<T>* o) {
            const T* gv = o->grad.data();
            const auto ps = g.padded();
            const int64_t psp = g.pad_sp(), osp = g.out_sp(), ksp = g.k_sp();
            if (pb->requires_grad) {
                for (int co = 0; co < g.co; ++co) {
                    T acc = 0;
                    const T* gc = gv + co * osp;
                    for (int64_t i = 0; i < osp; ++i)
                        acc += gc[i];
                    pb->grad[co] += acc;
                }
            }
            if (pk->requires_grad) {
                const auto ipad = pad_spatial(pin->value.data(), g.ci, g.in, g.p);
#pragma omp parallel for schedule(static)
                for (int co = 0; co < g.co; ++co) {
                    const T* gc = gv + co * osp;
                    T* kg = pk->grad.data() + int64_t(co) * g.ci * ksp;
                    for (int ci = 0; ci < g.ci; ++ci) {
                        const T* pc = ipad.data() + ci * psp;
                        for (int kd = 0; kd < g.k[0]; ++kd)
                            for (int kh = 0; kh < g.k[1]; ++kh)
                                for (int kw = 0; kw < g.k[2]; ++kw) {
                                    T acc = 0;
                                    for (int od = 0; od < g.out[0]; ++od) {
                                        const int id = od * g.s[0] + kd;
                                        for (int oh = 0; oh < g.out[1]; ++oh) {
                                            const int ih = oh * g.s[1] + kh;
                                            const T* ip = pc + (int64_t(id) * ps[1] + ih) * ps[2] + kw;
                                            const T* gr = gc + (int64_t(od) * g.out[1] + oh) * g.out[2];
                                            if (g.s[2] == 1)
                                                for (int ow = 0; ow < g.out[2]; ++ow)
                                                    acc += ip[ow] * gr[ow];
                                            else
                                                for (int ow = 0; ow < g.out[2]; ++ow)
                                                    acc += ip[int64_t(ow) * g.s[2]] * gr[ow];
                                        }
                                    }
                                    kg[((int64_t(ci) * g.k[0] + kd) * g.k[1] + kh) * g.k[2] + kw] += acc;
                                }
                    }
                }
            }
            if (pin->requires_grad) {
                std::vector<T> dpad(static_cast<size_t>(g.ci) * psp, T(0));
                const T* kv = pk->value.data();
#pragma omp parallel for schedule(static)
                for (int ci = 0; ci < g.ci; ++ci) {
                    T* dc = dpad.data() + ci * psp;
                    for (int co = 0; co < g.co; ++co) {
                        const T* gc = gv + co * osp;
                        const T* kc = kv + int64_t(co) * g.ci * ksp;
                        for (int kd = 0; kd < g.k[0]; ++kd)
                            for (int kh = 0; kh < g.k[1]; ++kh)
                                for (int kw = 0; kw < g.k[2]; ++kw) {
                                    const T w = kc[((int64_t(ci) * g.k[0] + kd) * g.k[1] + kh) * g.k[2] + kw];
                                    for (int od = 0; od < g.out[0]; ++od) {
                                        const int id = od * g.s[0] + kd;
                                        for (int oh = 0; oh < g.out[1]; ++oh) {
                                            const int ih = oh * g.s[1] + kh;
                                            T* dr = dc + (int64_t(id) * ps[1] + ih) * ps[2] + kw;
                                            const T* gr = gc + (int64_t(od) * g.out[1] + oh) * g.out[2];
                                            if (g.s[2] == 1)
                                                for (int ow = 0; ow < g.out[2]; ++ow)
                                                    dr[ow] += w * gr[ow];
                                            else
                                                for (int ow = 0; ow < g.out[2]; ++ow)
                                                    dr[int64_t(ow) * g.s[2]] += w * gr[ow];
                                        }
                                    }
                                }
                    }
                    // crop the padded gradient back onto the input
                    T* ig = pin->grad.data() + ci * g.in_sp();
                    for (int d = 0; d < g.in[0]; ++d)
                        for (int h = 0; h < g.in[1]; ++h) {
                            const T* srow = dc + (int64_t(d + g.p[0]) * ps[1] + (h + g.p[1])) * ps[2] + g.p[2];
                            T* drow = ig + (int64_t(d) * g.in[1] + h) * g.in[2];
                            for (int w = 0; w < g.in[2]; ++w)
                                drow[w] += srow[w];
                        }
                }
            }
        });
}

template <typename T>
Tensor<T> transposed_conv(const Tensor<T>& input, const Tensor<T>& kernel,
    const std::vector<int>& stride, int dims)
{
    check_dims(dims);
    const Grid3 ig = as_grid(input.shape(), dims, "transposed_conv input");
    if (static_cast<int>(kernel.shape().size()) != dims + 2)
        throw std::invalid_argument("transposed_conv kernel: expected rank " + std::to_string(dims + 2)
            + " [C_src,C_dst,*k], got " + shape_str(kernel.shape()));
    if (kernel.shape()[0] != ig.c)
        throw std::invalid_argument("transposed_conv: kernel expects " + std::to_string(kernel.shape()[0])
            + " input channels, input has " + std::to_string(ig.c));

    const int cs = ig.c;
    const int cd = kernel.shape()[1];
    std::array<int, 3> k{1, 1, 1};
    for (int a = 0; a < dims; ++a)
        k[3 - dims + a] = kernel.shape()[2 + a];
    const auto s = axis_param(stride, dims, 1, "transposed_conv stride");
    for (int a = 0; a < 3; ++a)
        if (s[a] < 1)
            throw std::invalid_argument("transposed_conv stride must be >= 1");

    std::array<int, 3> osz{};
    for (int a = 0; a < 3; ++a)
        osz[a] = (ig.sp[a] - 1) * s[a] + k[a];
    const int64_t isp = ig.spatial();
    const int64_t osp = int64_t(osz[0]) * osz[1] * osz[2];
    const int64_t ksp = int64_t(k[0]) * k[1] * k[2];

    const T* iv = input.values().data();
    const T* kv = kernel.values().data();
    std::vector<T> out(static_cast<size_t>(cd) * osp, T(0));
#pragma omp parallel for schedule(static)
    for (int c1 = 0; c1 < cd; ++c1) {
        T* oc = out.data() + c1 * osp;
        for (int c0 = 0; c0 < cs; ++c0) {
            const T* ic = iv + c0 * isp;
            const T* kc = kv + (int64_t(c0) * cd + c1) * ksp;
            for (int kd = 0; kd < k[0]; ++kd)
                for (int kh = 0; kh < k[1]; ++kh)
                    for (int kw = 0; kw < k[2]; ++kw) {
                        const T w = kc[(int64_t(kd) * k[1] + kh) * k[2] + kw];
                        for (int i0 = 0; i0 < ig.sp[0]; ++i0) {
                            const int o0 = i0 * s[0] + kd;
                            for (int i1 = 0; i1 < ig.sp[1]; ++i1) {
                                const int o1 = i1 * s[1] + kh;
                                const T* ir = ic + (int64_t(i0) * ig.sp[1] + i1) * ig.sp[2];
                                T* orow = oc + (int64_t(o0) * osz[1] + o1) * osz[2] + kw;
                                if (s[2] == 1)
                                    for (int i2 = 0; i2 < ig.sp[2]; ++i2)
                                        orow[i2] += w * ir[i2];
                                else
                                    for (int i2 = 0; i2 < ig.sp[2]; ++i2)
                                        orow[int64_t(i2) * s[2]] += w * ir[i2];
                            }
                        }
                    }
        }
    }

    auto pin = input.handle(), pk = kernel.handle();
    const Grid3 gin = ig;
    return make_op<T>(grid_shape(cd, osz, dims), {pin, pk}, std::move(out),
        [pin, pk, gin, cd, k, s, osz](detail::Node<T>* o) {
            const int cs = gin.c;
            const int64_t isp = gin.spatial();
            const int64_t osp = int64_t(osz[0]) * osz[1] * osz[2];
            const int64_t ksp = int64_t(k[0]) * k[1] * k[2];
            const T* gv = o->grad.data();
#pragma omp parallel for schedule(static)
            for (int c0 = 0; c0 < cs; ++c0) {
                T* dic = pin->requires_grad ? pin->grad.data() + c0 * isp : nullptr;
                T* kgc = pk->requires_grad ? pk->grad.data() + int64_t(c0) * cd * ksp : nullptr;
                const T* ic = pin->value.data() + c0 * isp;
                for (int c1 = 0; c1 < cd; ++c1) {
                    const T* gc = gv + c1 * osp;
                    const T* kc = pk->value.data() + (int64_t(c0) * cd + c1) * ksp;
                    for (int kd = 0; kd < k[0]; ++kd)
                        for (int kh = 0; kh < k[1]; ++kh)
                            for (int kw = 0; kw < k[2]; ++kw) {
                                const int64_t kidx = (int64_t(kd) * k[1] + kh) * k[2] + kw;
                                const T w = kc[kidx];
                                T kacc = 0;
                                for (int i0 = 0; i0 < gin.sp[0]; ++i0) {
                                    const int o0 = i0 * s[0] + kd;
                                    for (int i1 = 0; i1 < gin.sp[1]; ++i1) {
                                        const int o1 = i1 * s[1] + kh;
                                        const T* gr = gc + (int64_t(o0) * osz[1] + o1) * osz[2] + kw;
                                        const int64_t irow = (int64_t(i0) * gin.sp[1] + i1) * gin.sp[2];
                                        for (int i2 = 0; i2 < gin.sp[2]; ++i2) {
                                            const T go = s[2] == 1 ? gr[i2] : gr[int64_t(i2) * s[2]];
                                            if (dic)
                                                dic[irow + i2] += w * go;
                                            if (kgc)
                                                kacc += ic[irow + i2] * go;
                                        }
                                    }
                                }
                                if (kgc)
                                    kgc[int64_t(c1) * ksp + kidx] += kacc;
                            }
                }
            }
        });
}

template <typename T>
Tensor<T> max_pool(const Tensor<T>& input, const std::vector<int>& window, int dims)
{
    check_dims(dims);
    const Grid3 ig = as_grid(input.shape(), dims, "max_pool input");
    const auto w = axis_param(window, dims, 1, "max_pool window");
    std::array<int, 3> osz{};
    for (int a = 0; a < 3; ++a) {
        if (w[a] < 1)
            throw std::invalid_argument("max_pool window must be >= 1");
        if (ig.sp[a] % w[a] != 0)
            throw std::invalid_argument("max_pool: extent " + std::to_string(ig.sp[a])
                + " not divisible by window " + std::to_string(w[a]) + " on axis " + std::to_string(a));
        osz[a] = ig.sp[a] / w[a];
    }
    const int64_t isp = ig.spatial();
    const int64_t osp = int64_t(osz[0]) * osz[1] * osz[2];

    const T* iv = input.values().data();
    std::vector<T> out(static_cast<size_t>(ig.c) * osp);
    std::vector<int64_t> argmax(out.size());
    for (int c = 0; c < ig.c; ++c) {
        const T* ic = iv + c * isp;
        for (int od = 0; od < osz[0]; ++od)
            for (int oh = 0; oh < osz[1]; ++oh)
                for (int ow = 0; ow < osz[2]; ++ow) {
                    T best{};
                    int64_t besti = -1;
                    for (int wd = 0; wd < w[0]; ++wd)
                        for (int wh = 0; wh < w[1]; ++wh)
                            for (int ww = 0; ww < w[2]; ++ww) {
                                const int64_t idx = (int64_t(od * w[0] + wd) * ig.sp[1]
                                                        + (oh * w[1] + wh))
                                        * ig.sp[2]
                                    + (ow * w[2] + ww);
                                if (besti < 0 || ic[idx] > best) {
                                    best = ic[idx];
                                    besti = idx;
                                }
                            }
                    const int64_t oidx = (int64_t(od) * osz[1] + oh) * osz[2] + ow;
                    out[c * osp + oidx] = best;
                    argmax[c * osp + oidx] = c * isp + besti;
                }
    }

    auto pin = input.handle();
    return make_op<T>(grid_shape(ig.c, osz, dims), {pin}, std::move(out),
        [pin, am = std::move(argmax)](detail::Node<T>* o) {
            for (size_t i = 0; i < o->grad.size(); ++i)
                pin->grad[am[i]] += o->grad[i];
        });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gain, const Tensor<T>& shift, T eps)
{
    if (input.shape().size() < 2)
        throw std::invalid_argument("instance_norm: need [C,*spatial] input, got "
            + shape_str(input.shape()));
    const int c = input.shape()[0];
    const int64_t sp = input.size() / c;
    if (sp < 2)
        throw std::invalid_argument("instance_norm: need at least 2 spatial elements per channel");
    if (gain.shape() != Shape{c} || shift.shape() != Shape{c})
        throw std::invalid_argument("instance_norm: gain/shift must be shape [C]");

    const T* iv = input.values().data();
    const T* gv = gain.values().data();
    const T* sv = shift.values().data();
    std::vector<T> out(input.size());
    std::vector<T> mu(c), istd(c);
    for (int ch = 0; ch < c; ++ch) {
        const T* x = iv + ch * sp;
        T m = 0;
        for (int64_t i = 0; i < sp; ++i)
            m += x[i];
        m /= static_cast<T>(sp);
        T var = 0;
        for (int64_t i = 0; i < sp; ++i) {
            const T d = x[i] - m;
            var += d * d;
        }
        var /= static_cast<T>(sp);
        const T is = T(1) / std::sqrt(var + eps);
        mu[ch] = m;
        istd[ch] = is;
        T* y = out.data() + ch * sp;
        for (int64_t i = 0; i < sp; ++i)
            y[i] = (x[i] - m) * is * gv[ch] + sv[ch];
    }

    auto pin = input.handle(), pg = gain.handle(), ps = shift.handle();
    return make_op<T>(input.shape(), {pin, pg, ps}, std::move(out),
        [pin, pg, ps, sp, mu = std::move(mu), istd = std::move(istd)](detail::Node<T>* o) {
            const int c = static_cast<int>(mu.size());
            for (int ch = 0; ch < c; ++ch) {
                const T* x = pin->value.data() + ch * sp;
                const T* dy = o->grad.data() + ch * sp;
                const T m = mu[ch], is = istd[ch];
                T sum_dy = 0, sum_dyx = 0;
                for (int64_t i = 0; i < sp; ++i) {
                    const T xh = (x[i] - m) * is;
                    sum_dy += dy[i];
                    sum_dyx += dy[i] * xh;
                }
                if (pg->requires_grad)
                    pg->grad[ch] += sum_dyx;
                if (ps->requires_grad)
                    ps->grad[ch] += sum_dy;
                if (pin->requires_grad) {
                    const T g = pg->value[ch];
                    const T mdy = sum_dy / static_cast<T>(sp);
                    const T mdyx = sum_dyx / static_cast<T>(sp);
                    T* dx = pin->grad.data() + ch * sp;
                    for (int64_t i = 0; i < sp; ++i) {
                        const T xh = (x[i] - m) * is;
                        dx[i] += g * is * (dy[i] - mdy - xh * mdyx);
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope)
{
    if (!(slope > T(0) && slope < T(1)))
        throw std::invalid_argument("leaky_relu: slope must be in (0,1)");
    std::vector<T> out(input.values().begin(), input.values().end());
    for (T& x : out)
        if (x < T(0))
            x *= slope;
    auto pin = input.handle();
    return make_op<T>(input.shape(), {pin}, std::move(out), [pin, slope](detail::Node<T>* o) {
        for (size_t i = 0; i < o->grad.size(); ++i)
            pin->grad[i] += o->grad[i] * (pin->value[i] > T(0) ? T(1) : slope);
    });
}

namespace {

struct LerpTap {
    int i0, i1;
    double t;
};

// align-corners-false source coordinates, clamped at the borders
std::vector<LerpTap> lerp_taps(int in, int factor)
{
    std::vector<LerpTap> taps(static_cast<size_t>(in) * factor);
    for (int o = 0; o < in * factor; ++o) {
        double s = (o + 0.5) / factor - 0.5;
        s = std::clamp(s, 0.0, double(in - 1));
        const int i0 = static_cast<int>(std::floor(s));
        taps[o] = {i0, std::min(i0 + 1, in - 1), s - i0};
    }
    return taps;
}

} // namespace

template <typename T>
Tensor<T> linear_upsample(const Tensor<T>& input, int factor, int dims)
{
    check_dims(dims);
    if (factor < 2)
        throw std::invalid_argument("linear_upsample: factor must be >= 2");
    const Grid3 ig = as_grid(input.shape(), dims, "linear_upsample input");
    std::array<int, 3> f{1, 1, 1};
    for (int a = 3 - dims; a < 3; ++a)
        f[a] = factor;
    std::array<int, 3> osz{ig.sp[0] * f[0], ig.sp[1] * f[1], ig.sp[2] * f[2]};
    std::array<std::vector<LerpTap>, 3> taps;
    for (int a = 0; a < 3; ++a)
        taps[a] = f[a] == 1 ? std::vector<LerpTap>{{0, 0, 0.0}} : lerp_taps(ig.sp[a], factor);

    const int64_t isp = ig.spatial();
    const int64_t osp = int64_t(osz[0]) * osz[1] * osz[2];
    const T* iv = input.values().data();
    std::vector<T> out(static_cast<size_t>(ig.c) * osp);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < ig.c; ++c) {
        const T* ic = iv + c * isp;
        T* oc = out.data() + c * osp;
        for (int od = 0; od < osz[0]; ++od) {
            const auto& td = taps[0][f[0] == 1 ? 0 : od];
            for (int oh = 0; oh < osz[1]; ++oh) {
                const auto& th = taps[1][oh];
                for (int ow = 0; ow < osz[2]; ++ow) {
                    const auto& tw = taps[2][ow];
                    double acc = 0;
                    for (int a = 0; a < 2; ++a) {
                        const double wa = a ? td.t : 1.0 - td.t;
                        if (wa == 0.0)
                            continue;
                        const int id = a ? td.i1 : td.i0;
                        for (int b = 0; b < 2; ++b) {
                            const double wb = b ? th.t : 1.0 - th.t;
                            if (wb == 0.0)
                                continue;
                            const int ih = b ? th.i1 : th.i0;
                            const T* row = ic + (int64_t(id) * ig.sp[1] + ih) * ig.sp[2];
                            acc += wa * wb
                                * ((1.0 - tw.t) * row[tw.i0] + tw.t * row[tw.i1]);
                        }
                    }
                    oc[(int64_t(od) * osz[1] + oh) * osz[2] + ow] = static_cast<T>(acc);
                }
            }
        }
    }

    auto pin = input.handle();
    const Grid3 gin = ig;
    return make_op<T>(grid_shape(ig.c, osz, dims), {pin}, std::move(out),
        [pin, gin, f, osz, taps](detail::Node<T>* o) {
            const int64_t isp = gin.spatial();
            const int64_t osp = int64_t(osz[0]) * osz[1] * osz[2];
#pragma omp parallel for schedule(static)
            for (int c = 0; c < gin.c; ++c) {
                const T* gc = o->grad.data() + c * osp;
                T* dc = pin->grad.data() + c * isp;
                for (int od = 0; od < osz[0]; ++od) {
                    const auto& td = taps[0][f[0] == 1 ? 0 : od];
                    for (int oh = 0; oh < osz[1]; ++oh) {
                        const auto& th = taps[1][oh];
                        for (int ow = 0; ow < osz[2]; ++ow) {
                            const auto& tw = taps[2][ow];
                            const T g = gc[(int64_t(od) * osz[1] + oh) * osz[2] + ow];
                            for (int a = 0; a < 2; ++a) {
                                const double wa = a ? td.t : 1.0 - td.t;
                                if (wa == 0.0)
                                    continue;
                                const int id = a ? td.i1 : td.i0;
                                for (int b = 0; b < 2; ++b) {
                                    const double wb = b ? th.t : 1.0 - th.t;
                                    if (wb == 0.0)
                                        continue;
                                    const int ih = b ? th.i1 : th.i0;
                                    T* row = dc + (int64_t(id) * gin.sp[1] + ih) * gin.sp[2];
                                    row[tw.i0] += static_cast<T>(wa * wb * (1.0 - tw.t)) * g;
                                    if (tw.t != 0.0)
                                        row[tw.i1] += static_cast<T>(wa * wb * tw.t) * g;
                                }
                            }
                        }
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b)
{
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size() || sa.size() < 2
        || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
        throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(sa) + " vs "
            + shape_str(sb));
    Shape os = sa;
    os[0] = sa[0] + sb[0];
    std::vector<T> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    auto pa = a.handle(), pb = b.handle();
    const size_t na = a.values().size();
    return make_op<T>(std::move(os), {pa, pb}, std::move(out), [pa, pb, na](detail::Node<T>* o) {
        if (pa->requires_grad)
            for (size_t i = 0; i < na; ++i)
                pa->grad[i] += o->grad[i];
        if (pb->requires_grad)
            for (size_t i = na; i < o->grad.size(); ++i)
                pb->grad[i - na] += o->grad[i];
    });
}

template <typename T>
Tensor<T> l2_normalize_channels(const Tensor<T>& input, T eps)
{
    if (input.shape().size() < 2)
        throw std::invalid_argument("l2_normalize_channels: need [C,*spatial] input");
    const int c = input.shape()[0];
    const int64_t sp = input.size() / c;
    const T* iv = input.values().data();
    std::vector<T> out(input.size());
    std::vector<T> norms(static_cast<size_t>(sp));
    for (int64_t s = 0; s < sp; ++s) {
        T acc = 0;
        for (int ch = 0; ch < c; ++ch) {
            const T v = iv[ch * sp + s];
            acc += v * v;
        }
        const T n = std::sqrt(acc);
        norms[s] = n;
        const T d = std::max(n, eps);
        for (int ch = 0; ch < c; ++ch)
            out[ch * sp + s] = iv[ch * sp + s] / d;
    }
    auto pin = input.handle();
    return make_op<T>(input.shape(), {pin}, std::move(out),
        [pin, c, sp, eps, norms = std::move(norms)](detail::Node<T>* o) {
            for (int64_t s = 0; s < sp; ++s) {
                const T n = norms[s];
                if (n >= eps) {
                    T dot = 0;
                    for (int ch = 0; ch < c; ++ch)
                        dot += o->value[ch * sp + s] * o->grad[ch * sp + s];
                    for (int ch = 0; ch < c; ++ch)
                        pin->grad[ch * sp + s]
                            += (o->grad[ch * sp + s] - o->value[ch * sp + s] * dot) / n;
                } else {
                    for (int ch = 0; ch < c; ++ch)
                        pin->grad[ch * sp + s] += o->grad[ch * sp + s] / eps;
                }
            }
        });
}

template <typename T>
T cosine_similarity(std::span<const T> a, std::span<const T> b, T eps)
{
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("cosine_similarity: vectors must have equal nonzero length");
    T dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const T d = std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps);
    return std::clamp(dot / d, T(-1), T(1));
}

#define ORTHOCT_NN_OPS_IMPL(T)                                                      \
    template Tensor<T> conv<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
        const std::vector<int>&, const std::vector<int>&, int);                     \
    template Tensor<T> transposed_conv<T>(const Tensor<T>&, const Tensor<T>&,       \
        const std::vector<int>&, int);                                              \
    template Tensor<T> max_pool<T>(const Tensor<T>&, const std::vector<int>&, int); \
    template Tensor<T> instance_norm<T>(const Tensor<T>&, const Tensor<T>&,         \
        const Tensor<T>&, T);                                                       \
    template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                          \
    template Tensor<T> linear_upsample<T>(const Tensor<T>&, int, int);              \
    template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> l2_normalize_channels<T>(const Tensor<T>&, T);               \
    template T cosine_similarity<T>(std::span<const T>, std::span<const T>, T);

ORTHOCT_NN_OPS_IMPL(float)
ORTHOCT_NN_OPS_IMPL(double)
#undef ORTHOCT_NN_OPS_IMPL

} // namespace orthoct
