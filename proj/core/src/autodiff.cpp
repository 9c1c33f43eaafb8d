#include "kt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>

#include "kt/parallel.hpp"

namespace kt {

// ---------------------------------------------------------------- Shape

Shape Shape::of(std::initializer_list<int> dims) {
    if (dims.size() < 1 || dims.size() > 4)
        throw ShapeError("Shape: between 1 and 4 axes supported");
    Shape s;
    s.ndim = static_cast<int>(dims.size());
    int i = 0;
    for (int d : dims) {
        if (d < 1) throw ShapeError("Shape: axis extents must be >= 1");
        s.d[i++] = d;
    }
    return s;
}

std::int64_t Shape::numel() const {
    std::int64_t n = 1;
    for (int i = 0; i < ndim; ++i) n *= d[i];
    return n;
}

std::string Shape::str() const {
    std::string out = "[";
    for (int i = 0; i < ndim; ++i) {
        if (i) out += ",";
        out += std::to_string(d[i]);
    }
    return out + "]";
}

Tensor::Tensor(const Shape& s, std::vector<float> values) : shape(s), v(std::move(values)) {
    if (static_cast<std::int64_t>(v.size()) != s.numel())
        throw ShapeError("Tensor: value count does not match shape " + s.str());
}

// ---------------------------------------------------------------- nodes

namespace {

enum class Op {
    constant,
    parameter,
    pad2c,
    dft2c,
    chadamard,
    stackc,
    conv2d,
    relu,
    gnorm,
    avgpool,
    gap,
    dense,
    add,
    bce,
    meansc,
};

inline double softplus(double t) {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

} // namespace

struct Graph::Node {
    Op op;
    Shape shape;
    std::vector<NodeId> parents;
    std::vector<float> value;
    bool needs_grad = false;
    int i0 = 0;               // groups / window / ...
    int i1 = 0;               // stride / ...
    double a0 = 0.0;          // eps / pos_weight
    bool inverse = false;     // dft2 direction
    std::vector<float> aux;   // bce labels
    std::vector<double> stats; // gnorm (mean, invstd) per (n, group)
};

namespace {

// Complex views of paired-real buffers travel through scratch vectors so
// the FFT kernels always see std::complex<double>.
template <typename T>
void dft2_pairs(const T* in, T* out, int batch, int rows, int cols, bool inverse) {
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    std::vector<std::complex<double>> buf(plane);
    for (int b = 0; b < batch; ++b) {
        const T* src = in + 2 * plane * b;
        T* dst = out + 2 * plane * b;
        for (std::size_t i = 0; i < plane; ++i)
            buf[i] = {static_cast<double>(src[2 * i]), static_cast<double>(src[2 * i + 1])};
        fft2_inplace(buf.data(), rows, cols, inverse);
        for (std::size_t i = 0; i < plane; ++i) {
            dst[2 * i] = static_cast<T>(buf[i].real());
            dst[2 * i + 1] = static_cast<T>(buf[i].imag());
        }
    }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* out, int N, int C, int H, int W,
                    int OC, int K) {
    const int pad = K / 2;
    parallel_for(static_cast<std::int64_t>(N) * OC, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t idx = lo; idx < hi; ++idx) {
            const int n = static_cast<int>(idx / OC);
            const int oc = static_cast<int>(idx % OC);
            T* oplane = out + (static_cast<std::size_t>(n) * OC + oc) * H * W;
            const T b = bias[oc];
            for (int i = 0; i < H * W; ++i) oplane[i] = b;
            for (int ic = 0; ic < C; ++ic) {
                const T* xplane = x + (static_cast<std::size_t>(n) * C + ic) * H * W;
                const T* wk = w + (static_cast<std::size_t>(oc) * C + ic) * K * K;
                for (int ky = 0; ky < K; ++ky) {
                    const int dy = ky - pad;
                    const int ylo = std::max(0, -dy), yhi = H - std::max(0, dy);
                    for (int kx = 0; kx < K; ++kx) {
                        const int dx = kx - pad;
                        const int xlo = std::max(0, -dx), xhi = W - std::max(0, dx);
                        const T wv = wk[ky * K + kx];
                        for (int y = ylo; y < yhi; ++y) {
                            T* orow = oplane + y * W;
                            const T* xrow = xplane + (y + dy) * W + dx;
                            for (int xx = xlo; xx < xhi; ++xx) orow[xx] += wv * xrow[xx];
                        }
                    }
                }
            }
        }
    });
}

} // namespace

// ------------------------------------------------------------- builders

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check_id(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ShapeError("Graph: invalid node id");
}

Tensor Graph::value(NodeId id) const {
    check_id(id);
    Tensor out;
    out.shape = nodes_[id].shape;
    out.v = nodes_[id].value;
    return out;
}

const std::vector<float>& Graph::values_raw(NodeId id) const {
    check_id(id);
    return nodes_[id].value;
}

const Shape& Graph::shape(NodeId id) const {
    check_id(id);
    return nodes_[id].shape;
}

NodeId Graph::constant(Tensor t) {
    Node n;
    n.op = Op::constant;
    n.shape = t.shape;
    n.value = std::move(t.v);
    return push(std::move(n));
}

NodeId Graph::parameter(Tensor t) {
    Node n;
    n.op = Op::parameter;
    n.shape = t.shape;
    n.value = std::move(t.v);
    n.needs_grad = true;
    return push(std::move(n));
}

NodeId Graph::pad2d_complex(NodeId kernel, int out_rows, int out_cols) {
    check_id(kernel);
    const Node& p = nodes_[kernel];
    if (p.shape.ndim != 3 || p.shape.d[2] != 2)
        throw ShapeError("pad2d_complex: kernel must be [k1,k2,2]");
    const int k1 = p.shape.d[0], k2 = p.shape.d[1];
    if (k1 > out_rows || k2 > out_cols)
        throw ShapeError("pad2d_complex: kernel larger than the padded extent");
    Node n;
    n.op = Op::pad2c;
    n.shape = Shape::of({out_rows, out_cols, 2});
    n.parents = {kernel};
    n.needs_grad = p.needs_grad;
    n.value.assign(static_cast<std::size_t>(n.shape.numel()), 0.0f);
    for (int i = 0; i < k1; ++i)
        std::memcpy(&n.value[static_cast<std::size_t>(i) * out_cols * 2],
                    &p.value[static_cast<std::size_t>(i) * k2 * 2], sizeof(float) * k2 * 2);
    return push(std::move(n));
}

NodeId Graph::dft2(NodeId x, TransformDirection dir) {
    check_id(x);
    const Node& p = nodes_[x];
    if ((p.shape.ndim != 3 && p.shape.ndim != 4) || p.shape.d[p.shape.ndim - 1] != 2)
        throw ShapeError("dft2: expected [r,c,2] or [N,r,c,2]");
    const int rows = p.shape.d[p.shape.ndim - 3];
    const int cols = p.shape.d[p.shape.ndim - 2];
    const int batch = p.shape.ndim == 4 ? p.shape.d[0] : 1;
    Node n;
    n.op = Op::dft2c;
    n.shape = p.shape;
    n.parents = {x};
    n.needs_grad = p.needs_grad;
    n.inverse = dir == TransformDirection::inverse;
    n.value.resize(p.value.size());
    dft2_pairs(p.value.data(), n.value.data(), batch, rows, cols, n.inverse);
    return push(std::move(n));
}

NodeId Graph::complex_hadamard(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    // The broadcast case keeps the [r,c,2] operand first.
    if (nodes_[a].shape.ndim == 4 && nodes_[b].shape.ndim == 3) std::swap(a, b);
    const Node& pa = nodes_[a];
    const Node& pb = nodes_[b];
    const bool broadcast = pa.shape.ndim == 3 && pb.shape.ndim == 4;
    if (!broadcast && !(pa.shape == pb.shape))
        throw ShapeError("complex_hadamard: shape mismatch " + pa.shape.str() + " vs " +
                         pb.shape.str());
    if (pa.shape.d[pa.shape.ndim - 1] != 2 || pb.shape.d[pb.shape.ndim - 1] != 2)
        throw ShapeError("complex_hadamard: trailing axis must hold (re, im)");
    if (broadcast &&
        (pa.shape.d[0] != pb.shape.d[1] || pa.shape.d[1] != pb.shape.d[2]))
        throw ShapeError("complex_hadamard: broadcast shapes incompatible");

    Node n;
    n.op = Op::chadamard;
    n.shape = pb.shape;
    n.parents = {a, b};
    n.needs_grad = pa.needs_grad || pb.needs_grad;
    n.value.resize(pb.value.size());
    const std::size_t pairs_a = pa.value.size() / 2;
    const std::size_t pairs_b = pb.value.size() / 2;
    const float* av = pa.value.data();
    const float* bv = pb.value.data();
    float* ov = n.value.data();
    for (std::size_t i = 0; i < pairs_b; ++i) {
        const std::size_t ia = broadcast ? (i % pairs_a) : i;
        const float ar = av[2 * ia], ai = av[2 * ia + 1];
        const float br = bv[2 * i], bi = bv[2 * i + 1];
        ov[2 * i] = ar * br - ai * bi;
        ov[2 * i + 1] = ar * bi + ai * br;
    }
    return push(std::move(n));
}

NodeId Graph::stack_complex_channels(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("stack_complex_channels: no inputs");
    for (NodeId id : parts) check_id(id);
    const Shape& s0 = nodes_[parts[0]].shape;
    if (s0.ndim != 4 || s0.d[3] != 2)
        throw ShapeError("stack_complex_channels: inputs must be [N,r,c,2]");
    for (NodeId id : parts)
        if (!(nodes_[id].shape == s0))
            throw ShapeError("stack_complex_channels: inputs must share shape");
    const int N = s0.d[0], R = s0.d[1], C = s0.d[2];
    const int P = static_cast<int>(parts.size());
    Node n;
    n.op = Op::stackc;
    n.shape = Shape::of({N, 2 * P, R, C});
    n.parents = parts;
    for (NodeId id : parts) n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
    n.value.resize(static_cast<std::size_t>(n.shape.numel()));
    const std::size_t plane = static_cast<std::size_t>(R) * C;
    for (int j = 0; j < P; ++j) {
        const float* src = nodes_[parts[j]].value.data();
        for (int b = 0; b < N; ++b) {
            float* re = &n.value[((static_cast<std::size_t>(b) * 2 * P) + 2 * j) * plane];
            float* im = re + plane;
            const float* in = src + 2 * plane * b;
            for (std::size_t i = 0; i < plane; ++i) {
                re[i] = in[2 * i];
                im[i] = in[2 * i + 1];
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId bias) {
    check_id(x);
    check_id(w);
    check_id(bias);
    const Node& px = nodes_[x];
    const Node& pw = nodes_[w];
    const Node& pb = nodes_[bias];
    if (px.shape.ndim != 4) throw ShapeError("conv2d: input must be [N,C,H,W]");
    if (pw.shape.ndim != 4) throw ShapeError("conv2d: weights must be [OC,C,k,k]");
    const int N = px.shape.d[0], C = px.shape.d[1], H = px.shape.d[2], W = px.shape.d[3];
    const int OC = pw.shape.d[0], K = pw.shape.d[2];
    if (pw.shape.d[1] != C || pw.shape.d[3] != K || K % 2 == 0)
        throw ShapeError("conv2d: weights must be [OC,C,k,k] with odd k, C matching input");
    if (pb.shape.ndim != 1 || pb.shape.d[0] != OC)
        throw ShapeError("conv2d: bias must be [OC]");
    Node n;
    n.op = Op::conv2d;
    n.shape = Shape::of({N, OC, H, W});
    n.parents = {x, w, bias};
    n.needs_grad = px.needs_grad || pw.needs_grad || pb.needs_grad;
    n.value.resize(static_cast<std::size_t>(n.shape.numel()));
    conv2d_forward(px.value.data(), pw.value.data(), pb.value.data(), n.value.data(), N, C, H, W,
                   OC, K);
    return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
    check_id(x);
    const Node& p = nodes_[x];
    Node n;
    n.op = Op::relu;
    n.shape = p.shape;
    n.parents = {x};
    n.needs_grad = p.needs_grad;
    n.value.resize(p.value.size());
    for (std::size_t i = 0; i < p.value.size(); ++i)
        n.value[i] = p.value[i] > 0.0f ? p.value[i] : 0.0f;
    return push(std::move(n));
}

NodeId Graph::group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, double eps) {
    check_id(x);
    check_id(gamma);
    check_id(beta);
    const Node& px = nodes_[x];
    if (px.shape.ndim != 4) throw ShapeError("group_norm: input must be [N,C,H,W]");
    const int N = px.shape.d[0], C = px.shape.d[1], H = px.shape.d[2], W = px.shape.d[3];
    if (groups < 1 || C % groups != 0)
        throw ShapeError("group_norm: groups must divide the channel count");
    const Shape param_shape = Shape::of({C});
    if (!(nodes_[gamma].shape == param_shape) || !(nodes_[beta].shape == param_shape))
        throw ShapeError("group_norm: gamma and beta must be [C]");

    Node n;
    n.op = Op::gnorm;
    n.shape = px.shape;
    n.parents = {x, gamma, beta};
    n.needs_grad = px.needs_grad || nodes_[gamma].needs_grad || nodes_[beta].needs_grad;
    n.i0 = groups;
    n.a0 = eps;
    n.value.resize(px.value.size());
    n.stats.resize(static_cast<std::size_t>(N) * groups * 2);

    const int chans_per = C / groups;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t group_elems = static_cast<std::size_t>(chans_per) * plane;
    const float* xv = px.value.data();
    const float* gv = nodes_[gamma].value.data();
    const float* bv = nodes_[beta].value.data();
    for (int b = 0; b < N; ++b) {
        for (int g = 0; g < groups; ++g) {
            const float* base = xv + (static_cast<std::size_t>(b) * C + g * chans_per) * plane;
            double sum = 0.0, sumsq = 0.0;
            for (std::size_t i = 0; i < group_elems; ++i) {
                const double v = base[i];
                sum += v;
                sumsq += v * v;
            }
            const double mean = sum / static_cast<double>(group_elems);
            const double var = sumsq / static_cast<double>(group_elems) - mean * mean;
            const double invstd = 1.0 / std::sqrt(std::max(var, 0.0) + eps);
            n.stats[(static_cast<std::size_t>(b) * groups + g) * 2] = mean;
            n.stats[(static_cast<std::size_t>(b) * groups + g) * 2 + 1] = invstd;
            float* out = n.value.data() + (static_cast<std::size_t>(b) * C + g * chans_per) * plane;
            for (int cc = 0; cc < chans_per; ++cc) {
                const int ch = g * chans_per + cc;
                const double ga = gv[ch], be = bv[ch];
                const float* xin = base + cc * plane;
                float* xout = out + cc * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    xout[i] = static_cast<float>(ga * ((xin[i] - mean) * invstd) + be);
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::avg_pool(NodeId x, int window, int stride) {
    check_id(x);
    const Node& p = nodes_[x];
    if (p.shape.ndim != 4) throw ShapeError("avg_pool: input must be [N,C,H,W]");
    if (window < 1 || stride < 1) throw ShapeError("avg_pool: window and stride must be >= 1");
    const int N = p.shape.d[0], C = p.shape.d[1], H = p.shape.d[2], W = p.shape.d[3];
    if (window > H || window > W) throw ShapeError("avg_pool: window exceeds input extent");
    const int OH = (H - window) / stride + 1;
    const int OW = (W - window) / stride + 1;
    Node n;
    n.op = Op::avgpool;
    n.shape = Shape::of({N, C, OH, OW});
    n.parents = {x};
    n.needs_grad = p.needs_grad;
    n.i0 = window;
    n.i1 = stride;
    n.value.resize(static_cast<std::size_t>(n.shape.numel()));
    const float inv = 1.0f / static_cast<float>(window * window);
    for (int b = 0; b < N * C; ++b) {
        const float* xin = p.value.data() + static_cast<std::size_t>(b) * H * W;
        float* out = n.value.data() + static_cast<std::size_t>(b) * OH * OW;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                float acc = 0.0f;
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx)
                        acc += xin[(oy * stride + ky) * W + ox * stride + kx];
                out[oy * OW + ox] = acc * inv;
            }
    }
    return push(std::move(n));
}

NodeId Graph::global_avg_pool(NodeId x) {
    check_id(x);
    const Node& p = nodes_[x];
    if (p.shape.ndim != 4) throw ShapeError("global_avg_pool: input must be [N,C,H,W]");
    const int N = p.shape.d[0], C = p.shape.d[1];
    const std::size_t plane = static_cast<std::size_t>(p.shape.d[2]) * p.shape.d[3];
    Node n;
    n.op = Op::gap;
    n.shape = Shape::of({N, C});
    n.parents = {x};
    n.needs_grad = p.needs_grad;
    n.value.resize(static_cast<std::size_t>(N) * C);
    for (int i = 0; i < N * C; ++i) {
        const float* xin = p.value.data() + plane * i;
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) acc += xin[j];
        n.value[i] = static_cast<float>(acc / static_cast<double>(plane));
    }
    return push(std::move(n));
}

NodeId Graph::dense(NodeId x, NodeId w, NodeId bias) {
    check_id(x);
    check_id(w);
    check_id(bias);
    const Node& px = nodes_[x];
    const Node& pw = nodes_[w];
    const Node& pb = nodes_[bias];
    if (px.shape.ndim != 2) throw ShapeError("dense: input must be [N,F]");
    const int N = px.shape.d[0], F = px.shape.d[1];
    if (pw.shape.ndim != 2 || pw.shape.d[1] != F)
        throw ShapeError("dense: weights must be [O,F] with F matching input");
    const int O = pw.shape.d[0];
    if (pb.shape.ndim != 1 || pb.shape.d[0] != O) throw ShapeError("dense: bias must be [O]");
    Node n;
    n.op = Op::dense;
    n.shape = Shape::of({N, O});
    n.parents = {x, w, bias};
    n.needs_grad = px.needs_grad || pw.needs_grad || pb.needs_grad;
    n.value.resize(static_cast<std::size_t>(N) * O);
    for (int b = 0; b < N; ++b)
        for (int o = 0; o < O; ++o) {
            double acc = pb.value[o];
            const float* xrow = px.value.data() + static_cast<std::size_t>(b) * F;
            const float* wrow = pw.value.data() + static_cast<std::size_t>(o) * F;
            for (int f = 0; f < F; ++f) acc += static_cast<double>(xrow[f]) * wrow[f];
            n.value[static_cast<std::size_t>(b) * O + o] = static_cast<float>(acc);
        }
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Node& pa = nodes_[a];
    const Node& pb = nodes_[b];
    if (!(pa.shape == pb.shape)) throw ShapeError("add: shape mismatch");
    Node n;
    n.op = Op::add;
    n.shape = pa.shape;
    n.parents = {a, b};
    n.needs_grad = pa.needs_grad || pb.needs_grad;
    n.value.resize(pa.value.size());
    for (std::size_t i = 0; i < pa.value.size(); ++i) n.value[i] = pa.value[i] + pb.value[i];
    return push(std::move(n));
}

NodeId Graph::sigmoid_bce_loss(NodeId logits, std::vector<float> labels, double pos_weight) {
    check_id(logits);
    const Node& p = nodes_[logits];
    const std::int64_t n_logits = p.shape.numel();
    if (p.shape.ndim > 2) throw ShapeError("sigmoid_bce_loss: logits must be [N] or [N,1]");
    if (p.shape.ndim == 2 && p.shape.d[1] != 1)
        throw ShapeError("sigmoid_bce_loss: logits must be [N] or [N,1]");
    if (static_cast<std::int64_t>(labels.size()) != n_logits)
        throw ShapeError("sigmoid_bce_loss: one label per logit required");
    Node n;
    n.op = Op::bce;
    n.shape = Shape::of({1});
    n.parents = {logits};
    n.needs_grad = p.needs_grad;
    n.a0 = pos_weight;
    n.aux = std::move(labels);
    double acc = 0.0;
    for (std::int64_t i = 0; i < n_logits; ++i) {
        const double z = p.value[i];
        const double y = n.aux[i];
        acc += y * pos_weight * softplus(-z) + (1.0 - y) * softplus(z);
    }
    n.value = {static_cast<float>(acc / static_cast<double>(n_logits))};
    return push(std::move(n));
}

NodeId Graph::mean_scalars(const std::vector<NodeId>& scalars) {
    if (scalars.empty()) throw ShapeError("mean_scalars: no inputs");
    for (NodeId id : scalars) {
        check_id(id);
        if (nodes_[id].shape.numel() != 1)
            throw ShapeError("mean_scalars: inputs must be scalars");
    }
    Node n;
    n.op = Op::meansc;
    n.shape = Shape::of({1});
    n.parents = scalars;
    double acc = 0.0;
    for (NodeId id : scalars) {
        n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
        acc += nodes_[id].value[0];
    }
    n.value = {static_cast<float>(acc / static_cast<double>(scalars.size()))};
    return push(std::move(n));
}

// ------------------------------------------------------------- backward

GradMap Graph::backward(NodeId loss) const {
    check_id(loss);
    if (nodes_[loss].shape.numel() != 1)
        throw ShapeError("backward: loss must be a scalar node");

    std::vector<std::vector<double>> grad(nodes_.size());
    auto ensure = [&](NodeId id) -> std::vector<double>& {
        if (grad[id].empty()) grad[id].assign(nodes_[id].value.size(), 0.0);
        return grad[id];
    };
    ensure(loss)[0] = 1.0;

    for (NodeId id = loss; id >= 0; --id) {
        const Node& n = nodes_[id];
        if (!n.needs_grad || grad[id].empty()) continue;
        const std::vector<double>& g = grad[id];
        switch (n.op) {
        case Op::constant:
        case Op::parameter:
            continue; // leaves keep their accumulated gradient
        case Op::pad2c: {
            const Node& p = nodes_[n.parents[0]];
            if (p.needs_grad) {
                auto& gp = ensure(n.parents[0]);
                const int k1 = p.shape.d[0], k2 = p.shape.d[1];
                const int out_cols = n.shape.d[1];
                for (int i = 0; i < k1; ++i)
                    for (int j = 0; j < 2 * k2; ++j)
                        gp[static_cast<std::size_t>(i) * k2 * 2 + j] +=
                            g[static_cast<std::size_t>(i) * out_cols * 2 + j];
            }
            break;
        }
        case Op::dft2c: {
            const Node& p = nodes_[n.parents[0]];
            if (p.needs_grad) {
                auto& gp = ensure(n.parents[0]);
                const int rows = n.shape.d[n.shape.ndim - 3];
                const int cols = n.shape.d[n.shape.ndim - 2];
                const int batch = n.shape.ndim == 4 ? n.shape.d[0] : 1;
                // Adjoint of a unitary transform is the opposite direction.
                std::vector<double> tmp(g.size());
                dft2_pairs(g.data(), tmp.data(), batch, rows, cols, !n.inverse);
                for (std::size_t i = 0; i < tmp.size(); ++i) gp[i] += tmp[i];
            }
            break;
        }
        case Op::chadamard: {
            const Node& pa = nodes_[n.parents[0]];
            const Node& pb = nodes_[n.parents[1]];
            const bool broadcast = pa.shape.ndim == 3 && pb.shape.ndim == 4;
            const std::size_t pairs_a = pa.value.size() / 2;
            const std::size_t pairs = pb.value.size() / 2;
            const float* av = pa.value.data();
            const float* bv = pb.value.data();
            if (pa.needs_grad) {
                auto& ga = ensure(n.parents[0]);
                for (std::size_t i = 0; i < pairs; ++i) {
                    const std::size_t ia = broadcast ? (i % pairs_a) : i;
                    const double gr = g[2 * i], gi = g[2 * i + 1];
                    const double br = bv[2 * i], bi = bv[2 * i + 1];
                    ga[2 * ia] += gr * br + gi * bi;
                    ga[2 * ia + 1] += -gr * bi + gi * br;
                }
            }
            if (pb.needs_grad) {
                auto& gb = ensure(n.parents[1]);
                for (std::size_t i = 0; i < pairs; ++i) {
                    const std::size_t ia = broadcast ? (i % pairs_a) : i;
                    const double gr = g[2 * i], gi = g[2 * i + 1];
                    const double ar = av[2 * ia], ai = av[2 * ia + 1];
                    gb[2 * i] += gr * ar + gi * ai;
                    gb[2 * i + 1] += -gr * ai + gi * ar;
                }
            }
            break;
        }
        case Op::stackc: {
            const int N = n.shape.d[0];
            const int P = static_cast<int>(n.parents.size());
            const int R = n.shape.d[2], C = n.shape.d[3];
            const std::size_t plane = static_cast<std::size_t>(R) * C;
            for (int j = 0; j < P; ++j) {
                if (!nodes_[n.parents[j]].needs_grad) continue;
                auto& gp = ensure(n.parents[j]);
                for (int b = 0; b < N; ++b) {
                    const double* re = &g[((static_cast<std::size_t>(b) * 2 * P) + 2 * j) * plane];
                    const double* im = re + plane;
                    double* dst = &gp[2 * plane * b];
                    for (std::size_t i = 0; i < plane; ++i) {
                        dst[2 * i] += re[i];
                        dst[2 * i + 1] += im[i];
                    }
                }
            }
            break;
        }
        case Op::conv2d: {
            const Node& px = nodes_[n.parents[0]];
            const Node& pw = nodes_[n.parents[1]];
            const Node& pb = nodes_[n.parents[2]];
            const int N = px.shape.d[0], C = px.shape.d[1], H = px.shape.d[2], W = px.shape.d[3];
            const int OC = pw.shape.d[0], K = pw.shape.d[2];
            const int pad = K / 2;
            const float* xv = px.value.data();
            const float* wv = pw.value.data();
            if (px.needs_grad) {
                auto& gx = ensure(n.parents[0]);
                parallel_for(static_cast<std::int64_t>(N) * C,
                             [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t idx = lo; idx < hi; ++idx) {
                        const int b = static_cast<int>(idx / C);
                        const int ic = static_cast<int>(idx % C);
                        double* gplane = gx.data() + (static_cast<std::size_t>(b) * C + ic) * H * W;
                        for (int oc = 0; oc < OC; ++oc) {
                            const double* gout =
                                g.data() + (static_cast<std::size_t>(b) * OC + oc) * H * W;
                            const float* wk =
                                wv + (static_cast<std::size_t>(oc) * C + ic) * K * K;
                            for (int ky = 0; ky < K; ++ky) {
                                const int dy = ky - pad;
                                for (int kx = 0; kx < K; ++kx) {
                                    const int dx = kx - pad;
                                    const double wvv = wk[ky * K + kx];
                                    const int ilo = std::max(0, dy), ihi = H + std::min(0, dy);
                                    const int jlo = std::max(0, dx), jhi = W + std::min(0, dx);
                                    for (int i = ilo; i < ihi; ++i) {
                                        double* grow = gplane + i * W;
                                        const double* gorow = gout + (i - dy) * W - dx;
                                        for (int j = jlo; j < jhi; ++j)
                                            grow[j] += wvv * gorow[j];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (pw.needs_grad) {
                auto& gw = ensure(n.parents[1]);
                parallel_for(static_cast<std::int64_t>(OC) * C,
                             [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t idx = lo; idx < hi; ++idx) {
                        const int oc = static_cast<int>(idx / C);
                        const int ic = static_cast<int>(idx % C);
                        double* gwk = gw.data() + (static_cast<std::size_t>(oc) * C + ic) * K * K;
                        for (int ky = 0; ky < K; ++ky) {
                            const int dy = ky - pad;
                            for (int kx = 0; kx < K; ++kx) {
                                const int dx = kx - pad;
                                double acc = 0.0;
                                const int ylo = std::max(0, -dy), yhi = H - std::max(0, dy);
                                const int xlo = std::max(0, -dx), xhi = W - std::max(0, dx);
                                for (int b = 0; b < N; ++b) {
                                    const double* gout =
                                        g.data() + (static_cast<std::size_t>(b) * OC + oc) * H * W;
                                    const float* xin =
                                        xv + (static_cast<std::size_t>(b) * C + ic) * H * W;
                                    for (int y = ylo; y < yhi; ++y) {
                                        const double* grow = gout + y * W;
                                        const float* xrow = xin + (y + dy) * W + dx;
                                        for (int xx = xlo; xx < xhi; ++xx)
                                            acc += grow[xx] * static_cast<double>(xrow[xx]);
                                    }
                                }
                                gwk[ky * K + kx] += acc;
                            }
                        }
                    }
                });
            }
            if (pb.needs_grad) {
                auto& gb = ensure(n.parents[2]);
                for (int b = 0; b < N; ++b)
                    for (int oc = 0; oc < OC; ++oc) {
                        const double* gout =
                            g.data() + (static_cast<std::size_t>(b) * OC + oc) * H * W;
                        double acc = 0.0;
                        for (int i = 0; i < H * W; ++i) acc += gout[i];
                        gb[oc] += acc;
                    }
            }
            break;
        }
        case Op::relu: {
            const Node& p = nodes_[n.parents[0]];
            if (p.needs_grad) {
                auto& gp = ensure(n.parents[0]);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (p.value[i] > 0.0f) gp[i] += g[i];
            }
            break;
        }
        case Op::gnorm: {
            const Node& px = nodes_[n.parents[0]];
            const Node& pg = nodes_[n.parents[1]];
            const Node& pbta = nodes_[n.parents[2]];
            const int N = px.shape.d[0], C = px.shape.d[1];
            const std::size_t plane =
                static_cast<std::size_t>(px.shape.d[2]) * px.shape.d[3];
            const int groups = n.i0;
            const int chans_per = C / groups;
            const std::size_t m = static_cast<std::size_t>(chans_per) * plane;
            const float* xv = px.value.data();
            const float* gv = pg.value.data();
            std::vector<double>* gx = px.needs_grad ? &ensure(n.parents[0]) : nullptr;
            std::vector<double>* gg = pg.needs_grad ? &ensure(n.parents[1]) : nullptr;
            std::vector<double>* gb = pbta.needs_grad ? &ensure(n.parents[2]) : nullptr;
            for (int b = 0; b < N; ++b) {
                for (int grp = 0; grp < groups; ++grp) {
                    const double mean = n.stats[(static_cast<std::size_t>(b) * groups + grp) * 2];
                    const double invstd =
                        n.stats[(static_cast<std::size_t>(b) * groups + grp) * 2 + 1];
                    const std::size_t base =
                        (static_cast<std::size_t>(b) * C + grp * chans_per) * plane;
                    double sum_gy = 0.0, sum_gy_xhat = 0.0;
                    for (int cc = 0; cc < chans_per; ++cc) {
                        const int ch = grp * chans_per + cc;
                        const double ga = gv[ch];
                        for (std::size_t i = 0; i < plane; ++i) {
                            const std::size_t k = base + cc * plane + i;
                            const double xhat = (xv[k] - mean) * invstd;
                            const double gy = g[k] * ga;
                            sum_gy += gy;
                            sum_gy_xhat += gy * xhat;
                            if (gg) (*gg)[ch] += g[k] * xhat;
                            if (gb) (*gb)[ch] += g[k];
                        }
                    }
                    if (gx) {
                        const double mg = sum_gy / static_cast<double>(m);
                        const double mgx = sum_gy_xhat / static_cast<double>(m);
                        for (int cc = 0; cc < chans_per; ++cc) {
                            const int ch = grp * chans_per + cc;
                            const double ga = gv[ch];
                            for (std::size_t i = 0; i < plane; ++i) {
                                const std::size_t k = base + cc * plane + i;
                                const double xhat = (xv[k] - mean) * invstd;
                                (*gx)[k] += invstd * (g[k] * ga - mg - xhat * mgx);
                            }
                        }
                    }
                }
            }
            break;
        }
        case Op::avgpool: {
            const Node& p = nodes_[n.parents[0]];
            if (p.needs_grad) {
                auto& gp = ensure(n.parents[0]);
                const int NC = n.shape.d[0] * n.shape.d[1];
                const int OH = n.shape.d[2], OW = n.shape.d[3];
                const int H = p.shape.d[2], W = p.shape.d[3];
                const int window = n.i0, stride = n.i1;
                const double inv = 1.0 / (window * window);
                for (int b = 0; b < NC; ++b) {
                    const double* gout = g.data() + static_cast<std::size_t>(b) * OH * OW;
                    double* gin = gp.data() + static_cast<std::size_t>(b) * H * W;
                    for (int oy = 0; oy < OH; ++oy)
                        for (int ox = 0; ox < OW; ++ox) {
                            const double gval = gout[oy * OW + ox] * inv;
                            for (int ky = 0; ky < window; ++ky)
                                for (int kx = 0; kx < window; ++kx)
                                    gin[(oy * stride + ky) * W + ox * stride + kx] += gval;
                        }
                }
            }
            break;
        }
        case Op::gap: {
            const Node& p = nodes_[n.parents[0]];
            if (p.needs_grad) {
                auto& gp = ensure(n.parents[0]);
                const std::size_t plane =
                    static_cast<std::size_t>(p.shape.d[2]) * p.shape.d[3];
                const double inv = 1.0 / static_cast<double>(plane);
                const int NC = n.shape.d[0] * n.shape.d[1];
                for (int b = 0; b < NC; ++b) {
                    const double gval = g[b] * inv;
                    double* gin = gp.data() + plane * b;
                    for (std::size_t i = 0; i < plane; ++i) gin[i] += gval;
                }
            }
            break;
        }
        case Op::dense: {
            const Node& px = nodes_[n.parents[0]];
            const Node& pw = nodes_[n.parents[1]];
            const Node& pb = nodes_[n.parents[2]];
            const int N = px.shape.d[0], F = px.shape.d[1], O = pw.shape.d[0];
            const float* xv = px.value.data();
            const float* wv = pw.value.data();
            if (px.needs_grad) {
                auto& gx = ensure(n.parents[0]);
                for (int b = 0; b < N; ++b)
                    for (int o = 0; o < O; ++o) {
                        const double gval = g[static_cast<std::size_t>(b) * O + o];
                        const float* wrow = wv + static_cast<std::size_t>(o) * F;
                        double* grow = gx.data() + static_cast<std::size_t>(b) * F;
                        for (int f = 0; f < F; ++f) grow[f] += gval * wrow[f];
                    }
            }
            if (pw.needs_grad) {
                auto& gw = ensure(n.parents[1]);
                for (int b = 0; b < N; ++b)
                    for (int o = 0; o < O; ++o) {
                        const double gval = g[static_cast<std::size_t>(b) * O + o];
                        const float* xrow = xv + static_cast<std::size_t>(b) * F;
                        double* grow = gw.data() + static_cast<std::size_t>(o) * F;
                        for (int f = 0; f < F; ++f) grow[f] += gval * xrow[f];
                    }
            }
            if (pb.needs_grad) {
                auto& gb = ensure(n.parents[2]);
                for (int b = 0; b < N; ++b)
                    for (int o = 0; o < O; ++o) gb[o] += g[static_cast<std::size_t>(b) * O + o];
            }
            break;
        }
        case Op::add: {
            for (int side = 0; side < 2; ++side) {
                if (!nodes_[n.parents[side]].needs_grad) continue;
                auto& gp = ensure(n.parents[side]);
                for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
            }
            break;
        }
        case Op::bce: {
            const Node& p = nodes_[n.parents[0]];
            if (p.needs_grad) {
                auto& gp = ensure(n.parents[0]);
                const std::size_t count = p.value.size();
                const double scale = g[0] / static_cast<double>(count);
                for (std::size_t i = 0; i < count; ++i) {
                    const double z = p.value[i];
                    const double y = n.aux[i];
                    gp[i] += scale * (-y * n.a0 * sigmoid(-z) + (1.0 - y) * sigmoid(z));
                }
            }
            break;
        }
        case Op::meansc: {
            const double share = g[0] / static_cast<double>(n.parents.size());
            for (NodeId pid : n.parents) {
                if (!nodes_[pid].needs_grad) continue;
                ensure(pid)[0] += share;
            }
            break;
        }
        }
        // Interior gradients are dead once propagated; release eagerly.
        grad[id].clear();
        grad[id].shrink_to_fit();
    }

    GradMap out;
    for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id)
        if (nodes_[id].op == Op::parameter && !grad[id].empty())
            out.emplace(id, std::move(grad[id]));
    return out;
}

// ---------------------------------------------------------------- replay

Graph::Replay Graph::replay_f64(NodeId loss, NodeId leaf, std::int64_t coord, double delta) const {
    check_id(loss);
    check_id(leaf);
    const Node& leaf_node = nodes_[leaf];
    if (leaf_node.op != Op::constant && leaf_node.op != Op::parameter)
        throw ShapeError("replay_f64: perturbation target must be a leaf");
    if (coord < 0 || coord >= static_cast<std::int64_t>(leaf_node.value.size()))
        throw ShapeError("replay_f64: coordinate out of range");

    std::vector<std::vector<double>> vals(static_cast<std::size_t>(loss) + 1);
    Replay rep;
    for (NodeId id = 0; id <= loss; ++id) {
        const Node& n = nodes_[id];
        std::vector<double>& out = vals[id];
        switch (n.op) {
        case Op::constant:
        case Op::parameter: {
            out.assign(n.value.begin(), n.value.end());
            if (id == leaf) out[coord] += delta;
            break;
        }
        case Op::pad2c: {
            const Node& p = nodes_[n.parents[0]];
            const int k1 = p.shape.d[0], k2 = p.shape.d[1];
            const int out_cols = n.shape.d[1];
            out.assign(static_cast<std::size_t>(n.shape.numel()), 0.0);
            const auto& in = vals[n.parents[0]];
            for (int i = 0; i < k1; ++i)
                for (int j = 0; j < 2 * k2; ++j)
                    out[static_cast<std::size_t>(i) * out_cols * 2 + j] =
                        in[static_cast<std::size_t>(i) * k2 * 2 + j];
            break;
        }
        case Op::dft2c: {
            const int rows = n.shape.d[n.shape.ndim - 3];
            const int cols = n.shape.d[n.shape.ndim - 2];
            const int batch = n.shape.ndim == 4 ? n.shape.d[0] : 1;
            const auto& in = vals[n.parents[0]];
            out.resize(in.size());
            dft2_pairs(in.data(), out.data(), batch, rows, cols, n.inverse);
            break;
        }
        case Op::chadamard: {
            const auto& a = vals[n.parents[0]];
            const auto& b = vals[n.parents[1]];
            const bool broadcast = nodes_[n.parents[0]].shape.ndim == 3 &&
                                   nodes_[n.parents[1]].shape.ndim == 4;
            const std::size_t pairs_a = a.size() / 2;
            const std::size_t pairs = b.size() / 2;
            out.resize(b.size());
            for (std::size_t i = 0; i < pairs; ++i) {
                const std::size_t ia = broadcast ? (i % pairs_a) : i;
                out[2 * i] = a[2 * ia] * b[2 * i] - a[2 * ia + 1] * b[2 * i + 1];
                out[2 * i + 1] = a[2 * ia] * b[2 * i + 1] + a[2 * ia + 1] * b[2 * i];
            }
            break;
        }
        case Op::stackc: {
            const int N = n.shape.d[0];
            const int P = static_cast<int>(n.parents.size());
            const std::size_t plane = static_cast<std::size_t>(n.shape.d[2]) * n.shape.d[3];
            out.resize(static_cast<std::size_t>(n.shape.numel()));
            for (int j = 0; j < P; ++j) {
                const auto& in = vals[n.parents[j]];
                for (int b = 0; b < N; ++b) {
                    double* re = &out[((static_cast<std::size_t>(b) * 2 * P) + 2 * j) * plane];
                    double* im = re + plane;
                    const double* src = &in[2 * plane * b];
                    for (std::size_t i = 0; i < plane; ++i) {
                        re[i] = src[2 * i];
                        im[i] = src[2 * i + 1];
                    }
                }
            }
            break;
        }
        case Op::conv2d: {
            const Node& px = nodes_[n.parents[0]];
            const Node& pw = nodes_[n.parents[1]];
            const int N = px.shape.d[0], C = px.shape.d[1], H = px.shape.d[2], W = px.shape.d[3];
            const int OC = pw.shape.d[0], K = pw.shape.d[2];
            out.resize(static_cast<std::size_t>(n.shape.numel()));
            conv2d_forward(vals[n.parents[0]].data(), vals[n.parents[1]].data(),
                           vals[n.parents[2]].data(), out.data(), N, C, H, W, OC, K);
            break;
        }
        case Op::relu: {
            const auto& in = vals[n.parents[0]];
            out.resize(in.size());
            for (std::size_t i = 0; i < in.size(); ++i) {
                const bool pos = in[i] > 0.0;
                out[i] = pos ? in[i] : 0.0;
                rep.relu_signs.push_back(pos ? 1 : 0);
            }
            break;
        }
        case Op::gnorm: {
            const Node& px = nodes_[n.parents[0]];
            const int N = px.shape.d[0], C = px.shape.d[1];
            const std::size_t plane =
                static_cast<std::size_t>(px.shape.d[2]) * px.shape.d[3];
            const int groups = n.i0;
            const int chans_per = C / groups;
            const std::size_t m = static_cast<std::size_t>(chans_per) * plane;
            const auto& xin = vals[n.parents[0]];
            const auto& ga = vals[n.parents[1]];
            const auto& be = vals[n.parents[2]];
            out.resize(xin.size());
            for (int b = 0; b < N; ++b)
                for (int grp = 0; grp < groups; ++grp) {
                    const std::size_t base =
                        (static_cast<std::size_t>(b) * C + grp * chans_per) * plane;
                    double sum = 0.0, sumsq = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                        sum += xin[base + i];
                        sumsq += xin[base + i] * xin[base + i];
                    }
                    const double mean = sum / static_cast<double>(m);
                    const double var = sumsq / static_cast<double>(m) - mean * mean;
                    const double invstd = 1.0 / std::sqrt(std::max(var, 0.0) + n.a0);
                    for (int cc = 0; cc < chans_per; ++cc) {
                        const int ch = grp * chans_per + cc;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const std::size_t k = base + cc * plane + i;
                            out[k] = ga[ch] * ((xin[k] - mean) * invstd) + be[ch];
                        }
                    }
                }
            break;
        }
        case Op::avgpool: {
            const Node& p = nodes_[n.parents[0]];
            const int NC = n.shape.d[0] * n.shape.d[1];
            const int OH = n.shape.d[2], OW = n.shape.d[3];
            const int H = p.shape.d[2], W = p.shape.d[3];
            const int window = n.i0, stride = n.i1;
            const auto& in = vals[n.parents[0]];
            out.resize(static_cast<std::size_t>(n.shape.numel()));
            const double inv = 1.0 / (window * window);
            for (int b = 0; b < NC; ++b)
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        double acc = 0.0;
                        for (int ky = 0; ky < window; ++ky)
                            for (int kx = 0; kx < window; ++kx)
                                acc += in[static_cast<std::size_t>(b) * H * W +
                                          (oy * stride + ky) * W + ox * stride + kx];
                        out[static_cast<std::size_t>(b) * OH * OW + oy * OW + ox] = acc * inv;
                    }
            break;
        }
        case Op::gap: {
            const Node& p = nodes_[n.parents[0]];
            const std::size_t plane = static_cast<std::size_t>(p.shape.d[2]) * p.shape.d[3];
            const int NC = n.shape.d[0] * n.shape.d[1];
            const auto& in = vals[n.parents[0]];
            out.resize(NC);
            for (int b = 0; b < NC; ++b) {
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += in[plane * b + i];
                out[b] = acc / static_cast<double>(plane);
            }
            break;
        }
        case Op::dense: {
            const Node& px = nodes_[n.parents[0]];
            const Node& pw = nodes_[n.parents[1]];
            const int N = px.shape.d[0], F = px.shape.d[1], O = pw.shape.d[0];
            const auto& xin = vals[n.parents[0]];
            const auto& win = vals[n.parents[1]];
            const auto& bin = vals[n.parents[2]];
            out.resize(static_cast<std::size_t>(N) * O);
            for (int b = 0; b < N; ++b)
                for (int o = 0; o < O; ++o) {
                    double acc = bin[o];
                    for (int f = 0; f < F; ++f)
                        acc += xin[static_cast<std::size_t>(b) * F + f] *
                               win[static_cast<std::size_t>(o) * F + f];
                    out[static_cast<std::size_t>(b) * O + o] = acc;
                }
            break;
        }
        case Op::add: {
            const auto& a = vals[n.parents[0]];
            const auto& b = vals[n.parents[1]];
            out.resize(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
            break;
        }
        case Op::bce: {
            const auto& z = vals[n.parents[0]];
            double acc = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double y = n.aux[i];
                acc += y * n.a0 * softplus(-z[i]) + (1.0 - y) * softplus(z[i]);
            }
            out = {acc / static_cast<double>(z.size())};
            break;
        }
        case Op::meansc: {
            double acc = 0.0;
            for (NodeId pid : n.parents) acc += vals[pid][0];
            out = {acc / static_cast<double>(n.parents.size())};
            break;
        }
        }
    }
    rep.loss = vals[loss][0];
    return rep;
}

double gradient_check(const Graph& g, NodeId loss, NodeId leaf, double eps) {
    const GradMap grads = g.backward(loss);
    const auto it = grads.find(leaf);
    if (it == grads.end())
        throw ShapeError("gradient_check: leaf is not a parameter reaching the loss");
    const std::vector<double>& analytic = it->second;
    double max_err = 0.0;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(analytic.size()); ++i) {
        const Graph::Replay plus = g.replay_f64(loss, leaf, i, eps);
        const Graph::Replay minus = g.replay_f64(loss, leaf, i, -eps);
        if (plus.relu_signs != minus.relu_signs) continue; // straddles a kink
        const double numeric = (plus.loss - minus.loss) / (2.0 * eps);
        const double err =
            std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-8);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace kt
