#include "mapu/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mapu/special.hpp"

namespace mapu {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr double kSoftplusThreshold = 30.0;

Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

// Plain left-to-right sum. Eigen's vectorized reductions peel by address, so
// their rounding would depend on where the allocator put the buffer.
double serial_sum(const double* p, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    return s;
}

bool wants(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }
std::span<double> grad_of(Node& n, std::size_t i) { return n.inputs[i]->grad_buffer(); }
const std::vector<double>& data_of(const Node& n, std::size_t i) { return n.inputs[i]->data; }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

// y = f(x), dy/dx = df(x, y)
template <class F, class DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df) {
    auto xs = x.data();
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
    return detail::make_result(op, x.shape(), std::move(out), {x}, [df](Node& n) {
        auto g = grad_of(n, 0);
        const auto& xv = data_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(xv[i], n.data[i]);
    });
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (wants(n, k)) n.inputs[k]->accumulate(n.grad);
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return detail::make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& n) {
        if (wants(n, 0)) n.inputs[0]->accumulate(n.grad);
        if (wants(n, 1)) {
            auto g = grad_of(n, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& n) {
        const auto& av = data_of(n, 0);
        const auto& bv = data_of(n, 1);
        if (wants(n, 0)) {
            auto g = grad_of(n, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (wants(n, 1)) {
            auto g = grad_of(n, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape("div", a, b);
    auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (bv[i] == 0.0) throw DomainError("div: division by zero");
        out[i] = av[i] / bv[i];
    }
    return detail::make_result("div", a.shape(), std::move(out), {a, b}, [](Node& n) {
        const auto& bv = data_of(n, 1);
        if (wants(n, 0)) {
            auto g = grad_of(n, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / bv[i];
        }
        if (wants(n, 1)) {
            auto g = grad_of(n, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i] * n.data[i] / bv[i];
        }
    });
}

Tensor add_scalar(const Tensor& x, double c) {
    return unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& x, double c) {
    return unary("scale", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) {
    return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor square(const Tensor& x) {
    return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
    return unary(
        "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
    return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
    }
    return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp_min(const Tensor& x, double floor) {
    return unary(
        "clamp_min", x, [floor](double v) { return v > floor ? v : floor; },
        [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

double softplus(double x) {
    if (x > kSoftplusThreshold) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

Tensor softplus(const Tensor& x) {
    return unary(
        "softplus", x, [](double v) { return softplus(v); }, [](double v, double) { return sigmoid(v); });
}

Tensor lgamma(const Tensor& x) {
    return unary(
        "lgamma", x, [](double v) { return special::lgamma(v); },
        [](double v, double) { return special::digamma(v); });
}

Tensor digamma(const Tensor& x) {
    return unary(
        "digamma", x, [](double v) { return special::digamma(v); },
        [](double v, double) { return special::trigamma(v); });
}

// ---- reductions and shape -------------------------------------------------

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::make_result("sum", {1}, {s}, {x}, [](Node& n) {
        auto g = grad_of(n, 0);
        for (double& v : g) v += n.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    const double count = static_cast<double>(x.numel());
    return scale(sum(x), 1.0 / count);
}

namespace {

struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Tensor sum_axis(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw ShapeError("sum_axis: axis out of range for " + shape_str(x.shape()));
    const auto s = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    auto xv = x.data();
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.extent + e) * s.inner + i];
    return detail::make_result("sum_axis", std::move(out_shape), std::move(out), {x}, [s](Node& n) {
        auto g = grad_of(n, 0);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t e = 0; e < s.extent; ++e)
                for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + e) * s.inner + i] += n.grad[o * s.inner + i];
    });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
    const double extent = static_cast<double>(x.dim(axis));
    return scale(sum_axis(x, axis), 1.0 / extent);
}

Tensor broadcast_axis(const Tensor& x, std::size_t axis, std::size_t n) {
    if (axis > x.rank()) throw ShapeError("broadcast_axis: axis out of range");
    if (n == 0) throw ShapeError("broadcast_axis: extent must be positive");
    Shape out_shape = x.shape();
    out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
    const auto s = split_at(out_shape, axis);
    auto xv = x.data();
    std::vector<double> out(s.outer * s.extent * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) out[(o * s.extent + e) * s.inner + i] = xv[o * s.inner + i];
    return detail::make_result("broadcast_axis", std::move(out_shape), std::move(out), {x}, [s](Node& n) {
        auto g = grad_of(n, 0);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t e = 0; e < s.extent; ++e)
                for (std::size_t i = 0; i < s.inner; ++i) g[o * s.inner + i] += n.grad[(o * s.extent + e) * s.inner + i];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return detail::make_result("reshape", std::move(shape), std::move(out), {x},
                               [](Node& n) { n.inputs[0]->accumulate(n.grad); });
}

// ---- rows -----------------------------------------------------------------

Tensor softmax(const Tensor& logits) {
    require_rank("softmax", logits, 2);
    const std::size_t rows = logits.dim(0), k = logits.dim(1);
    auto xv = logits.data();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = xv.data() + r * k;
        double* y = out.data() + r * k;
        const double mx = *std::max_element(x, x + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < k; ++j) y[j] /= z;
    }
    return detail::make_result("softmax", logits.shape(), std::move(out), {logits}, [rows, k](Node& n) {
        auto g = grad_of(n, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = n.data.data() + r * k;
            const double* gy = n.grad.data() + r * k;
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < k; ++j) g[r * k + j] += y[j] * (gy[j] - dot);
        }
    });
}

Tensor log_softmax(const Tensor& logits) {
    require_rank("log_softmax", logits, 2);
    const std::size_t rows = logits.dim(0), k = logits.dim(1);
    auto xv = logits.data();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = xv.data() + r * k;
        const double mx = *std::max_element(x, x + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(x[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[j] - lse;
    }
    return detail::make_result("log_softmax", logits.shape(), std::move(out), {logits}, [rows, k](Node& n) {
        auto g = grad_of(n, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = n.data.data() + r * k;
            const double* gy = n.grad.data() + r * k;
            double total = 0.0;
            for (std::size_t j = 0; j < k; ++j) total += gy[j];
            for (std::size_t j = 0; j < k; ++j) g[r * k + j] += gy[j] - std::exp(y[j]) * total;
        }
    });
}

// ---- layers ---------------------------------------------------------------

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank("dense", x, 2);
    require_rank("dense", w, 2);
    require_rank("dense", b, 1);
    const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
    if (w.dim(0) != in || b.dim(0) != out_dim) {
        throw ShapeError("dense: " + shape_str(x.shape()) + " x " + shape_str(w.shape()) + " + " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(rows * out_dim);
    MatMap y(out.data(), ix(rows), ix(out_dim));
    y.noalias() = ConstMatMap(x.data().data(), ix(rows), ix(in)) * ConstMatMap(w.data().data(), ix(in), ix(out_dim));
    auto bv = b.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bv[j];
    return detail::make_result("dense", {rows, out_dim}, std::move(out), {x, w, b}, [rows, in, out_dim](Node& n) {
        ConstMatMap gy(n.grad.data(), ix(rows), ix(out_dim));
        if (wants(n, 0)) {
            MatMap gx(grad_of(n, 0).data(), ix(rows), ix(in));
            gx.noalias() += gy * ConstMatMap(data_of(n, 1).data(), ix(in), ix(out_dim)).transpose();
        }
        if (wants(n, 1)) {
            MatMap gw(grad_of(n, 1).data(), ix(in), ix(out_dim));
            gw.noalias() += ConstMatMap(data_of(n, 0).data(), ix(rows), ix(in)).transpose() * gy;
        }
        if (wants(n, 2)) {
            auto gb = grad_of(n, 2);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < out_dim; ++j) gb[j] += n.grad[r * out_dim + j];
        }
    });
}

Padding same_padding(std::size_t kernel_width) {
    if (kernel_width == 0) throw ShapeError("kernel width must be positive");
    const std::size_t total = kernel_width - 1;
    return {total / 2, total - total / 2};
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
    return conv1d(x, w, b, stride, Padding{pad, pad});
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, Padding pad) {
    require_rank("conv1d", x, 3);
    require_rank("conv1d", w, 3);
    require_rank("conv1d", b, 1);
    if (stride == 0) throw ShapeError("conv1d: stride must be positive");
    const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const std::size_t cout = w.dim(0), kw = w.dim(2);
    if (w.dim(1) != cin || b.dim(0) != cout) {
        throw ShapeError("conv1d: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()) + " bias " +
                         shape_str(b.shape()));
    }
    const std::size_t padded = len + pad.left + pad.right;
    if (padded < kw) throw ShapeError("conv1d: output length < 1");
    const std::size_t lout = (padded - kw) / stride + 1;
    const std::size_t rows = cin * kw, cols = batch * lout;

    // im2col: col[(ci*kw + k), b*lout + t] = x[b, ci, t*stride + k - pad.left]
    auto col = std::make_shared<std::vector<double>>(rows * cols, 0.0);
    auto xv = x.data();
    for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t k = 0; k < kw; ++k) {
            double* dst = col->data() + (ci * kw + k) * cols;
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const double* src = xv.data() + (bi * cin + ci) * len;
                for (std::size_t t = 0; t < lout; ++t) {
                    const std::size_t p = t * stride + k;
                    if (p >= pad.left && p - pad.left < len) dst[bi * lout + t] = src[p - pad.left];
                }
            }
        }

    RowMat tmp = ConstMatMap(w.data().data(), ix(cout), ix(rows)) * ConstMatMap(col->data(), ix(rows), ix(cols));
    std::vector<double> out(batch * cout * lout);
    auto bv = b.data();
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t co = 0; co < cout; ++co) {
            const double* src = tmp.data() + co * cols + bi * lout;
            double* dst = out.data() + (bi * cout + co) * lout;
            for (std::size_t t = 0; t < lout; ++t) dst[t] = src[t] + bv[co];
        }

    return detail::make_result(
        "conv1d", {batch, cout, lout}, std::move(out), {x, w, b},
        [=](Node& n) {
            RowMat gmat(ix(cout), ix(cols));
            for (std::size_t bi = 0; bi < batch; ++bi)
                for (std::size_t co = 0; co < cout; ++co) {
                    const double* src = n.grad.data() + (bi * cout + co) * lout;
                    std::copy(src, src + lout, gmat.data() + co * cols + bi * lout);
                }
            if (wants(n, 1)) {
                MatMap gw(grad_of(n, 1).data(), ix(cout), ix(rows));
                gw.noalias() += gmat * ConstMatMap(col->data(), ix(rows), ix(cols)).transpose();
            }
            if (wants(n, 2)) {
                auto gb = grad_of(n, 2);
                for (std::size_t co = 0; co < cout; ++co) gb[co] += serial_sum(gmat.data() + co * cols, cols);
            }
            if (wants(n, 0)) {
                RowMat gcol = ConstMatMap(data_of(n, 1).data(), ix(cout), ix(rows)).transpose() * gmat;
                auto gx = grad_of(n, 0);
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t k = 0; k < kw; ++k) {
                        const double* src = gcol.data() + (ci * kw + k) * cols;
                        for (std::size_t bi = 0; bi < batch; ++bi) {
                            double* dst = gx.data() + (bi * cin + ci) * len;
                            for (std::size_t t = 0; t < lout; ++t) {
                                const std::size_t p = t * stride + k;
                                if (p >= pad.left && p - pad.left < len) dst[p - pad.left] += src[bi * lout + t];
                            }
                        }
                    }
            }
        });
}

Tensor time_dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank("time_dense", x, 3);
    require_rank("time_dense", w, 2);
    require_rank("time_dense", b, 1);
    const std::size_t batch = x.dim(0), in = x.dim(1), steps = x.dim(2), out_dim = w.dim(1);
    if (w.dim(0) != in || b.dim(0) != out_dim) {
        throw ShapeError("time_dense: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
    }
    std::vector<double> out(batch * out_dim * steps);
    ConstMatMap wm(w.data().data(), ix(in), ix(out_dim));
    auto bv = b.data();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        MatMap y(out.data() + bi * out_dim * steps, ix(out_dim), ix(steps));
        y.noalias() = wm.transpose() * ConstMatMap(x.data().data() + bi * in * steps, ix(in), ix(steps));
        for (std::size_t o = 0; o < out_dim; ++o) y.row(ix(o)).array() += bv[o];
    }
    return detail::make_result(
        "time_dense", {batch, out_dim, steps}, std::move(out), {x, w, b}, [=](Node& n) {
            ConstMatMap wm(data_of(n, 1).data(), ix(in), ix(out_dim));
            for (std::size_t bi = 0; bi < batch; ++bi) {
                ConstMatMap gy(n.grad.data() + bi * out_dim * steps, ix(out_dim), ix(steps));
                if (wants(n, 0)) {
                    MatMap gx(grad_of(n, 0).data() + bi * in * steps, ix(in), ix(steps));
                    gx.noalias() += wm * gy;
                }
                if (wants(n, 1)) {
                    MatMap gw(grad_of(n, 1).data(), ix(in), ix(out_dim));
                    gw.noalias() += ConstMatMap(data_of(n, 0).data() + bi * in * steps, ix(in), ix(steps)) * gy.transpose();
                }
                if (wants(n, 2)) {
                    auto gb = grad_of(n, 2);
                    for (std::size_t o = 0; o < out_dim; ++o) gb[o] += serial_sum(gy.data() + o * steps, steps);
                }
            }
        });
}

Tensor rnn_tanh(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& b) {
    require_rank("rnn_tanh", x, 3);
    require_rank("rnn_tanh", w_ih, 2);
    require_rank("rnn_tanh", w_hh, 2);
    require_rank("rnn_tanh", b, 1);
    const std::size_t batch = x.dim(0), in = x.dim(1), steps = x.dim(2), hidden = w_ih.dim(1);
    if (w_ih.dim(0) != in || w_hh.dim(0) != hidden || w_hh.dim(1) != hidden || b.dim(0) != hidden) {
        throw ShapeError("rnn_tanh: input " + shape_str(x.shape()) + " w_ih " + shape_str(w_ih.shape()) + " w_hh " +
                         shape_str(w_hh.shape()));
    }
    // time-major copy of the input: row (t*batch + b)
    auto xt = std::make_shared<RowMat>(ix(steps * batch), ix(in));
    auto xv = x.data();
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t f = 0; f < in; ++f) {
            const double* src = xv.data() + (bi * in + f) * steps;
            for (std::size_t t = 0; t < steps; ++t) (*xt)(ix(t * batch + bi), ix(f)) = src[t];
        }
    ConstMatMap wih(w_ih.data().data(), ix(in), ix(hidden));
    ConstMatMap whh(w_hh.data().data(), ix(hidden), ix(hidden));
    Eigen::Map<const Eigen::RowVectorXd> bias(b.data().data(), ix(hidden));

    auto hs = std::make_shared<RowMat>(ix(steps * batch), ix(hidden));
    hs->noalias() = (*xt) * wih;
    for (std::size_t t = 0; t < steps; ++t) {
        auto block = hs->middleRows(ix(t * batch), ix(batch));
        if (t > 0) block.noalias() += hs->middleRows(ix((t - 1) * batch), ix(batch)) * whh;
        block.rowwise() += bias;
        block = block.array().tanh().matrix();
    }
    std::vector<double> out(batch * hidden * steps);
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t bi = 0; bi < batch; ++bi)
            for (std::size_t h = 0; h < hidden; ++h) out[(bi * hidden + h) * steps + t] = (*hs)(ix(t * batch + bi), ix(h));

    return detail::make_result(
        "rnn_tanh", {batch, hidden, steps}, std::move(out), {x, w_ih, w_hh, b}, [=](Node& n) {
            ConstMatMap wih(data_of(n, 1).data(), ix(in), ix(hidden));
            ConstMatMap whh(data_of(n, 2).data(), ix(hidden), ix(hidden));
            RowMat dpre(ix(steps * batch), ix(hidden));
            for (std::size_t bi = 0; bi < batch; ++bi)
                for (std::size_t h = 0; h < hidden; ++h) {
                    const double* src = n.grad.data() + (bi * hidden + h) * steps;
                    for (std::size_t t = 0; t < steps; ++t) dpre(ix(t * batch + bi), ix(h)) = src[t];
                }
            RowMat carry = RowMat::Zero(ix(batch), ix(hidden));
            RowMat gwhh = RowMat::Zero(ix(hidden), ix(hidden));
            for (std::size_t t = steps; t-- > 0;) {
                auto da = dpre.middleRows(ix(t * batch), ix(batch));
                const auto h_t = hs->middleRows(ix(t * batch), ix(batch));
                da += carry;
                da = (da.array() * (1.0 - h_t.array().square())).matrix();
                if (t > 0) {
                    gwhh.noalias() += hs->middleRows(ix((t - 1) * batch), ix(batch)).transpose() * da;
                    carry.noalias() = da * whh.transpose();
                }
            }
            if (wants(n, 0)) {
                RowMat dxt = dpre * wih.transpose();
                auto gx = grad_of(n, 0);
                for (std::size_t bi = 0; bi < batch; ++bi)
                    for (std::size_t f = 0; f < in; ++f) {
                        double* dst = gx.data() + (bi * in + f) * steps;
                        for (std::size_t t = 0; t < steps; ++t) dst[t] += dxt(ix(t * batch + bi), ix(f));
                    }
            }
            if (wants(n, 1)) {
                MatMap gw(grad_of(n, 1).data(), ix(in), ix(hidden));
                gw.noalias() += xt->transpose() * dpre;
            }
            if (wants(n, 2)) {
                MatMap gw(grad_of(n, 2).data(), ix(hidden), ix(hidden));
                gw += gwhh;
            }
            if (wants(n, 3)) {
                auto gb = grad_of(n, 3);
                for (std::size_t r = 0; r < steps * batch; ++r)
                    for (std::size_t h = 0; h < hidden; ++h) gb[h] += dpre(ix(r), ix(h));
            }
        });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& running,
                 const BatchNormOptions& opts) {
    require_rank("batchnorm", x, 3);
    const std::size_t batch = x.dim(0), channels = x.dim(1), len = x.dim(2);
    if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels} || running.mean.size() != channels ||
        running.var.size() != channels) {
        throw ShapeError("batchnorm: parameters do not match " + shape_str(x.shape()));
    }
    if (!(opts.eps > 0.0)) throw DomainError("batchnorm: eps must be positive");
    const std::size_t count = batch * len;
    auto xv = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();

    std::vector<double> mu(channels), inv_std(channels);
    if (opts.mode == Mode::train) {
        if (count < 2) throw DomainError("batchnorm: train mode needs more than one value per channel");
        for (std::size_t c = 0; c < channels; ++c) {
            double s = 0.0;
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const double* p = xv.data() + (bi * channels + c) * len;
                for (std::size_t t = 0; t < len; ++t) s += p[t];
            }
            const double m = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const double* p = xv.data() + (bi * channels + c) * len;
                for (std::size_t t = 0; t < len; ++t) ss += (p[t] - m) * (p[t] - m);
            }
            const double var = ss / static_cast<double>(count);
            mu[c] = m;
            inv_std[c] = 1.0 / std::sqrt(var + opts.eps);
            if (opts.update_running) {
                const double unbiased = ss / static_cast<double>(count - 1);
                running.mean[c] = (1.0 - opts.momentum) * running.mean[c] + opts.momentum * m;
                running.var[c] = (1.0 - opts.momentum) * running.var[c] + opts.momentum * unbiased;
            }
        }
    } else {
        for (std::size_t c = 0; c < channels; ++c) {
            mu[c] = running.mean[c];
            inv_std[c] = 1.0 / std::sqrt(running.var[c] + opts.eps);
        }
    }

    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    std::vector<double> out(xv.size());
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (bi * channels + c) * len;
            for (std::size_t t = 0; t < len; ++t) {
                const double h = (xv[off + t] - mu[c]) * inv_std[c];
                (*xhat)[off + t] = h;
                out[off + t] = gv[c] * h + bv[c];
            }
        }

    const bool train = opts.mode == Mode::train;
    return detail::make_result(
        "batchnorm", x.shape(), std::move(out), {x, gamma, beta}, [=](Node& n) {
            const auto& gam = data_of(n, 1);
            std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
            for (std::size_t bi = 0; bi < batch; ++bi)
                for (std::size_t c = 0; c < channels; ++c) {
                    const std::size_t off = (bi * channels + c) * len;
                    for (std::size_t t = 0; t < len; ++t) {
                        sum_dy[c] += n.grad[off + t];
                        sum_dy_xhat[c] += n.grad[off + t] * (*xhat)[off + t];
                    }
                }
            if (wants(n, 1)) {
                auto g = grad_of(n, 1);
                for (std::size_t c = 0; c < channels; ++c) g[c] += sum_dy_xhat[c];
            }
            if (wants(n, 2)) {
                auto g = grad_of(n, 2);
                for (std::size_t c = 0; c < channels; ++c) g[c] += sum_dy[c];
            }
            if (wants(n, 0)) {
                auto g = grad_of(n, 0);
                const double inv_n = 1.0 / static_cast<double>(count);
                for (std::size_t bi = 0; bi < batch; ++bi)
                    for (std::size_t c = 0; c < channels; ++c) {
                        const std::size_t off = (bi * channels + c) * len;
                        const double k = gam[c] * inv_std[c];
                        for (std::size_t t = 0; t < len; ++t) {
                            if (train) {
                                g[off + t] += k * (n.grad[off + t] - inv_n * sum_dy[c] -
                                                   (*xhat)[off + t] * inv_n * sum_dy_xhat[c]);
                            } else {
                                g[off + t] += k * n.grad[off + t];
                            }
                        }
                    }
            }
        });
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
    if (labels.empty()) throw ShapeError("one_hot: empty label list");
    std::vector<double> out(labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
        }
        out[i * classes + static_cast<std::size_t>(y)] = 1.0;
    }
    return Tensor::from({labels.size(), classes}, std::move(out));
}

}  // namespace mapu
