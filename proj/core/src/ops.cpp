#include "trustgan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"
#include "trustgan/errors.hpp"

namespace trustgan::ops {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool needs_grad = false;
    if (grad_mode_enabled()) {
        for (const Tensor* t : inputs) needs_grad = needs_grad || t->requires_grad();
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->is_leaf = false;
        for (const Tensor* t : inputs) node->inputs.push_back(t->node());
        node->backward_fn = std::move(backward);
    }
    return Tensor::from_node(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
    }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank) {
        throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_to_string(x.shape()));
    }
}

void require_finite(const Tensor& x, const char* op) {
    for (double v : x.data()) {
        if (!std::isfinite(v)) throw InvalidInput(std::string(op) + ": non-finite input");
    }
}

// Unary elementwise op: forward f(x), backward derivative d(x, y).
template <class F, class D>
Tensor unary(const Tensor& x, F f, D d) {
    std::vector<double> out(x.numel());
    auto xs = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
    return make_result(x.shape(), std::move(out), {&x}, [d](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = in.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * d(in.data[i], self.data[i]);
    });
}

// Row-wise softmax of a [rows, n] buffer.
void softmax_rows(const std::vector<double>& x, std::size_t rows, std::size_t n, std::vector<double>& out) {
    out.resize(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data() + r * n;
        double* o = out.data() + r * n;
        double mx = *std::max_element(in, in + n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            o[i] = std::exp(in[i] - mx);
            total += o[i];
        }
        for (std::size_t i = 0; i < n; ++i) o[i] /= total;
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            auto& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        if (self.inputs[0]->requires_grad) {
            auto& g = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = self.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        Node& a = *self.inputs[0];
        Node& b = *self.inputs[1];
        if (a.requires_grad) {
            auto& g = a.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.data[i];
        }
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.data[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
    return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        Node& a = *self.inputs[0];
        Node& b = *self.inputs[1];
        if (a.requires_grad) {
            auto& g = a.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / b.data[i];
        }
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.data[i] / b.data[i];
        }
    });
}

Tensor neg(const Tensor& x) {
    return unary(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor log_clamped(const Tensor& x, double floor) {
    return unary(
        x, [floor](double v) { return std::log(std::max(v, floor)); },
        [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor pow_abs(const Tensor& x, double p) {
    if (!(p >= 1.0)) throw ContractViolation("pow_abs: exponent must be >= 1");
    return unary(
        x, [p](double v) { return std::pow(std::abs(v), p); },
        [p](double v, double) {
            if (v == 0.0) return 0.0;
            double s = v > 0.0 ? 1.0 : -1.0;
            return p * std::pow(std::abs(v), p - 1.0) * s;
        });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v < 0.0 ? 0.0 : v; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    return unary(
        x, [slope](double v) { return v < 0.0 ? slope * v : v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return make_result(Shape{}, {total}, {&x}, [](Node& self) {
        Node& in = *self.inputs[0];
        auto& g = in.ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    const double n = static_cast<double>(x.numel());
    return make_result(Shape{}, {total / n}, {&x}, [n](Node& self) {
        Node& in = *self.inputs[0];
        auto& g = in.ensure_grad();
        for (auto& v : g) v += self.grad[0] / n;
    });
}

Tensor mean_rows(const Tensor& x) {
    if (x.rank() < 1) throw ContractViolation("mean_rows: needs rank >= 1");
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.numel() / rows;
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += x.data()[r * cols + c];
        out[r] = total / static_cast<double>(cols);
    }
    return make_result(Shape{rows}, std::move(out), {&x}, [rows, cols](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double gr = self.grad[r] / static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gr;
        }
    });
}

Tensor sum_rows(const Tensor& x) {
    require_rank(x, 2, "sum_rows");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r] += x.data()[r * cols + c];
    }
    return make_result(Shape{rows}, std::move(out), {&x}, [rows, cols](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r];
        }
    });
}

Tensor max_rows(const Tensor& x) {
    require_rank(x, 2, "max_rows");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    std::vector<double> out(rows);
    std::vector<std::size_t> arg(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * cols;
        arg[r] = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
        out[r] = row[arg[r]];
    }
    return make_result(Shape{rows}, std::move(out), {&x}, [arg, cols](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < arg.size(); ++r) g[r * cols + arg[r]] += self.grad[r];
    });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
    require_rank(x, 2, "pick");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (index.size() != rows) throw ContractViolation("pick: index count does not match batch size");
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (idx[r] >= cols) {
            throw InvalidInput("pick: index " + std::to_string(idx[r]) + " out of range [0, " +
                               std::to_string(cols) + ")");
        }
        out[r] = x.data()[r * cols + idx[r]];
    }
    return make_result(Shape{rows}, std::move(out), {&x}, [idx, cols](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) g[r * cols + idx[r]] += self.grad[r];
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
    if (x.rank() < 1) throw ContractViolation("gather_rows: needs rank >= 1");
    if (index.empty()) throw ContractViolation("gather_rows: empty index");
    const std::size_t rows = x.dim(0);
    const std::size_t stride = x.numel() / rows;
    std::vector<std::size_t> idx(index.begin(), index.end());
    Shape shape = x.shape();
    shape[0] = idx.size();
    std::vector<double> out(idx.size() * stride);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows) throw InvalidInput("gather_rows: row index out of range");
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * stride), stride,
                    out.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    return make_result(std::move(shape), std::move(out), {&x}, [idx, stride](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t k = 0; k < stride; ++k) g[idx[i] * stride + k] += self.grad[i * stride + k];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ContractViolation("reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), {&x}, [](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ContractViolation("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                                shape_to_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    return make_result(Shape{m, n}, std::move(out), {&a, &b}, [m, n, k](Node& self) {
        Node& a = *self.inputs[0];
        Node& b = *self.inputs[1];
        if (a.requires_grad) detail::gemm_nt(m, k, n, self.grad.data(), b.data.data(), a.ensure_grad().data());
        if (b.requires_grad) detail::gemm_tn(k, n, m, a.data.data(), self.grad.data(), b.ensure_grad().data());
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 2, "linear");
    require_rank(weight, 2, "linear");
    require_rank(bias, 1, "linear");
    const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    if (weight.dim(1) != in || bias.dim(0) != out_dim) {
        throw ContractViolation("linear: input " + shape_to_string(x.shape()) + " weight " +
                                shape_to_string(weight.shape()) + " bias " + shape_to_string(bias.shape()));
    }
    std::vector<double> out(batch * out_dim);
    for (std::size_t r = 0; r < batch; ++r) {
        std::copy(bias.data().begin(), bias.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_dim));
    }
    detail::gemm_nt(batch, out_dim, in, x.data().data(), weight.data().data(), out.data());
    return make_result(Shape{batch, out_dim}, std::move(out), {&x, &weight, &bias}, [batch, in, out_dim](Node& self) {
        Node& x = *self.inputs[0];
        Node& w = *self.inputs[1];
        Node& b = *self.inputs[2];
        if (x.requires_grad) detail::gemm_nn(batch, in, out_dim, self.grad.data(), w.data.data(), x.ensure_grad().data());
        if (w.requires_grad) detail::gemm_tn(out_dim, in, batch, self.grad.data(), x.data.data(), w.ensure_grad().data());
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (std::size_t r = 0; r < batch; ++r) {
                for (std::size_t o = 0; o < out_dim; ++o) g[o] += self.grad[r * out_dim + o];
            }
        }
    });
}

namespace {

struct ConvGeometry {
    std::size_t batch, in_ch, out_ch, height, width, kh, kw, dilation;
    std::size_t pad_h() const { return dilation * (kh / 2); }
    std::size_t pad_w() const { return dilation * (kw / 2); }
    // Input offset of kernel tap `i` along one axis.
    std::ptrdiff_t offset_h(std::size_t i) const {
        return static_cast<std::ptrdiff_t>(i * dilation) - static_cast<std::ptrdiff_t>(pad_h());
    }
    std::ptrdiff_t offset_w(std::size_t j) const {
        return static_cast<std::ptrdiff_t>(j * dilation) - static_cast<std::ptrdiff_t>(pad_w());
    }
    std::size_t pixels() const { return height * width; }
    std::size_t patch() const { return in_ch * kh * kw; }
};

// Output columns [w_lo, w_hi) read inside the image for kernel offset `j`.
std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_columns(const ConvGeometry& g, std::size_t j) {
    const auto w_max = static_cast<std::ptrdiff_t>(g.width);
    const std::ptrdiff_t shift = g.offset_w(j);
    return {std::clamp<std::ptrdiff_t>(-shift, 0, w_max), std::clamp<std::ptrdiff_t>(w_max - shift, 0, w_max)};
}

// col[patch, pixels]
void im2col(const ConvGeometry& g, const double* image, double* col) {
    const auto h_max = static_cast<std::ptrdiff_t>(g.height);
    const auto w_max = static_cast<std::ptrdiff_t>(g.width);
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        const double* plane = image + c * g.pixels();
        for (std::size_t i = 0; i < g.kh; ++i) {
            const std::ptrdiff_t dh = g.offset_h(i);
            for (std::size_t j = 0; j < g.kw; ++j) {
                const std::ptrdiff_t dw = g.offset_w(j);
                const auto [lo, hi] = valid_columns(g, j);
                double* row = col + ((c * g.kh + i) * g.kw + j) * g.pixels();
                for (std::ptrdiff_t h = 0; h < h_max; ++h) {
                    double* out = row + h * w_max;
                    const std::ptrdiff_t sh = h + dh;
                    if (sh < 0 || sh >= h_max || lo >= hi) {
                        std::fill_n(out, w_max, 0.0);
                        continue;
                    }
                    std::fill(out, out + lo, 0.0);
                    std::copy(plane + sh * w_max + lo + dw, plane + sh * w_max + hi + dw, out + lo);
                    std::fill(out + hi, out + w_max, 0.0);
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const double* col, double* image) {
    const auto h_max = static_cast<std::ptrdiff_t>(g.height);
    const auto w_max = static_cast<std::ptrdiff_t>(g.width);
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        double* plane = image + c * g.pixels();
        for (std::size_t i = 0; i < g.kh; ++i) {
            const std::ptrdiff_t dh = g.offset_h(i);
            for (std::size_t j = 0; j < g.kw; ++j) {
                const std::ptrdiff_t dw = g.offset_w(j);
                const auto [lo, hi] = valid_columns(g, j);
                const double* row = col + ((c * g.kh + i) * g.kw + j) * g.pixels();
                for (std::ptrdiff_t h = 0; h < h_max; ++h) {
                    const std::ptrdiff_t sh = h + dh;
                    if (sh < 0 || sh >= h_max) continue;
                    const double* in = row + h * w_max;
                    double* dst = plane + sh * w_max;
                    for (std::ptrdiff_t w = lo; w < hi; ++w) dst[w + dw] += in[w];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t dilation) {
    require_rank(x, 4, "conv2d");
    require_rank(weight, 4, "conv2d");
    require_rank(bias, 1, "conv2d");
    if (dilation == 0) throw ContractViolation("conv2d: dilation must be positive");
    ConvGeometry g{x.dim(0), x.dim(1), weight.dim(0), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), dilation};
    if (weight.dim(1) != g.in_ch || bias.dim(0) != g.out_ch) {
        throw ContractViolation("conv2d: input " + shape_to_string(x.shape()) + " weight " +
                                shape_to_string(weight.shape()) + " bias " + shape_to_string(bias.shape()));
    }
    if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ContractViolation("conv2d: kernel sizes must be odd");

    const std::size_t in_stride = g.in_ch * g.pixels();
    const std::size_t out_stride = g.out_ch * g.pixels();
    std::vector<double> out(g.batch * out_stride);
    std::vector<double> col(g.patch() * g.pixels());
    for (std::size_t b = 0; b < g.batch; ++b) {
        double* ob = out.data() + b * out_stride;
        for (std::size_t o = 0; o < g.out_ch; ++o) std::fill_n(ob + o * g.pixels(), g.pixels(), bias.data()[o]);
        im2col(g, x.data().data() + b * in_stride, col.data());
        detail::gemm_nn(g.out_ch, g.pixels(), g.patch(), weight.data().data(), col.data(), ob);
    }
    return make_result(Shape{g.batch, g.out_ch, g.height, g.width}, std::move(out), {&x, &weight, &bias},
                       [g, in_stride, out_stride](Node& self) {
                           Node& x = *self.inputs[0];
                           Node& w = *self.inputs[1];
                           Node& b = *self.inputs[2];
                           std::vector<double> col;
                           if (w.requires_grad) col.resize(g.patch() * g.pixels());
                           std::vector<double> dcol;
                           if (x.requires_grad) dcol.resize(g.patch() * g.pixels());
                           for (std::size_t n = 0; n < g.batch; ++n) {
                               const double* dout = self.grad.data() + n * out_stride;
                               if (w.requires_grad) {
                                   im2col(g, x.data.data() + n * in_stride, col.data());
                                   detail::gemm_nt(g.out_ch, g.patch(), g.pixels(), dout, col.data(),
                                                   w.ensure_grad().data());
                               }
                               if (b.requires_grad) {
                                   auto& gb = b.ensure_grad();
                                   for (std::size_t o = 0; o < g.out_ch; ++o) {
                                       const double* row = dout + o * g.pixels();
                                       double acc = 0.0;
                                       for (std::size_t p = 0; p < g.pixels(); ++p) acc += row[p];
                                       gb[o] += acc;
                                   }
                               }
                               if (x.requires_grad) {
                                   detail::gemm_tn_assign(g.patch(), g.pixels(), g.out_ch, w.data.data(), dout, dcol.data());
                                   col2im_add(g, dcol.data(), x.ensure_grad().data() + n * in_stride);
                               }
                           }
                       });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t dilation) {
    require_rank(x, 3, "conv1d");
    require_rank(weight, 3, "conv1d");
    Tensor x4 = reshape(x, Shape{x.dim(0), x.dim(1), 1, x.dim(2)});
    Tensor w4 = reshape(weight, Shape{weight.dim(0), weight.dim(1), 1, weight.dim(2)});
    Tensor y = conv2d(x4, w4, bias, dilation);
    return reshape(y, Shape{y.dim(0), y.dim(1), y.dim(3)});
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() < 3) throw ContractViolation("global_avg_pool: expected [B, C, ...spatial]");
    const std::size_t batch = x.dim(0), channels = x.dim(1);
    const std::size_t spatial = x.numel() / (batch * channels);
    std::vector<double> out(batch * channels);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (std::size_t s = 0; s < spatial; ++s) acc += x.data()[i * spatial + s];
        out[i] = acc / static_cast<double>(spatial);
    }
    return make_result(Shape{batch, channels}, std::move(out), {&x}, [spatial](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double gi = self.grad[i] / static_cast<double>(spatial);
            for (std::size_t s = 0; s < spatial; ++s) g[i * spatial + s] += gi;
        }
    });
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 2, "softmax");
    require_finite(logits, "softmax");
    const std::size_t rows = logits.dim(0), n = logits.dim(1);
    std::vector<double> in(logits.data().begin(), logits.data().end());
    std::vector<double> out;
    softmax_rows(in, rows, n, out);
    return make_result(logits.shape(), std::move(out), {&logits}, [rows, n](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * n;
            const double* gy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += gy[i] * y[i];
            for (std::size_t i = 0; i < n; ++i) g[r * n + i] += y[i] * (gy[i] - dot);
        }
    });
}

Tensor log_softmax(const Tensor& logits) {
    require_rank(logits, 2, "log_softmax");
    require_finite(logits, "log_softmax");
    const std::size_t rows = logits.dim(0), n = logits.dim(1);
    std::vector<double> out(logits.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = logits.data().data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += std::exp(in[i] - mx);
        const double lse = mx + std::log(total);
        for (std::size_t i = 0; i < n; ++i) out[r * n + i] = in[i] - lse;
    }
    return make_result(logits.shape(), std::move(out), {&logits}, [rows, n](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gy = self.grad.data() + r * n;
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) total += gy[i];
            for (std::size_t i = 0; i < n; ++i) g[r * n + i] += gy[i] - std::exp(self.data[r * n + i]) * total;
        }
    });
}

Tensor logsumexp(const Tensor& logits) {
    require_rank(logits, 2, "logsumexp");
    require_finite(logits, "logsumexp");
    const std::size_t rows = logits.dim(0), n = logits.dim(1);
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = logits.data().data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += std::exp(in[i] - mx);
        out[r] = mx + std::log(total);
    }
    return make_result(Shape{rows}, std::move(out), {&logits}, [rows, n](Node& self) {
        Node& in = *self.inputs[0];
        auto& g = in.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < n; ++i) {
                g[r * n + i] += self.grad[r] * std::exp(in.data[r * n + i] - self.data[r]);
            }
        }
    });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training,
                  bool update_stats, double momentum, double eps) {
    if (x.rank() < 2) throw ContractViolation("batch_norm: expected [B, C, ...]");
    const std::size_t batch = x.dim(0), channels = x.dim(1);
    const std::size_t spatial = x.numel() / (batch * channels);
    if (gamma.numel() != channels || beta.numel() != channels || stats.running_mean.numel() != channels ||
        stats.running_var.numel() != channels) {
        throw ContractViolation("batch_norm: parameter size does not match channel count " + std::to_string(channels));
    }
    const std::size_t count = batch * spatial;
    if (training && count < 2) throw InvalidInput("batch_norm: training mode needs more than one value per channel");

    std::vector<double> mean(channels, 0.0), inv_std(channels, 0.0);
    auto at = [&](std::size_t b, std::size_t c, std::size_t s) { return (b * channels + c) * spatial + s; };
    if (training) {
        std::vector<double> var(channels, 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t s = 0; s < spatial; ++s) acc += x.data()[at(b, c, s)];
            mean[c] = acc / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t s = 0; s < spatial; ++s) {
                    const double d = x.data()[at(b, c, s)] - mean[c];
                    sq += d * d;
                }
            var[c] = sq / static_cast<double>(count);
            inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
        }
        if (update_stats) {
            auto rm = stats.running_mean.mutable_data();
            auto rv = stats.running_var.mutable_data();
            const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
            for (std::size_t c = 0; c < channels; ++c) {
                rm[c] = (1.0 - momentum) * rm[c] + momentum * mean[c];
                rv[c] = (1.0 - momentum) * rv[c] + momentum * var[c] * unbias;
            }
        }
    } else {
        for (std::size_t c = 0; c < channels; ++c) {
            mean[c] = stats.running_mean.data()[c];
            inv_std[c] = 1.0 / std::sqrt(stats.running_var.data()[c] + eps);
        }
    }

    std::vector<double> xhat(x.numel()), out(x.numel());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t i = at(b, c, s);
                xhat[i] = (x.data()[i] - mean[c]) * inv_std[c];
                out[i] = gamma.data()[c] * xhat[i] + beta.data()[c];
            }

    return make_result(x.shape(), std::move(out), {&x, &gamma, &beta},
                       [xhat = std::move(xhat), inv_std, training, batch, channels, spatial, count](Node& self) {
                           Node& x = *self.inputs[0];
                           Node& gamma = *self.inputs[1];
                           Node& beta = *self.inputs[2];
                           auto at = [&](std::size_t b, std::size_t c, std::size_t s) {
                               return (b * channels + c) * spatial + s;
                           };
                           for (std::size_t c = 0; c < channels; ++c) {
                               double sum_g = 0.0, sum_g_xhat = 0.0;
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t s = 0; s < spatial; ++s) {
                                       const std::size_t i = at(b, c, s);
                                       sum_g += self.grad[i];
                                       sum_g_xhat += self.grad[i] * xhat[i];
                                   }
                               if (gamma.requires_grad) gamma.ensure_grad()[c] += sum_g_xhat;
                               if (beta.requires_grad) beta.ensure_grad()[c] += sum_g;
                               if (!x.requires_grad) continue;
                               auto& gx = x.ensure_grad();
                               const double gm = gamma.data[c];
                               const double m = static_cast<double>(count);
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t s = 0; s < spatial; ++s) {
                                       const std::size_t i = at(b, c, s);
                                       if (training) {
                                           gx[i] += gm * inv_std[c] / m *
                                                    (m * self.grad[i] - sum_g - xhat[i] * sum_g_xhat);
                                       } else {
                                           gx[i] += gm * inv_std[c] * self.grad[i];
                                       }
                                   }
                           }
                       });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw InvalidInput("dropout: rate must lie in [0, 1)");
    if (rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = uniform01(rng) < rate ? 0.0 : keep_scale;
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
    return make_result(x.shape(), std::move(out), {&x}, [mask = std::move(mask)](Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

}  // namespace trustgan::ops
