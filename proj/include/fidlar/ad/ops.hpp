#pragma once

#include "tensor.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace fidlar::ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using Idx = Eigen::Index;

inline double* grad_of(Node& self, std::size_t i) {
    Node* p = self.parents[i].get();
    return p->requires_grad ? p->grad_buffer() : nullptr;
}
inline const Array& value_of(Node& self, std::size_t i) { return self.parents[i]->value; }

[[noreturn]] inline void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw StructuralError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

enum class Broadcast { same, bias, scalar };

inline Broadcast classify(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return Broadcast::same;
    if (numel(b) == 1) return Broadcast::scalar;
    if (b.size() == 1 && !a.empty() && b[0] == a.back()) return Broadcast::bias;
    mismatch(op, a, b);
}

template <class F>
Array unary(const Tensor& x, F f) {
    Array out(x.shape());
    const auto& xv = x.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(xv[i]);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The right operand may be the same shape, a scalar,
// or a rank-1 bias broadcast along the last dimension.

inline Tensor add(const Tensor& a, const Tensor& b) {
    using namespace detail;
    const auto mode = classify("add", a.shape(), b.shape());
    Array out = a.value();
    const auto& bv = b.value().data;
    const std::size_t n = out.size(), m = bv.size();
    if (mode == Broadcast::same)
        for (std::size_t i = 0; i < n; ++i) out.data[i] += bv[i];
    else if (mode == Broadcast::scalar)
        for (std::size_t i = 0; i < n; ++i) out.data[i] += bv[0];
    else
        for (std::size_t i = 0; i < n; ++i) out.data[i] += bv[i % m];
    return make_result(std::move(out), {&a, &b}, [mode, n, m](Node& self) {
        const double* g = self.grad.data();
        if (double* ga = grad_of(self, 0))
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        if (double* gb = grad_of(self, 1)) {
            if (mode == Broadcast::same)
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            else if (mode == Broadcast::scalar)
                for (std::size_t i = 0; i < n; ++i) gb[0] += g[i];
            else
                for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i];
        }
    });
}

inline Tensor neg(const Tensor& a);

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return add(a, neg(b));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    using namespace detail;
    const auto mode = classify("mul", a.shape(), b.shape());
    Array out = a.value();
    const auto& bv = b.value().data;
    const std::size_t n = out.size(), m = bv.size();
    for (std::size_t i = 0; i < n; ++i)
        out.data[i] *= mode == Broadcast::same ? bv[i] : mode == Broadcast::scalar ? bv[0] : bv[i % m];
    return make_result(std::move(out), {&a, &b}, [mode, n, m](Node& self) {
        const double* g = self.grad.data();
        const auto& av = value_of(self, 0).data;
        const auto& bv = value_of(self, 1).data;
        auto bidx = [&](std::size_t i) { return mode == Broadcast::same ? i : mode == Broadcast::scalar ? 0 : i % m; };
        if (double* ga = grad_of(self, 0))
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[bidx(i)];
        if (double* gb = grad_of(self, 1))
            for (std::size_t i = 0; i < n; ++i) gb[bidx(i)] += g[i] * av[i];
    });
}

inline Tensor scale(const Tensor& a, double c) {
    Array out = a.value();
    for (auto& v : out.data) v *= c;
    return make_result(std::move(out), {&a}, [c](Node& self) {
        if (double* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += c * self.grad[i];
    });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor add_scalar(const Tensor& a, double c) {
    Array out = a.value();
    for (auto& v : out.data) v += c;
    return make_result(std::move(out), {&a}, [](Node& self) {
        if (double* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

/// Elementwise y = c_i * x + d_i along the last dimension (fixed affine map, e.g. denormalization).
inline Tensor affine_last(const Tensor& a, const std::vector<double>& mul_c, const std::vector<double>& add_c) {
    const std::size_t m = a.value().last();
    if (mul_c.size() != m || add_c.size() != m)
        throw StructuralError("affine_last: coefficient length does not match last dim of " + shape_str(a.shape()));
    Array out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = out.data[i] * mul_c[i % m] + add_c[i % m];
    return make_result(std::move(out), {&a}, [mul_c, m](Node& self) {
        if (double* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += mul_c[i % m] * self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline Tensor relu(const Tensor& x) {
    Array out = detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
    return make_result(std::move(out), {&x}, [](Node& self) {
        if (double* gx = detail::grad_of(self, 0)) {
            const auto& xv = detail::value_of(self, 0).data;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (xv[i] > 0.0) gx[i] += self.grad[i];
        }
    });
}

inline Tensor tanh(const Tensor& x) {
    Array out = detail::unary(x, [](double v) { return std::tanh(v); });
    return make_result(std::move(out), {&x}, [](Node& self) {
        if (double* gx = detail::grad_of(self, 0)) {
            const auto& y = self.value.data;
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * (1.0 - y[i] * y[i]);
        }
    });
}

inline double sigmoid_scalar(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
    Array out = detail::unary(x, sigmoid_scalar);
    return make_result(std::move(out), {&x}, [](Node& self) {
        if (double* gx = detail::grad_of(self, 0)) {
            const auto& y = self.value.data;
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * y[i] * (1.0 - y[i]);
        }
    });
}

inline Tensor square(const Tensor& x) {
    Array out = detail::unary(x, [](double v) { return v * v; });
    return make_result(std::move(out), {&x}, [](Node& self) {
        if (double* gx = detail::grad_of(self, 0)) {
            const auto& xv = detail::value_of(self, 0).data;
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += 2.0 * xv[i] * self.grad[i];
        }
    });
}

/// max(x, c); the subgradient at x == c is 0.
inline Tensor max_with_scalar(const Tensor& x, double c) {
    Array out = detail::unary(x, [c](double v) { return v > c ? v : c; });
    return make_result(std::move(out), {&x}, [c](Node& self) {
        if (double* gx = detail::grad_of(self, 0)) {
            const auto& xv = detail::value_of(self, 0).data;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (xv[i] > c) gx[i] += self.grad[i];
        }
    });
}

/// min(x, c); the subgradient at x == c is 0.
inline Tensor min_with_scalar(const Tensor& x, double c) {
    Array out = detail::unary(x, [c](double v) { return v < c ? v : c; });
    return make_result(std::move(out), {&x}, [c](Node& self) {
        if (double* gx = detail::grad_of(self, 0)) {
            const auto& xv = detail::value_of(self, 0).data;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (xv[i] < c) gx[i] += self.grad[i];
        }
    });
}

/// Softmax over the last dimension.
inline Tensor softmax(const Tensor& x) {
    const std::size_t m = x.value().last();
    const std::size_t rows = x.size() / m;
    Array out(x.shape());
    const auto& xv = x.value().data;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * m;
        double* o = out.data.data() + r * m;
        const double mx = *std::max_element(in, in + m);
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < m; ++j) o[j] /= s;
    }
    return make_result(std::move(out), {&x}, [m, rows](Node& self) {
        if (double* gx = detail::grad_of(self, 0)) {
            const double* y = self.value.data.data();
            const double* g = self.grad.data();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < m; ++j) dot += g[r * m + j] * y[r * m + j];
                for (std::size_t j = 0; j < m; ++j) gx[r * m + j] += y[r * m + j] * (g[r * m + j] - dot);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor reduce_sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.value().data) s += v;
    return make_result(Array::scalar(s), {&x}, [](Node& self) {
        if (double* gx = detail::grad_of(self, 0)) {
            const double g = self.grad[0];
            const std::size_t n = detail::value_of(self, 0).size();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        }
    });
}

inline Tensor mean(const Tensor& x) {
    return scale(reduce_sum(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// Linear algebra

/**
 * Matrix product over the last two dimensions.
 *
 * Supported: [m,n]x[n,p]; [...,m,n]x[n,p] (leading dims flattened);
 * [m,n]x[B,n,p] (left operand broadcast); [B,m,n]x[B,n,p] (batched).
 */
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    using namespace detail;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sb.size() > 3 || sa[sa.size() - 1] != sb[sb.size() - 2])
        mismatch("matmul", sa, sb);
    const std::size_t n = sa.back(), p = sb.back();
    if (sb.size() == 2) {
        const std::size_t M = a.size() / n;
        Shape so = sa;
        so.back() = p;
        Array out(so);
        MapM(out.data.data(), Idx(M), Idx(p)).noalias() =
            CMapM(a.data(), Idx(M), Idx(n)) * CMapM(b.data(), Idx(n), Idx(p));
        return make_result(std::move(out), {&a, &b}, [M, n, p](Node& self) {
            CMapM g(self.grad.data(), Idx(M), Idx(p));
            if (double* ga = grad_of(self, 0))
                MapM(ga, Idx(M), Idx(n)).noalias() += g * CMapM(value_of(self, 1).data.data(), Idx(n), Idx(p)).transpose();
            if (double* gb = grad_of(self, 1))
                MapM(gb, Idx(n), Idx(p)).noalias() += CMapM(value_of(self, 0).data.data(), Idx(M), Idx(n)).transpose() * g;
        });
    }
    const std::size_t B = sb[0];
    if (sa.size() == 2) {
        const std::size_t m = sa[0];
        Array out(Shape{B, m, p});
        for (std::size_t bi = 0; bi < B; ++bi)
            MapM(out.data.data() + bi * m * p, Idx(m), Idx(p)).noalias() =
                CMapM(a.data(), Idx(m), Idx(n)) * CMapM(b.data() + bi * n * p, Idx(n), Idx(p));
        return make_result(std::move(out), {&a, &b}, [B, m, n, p](Node& self) {
            const double* av = value_of(self, 0).data.data();
            const double* bv = value_of(self, 1).data.data();
            double* ga = grad_of(self, 0);
            double* gb = grad_of(self, 1);
            for (std::size_t bi = 0; bi < B; ++bi) {
                CMapM g(self.grad.data() + bi * m * p, Idx(m), Idx(p));
                if (ga) MapM(ga, Idx(m), Idx(n)).noalias() += g * CMapM(bv + bi * n * p, Idx(n), Idx(p)).transpose();
                if (gb) MapM(gb + bi * n * p, Idx(n), Idx(p)).noalias() += CMapM(av, Idx(m), Idx(n)).transpose() * g;
            }
        });
    }
    if (sa.size() != 3 || sa[0] != B) mismatch("matmul", sa, sb);
    const std::size_t m = sa[1];
    Array out(Shape{B, m, p});
    for (std::size_t bi = 0; bi < B; ++bi)
        MapM(out.data.data() + bi * m * p, Idx(m), Idx(p)).noalias() =
            CMapM(a.data() + bi * m * n, Idx(m), Idx(n)) * CMapM(b.data() + bi * n * p, Idx(n), Idx(p));
    return make_result(std::move(out), {&a, &b}, [B, m, n, p](Node& self) {
        const double* av = value_of(self, 0).data.data();
        const double* bv = value_of(self, 1).data.data();
        double* ga = grad_of(self, 0);
        double* gb = grad_of(self, 1);
        for (std::size_t bi = 0; bi < B; ++bi) {
            CMapM g(self.grad.data() + bi * m * p, Idx(m), Idx(p));
            if (ga)
                MapM(ga + bi * m * n, Idx(m), Idx(n)).noalias() += g * CMapM(bv + bi * n * p, Idx(n), Idx(p)).transpose();
            if (gb)
                MapM(gb + bi * n * p, Idx(n), Idx(p)).noalias() += CMapM(av + bi * m * n, Idx(m), Idx(n)).transpose() * g;
        }
    });
}

/// Swaps the last two dimensions.
inline Tensor transpose(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw StructuralError("transpose needs rank >= 2, got " + shape_str(s));
    const std::size_t r = s[s.size() - 2], c = s.back(), B = x.size() / (r * c);
    Shape so = s;
    std::swap(so[so.size() - 2], so[so.size() - 1]);
    Array out(so);
    const double* xv = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out.data[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
    return make_result(std::move(out), {&x}, [B, r, c](Node& self) {
        if (double* gx = detail::grad_of(self, 0))
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gx[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape s) {
    if (numel(s) != x.size())
        throw StructuralError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
    Array out(std::move(s), x.value().data);
    return make_result(std::move(out), {&x}, [](Node& self) {
        if (double* gx = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    });
}

/// Concatenation along `axis`; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw StructuralError("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw StructuralError("concat axis out of range for " + shape_str(s0));
    Shape so = s0;
    so[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) detail::mismatch("concat", s0, s);
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != s0[d]) detail::mismatch("concat", s0, s);
        so[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= so[d];
    for (std::size_t d = axis + 1; d < so.size(); ++d) inner *= so[d];
    Array out(so);
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    const std::size_t row = so[axis] * inner;
    for (const auto& p : parts) {
        const std::size_t wdt = p.shape()[axis] * inner;
        widths.push_back(wdt);
        const double* pv = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(pv + o * wdt, pv + (o + 1) * wdt, out.data.data() + o * row + offset);
        offset += wdt;
    }
    return make_result(std::move(out), parts, [widths, outer, row](Node& self) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (double* gp = detail::grad_of(self, i))
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < widths[i]; ++j) gp[o * widths[i] + j] += self.grad[o * row + off + j];
            off += widths[i];
        }
    });
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = x.shape();
    if (axis >= s.size() || begin >= end || end > s[axis])
        throw StructuralError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                              std::to_string(axis) + " out of range for " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    Shape so = s;
    so[axis] = end - begin;
    Array out(so);
    const std::size_t row = s[axis] * inner, wdt = (end - begin) * inner, off = begin * inner;
    const double* xv = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy(xv + o * row + off, xv + o * row + off + wdt, out.data.data() + o * wdt);
    return make_result(std::move(out), {&x}, [outer, row, wdt, off](Node& self) {
        if (double* gx = detail::grad_of(self, 0))
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < wdt; ++j) gx[o * row + off + j] += self.grad[o * wdt + j];
    });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

} // namespace fidlar::ad
