#include "et/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace et {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// flat-offset table mapping every element of `out` to its source element
// in `in` under right-aligned size-1 broadcasting
std::shared_ptr<std::vector<std::size_t>> bcast_table(const Shape& out, const Shape& in) {
    const std::size_t n = numel(out);
    auto table = std::make_shared<std::vector<std::size_t>>(n);
    const std::size_t r = out.size();
    const std::size_t pad = r - in.size();
    std::vector<std::size_t> in_strides = strides_of(in);
    std::vector<std::size_t> eff(r, 0);
    for (std::size_t i = 0; i < r; ++i) {
        if (i < pad) continue;
        const std::size_t d = in[i - pad];
        eff[i] = (d == 1 && out[i] != 1) ? 0 : in_strides[i - pad];
    }
    std::vector<std::size_t> coord(r, 0);
    std::size_t off = 0;
    for (std::size_t idx = 0; idx < n; ++idx) {
        (*table)[idx] = off;
        for (std::size_t i = r; i-- > 0;) {
            ++coord[i];
            off += eff[i];
            if (coord[i] < out[i]) break;
            off -= eff[i] * out[i];
            coord[i] = 0;
        }
    }
    return table;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> data) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (numel(impl->shape) != impl->data.size())
        throw ShapeError("shape/data length mismatch: " + shape_str(impl->shape) + " vs " +
                         std::to_string(impl->data.size()));
    return impl;
}

Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<std::shared_ptr<TensorImpl>> parents,
                 std::function<void(TensorImpl&)> backprop) {
    auto impl = make_impl(std::move(shape), std::move(data));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backprop = std::move(backprop);
    }
    return Tensor(impl);
}

void check_defined(const Tensor& t, const char* who) {
    if (!t.defined()) throw ContractError(std::string(who) + ": undefined tensor");
}

} // namespace

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// ---- Tensor -----------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
    std::size_t n = numel(shape);
    return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
    std::size_t n = numel(shape);
    return Tensor(make_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
    std::size_t n = numel(shape);
    std::vector<double> d(n);
    for (auto& v : d) v = rng.uniform(lo, hi);
    return Tensor(make_impl(std::move(shape), std::move(d)));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    for (std::size_t d : shape)
        if (d == 0) throw ShapeError("zero dimension in shape " + shape_str(shape));
    return Tensor(make_impl(std::move(shape), std::move(data)));
}

const Shape& Tensor::shape() const {
    check_defined(*this, "shape");
    return impl_->shape;
}

std::size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }

std::vector<double>& Tensor::data() {
    check_defined(*this, "data");
    return impl_->data;
}

const std::vector<double>& Tensor::data() const {
    check_defined(*this, "data");
    return impl_->data;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    check_defined(*this, "set_requires_grad");
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    check_defined(*this, "grad");
    if (impl_->grad.empty()) throw ContractError("grad not populated; run backward first");
    return impl_->grad;
}

void Tensor::zero_grad() {
    check_defined(*this, "zero_grad");
    impl_->grad.clear();
}

double Tensor::item() const {
    check_defined(*this, "item");
    if (impl_->data.size() != 1) throw ContractError("item() on non-scalar tensor");
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    check_defined(*this, "at");
    const Shape& s = impl_->shape;
    if (idx.size() != s.size()) throw IndexError("at(): rank mismatch");
    auto st = strides_of(s);
    std::size_t off = 0, i = 0;
    for (std::size_t v : idx) {
        if (v >= s[i]) throw IndexError("at(): index out of range");
        off += v * st[i++];
    }
    return impl_->data[off];
}

Tensor Tensor::detach() const {
    check_defined(*this, "detach");
    return Tensor(make_impl(impl_->shape, impl_->data));
}

// ---- backward ----------------------------------------------------------

void backward(const Tensor& loss) {
    check_defined(loss, "backward");
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar");
    auto root = loss.impl();
    if (root->backward_done) throw ContractError("backward already run on this graph");
    root->backward_done = true;

    // iterative post-order DFS over parents
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (std::size_t i = order.size(); i-- > 0;) {
        TensorImpl* node = order[i];
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

// ---- elementwise machinery ----------------------------------------------

namespace {

template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb, const char* who) {
    check_defined(a, who);
    check_defined(b, who);
    const bool fast = same_shape(a.shape(), b.shape());
    Shape out_shape = fast ? a.shape() : broadcast_shape(a.shape(), b.shape());
    const std::size_t n = numel(out_shape);
    std::shared_ptr<std::vector<std::size_t>> ta, tb;
    if (!fast) {
        ta = bcast_table(out_shape, a.shape());
        tb = bcast_table(out_shape, b.shape());
    }
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<double> out(n);
    if (fast) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[(*ta)[i]], bd[(*tb)[i]]);
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return make_node(std::move(out_shape), std::move(out), {ai, bi},
                     [ai, bi, ta, tb, fast, n, dfa, dfb](TensorImpl& self) {
                         if (ai->requires_grad) ai->ensure_grad();
                         if (bi->requires_grad) bi->ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                             const double g = self.grad[i];
                             const std::size_t ia = fast ? i : (*ta)[i];
                             const std::size_t ib = fast ? i : (*tb)[i];
                             const double av = ai->data[ia];
                             const double bv = bi->data[ib];
                             if (ai->requires_grad) ai->grad[ia] += dfa(av, bv) * g;
                             if (bi->requires_grad) bi->grad[ib] += dfb(av, bv) * g;
                         }
                     });
}

template <class F, class DF>
Tensor unary_op(const Tensor& a, F f, DF df, const char* who) {
    check_defined(a, who);
    const std::size_t n = a.size();
    const auto& ad = a.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i]);
    auto ai = a.impl();
    return make_node(a.shape(), std::move(out), {ai}, [ai, n, df](TensorImpl& self) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            ai->grad[i] += df(ai->data[i], self.data[i]) * self.grad[i];
    });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); }, "div");
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return std::min(x, y); },
        [](double x, double y) { return x <= y ? 1.0 : 0.0; },
        [](double x, double y) { return x <= y ? 0.0 : 1.0; }, "minimum");
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return c * x; }, [c](double, double) { return c; }, "scale");
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return x + c; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor tanh_op(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Tensor exp_op(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Tensor log_op(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; },
        "log");
}

Tensor sqrt_op(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; }, "sqrt");
}

Tensor clamp_op(const Tensor& a, double lo, double hi) {
    return unary_op(
        a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; }, "clamp");
}

// ---- matmul --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw ShapeError("matmul: rank must be >= 2, got " + shape_str(sa) + " x " +
                         shape_str(sb));
    const std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
    const std::size_t k2 = sb[sb.size() - 2], nn = sb[sb.size() - 1];
    if (k != k2)
        throw ShapeError("matmul: inner dims differ, " + shape_str(sa) + " x " + shape_str(sb));
    Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
    Shape batch = broadcast_shape(ba, bb);
    const std::size_t nb = numel(batch);
    // per-batch base offsets under broadcasting
    auto ta = bcast_table(batch, ba);
    auto tb = bcast_table(batch, bb);
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(nn);
    std::vector<double> out(nb * m * nn, 0.0);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t bi = 0; bi < nb; ++bi) {
        const double* A = ad.data() + (*ta)[bi] * m * k;
        const double* B = bd.data() + (*tb)[bi] * k * nn;
        double* C = out.data() + bi * m * nn;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = A[i * k + kk];
                if (av == 0.0) continue;
                const double* Brow = B + kk * nn;
                double* Crow = C + i * nn;
                for (std::size_t j = 0; j < nn; ++j) Crow[j] += av * Brow[j];
            }
    }
    auto aimpl = a.impl();
    auto bimpl = b.impl();
    return make_node(std::move(out_shape), std::move(out), {aimpl, bimpl},
                     [aimpl, bimpl, ta, tb, nb, m, k, nn](TensorImpl& self) {
                         if (aimpl->requires_grad) aimpl->ensure_grad();
                         if (bimpl->requires_grad) bimpl->ensure_grad();
                         for (std::size_t bi = 0; bi < nb; ++bi) {
                             const double* A = aimpl->data.data() + (*ta)[bi] * m * k;
                             const double* B = bimpl->data.data() + (*tb)[bi] * k * nn;
                             const double* G = self.grad.data() + bi * m * nn;
                             if (aimpl->requires_grad) {
                                 double* dA = aimpl->grad.data() + (*ta)[bi] * m * k;
                                 // dA = G * B^T
                                 for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t kk = 0; kk < k; ++kk) {
                                         double s = 0.0;
                                         const double* Grow = G + i * nn;
                                         const double* Brow = B + kk * nn;
                                         for (std::size_t j = 0; j < nn; ++j)
                                             s += Grow[j] * Brow[j];
                                         dA[i * k + kk] += s;
                                     }
                             }
                             if (bimpl->requires_grad) {
                                 double* dB = bimpl->grad.data() + (*tb)[bi] * k * nn;
                                 // dB = A^T * G
                                 for (std::size_t kk = 0; kk < k; ++kk)
                                     for (std::size_t i = 0; i < m; ++i) {
                                         const double av = A[i * k + kk];
                                         if (av == 0.0) continue;
                                         const double* Grow = G + i * nn;
                                         double* dBrow = dB + kk * nn;
                                         for (std::size_t j = 0; j < nn; ++j)
                                             dBrow[j] += av * Grow[j];
                                     }
                             }
                         }
                     });
}

// ---- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    check_defined(a, "reshape");
    if (numel(shape) != a.size())
        throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                         shape_str(shape));
    auto ai = a.impl();
    const std::size_t n = a.size();
    return make_node(std::move(shape), a.data(), {ai}, [ai, n](TensorImpl& self) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ai->grad[i] += self.grad[i];
    });
}

Tensor transpose(const Tensor& a, std::size_t d0, std::size_t d1) {
    check_defined(a, "transpose");
    const Shape& s = a.shape();
    if (d0 >= s.size() || d1 >= s.size()) throw ShapeError("transpose: dim out of range");
    Shape out_shape = s;
    std::swap(out_shape[d0], out_shape[d1]);
    const std::size_t n = a.size();
    auto src = std::make_shared<std::vector<std::size_t>>(n);
    auto in_st = strides_of(s);
    std::vector<std::size_t> coord(out_shape.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < s.size(); ++d) {
            std::size_t c = coord[d];
            std::size_t in_d = d == d0 ? d1 : d == d1 ? d0 : d;
            off += c * in_st[in_d];
        }
        (*src)[i] = off;
        for (std::size_t d = out_shape.size(); d-- > 0;) {
            if (++coord[d] < out_shape[d]) break;
            coord[d] = 0;
        }
    }
    const auto& ad = a.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = ad[(*src)[i]];
    auto ai = a.impl();
    return make_node(std::move(out_shape), std::move(out), {ai}, [ai, src, n](TensorImpl& self) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ai->grad[(*src)[i]] += self.grad[i];
    });
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
    check_defined(a, "concat_lastdim");
    check_defined(b, "concat_lastdim");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size() || sa.empty())
        throw ShapeError("concat_lastdim: rank mismatch");
    for (std::size_t i = 0; i + 1 < sa.size(); ++i)
        if (sa[i] != sb[i]) throw ShapeError("concat_lastdim: leading dims differ");
    const std::size_t la = sa.back(), lb = sb.back();
    const std::size_t rows = a.size() / la;
    Shape out_shape = sa;
    out_shape.back() = la + lb;
    std::vector<double> out(rows * (la + lb));
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(ad.begin() + r * la, ad.begin() + (r + 1) * la, out.begin() + r * (la + lb));
        std::copy(bd.begin() + r * lb, bd.begin() + (r + 1) * lb,
                  out.begin() + r * (la + lb) + la);
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return make_node(std::move(out_shape), std::move(out), {ai, bi},
                     [ai, bi, rows, la, lb](TensorImpl& self) {
                         if (ai->requires_grad) ai->ensure_grad();
                         if (bi->requires_grad) bi->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                             const double* g = self.grad.data() + r * (la + lb);
                             if (ai->requires_grad)
                                 for (std::size_t j = 0; j < la; ++j)
                                     ai->grad[r * la + j] += g[j];
                             if (bi->requires_grad)
                                 for (std::size_t j = 0; j < lb; ++j)
                                     bi->grad[r * lb + j] += g[la + j];
                         }
                     });
}

// ---- reductions -------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    check_defined(a, "sum_all");
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto ai = a.impl();
    const std::size_t n = a.size();
    return make_node({1}, {s}, {ai}, [ai, n](TensorImpl& self) {
        ai->ensure_grad();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < n; ++i) ai->grad[i] += g;
    });
}

Tensor mean_all(const Tensor& a) {
    check_defined(a, "mean_all");
    const std::size_t n = a.size();
    double s = 0.0;
    for (double v : a.data()) s += v;
    s /= static_cast<double>(n);
    auto ai = a.impl();
    return make_node({1}, {s}, {ai}, [ai, n](TensorImpl& self) {
        ai->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) ai->grad[i] += g;
    });
}

Tensor sum_lastdim(const Tensor& a) {
    check_defined(a, "sum_lastdim");
    const Shape& s = a.shape();
    if (s.empty()) throw ShapeError("sum_lastdim: rank 0");
    const std::size_t d = s.back();
    const std::size_t rows = a.size() / d;
    Shape out_shape = s;
    out_shape.back() = 1;
    std::vector<double> out(rows, 0.0);
    const auto& ad = a.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r] += ad[r * d + j];
    auto ai = a.impl();
    return make_node(std::move(out_shape), std::move(out), {ai}, [ai, rows, d](TensorImpl& self) {
        ai->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = self.grad[r];
            for (std::size_t j = 0; j < d; ++j) ai->grad[r * d + j] += g;
        }
    });
}

std::pair<Tensor, Tensor> mean_var_lastdim(const Tensor& a) {
    check_defined(a, "mean_var_lastdim");
    const Shape& s = a.shape();
    if (s.empty()) throw ShapeError("mean_var_lastdim: rank 0");
    const std::size_t d = s.back();
    const std::size_t rows = a.size() / d;
    Shape out_shape = s;
    out_shape.back() = 1;
    std::vector<double> mean(rows, 0.0), var(rows, 0.0);
    const auto& ad = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += ad[r * d + j];
        m /= static_cast<double>(d);
        double v = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = ad[r * d + j] - m;
            v += c * c;
        }
        mean[r] = m;
        var[r] = v / static_cast<double>(d); // biased estimator
    }
    auto ai = a.impl();
    Tensor mt = make_node(out_shape, std::move(mean), {ai}, [ai, rows, d](TensorImpl& self) {
        ai->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = self.grad[r] / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) ai->grad[r * d + j] += g;
        }
    });
    Tensor vt = make_node(out_shape, std::move(var), {ai}, [ai, rows, d](TensorImpl& self) {
        ai->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            double m = 0.0;
            for (std::size_t j = 0; j < d; ++j) m += ai->data[r * d + j];
            m /= static_cast<double>(d);
            const double g = self.grad[r] * 2.0 / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j)
                ai->grad[r * d + j] += g * (ai->data[r * d + j] - m);
        }
    });
    return {mt, vt};
}

// ---- softmax ------------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x, const Tensor& mask) {
    check_defined(x, "softmax_lastdim");
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("softmax_lastdim: rank 0");
    const std::size_t d = s.back();
    const std::size_t rows = x.size() / d;
    std::shared_ptr<std::vector<std::size_t>> tm;
    if (mask.defined() && !same_shape(mask.shape(), s)) {
        // mask must broadcast to x exactly
        Shape b = broadcast_shape(s, mask.shape());
        if (!same_shape(b, s)) throw ShapeError("softmax mask not broadcastable to input");
        tm = bcast_table(s, mask.shape());
    }
    const auto& xd = x.data();
    const double* md = mask.defined() ? mask.data().data() : nullptr;
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = kNegInf;
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            const double mv = md ? md[tm ? (*tm)[i] : i] : 0.0;
            const double v = xd[i] + mv;
            if (v > mx) mx = v;
        }
        if (mx == kNegInf)
            throw MaskedEmptyRowError("softmax_lastdim: fully masked row " + std::to_string(r));
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            const double mv = md ? md[tm ? (*tm)[i] : i] : 0.0;
            const double v = xd[i] + mv;
            out[i] = v == kNegInf ? 0.0 : std::exp(v - mx);
            z += out[i];
        }
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= z;
    }
    auto xi = x.impl();
    return make_node(s, std::move(out), {xi}, [xi, rows, d](TensorImpl& self) {
        xi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                dot += self.grad[r * d + j] * self.data[r * d + j];
            for (std::size_t j = 0; j < d; ++j) {
                const std::size_t i = r * d + j;
                xi->grad[i] += self.data[i] * (self.grad[i] - dot);
            }
        }
    });
}

// ---- gather ----------------------------------------------------------------------

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
    check_defined(table, "gather_rows");
    const Shape& s = table.shape();
    if (s.size() != 2) throw ShapeError("gather_rows: table must be rank 2");
    const std::size_t V = s[0], d = s[1];
    for (std::size_t id : ids)
        if (id >= V)
            throw IndexError("gather_rows: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(V) + ")");
    const std::size_t n = ids.size();
    std::vector<double> out(n * d);
    const auto& td = table.data();
    for (std::size_t i = 0; i < n; ++i)
        std::copy(td.begin() + ids[i] * d, td.begin() + (ids[i] + 1) * d, out.begin() + i * d);
    auto ti = table.impl();
    auto ids_copy = std::make_shared<std::vector<std::size_t>>(ids);
    return make_node({n, d}, std::move(out), {ti}, [ti, ids_copy, d](TensorImpl& self) {
        ti->ensure_grad();
        for (std::size_t i = 0; i < ids_copy->size(); ++i) {
            const std::size_t row = (*ids_copy)[i];
            for (std::size_t j = 0; j < d; ++j)
                ti->grad[row * d + j] += self.grad[i * d + j];
        }
    });
}

// ---- cross entropy -----------------------------------------------------------------

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets, int pad_id) {
    check_defined(logits, "cross_entropy_logits");
    const Shape& s = logits.shape();
    if (s.empty()) throw ShapeError("cross_entropy_logits: rank 0");
    const std::size_t V = s.back();
    const std::size_t n = logits.size() / V;
    if (targets.size() != n)
        throw ShapeError("cross_entropy_logits: targets length " +
                         std::to_string(targets.size()) + " != positions " + std::to_string(n));
    const auto& ld = logits.data();
    double loss = 0.0;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int t = targets[i];
        if (t == pad_id) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= V)
            throw IndexError("cross_entropy_logits: target id out of range");
        const double* row = ld.data() + i * V;
        double mx = row[0];
        for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
        loss += std::log(z) + mx - row[t];
        ++valid;
    }
    if (valid == 0)
        throw ContractError("cross_entropy_logits: empty loss, all positions padded");
    loss /= static_cast<double>(valid);
    auto li = logits.impl();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    return make_node({1}, {loss}, {li}, [li, tgt, pad_id, n, V, valid](TensorImpl& self) {
        li->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(valid);
        for (std::size_t i = 0; i < n; ++i) {
            const int t = (*tgt)[i];
            if (t == pad_id) continue;
            const double* row = li->data.data() + i * V;
            double mx = row[0];
            for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < V; ++j) {
                const double p = std::exp(row[j] - mx) / z;
                li->grad[i * V + j] +=
                    g * (p - (j == static_cast<std::size_t>(t) ? 1.0 : 0.0));
            }
        }
    });
}

// ---- gradient checking -----------------------------------------------------------

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double h) {
    for (auto& t : inputs) t.set_requires_grad(true);
    Tensor out = f(inputs);
    if (out.size() != 1) throw ContractError("grad_check: f must return a scalar");
    backward(out);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs)
        analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0));

    double max_rel = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& t = inputs[ti];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t.data()[i];
            t.data()[i] = orig + h;
            const double y1 = f(inputs).item();
            t.data()[i] = orig - h;
            const double y2 = f(inputs).item();
            t.data()[i] = orig;
            const double numeric = (y1 - y2) / (2.0 * h);
            const double a = analytic[ti][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

} // namespace et
