#pragma once

#include "et/errors.hpp"
#include "et/rng.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

namespace et {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;

// Dense row-major 64-bit float tensor participating in a reverse-mode
// differentiation graph. Value-semantic handle; the graph is held alive
// through shared parent references, so a forward pass builds a fresh
// graph each call and no tensor in a graph is mutated in place.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
    static Tensor from_data(Shape shape, std::vector<double> data);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;

    std::vector<double>& data();
    const std::vector<double>& data() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on = true);

    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    // scalar value (throws ContractError unless size()==1)
    double item() const;
    double at(std::initializer_list<std::size_t> idx) const;

    // same values, detached from the graph, no grad tracking
    Tensor detach() const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until backward touches this node
    bool requires_grad = false;
    bool backward_done = false; // set on the loss root
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backprop;

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Runs reverse-mode accumulation from a scalar loss, visiting recorded
// operations in exact reverse topological order. Gradients accumulate
// into each requires_grad tensor. Running backward twice on the same
// loss without a new forward pass throws ContractError.
void backward(const Tensor& loss);

// ---- elementwise (numpy-style broadcasting: ranks aligned right, each
// ---- dim must match or be 1) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor sqrt_op(const Tensor& a);
Tensor clamp_op(const Tensor& a, double lo, double hi);

// ---- matmul: [..,m,k] x [..,k,n] -> [..,m,n], leading batch dims
// ---- equal or broadcast from 1 ----
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, std::size_t d0, std::size_t d1);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_lastdim(const Tensor& a); // keeps the reduced dim as size 1
// (mean, biased variance) over the last dim, both keeping it as size 1
std::pair<Tensor, Tensor> mean_var_lastdim(const Tensor& a);

// ---- softmax over the last dim with an optional additive mask of 0 /
// ---- -inf entries, broadcastable to x; stabilized by max-subtraction.
// ---- -inf positions come out exactly 0; an all--inf row throws
// ---- MaskedEmptyRowError. ----
Tensor softmax_lastdim(const Tensor& x, const Tensor& mask = Tensor());

// ---- indexing ----
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids);

// ---- loss: mean negative log-softmax of the target id over non-pad
// ---- positions of [B,T,V] logits; pad positions contribute nothing ----
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            int pad_id);

// Central-difference gradient checker: runs f, backpropagates, then
// perturbs every input entry by +-h and reports the max relative error
// with denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double h = 1e-5);

} // namespace et
