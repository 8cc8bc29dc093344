#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chemnne/rng.hpp"

namespace chemnne {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Result shape of broadcasting a against b under the trailing-dimension
/// rule (missing leading dims act as 1). Throws DimensionError.
Shape broadcast_shapes(const Shape& a, const Shape& b);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    long node_id = -1;  // producing tape record; -1 for leaves

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// Handles share the underlying node; arithmetic creates new nodes and, when
/// gradients are being recorded, registers a backward rule on the active
/// tape. Values are immutable once a tensor has entered the graph; gradient
/// buffers are the only mutable part.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
    static Tensor normal(Shape shape, double mean, double stddev, Rng& rng);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t axis) const;

    std::span<const double> values() const;
    /// Direct write access; only valid for leaves not yet consumed by ops.
    std::span<double> mutable_values();
    double operator[](std::size_t flat_index) const;
    /// Value of a scalar (numel == 1) tensor.
    double value() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    /// Accumulated gradient (zeros if backward never reached this leaf).
    std::span<const double> grad() const;
    void zero_grad();

    /// Reverse-mode sweep from this scalar. Grads accumulate on leaves;
    /// repeated calls without zero_grad() keep accumulating.
    void backward() const;

    const detail::NodePtr& node() const { return node_; }
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

private:
    detail::NodePtr node_;
};

/// Records the op sequence for one differentiation scope (one per thread).
class Tape {
public:
    static Tape& active();

    std::size_t size() const { return records_.size(); }
    void clear();
    /// Drops records past `mark` (taken earlier via size()).
    void truncate(std::size_t mark);

    void record(detail::NodePtr output, std::function<void()> backward_fn);
    void backward_from(const detail::NodePtr& loss);

    static bool recording_enabled();

private:
    struct Record {
        detail::NodePtr output;
        std::function<void()> fn;
    };
    std::vector<Record> records_;

    friend struct NoGradGuard;
};

/// Disables gradient recording in scope (inference / finite differences).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor gelu(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// ---- structure ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm);
/// Swaps the last two axes.
Tensor transpose_last(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);
/// Gathers columns of the last axis in the given order.
Tensor select_columns(const Tensor& x, const std::vector<std::size_t>& cols);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor max(const Tensor& x);
Tensor max(const Tensor& x, std::size_t axis);

Tensor softmax(const Tensor& x, std::size_t axis);

/// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8)
/// for scalar-valued f at x. Uses the active tape; leaves it truncated back
/// to its entry size.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h);

}  // namespace chemnne
