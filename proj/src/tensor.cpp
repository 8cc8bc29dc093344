#include "chemnne/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "chemnne/errors.hpp"
#include "chemnne/parallel.hpp"

namespace chemnne {

namespace {

thread_local bool g_recording = true;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t d = shape.size(); d-- > 1;) {
        strides[d - 1] = strides[d] * shape[d];
    }
    return strides;
}

// Element strides for reading `shape` as if broadcast to `target`
// (0 where a dimension is 1 or absent).
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& target) {
    const auto own = contiguous_strides(shape);
    std::vector<std::size_t> strides(target.size(), 0);
    const std::size_t offset = target.size() - shape.size();
    for (std::size_t d = 0; d < shape.size(); ++d) {
        strides[offset + d] = (shape[d] == 1) ? 0 : own[d];
    }
    return strides;
}

detail::NodePtr new_node(Shape shape) {
    auto node = std::make_shared<detail::TensorNode>();
    node->data.resize(shape_numel(shape));
    node->shape = std::move(shape);
    return node;
}

bool grads_wanted(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::recording_enabled()) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

Tensor finish(detail::NodePtr out, bool wants_grad, std::function<void()> backward_fn) {
    out->requires_grad = wants_grad;
    Tensor result(out);
    if (wants_grad) Tape::active().record(std::move(out), std::move(backward_fn));
    return result;
}

// out[i] = f(a[ao], b[bo]) over the broadcast of the two shapes; `out` has
// shape `os` which must equal broadcast_shapes(as, bs).
template <class F>
void binary_broadcast(const double* a, const Shape& as, const double* b,
                      const Shape& bs, double* out, const Shape& os, F&& f) {
    const std::size_t n = shape_numel(os);
    if (as == bs) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
        return;
    }
    const auto astr = broadcast_strides(as, os);
    const auto bstr = broadcast_strides(bs, os);
    const std::size_t r = os.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ao = 0, bo = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(a[ao], b[bo]);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ao += astr[d];
            bo += bstr[d];
            if (idx[d] < os[d]) break;
            ao -= astr[d] * os[d];
            bo -= bstr[d] * os[d];
            idx[d] = 0;
        }
    }
}

// dst[target coords] += factor * src[i] where src has the broadcast shape
// `ss` and dst the pre-broadcast shape `ds`. Single serial loop, so the
// accumulation order is fixed.
void reduce_into(const double* src, const Shape& ss, double* dst, const Shape& ds,
                 double factor = 1.0) {
    const std::size_t n = shape_numel(ss);
    if (ss == ds) {
        for (std::size_t i = 0; i < n; ++i) dst[i] += factor * src[i];
        return;
    }
    const auto dstr = broadcast_strides(ds, ss);
    const std::size_t r = ss.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        dst[off] += factor * src[i];
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            off += dstr[d];
            if (idx[d] < ss[d]) break;
            off -= dstr[d] * ss[d];
            idx[d] = 0;
        }
    }
}

void accumulate_grad(const detail::NodePtr& node, const double* src, const Shape& src_shape,
                     double factor = 1.0) {
    node->ensure_grad();
    reduce_into(src, src_shape, node->grad.data(), node->shape, factor);
}

// (outer, axis, inner) decomposition for axis-wise loops.
struct AxisSplit {
    std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
    return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
    Shape out;
    out.reserve(shape.size() - 1);
    for (std::size_t d = 0; d < shape.size(); ++d) {
        if (d != axis) out.push_back(shape[d]);
    }
    return out;
}

void check_axis(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(shape));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// shapes
// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " +
                                 shape_str(b));
        }
        out[r - 1 - i] = std::max(da, db);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return Tensor(new_node(std::move(shape))); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
    auto node = new_node(std::move(shape));
    std::fill(node->data.begin(), node->data.end(), value);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return full(Shape{}, value); }

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("from: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
    auto node = new_node(std::move(shape));
    for (auto& v : node->data) v = rng.uniform(lo, hi);
    return Tensor(std::move(node));
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, Rng& rng) {
    auto node = new_node(std::move(shape));
    for (auto& v : node->data) v = rng.normal(mean, stddev);
    return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("use of empty tensor");
    return node_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::dim(std::size_t axis) const {
    check_axis(shape(), axis, "dim");
    return shape()[axis];
}

std::span<const double> Tensor::values() const {
    if (!node_) throw ContractError("use of empty tensor");
    return {node_->data.data(), node_->data.size()};
}

std::span<double> Tensor::mutable_values() {
    if (!node_) throw ContractError("use of empty tensor");
    return {node_->data.data(), node_->data.size()};
}

double Tensor::operator[](std::size_t flat_index) const {
    return values()[flat_index];
}

double Tensor::value() const {
    if (numel() != 1) {
        throw ContractError("value(): tensor of shape " + shape_str(shape()) +
                            " is not a scalar");
    }
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!node_) throw ContractError("use of empty tensor");
    node_->requires_grad = on;
    return *this;
}

std::span<const double> Tensor::grad() const {
    if (!requires_grad()) {
        throw ContractError("grad(): tensor does not require gradients");
    }
    node_->ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
    if (!node_) return;
    node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::backward() const {
    if (!node_) throw ContractError("use of empty tensor");
    Tape::active().backward_from(node_);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

bool Tape::recording_enabled() { return g_recording; }

void Tape::clear() { records_.clear(); }

void Tape::truncate(std::size_t mark) {
    if (mark > records_.size()) return;
    for (std::size_t i = mark; i < records_.size(); ++i) {
        records_[i].output->node_id = -1;
    }
    records_.resize(mark);
}

void Tape::record(detail::NodePtr output, std::function<void()> backward_fn) {
    output->node_id = static_cast<long>(records_.size());
    records_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::backward_from(const detail::NodePtr& loss) {
    if (loss->numel() != 1) {
        throw ContractError("backward: loss has shape " + shape_str(loss->shape) +
                            ", expected a scalar");
    }
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    if (loss->node_id >= 0) {
        for (long i = loss->node_id; i >= 0; --i) {
            const Record& rec = records_[static_cast<std::size_t>(i)];
            if (!rec.output->grad.empty()) rec.fn();
        }
    }
    // Intermediate grads are scratch; only leaves keep accumulated values.
    for (Record& rec : records_) rec.output->grad.clear();
}

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

template <class FwdF, class DaF, class DbF>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, FwdF fwd,
                 DaF dfda, DbF dfdb) {
    Shape out_shape;
    try {
        out_shape = broadcast_shapes(a.shape(), b.shape());
    } catch (const DimensionError&) {
        throw DimensionError(std::string(name) + ": cannot broadcast " +
                             shape_str(a.shape()) + " with " + shape_str(b.shape()));
    }
    auto out = new_node(out_shape);
    binary_broadcast(a.values().data(), a.shape(), b.values().data(), b.shape(),
                     out->data.data(), out_shape, fwd);
    const bool wants = grads_wanted({&a, &b});
    auto an = a.node(), bn = b.node(), on = out;
    return finish(out, wants, [an, bn, on, dfda, dfdb]() {
        const Shape& os = on->shape;
        const std::size_t n = on->data.size();
        std::vector<double> term(n);
        if (an->requires_grad) {
            binary_broadcast(an->data.data(), an->shape, bn->data.data(), bn->shape,
                             term.data(), os, dfda);
            for (std::size_t i = 0; i < n; ++i) term[i] *= on->grad[i];
            accumulate_grad(an, term.data(), os);
        }
        if (bn->requires_grad) {
            binary_broadcast(an->data.data(), an->shape, bn->data.data(), bn->shape,
                             term.data(), os, dfdb);
            for (std::size_t i = 0; i < n; ++i) term[i] *= on->grad[i];
            accumulate_grad(bn, term.data(), os);
        }
    });
}

template <class FwdF, class DerivF>
Tensor unary_op(const Tensor& x, FwdF fwd, DerivF deriv) {
    auto out = new_node(x.shape());
    const auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) out->data[i] = fwd(xv[i]);
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    return finish(out, wants, [xn, on, deriv]() {
        xn->ensure_grad();
        for (std::size_t i = 0; i < xn->data.size(); ++i) {
            xn->grad[i] += on->grad[i] * deriv(xn->data[i], on->data[i]);
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double c) {
    return unary_op(
        x, [c](double v) { return c * v; },
        [c](double, double) { return c; });
}

Tensor sin(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::sin(v); },
        [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::cos(v); },
        [](double v, double) { return -std::sin(v); });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

Tensor square(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v * v; },
        [](double v, double) { return 2.0 * v; });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
    // Exact (erf-based) form.
    return unary_op(
        x,
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

void mm_forward(const double* a, const double* b, double* c, std::size_t m,
                std::size_t p, std::size_t n) {
    parallel_for(0, m, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double* crow = c + i * n;
            for (std::size_t k = 0; k < p; ++k) {
                const double av = a[i * p + k];
                const double* brow = b + k * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

// da[i,k] += sum_j dc[i,j] * b[k,j]
void mm_backward_a(const double* dc, const double* b, double* da, std::size_t m,
                   std::size_t p, std::size_t n) {
    parallel_for(0, m, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const double* dcrow = dc + i * n;
            for (std::size_t k = 0; k < p; ++k) {
                const double* brow = b + k * n;
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
                da[i * p + k] += s;
            }
        }
    });
}

// db[k,j] += sum_i a[i,k] * dc[i,j]
void mm_backward_b(const double* a, const double* dc, double* db, std::size_t m,
                   std::size_t p, std::size_t n) {
    parallel_for(0, p, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k) {
            double* dbrow = db + k * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double av = a[i * p + k];
                const double* dcrow = dc + i * n;
                for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
            }
        }
    });
}

struct MatmulPlan {
    Shape out_shape;
    Shape batch;                      // broadcast batch dims
    std::vector<std::size_t> a_step;  // per-batch-dim element strides
    std::vector<std::size_t> b_step;
    std::size_t m, p, n;
};

MatmulPlan plan_matmul(const Shape& as, const Shape& bs) {
    if (as.size() < 2 || bs.size() < 2) {
        throw DimensionError("matmul: operands must have rank >= 2, got " +
                             shape_str(as) + " and " + shape_str(bs));
    }
    MatmulPlan plan;
    plan.m = as[as.size() - 2];
    plan.p = as[as.size() - 1];
    plan.n = bs[bs.size() - 1];
    if (bs[bs.size() - 2] != plan.p) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(as) +
                             " vs " + shape_str(bs));
    }
    const Shape a_batch(as.begin(), as.end() - 2);
    const Shape b_batch(bs.begin(), bs.end() - 2);
    plan.batch = broadcast_shapes(a_batch, b_batch);
    auto a_el = broadcast_strides(a_batch, plan.batch);
    auto b_el = broadcast_strides(b_batch, plan.batch);
    for (auto& s : a_el) s *= plan.m * plan.p;
    for (auto& s : b_el) s *= plan.p * plan.n;
    plan.a_step = std::move(a_el);
    plan.b_step = std::move(b_el);
    plan.out_shape = plan.batch;
    plan.out_shape.push_back(plan.m);
    plan.out_shape.push_back(plan.n);
    return plan;
}

// Calls fn(a_off, b_off, c_off) for every batch index, serially.
template <class F>
void for_each_batch(const MatmulPlan& plan, std::size_t c_matrix, F&& fn) {
    const std::size_t nbatch = shape_numel(plan.batch);
    const std::size_t r = plan.batch.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ao = 0, bo = 0;
    for (std::size_t i = 0; i < nbatch; ++i) {
        fn(ao, bo, i * c_matrix);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ao += plan.a_step[d];
            bo += plan.b_step[d];
            if (idx[d] < plan.batch[d]) break;
            ao -= plan.a_step[d] * plan.batch[d];
            bo -= plan.b_step[d] * plan.batch[d];
            idx[d] = 0;
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    // [.., m, p] x [p, n]: every leading dim of `a` folds into the row count,
    // so the whole product runs as one kernel call.
    if (b.rank() == 2 && a.rank() >= 2) {
        const std::size_t p = b.shape()[0];
        const std::size_t n = b.shape()[1];
        if (a.shape().back() != p) {
            throw DimensionError("matmul: inner dimensions disagree, " +
                                 shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
        const std::size_t rows = a.numel() / p;
        Shape out_shape = a.shape();
        out_shape.back() = n;
        auto out = new_node(out_shape);
        mm_forward(a.values().data(), b.values().data(), out->data.data(), rows, p, n);
        const bool wants = grads_wanted({&a, &b});
        auto an = a.node(), bn = b.node(), on = out;
        return finish(out, wants, [an, bn, on, rows, p, n]() {
            if (an->requires_grad) {
                an->ensure_grad();
                mm_backward_a(on->grad.data(), bn->data.data(), an->grad.data(), rows,
                              p, n);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                mm_backward_b(an->data.data(), on->grad.data(), bn->grad.data(), rows,
                              p, n);
            }
        });
    }
    const auto plan = plan_matmul(a.shape(), b.shape());
    auto out = new_node(plan.out_shape);
    const double* ap = a.values().data();
    const double* bp = b.values().data();
    for_each_batch(plan, plan.m * plan.n, [&](std::size_t ao, std::size_t bo, std::size_t co) {
        mm_forward(ap + ao, bp + bo, out->data.data() + co, plan.m, plan.p, plan.n);
    });
    const bool wants = grads_wanted({&a, &b});
    auto an = a.node(), bn = b.node(), on = out;
    return finish(out, wants, [an, bn, on, plan]() {
        const double* dc = on->grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            for_each_batch(plan, plan.m * plan.n,
                           [&](std::size_t ao, std::size_t bo, std::size_t co) {
                               mm_backward_a(dc + co, bn->data.data() + bo,
                                             an->grad.data() + ao, plan.m, plan.p,
                                             plan.n);
                           });
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for_each_batch(plan, plan.m * plan.n,
                           [&](std::size_t ao, std::size_t bo, std::size_t co) {
                               mm_backward_b(an->data.data() + ao, dc + co,
                                             bn->grad.data() + bo, plan.m, plan.p,
                                             plan.n);
                           });
        }
    });
}

// ---------------------------------------------------------------------------
// structure ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    auto out = std::make_shared<detail::TensorNode>();
    out->shape = std::move(shape);
    out->data.assign(x.values().begin(), x.values().end());
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    return finish(out, wants, [xn, on]() {
        xn->ensure_grad();
        for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
}

namespace {

// dst (contiguous, permuted shape) = src read through perm.
void permute_copy(const double* src, const Shape& src_shape,
                  const std::vector<std::size_t>& perm, double* dst) {
    const auto src_strides = contiguous_strides(src_shape);
    const std::size_t r = src_shape.size();
    Shape out_shape(r);
    std::vector<std::size_t> step(r);
    for (std::size_t d = 0; d < r; ++d) {
        out_shape[d] = src_shape[perm[d]];
        step[d] = src_strides[perm[d]];
    }
    const std::size_t n = shape_numel(out_shape);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        dst[i] = src[off];
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            off += step[d];
            if (idx[d] < out_shape[d]) break;
            off -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

}  // namespace

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    if (perm.size() != r) {
        throw DimensionError("transpose: permutation size " +
                             std::to_string(perm.size()) + " does not match rank " +
                             std::to_string(r));
    }
    std::vector<bool> seen(r, false);
    for (const auto p : perm) {
        if (p >= r || seen[p]) throw DimensionError("transpose: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(r);
    for (std::size_t d = 0; d < r; ++d) out_shape[d] = x.shape()[perm[d]];
    auto out = new_node(out_shape);
    permute_copy(x.values().data(), x.shape(), perm, out->data.data());
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    std::vector<std::size_t> inv(r);
    for (std::size_t d = 0; d < r; ++d) inv[perm[d]] = d;
    return finish(out, wants, [xn, on, inv]() {
        xn->ensure_grad();
        std::vector<double> tmp(on->grad.size());
        permute_copy(on->grad.data(), on->shape, inv, tmp.data());
        for (std::size_t i = 0; i < tmp.size(); ++i) xn->grad[i] += tmp[i];
    });
}

Tensor transpose_last(const Tensor& x) {
    const std::size_t r = x.rank();
    if (r < 2) throw DimensionError("transpose_last: rank must be >= 2");
    std::vector<std::size_t> perm(r);
    for (std::size_t d = 0; d < r; ++d) perm[d] = d;
    std::swap(perm[r - 1], perm[r - 2]);
    return transpose(x, perm);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no operands");
    const Shape& first = parts[0].shape();
    check_axis(first, axis, "concat");
    Shape out_shape = first;
    std::size_t total = 0;
    for (const Tensor& t : parts) {
        const Shape& s = t.shape();
        if (s.size() != first.size()) {
            throw DimensionError("concat: rank mismatch " + shape_str(s) + " vs " +
                                 shape_str(first));
        }
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != axis && s[d] != first[d]) {
                throw DimensionError("concat: shape mismatch " + shape_str(s) +
                                     " vs " + shape_str(first));
            }
        }
        total += s[axis];
    }
    out_shape[axis] = total;
    auto out = new_node(out_shape);
    const auto os = split_axis(out_shape, axis);
    std::size_t axis_offset = 0;
    bool wants = false;
    for (const Tensor& t : parts) {
        wants = wants || grads_wanted({&t});
        const auto ps = split_axis(t.shape(), axis);
        const double* src = t.values().data();
        for (std::size_t o = 0; o < ps.outer; ++o) {
            double* dst = out->data.data() + (o * os.len + axis_offset) * os.inner;
            std::copy_n(src + o * ps.len * ps.inner, ps.len * ps.inner, dst);
        }
        axis_offset += ps.len;
    }
    std::vector<detail::NodePtr> nodes;
    for (const Tensor& t : parts) nodes.push_back(t.node());
    auto on = out;
    return finish(out, wants, [nodes, on, axis]() {
        const auto os = split_axis(on->shape, axis);
        std::size_t axis_offset = 0;
        for (const auto& pn : nodes) {
            const auto ps = split_axis(pn->shape, axis);
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (std::size_t o = 0; o < ps.outer; ++o) {
                    const double* g = on->grad.data() + (o * os.len + axis_offset) * os.inner;
                    double* dst = pn->grad.data() + o * ps.len * ps.inner;
                    for (std::size_t i = 0; i < ps.len * ps.inner; ++i) dst[i] += g[i];
                }
            }
            axis_offset += ps.len;
        }
    });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    check_axis(x.shape(), axis, "slice");
    if (start + len > x.shape()[axis]) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") exceeds axis size " +
                             std::to_string(x.shape()[axis]));
    }
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    auto out = new_node(out_shape);
    const auto xs = split_axis(x.shape(), axis);
    const double* src = x.values().data();
    for (std::size_t o = 0; o < xs.outer; ++o) {
        std::copy_n(src + (o * xs.len + start) * xs.inner, len * xs.inner,
                    out->data.data() + o * len * xs.inner);
    }
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    return finish(out, wants, [xn, on, axis, start, len]() {
        xn->ensure_grad();
        const auto xs = split_axis(xn->shape, axis);
        for (std::size_t o = 0; o < xs.outer; ++o) {
            const double* g = on->grad.data() + o * len * xs.inner;
            double* dst = xn->grad.data() + (o * xs.len + start) * xs.inner;
            for (std::size_t i = 0; i < len * xs.inner; ++i) dst[i] += g[i];
        }
    });
}

Tensor select_columns(const Tensor& x, const std::vector<std::size_t>& cols) {
    const std::size_t r = x.rank();
    if (r == 0) throw DimensionError("select_columns: scalar input");
    const std::size_t width = x.shape()[r - 1];
    for (const auto c : cols) {
        if (c >= width) {
            throw DimensionError("select_columns: column " + std::to_string(c) +
                                 " out of range for width " + std::to_string(width));
        }
    }
    Shape out_shape = x.shape();
    out_shape[r - 1] = cols.size();
    auto out = new_node(out_shape);
    const std::size_t rows = x.numel() / width;
    const double* src = x.values().data();
    for (std::size_t row = 0; row < rows; ++row) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out->data[row * cols.size() + j] = src[row * width + cols[j]];
        }
    }
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    return finish(out, wants, [xn, on, cols, rows, width]() {
        xn->ensure_grad();
        for (std::size_t row = 0; row < rows; ++row) {
            for (std::size_t j = 0; j < cols.size(); ++j) {
                xn->grad[row * width + cols[j]] += on->grad[row * cols.size() + j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    auto out = new_node(Shape{});
    double s = 0.0;
    for (const double v : x.values()) s += v;
    out->data[0] = s;
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    return finish(out, wants, [xn, on]() {
        xn->ensure_grad();
        const double g = on->grad[0];
        for (auto& gv : xn->grad) gv += g;
    });
}

Tensor sum(const Tensor& x, std::size_t axis) {
    check_axis(x.shape(), axis, "sum");
    const auto s = split_axis(x.shape(), axis);
    auto out = new_node(drop_axis(x.shape(), axis));
    const double* src = x.values().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t a = 0; a < s.len; ++a) {
            const double* row = src + (o * s.len + a) * s.inner;
            double* dst = out->data.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
        }
    }
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    return finish(out, wants, [xn, on, s]() {
        xn->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            const double* g = on->grad.data() + o * s.inner;
            for (std::size_t a = 0; a < s.len; ++a) {
                double* dst = xn->grad.data() + (o * s.len + a) * s.inner;
                for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
            }
        }
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::size_t axis) {
    check_axis(x.shape(), axis, "mean");
    return scale(sum(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

Tensor max(const Tensor& x) {
    if (x.numel() == 0) throw ContractError("max: empty tensor");
    auto out = new_node(Shape{});
    const auto xv = x.values();
    std::size_t arg = 0;
    for (std::size_t i = 1; i < xv.size(); ++i) {
        if (xv[i] > xv[arg]) arg = i;  // strict: first index wins ties
    }
    out->data[0] = xv[arg];
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    return finish(out, wants, [xn, on, arg]() {
        xn->ensure_grad();
        xn->grad[arg] += on->grad[0];
    });
}

Tensor max(const Tensor& x, std::size_t axis) {
    check_axis(x.shape(), axis, "max");
    const auto s = split_axis(x.shape(), axis);
    auto out = new_node(drop_axis(x.shape(), axis));
    std::vector<std::size_t> args(s.outer * s.inner, 0);
    const double* src = x.values().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t arg = 0;
            double best = src[(o * s.len) * s.inner + i];
            for (std::size_t a = 1; a < s.len; ++a) {
                const double v = src[(o * s.len + a) * s.inner + i];
                if (v > best) {
                    best = v;
                    arg = a;
                }
            }
            out->data[o * s.inner + i] = best;
            args[o * s.inner + i] = arg;
        }
    }
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    return finish(out, wants, [xn, on, s, args]() {
        xn->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t a = args[o * s.inner + i];
                xn->grad[(o * s.len + a) * s.inner + i] += on->grad[o * s.inner + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
    check_axis(x.shape(), axis, "softmax");
    for (const double v : x.values()) {
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
    }
    const auto s = split_axis(x.shape(), axis);
    auto out = new_node(x.shape());
    const double* src = x.values().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.len * s.inner + i;
            double hi = src[base];
            for (std::size_t a = 1; a < s.len; ++a) {
                hi = std::max(hi, src[base + a * s.inner]);
            }
            double z = 0.0;
            for (std::size_t a = 0; a < s.len; ++a) {
                const double e = std::exp(src[base + a * s.inner] - hi);
                out->data[base + a * s.inner] = e;
                z += e;
            }
            const double inv = 1.0 / z;
            for (std::size_t a = 0; a < s.len; ++a) {
                out->data[base + a * s.inner] *= inv;
            }
        }
    }
    const bool wants = grads_wanted({&x});
    auto xn = x.node(), on = out;
    return finish(out, wants, [xn, on, s]() {
        xn->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = o * s.len * s.inner + i;
                double dot = 0.0;
                for (std::size_t a = 0; a < s.len; ++a) {
                    const std::size_t at = base + a * s.inner;
                    dot += on->grad[at] * on->data[at];
                }
                for (std::size_t a = 0; a < s.len; ++a) {
                    const std::size_t at = base + a * s.inner;
                    xn->grad[at] += on->data[at] * (on->grad[at] - dot);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h) {
    Tape& tape = Tape::active();
    const std::size_t mark = tape.size();

    Tensor var = Tensor::from(x.shape(), {x.values().begin(), x.values().end()});
    var.set_requires_grad(true);
    Tensor y = f(var);
    if (y.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
    y.backward();
    std::vector<double> analytic(var.grad().begin(), var.grad().end());
    tape.truncate(mark);

    double max_rel = 0.0;
    {
        NoGradGuard no_grad;
        Tensor probe = Tensor::from(x.shape(), {x.values().begin(), x.values().end()});
        auto pv = probe.mutable_values();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double saved = pv[i];
            pv[i] = saved + h;
            const double up = f(probe).value();
            pv[i] = saved - h;
            const double down = f(probe).value();
            pv[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double rel = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-8);
            if (std::isnan(rel)) return rel;
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace chemnne
