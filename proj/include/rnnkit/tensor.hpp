// Dense rank-<=3 tensors with tape-based reverse-mode autodiff.
//
// A Tensor<S> is a cheap handle onto shared storage; copies alias the same
// buffer, which is what lets an op's backward rule accumulate into the same
// gradient a later op reads from. Ops record their backward rules onto the
// thread-local active Tape<S> (see Tape::Scope) whenever any input requires
// a gradient. backward(root) replays the records in exact reverse execution
// order. Gradients accumulate (+=); callers zero them explicitly, so a tensor
// used in several places (a shared embedding table, say) ends up with the sum
// of all contributions. Calling backward twice without zeroing accumulates
// again.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rnnkit {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline void check_shape_valid(const Shape& s) {
    if (s.empty() || s.size() > 3)
        throw std::invalid_argument("tensor rank must be 1..3, got shape " + shape_str(s));
    for (int d : s)
        if (d <= 0) throw std::invalid_argument("nonpositive dimension in shape " + shape_str(s));
}

template <typename S>
struct TensorStorage {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until this tensor participates in autodiff
    bool requires_grad = false;
};

template <typename S>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }

    static Tensor filled(Shape shape, S v, bool requires_grad = false) {
        check_shape_valid(shape);
        Tensor t;
        t.d_ = std::make_shared<TensorStorage<S>>();
        t.d_->value.assign(shape_numel(shape), v);
        t.d_->shape = std::move(shape);
        t.d_->requires_grad = requires_grad;
        if (requires_grad) t.ensure_grad();
        return t;
    }

    static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
        check_shape_valid(shape);
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        Tensor t;
        t.d_ = std::make_shared<TensorStorage<S>>();
        t.d_->shape = std::move(shape);
        t.d_->value = std::move(data);
        t.d_->requires_grad = requires_grad;
        if (requires_grad) t.ensure_grad();
        return t;
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    // Uniform init in [lo, hi); trainable tensors are created through this.
    static Tensor uniform(Shape shape, S lo, S hi, std::mt19937& rng, bool requires_grad = true) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        for (S& v : t.d_->value) v = static_cast<S>(dist(rng));
        return t;
    }

    // A Tensor is a handle: const handles still expose the shared mutable
    // storage, same as shared_ptr.
    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return d_->value.size(); }

    std::span<S> data() const { return d_->value; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) const {
        d_->requires_grad = b;
        if (b) ensure_grad();
    }

    bool has_grad() const { return !d_->grad.empty(); }
    void ensure_grad() const {
        if (d_->grad.empty()) d_->grad.assign(d_->value.size(), S(0));
    }
    void zero_grad() const { std::fill(d_->grad.begin(), d_->grad.end(), S(0)); }
    std::span<S> grad() const {
        ensure_grad();
        return d_->grad;
    }

    S item() const {
        if (size() != 1)
            throw std::invalid_argument("item() on non-scalar tensor of shape " + shape_str(shape()));
        return d_->value[0];
    }

    S& at(int i) const { return d_->value[static_cast<std::size_t>(i)]; }
    S& at(int i, int j) const { return d_->value[static_cast<std::size_t>(i) * dim(1) + j]; }
    S& at(int i, int j, int k) const {
        return d_->value[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
    }

    bool all_finite() const {
        for (S v : d_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Identity of the underlying storage, for tests and bookkeeping.
    const void* node() const { return d_.get(); }

private:
    std::shared_ptr<TensorStorage<S>> d_;
};

// Ordered record of executed ops. Execution order is topological by
// construction, so backward() is a plain reverse sweep.
template <typename S>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Makes this tape the recording target for the current thread.
    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active() { return active_; }

    void record(Tensor<S> out, std::function<void()> backward_rule) {
        outputs_.push_back(std::move(out));
        records_.push_back(std::move(backward_rule));
    }

    std::size_t size() const { return records_.size(); }
    void clear() {
        records_.clear();
        outputs_.clear();
    }

    // Intermediate grads are scratch per replay; leaf grads persist, which is
    // what makes repeated backward calls accumulate.
    void zero_recorded_grads() {
        for (Tensor<S>& t : outputs_) t.zero_grad();
    }

    void replay_reverse() const {
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> records_;
    std::vector<Tensor<S>> outputs_;
    static thread_local Tape* active_;
};

template <typename S>
thread_local Tape<S>* Tape<S>::active_ = nullptr;

namespace detail {

template <typename S>
bool grad_wanted(std::initializer_list<Tensor<S>> inputs) {
    if (!Tape<S>::active()) return false;
    for (const Tensor<S>& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

// Marks the output differentiable and records the backward rule. Inputs that
// require grad get their buffers allocated here so rules can accumulate
// unconditionally.
template <typename S, typename F>
void record(Tensor<S>& out, std::initializer_list<Tensor<S>> inputs, F&& backward_rule) {
    if (!grad_wanted(inputs)) return;
    out.set_requires_grad(true);
    for (Tensor<S> t : inputs)
        if (t.requires_grad()) t.ensure_grad();
    Tape<S>::active()->record(out, std::forward<F>(backward_rule));
}

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

// c[m x n] += a[m x k] * b[k x n], optionally transposing either factor.
template <typename S>
void gemm_acc(std::span<S> c, std::span<const S> a, std::span<const S> b, int m, int k, int n,
              bool trans_a, bool trans_b) {
    for (int i = 0; i < m; ++i) {
        S* crow = c.data() + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = trans_a ? a[static_cast<std::size_t>(p) * m + i]
                                 : a[static_cast<std::size_t>(i) * k + p];
            if (av == S(0)) continue;
            const S* brow = trans_b ? nullptr : b.data() + static_cast<std::size_t>(p) * n;
            if (trans_b) {
                for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::size_t>(j) * k + p];
            } else {
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    detail::gemm_acc<S>(out.data(), a.data(), b.data(), m, k, n, false, false);
    detail::record(out, {a, b}, [a, b, out, m, k, n]() mutable {
        if (a.requires_grad())  // dA += dC * B^T
            detail::gemm_acc<S>(a.grad(), out.grad(), b.data(), m, n, k, false, true);
        if (b.requires_grad())  // dB += A^T * dC
            detail::gemm_acc<S>(b.grad(), a.data(), out.grad(), k, m, n, true, false);
    });
    return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape("add", a, b);
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    auto o = out.data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    detail::record(out, {a, b}, [a, b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape("sub", a, b);
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    auto o = out.data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
    detail::record(out, {a, b}, [a, b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape("mul", a, b);
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    auto o = out.data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
    detail::record(out, {a, b}, [a, b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            auto bd = b.data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            auto ad = a.data();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    auto o = out.data();
    auto av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + c;
    detail::record(out, {a}, [a, out]() mutable {
        auto g = out.grad();
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return out;
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    auto o = out.data();
    auto av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * c;
    detail::record(out, {a}, [a, out, c]() mutable {
        auto g = out.grad();
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
    return out;
}

// out = 1 - a. Written as its own op because gate complements are everywhere
// in the cell equations.
template <typename S>
Tensor<S> one_minus(const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    auto o = out.data();
    auto av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = S(1) - av[i];
    detail::record(out, {a}, [a, out]() mutable {
        auto g = out.grad();
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
    });
    return out;
}

// Scales row i of a[m x n] by the single scalar s[i]. s has shape [m] or
// [m, 1]. This is the scalar gating operator: one scalar per row gates the
// whole row vector.
template <typename S>
Tensor<S> scale_rows(const Tensor<S>& a, const Tensor<S>& s) {
    if (a.rank() != 2)
        throw std::invalid_argument("scale_rows: expects rank-2 input, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    const bool s_ok = (s.rank() == 1 && s.dim(0) == m) ||
                      (s.rank() == 2 && s.dim(0) == m && s.dim(1) == 1);
    if (!s_ok)
        throw std::invalid_argument("scale_rows: scale shape " + shape_str(s.shape()) +
                                    " does not match rows of " + shape_str(a.shape()));
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    auto o = out.data();
    auto av = a.data();
    auto sv = s.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) o[static_cast<std::size_t>(i) * n + j] = av[static_cast<std::size_t>(i) * n + j] * sv[i];
    detail::record(out, {a, s}, [a, s, out, m, n]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            auto sv2 = s.data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(i) * n + j] * sv2[i];
        }
        if (s.requires_grad()) {
            auto gs = s.grad();
            auto ad = a.data();
            for (int i = 0; i < m; ++i) {
                S acc = S(0);
                for (int j = 0; j < n; ++j)
                    acc += g[static_cast<std::size_t>(i) * n + j] * ad[static_cast<std::size_t>(i) * n + j];
                gs[i] += acc;
            }
        }
    });
    return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    auto o = out.data();
    auto av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = S(1) / (S(1) + std::exp(-av[i]));
    detail::record(out, {a}, [a, out]() mutable {
        auto g = out.grad();
        auto ga = a.grad();
        auto y = out.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (S(1) - y[i]);
    });
    return out;
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    auto o = out.data();
    auto av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(av[i]);
    detail::record(out, {a}, [a, out]() mutable {
        auto g = out.grad();
        auto ga = a.grad();
        auto y = out.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (S(1) - y[i] * y[i]);
    });
    return out;
}

namespace detail {

// Decomposes a shape into (outer, axis, inner) extents around `axis`,
// the standard trick for strided copies on row-major data.
inline void axis_extents(const Shape& s, int axis, std::size_t& outer, std::size_t& ax,
                         std::size_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
    ax = static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
}

}  // namespace detail

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no parts");
    const Shape& first = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(first.size()))
        throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_str(first));
    Shape out_shape = first;
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p].shape();
        if (s.size() != first.size())
            throw std::invalid_argument("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(s));
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (static_cast<int>(i) == axis) continue;
            if (s[i] != first[i])
                throw std::invalid_argument("concat: non-concat dimension mismatch " + shape_str(first) +
                                            " vs " + shape_str(s));
        }
        out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    }

    Tensor<S> out = Tensor<S>::zeros(out_shape);
    std::size_t outer, out_ax, inner;
    detail::axis_extents(out_shape, axis, outer, out_ax, inner);
    std::size_t ax_off = 0;
    for (const Tensor<S>& p : parts) {
        std::size_t po, pax, pi;
        detail::axis_extents(p.shape(), axis, po, pax, pi);
        auto src = p.data();
        auto dst = out.data();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < pax; ++a)
                std::copy_n(src.data() + (o * pax + a) * inner, inner,
                            dst.data() + (o * out_ax + ax_off + a) * inner);
        ax_off += pax;
    }

    bool wants = false;
    if (Tape<S>::active())
        for (const Tensor<S>& p : parts)
            if (p.requires_grad()) wants = true;
    if (wants) {
        out.set_requires_grad(true);
        for (Tensor<S> p : parts)
            if (p.requires_grad()) p.ensure_grad();
        std::vector<Tensor<S>> held = parts;
        Tape<S>::active()->record(out, [held, out, axis, outer, out_ax, inner]() mutable {
            auto g = out.grad();
            std::size_t off = 0;
            for (Tensor<S>& p : held) {
                std::size_t po, pax, pi;
                detail::axis_extents(p.shape(), axis, po, pax, pi);
                if (p.requires_grad()) {
                    auto gp = p.grad();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t a = 0; a < pax; ++a) {
                            const S* src = g.data() + (o * out_ax + off + a) * inner;
                            S* dst = gp.data() + (o * pax + a) * inner;
                            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                        }
                }
                off += pax;
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& t, int axis, int start, int len) {
    const Shape& s = t.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw std::invalid_argument("slice: axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_str(s));
    const int ax_dim = s[static_cast<std::size_t>(axis)];
    if (start < 0 || len <= 0 || start + len > ax_dim)
        throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") out of bounds for shape " + shape_str(s));
    Shape out_shape = s;
    out_shape[static_cast<std::size_t>(axis)] = len;
    Tensor<S> out = Tensor<S>::zeros(out_shape);
    std::size_t outer, ax, inner;
    detail::axis_extents(s, axis, outer, ax, inner);
    auto src = t.data();
    auto dst = out.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (int a = 0; a < len; ++a)
            std::copy_n(src.data() + (o * ax + static_cast<std::size_t>(start + a)) * inner, inner,
                        dst.data() + (o * static_cast<std::size_t>(len) + static_cast<std::size_t>(a)) * inner);
    detail::record(out, {t}, [t, out, start, len, outer, ax, inner]() mutable {
        auto g = out.grad();
        auto gt = t.grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (int a = 0; a < len; ++a) {
                const S* srcg = g.data() + (o * static_cast<std::size_t>(len) + static_cast<std::size_t>(a)) * inner;
                S* dstg = gt.data() + (o * ax + static_cast<std::size_t>(start + a)) * inner;
                for (std::size_t i = 0; i < inner; ++i) dstg[i] += srcg[i];
            }
    });
    return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& t, Shape shape) {
    check_shape_valid(shape);
    if (shape_numel(shape) != t.size())
        throw std::invalid_argument("reshape: " + shape_str(t.shape()) + " has " + std::to_string(t.size()) +
                                    " elements, target " + shape_str(shape) + " wants " +
                                    std::to_string(shape_numel(shape)));
    Tensor<S> out = Tensor<S>::from(std::move(shape), std::vector<S>(t.data().begin(), t.data().end()));
    detail::record(out, {t}, [t, out]() mutable {
        auto g = out.grad();
        auto gt = t.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    });
    return out;
}

// Full reduction to a scalar of shape [1].
template <typename S>
Tensor<S> sum(const Tensor<S>& t) {
    S acc = S(0);
    for (S v : t.data()) acc += v;
    Tensor<S> out = Tensor<S>::scalar(acc);
    detail::record(out, {t}, [t, out]() mutable {
        const S g = out.grad()[0];
        auto gt = t.grad();
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g;
    });
    return out;
}

// Gathers rows of table[V x e] by id. Backward scatter-adds into the table,
// so repeated ids accumulate correctly.
template <typename S>
Tensor<S> embed_rows(const Tensor<S>& table, const std::vector<int>& ids) {
    if (table.rank() != 2)
        throw std::invalid_argument("embed_rows: table must be rank-2, got " + shape_str(table.shape()));
    if (ids.empty()) throw std::invalid_argument("embed_rows: empty id list");
    const int v = table.dim(0), e = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw std::out_of_range("embed_rows: id " + std::to_string(id) + " outside table of " +
                                    std::to_string(v) + " rows");
    Tensor<S> out = Tensor<S>::zeros({static_cast<int>(ids.size()), e});
    auto src = table.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(src.data() + static_cast<std::size_t>(ids[i]) * e, e, dst.data() + i * e);
    detail::record(out, {table}, [table, out, ids, e]() mutable {
        auto g = out.grad();
        auto gt = table.grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const S* srcg = g.data() + i * e;
            S* dstg = gt.data() + static_cast<std::size_t>(ids[i]) * e;
            for (int j = 0; j < e; ++j) dstg[j] += srcg[j];
        }
    });
    return out;
}

// Per-row softmax with a hard mask: masked entries get probability exactly 0
// and the row renormalizes over the unmasked ones. A row with nothing
// unmasked is an error.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& scores, const std::vector<std::uint8_t>& mask) {
    if (scores.rank() != 2)
        throw std::invalid_argument("softmax_rows: expects rank-2 scores, got " + shape_str(scores.shape()));
    const int m = scores.dim(0), n = scores.dim(1);
    if (mask.size() != static_cast<std::size_t>(m) * n)
        throw std::invalid_argument("softmax_rows: mask size " + std::to_string(mask.size()) +
                                    " does not match scores " + shape_str(scores.shape()));
    Tensor<S> out = Tensor<S>::zeros(scores.shape());
    auto x = scores.data();
    auto y = out.data();
    for (int i = 0; i < m; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * n;
        S mx = std::numeric_limits<S>::lowest();
        bool any = false;
        for (int j = 0; j < n; ++j)
            if (mask[base + j]) {
                any = true;
                mx = std::max(mx, x[base + j]);
            }
        if (!any)
            throw std::invalid_argument("softmax_rows: row " + std::to_string(i) + " is fully masked");
        S z = S(0);
        for (int j = 0; j < n; ++j)
            if (mask[base + j]) z += std::exp(x[base + j] - mx);
        for (int j = 0; j < n; ++j) y[base + j] = mask[base + j] ? std::exp(x[base + j] - mx) / z : S(0);
    }
    detail::record(out, {scores}, [scores, out, mask, m, n]() mutable {
        auto g = out.grad();
        auto gx = scores.grad();
        auto y2 = out.data();
        for (int i = 0; i < m; ++i) {
            const std::size_t base = static_cast<std::size_t>(i) * n;
            S dot = S(0);
            for (int j = 0; j < n; ++j) dot += g[base + j] * y2[base + j];
            for (int j = 0; j < n; ++j)
                if (mask[base + j]) gx[base + j] += y2[base + j] * (g[base + j] - dot);
        }
    });
    return out;
}

// Mean negative log-likelihood over the unmasked rows of logits[n x V],
// stabilized by max subtraction. Masked rows contribute nothing, forward or
// backward.
template <typename S>
Tensor<S> softmax_xent(const Tensor<S>& logits, const std::vector<int>& targets,
                       const std::vector<std::uint8_t>& mask) {
    if (logits.rank() != 2)
        throw std::invalid_argument("softmax_xent: expects rank-2 logits, got " + shape_str(logits.shape()));
    const int n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != static_cast<std::size_t>(n) || mask.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("softmax_xent: targets/mask length must equal logit rows (" +
                                    std::to_string(n) + ")");
    long count = 0;
    for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        ++count;
        if (targets[static_cast<std::size_t>(i)] < 0 || targets[static_cast<std::size_t>(i)] >= v)
            throw std::out_of_range("softmax_xent: target id " + std::to_string(targets[static_cast<std::size_t>(i)]) +
                                    " outside vocabulary of " + std::to_string(v));
    }
    if (count == 0) throw std::invalid_argument("softmax_xent: every row is masked; empty batch");

    auto x = logits.data();
    S loss = S(0);
    for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const std::size_t base = static_cast<std::size_t>(i) * v;
        S mx = x[base];
        for (int j = 1; j < v; ++j) mx = std::max(mx, x[base + j]);
        S z = S(0);
        for (int j = 0; j < v; ++j) z += std::exp(x[base + j] - mx);
        loss += mx + std::log(z) - x[base + static_cast<std::size_t>(targets[static_cast<std::size_t>(i)])];
    }
    Tensor<S> out = Tensor<S>::scalar(loss / static_cast<S>(count));

    detail::record(out, {logits}, [logits, out, targets, mask, n, v, count]() mutable {
        const S g = out.grad()[0];
        auto x2 = logits.data();
        auto gx = logits.grad();
        const S inv = g / static_cast<S>(count);
        for (int i = 0; i < n; ++i) {
            if (!mask[static_cast<std::size_t>(i)]) continue;
            const std::size_t base = static_cast<std::size_t>(i) * v;
            S mx = x2[base];
            for (int j = 1; j < v; ++j) mx = std::max(mx, x2[base + j]);
            S z = S(0);
            for (int j = 0; j < v; ++j) z += std::exp(x2[base + j] - mx);
            for (int j = 0; j < v; ++j) {
                const S p = std::exp(x2[base + j] - mx) / z;
                gx[base + j] += inv * (p - (j == targets[static_cast<std::size_t>(i)] ? S(1) : S(0)));
            }
        }
    });
    return out;
}

// Reverses the leading (time) axis independently per batch row, honoring each
// row's true length: positions past lengths[b] stay where they are. xs is
// [T x b x d]; the permutation is its own inverse, so backward reuses it.
template <typename S>
Tensor<S> reverse_time(const Tensor<S>& xs, const std::vector<int>& lengths) {
    if (xs.rank() != 3)
        throw std::invalid_argument("reverse_time: expects [T x b x d], got " + shape_str(xs.shape()));
    const int t_max = xs.dim(0), b = xs.dim(1), d = xs.dim(2);
    if (lengths.size() != static_cast<std::size_t>(b))
        throw std::invalid_argument("reverse_time: lengths size " + std::to_string(lengths.size()) +
                                    " != batch " + std::to_string(b));
    for (int len : lengths)
        if (len < 0 || len > t_max)
            throw std::invalid_argument("reverse_time: length " + std::to_string(len) + " outside [0, " +
                                        std::to_string(t_max) + "]");
    Tensor<S> out = Tensor<S>::zeros(xs.shape());
    auto src = xs.data();
    auto dst = out.data();
    auto idx = [b, d](int t, int row) {
        return (static_cast<std::size_t>(t) * b + static_cast<std::size_t>(row)) * d;
    };
    for (int row = 0; row < b; ++row) {
        const int len = lengths[static_cast<std::size_t>(row)];
        for (int t = 0; t < t_max; ++t) {
            const int t_src = t < len ? len - 1 - t : t;
            std::copy_n(src.data() + idx(t_src, row), d, dst.data() + idx(t, row));
        }
    }
    detail::record(out, {xs}, [xs, out, lengths, t_max, b, d, idx]() mutable {
        auto g = out.grad();
        auto gx = xs.grad();
        for (int row = 0; row < b; ++row) {
            const int len = lengths[static_cast<std::size_t>(row)];
            for (int t = 0; t < t_max; ++t) {
                const int t_src = t < len ? len - 1 - t : t;
                const S* srcg = g.data() + idx(t, row);
                S* dstg = gx.data() + idx(t_src, row);
                for (int i = 0; i < d; ++i) dstg[i] += srcg[i];
            }
        }
    });
    return out;
}

// Seeds d(root)/d(root) = 1 and replays the active tape backwards. root must
// be a scalar that participated in recording (or a grad-carrying leaf).
template <typename S>
void backward(const Tensor<S>& root) {
    if (root.size() != 1)
        throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(root.shape()));
    Tape<S>* tape = Tape<S>::active();
    if (!tape) throw std::logic_error("backward: no active tape on this thread");
    if (!root.has_grad())
        throw std::logic_error("backward: root is not on the tape (no gradient participation)");
    tape->zero_recorded_grads();
    Tensor<S> r = root;
    r.grad()[0] += S(1);
    tape->replay_reverse();
}

}  // namespace rnnkit
