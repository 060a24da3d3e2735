// The four recurrent building blocks and their sequence drivers.
//
// All steps are batch-major: hidden states are [b x h], inputs [b x d].
// Weights are stored input-major, [in x out], so an activation multiplies on
// the right; `in` is always hidden + input because every projection sees the
// concatenation [h_prev, x] in that order. Gate weights of the scalar-gated
// cell are column vectors [in x 1]: its gates are one scalar per batch row,
// not one per hidden unit.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rnnkit/tensor.hpp"

namespace rnnkit {

enum class CellKind { Gru, Mgu, Sgu, Fofe };

inline const char* to_string(CellKind k) {
    switch (k) {
        case CellKind::Gru: return "gru";
        case CellKind::Mgu: return "mgu";
        case CellKind::Sgu: return "sgu";
        case CellKind::Fofe: return "fofe";
    }
    return "?";
}

struct CellConfig {
    CellKind kind = CellKind::Gru;
    int input_size = 0;
    int hidden_size = 0;
    double alpha = 0.9;  // forgetting factor, used iff kind == Fofe

    void validate() const {
        if (input_size <= 0 || hidden_size <= 0)
            throw std::invalid_argument("cell config: sizes must be positive, got input " +
                                        std::to_string(input_size) + " hidden " +
                                        std::to_string(hidden_size));
        if (kind == CellKind::Fofe) {
            if (hidden_size != input_size)
                throw std::invalid_argument(
                    "cell config: the decayed-sum encoder state has the input width; hidden " +
                    std::to_string(hidden_size) + " != input " + std::to_string(input_size));
            if (!(alpha > 0.0 && alpha < 1.0))
                throw std::invalid_argument("cell config: forgetting factor must lie in (0, 1), got " +
                                            std::to_string(alpha));
        }
    }
};

// Closed-form trainable-element counts; must equal what init() allocates.
inline long count_params(const CellConfig& c) {
    c.validate();
    const long h = c.hidden_size, x = c.input_size;
    switch (c.kind) {
        case CellKind::Gru: return 3 * h * (h + x);
        case CellKind::Mgu: return 2 * h * (h + x);
        case CellKind::Sgu: return h * (h + x) + 2 * (h + x);
        case CellKind::Fofe: return 0;
    }
    return 0;
}

template <typename S>
struct CellWeights {
    CellConfig config;
    Tensor<S> update;     // gru: [in x h], sgu: [in x 1]
    Tensor<S> reset;      // gru: [in x h], sgu: [in x 1]
    Tensor<S> forget;     // mgu: [in x h]
    Tensor<S> candidate;  // gru/mgu/sgu: [in x h]

    static CellWeights init(const CellConfig& c, std::mt19937& rng) {
        c.validate();
        CellWeights w;
        w.config = c;
        const int in = c.hidden_size + c.input_size;
        const int h = c.hidden_size;
        auto glorot = [&](int rows, int cols) {
            const S bound = static_cast<S>(std::sqrt(6.0 / (rows + cols)));
            return Tensor<S>::uniform({rows, cols}, -bound, bound, rng, true);
        };
        switch (c.kind) {
            case CellKind::Gru:
                w.update = glorot(in, h);
                w.reset = glorot(in, h);
                w.candidate = glorot(in, h);
                break;
            case CellKind::Mgu:
                w.forget = glorot(in, h);
                w.candidate = glorot(in, h);
                break;
            case CellKind::Sgu:
                // gate vectors: fan_out is 1
                w.update = glorot(in, 1);
                w.reset = glorot(in, 1);
                w.candidate = glorot(in, h);
                break;
            case CellKind::Fofe:
                break;  // no trainable parameters
        }
        return w;
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        if (update.defined()) out.emplace_back("update", update);
        if (reset.defined()) out.emplace_back("reset", reset);
        if (forget.defined()) out.emplace_back("forget", forget);
        if (candidate.defined()) out.emplace_back("candidate", candidate);
        return out;
    }

    // Allocation walk; the formula in count_params must agree with this.
    long num_elements() const {
        long n = 0;
        for (const auto& [name, t] : named_params()) n += static_cast<long>(t.size());
        return n;
    }
};

namespace detail {

template <typename S>
void check_step_shapes(const char* op, const CellConfig& c, const Tensor<S>& h_prev,
                       const Tensor<S>& x) {
    if (h_prev.rank() != 2 || x.rank() != 2 || h_prev.dim(0) != x.dim(0) ||
        h_prev.dim(1) != c.hidden_size || x.dim(1) != c.input_size)
        throw std::invalid_argument(std::string(op) + ": expected h [b x " +
                                    std::to_string(c.hidden_size) + "], x [b x " +
                                    std::to_string(c.input_size) + "], got " +
                                    shape_str(h_prev.shape()) + " and " + shape_str(x.shape()));
}

}  // namespace detail

// z = sig(Wz [h, x]); r = sig(Wr [h, x]); cand = tanh(Wc [r . h, x]);
// h' = (1 - z) . h + z . cand
template <typename S>
Tensor<S> gru_step(const CellWeights<S>& w, const Tensor<S>& h_prev, const Tensor<S>& x) {
    detail::check_step_shapes("gru_step", w.config, h_prev, x);
    Tensor<S> hx = concat<S>({h_prev, x}, 1);
    Tensor<S> z = sigmoid(matmul(hx, w.update));
    Tensor<S> r = sigmoid(matmul(hx, w.reset));
    Tensor<S> cand = tanh(matmul(concat<S>({mul(r, h_prev), x}, 1), w.candidate));
    return add(mul(one_minus(z), h_prev), mul(z, cand));
}

// Same structure with scalar gates: z and r are [b x 1] and gate whole rows.
template <typename S>
Tensor<S> sgu_step(const CellWeights<S>& w, const Tensor<S>& h_prev, const Tensor<S>& x) {
    detail::check_step_shapes("sgu_step", w.config, h_prev, x);
    Tensor<S> hx = concat<S>({h_prev, x}, 1);
    Tensor<S> z = sigmoid(matmul(hx, w.update));
    Tensor<S> r = sigmoid(matmul(hx, w.reset));
    Tensor<S> cand = tanh(matmul(concat<S>({scale_rows(h_prev, r), x}, 1), w.candidate));
    return add(scale_rows(h_prev, one_minus(z)), scale_rows(cand, z));
}

// Single forget gate playing both roles:
// f = sig(Wf [h, x]); cand = tanh(Wc [f . h, x]); h' = (1 - f) . h + f . cand
template <typename S>
Tensor<S> mgu_step(const CellWeights<S>& w, const Tensor<S>& h_prev, const Tensor<S>& x) {
    detail::check_step_shapes("mgu_step", w.config, h_prev, x);
    Tensor<S> hx = concat<S>({h_prev, x}, 1);
    Tensor<S> f = sigmoid(matmul(hx, w.forget));
    Tensor<S> cand = tanh(matmul(concat<S>({mul(f, h_prev), x}, 1), w.candidate));
    return add(mul(one_minus(f), h_prev), mul(f, cand));
}

// Parameter-free decayed sum: h' = alpha * h + x.
template <typename S>
Tensor<S> fofe_step(double alpha, const Tensor<S>& h_prev, const Tensor<S>& x) {
    detail::check_same_shape("fofe_step", h_prev, x);
    return add(mul_scalar(h_prev, static_cast<S>(alpha)), x);
}

template <typename S>
Tensor<S> cell_step(const CellWeights<S>& w, const Tensor<S>& h_prev, const Tensor<S>& x) {
    switch (w.config.kind) {
        case CellKind::Gru: return gru_step(w, h_prev, x);
        case CellKind::Mgu: return mgu_step(w, h_prev, x);
        case CellKind::Sgu: return sgu_step(w, h_prev, x);
        case CellKind::Fofe: return fofe_step(w.config.alpha, h_prev, x);
    }
    throw std::logic_error("cell_step: unknown cell kind");
}

// All hidden states h_1..h_T of the decayed-sum recurrence from h_0 = 0,
// for one unbatched sequence xs[T x d].
template <typename S>
Tensor<S> fofe_encode_recurrent(double alpha, const Tensor<S>& xs) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("fofe_encode_recurrent: forgetting factor must lie in (0, 1), got " +
                                    std::to_string(alpha));
    if (xs.rank() != 2) throw std::invalid_argument("fofe_encode_recurrent: expects [T x d], got " +
                                                    shape_str(xs.shape()));
    const int t_max = xs.dim(0), d = xs.dim(1);
    Tensor<S> h = Tensor<S>::zeros({1, d});
    std::vector<Tensor<S>> states;
    states.reserve(static_cast<std::size_t>(t_max));
    for (int t = 0; t < t_max; ++t) {
        h = fofe_step(alpha, h, slice(xs, 0, t, 1));
        states.push_back(h);
    }
    return concat(states, 0);
}

// The same map as one matrix product: H = D X with D lower triangular,
// D[t, s] = alpha^(t - s) for s <= t. Equals the recurrence in exact
// arithmetic; the two are checked against each other in the tests.
template <typename S>
Tensor<S> fofe_encode_matrix(double alpha, const Tensor<S>& xs) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("fofe_encode_matrix: forgetting factor must lie in (0, 1), got " +
                                    std::to_string(alpha));
    if (xs.rank() != 2) throw std::invalid_argument("fofe_encode_matrix: expects [T x d], got " +
                                                    shape_str(xs.shape()));
    const int t_max = xs.dim(0);
    Tensor<S> decay = Tensor<S>::zeros({t_max, t_max});
    for (int t = 0; t < t_max; ++t) {
        S p = S(1);
        for (int s = t; s >= 0; --s) {
            decay.at(t, s) = p;
            p *= static_cast<S>(alpha);
        }
    }
    return matmul(decay, xs);
}

template <typename S>
struct SequenceResult {
    Tensor<S> outputs;  // [T x b x h]
    Tensor<S> final;    // [b x h], each row taken at its true length
};

// Steps a cell over xs[T x b x d]. Rows frozen past their length: the state
// at a padded position is carried forward unchanged, so `final` is always the
// state at the row's true length (zero state for zero-length rows).
template <typename S>
SequenceResult<S> run_sequence(const CellWeights<S>& w, const Tensor<S>& xs,
                               const std::vector<int>& lengths) {
    if (xs.rank() != 3)
        throw std::invalid_argument("run_sequence: expects xs [T x b x d], got " + shape_str(xs.shape()));
    const int t_max = xs.dim(0), b = xs.dim(1), d = xs.dim(2);
    if (d != w.config.input_size)
        throw std::invalid_argument("run_sequence: input width " + std::to_string(d) +
                                    " != cell input size " + std::to_string(w.config.input_size));
    if (lengths.size() != static_cast<std::size_t>(b))
        throw std::invalid_argument("run_sequence: lengths size " + std::to_string(lengths.size()) +
                                    " != batch " + std::to_string(b));
    for (int len : lengths)
        if (len < 0 || len > t_max)
            throw std::invalid_argument("run_sequence: length " + std::to_string(len) +
                                        " outside [0, " + std::to_string(t_max) + "]");

    const int h = w.config.hidden_size;
    Tensor<S> state = Tensor<S>::zeros({b, h});
    std::vector<Tensor<S>> steps;
    steps.reserve(static_cast<std::size_t>(t_max));
    for (int t = 0; t < t_max; ++t) {
        bool all_live = true, none_live = true;
        Tensor<S> live = Tensor<S>::zeros({b, 1});
        for (int row = 0; row < b; ++row) {
            const bool on = t < lengths[static_cast<std::size_t>(row)];
            live.at(row, 0) = on ? S(1) : S(0);
            all_live &= on;
            none_live &= !on;
        }
        if (!none_live) {
            Tensor<S> x_t = reshape(slice(xs, 0, t, 1), {b, d});
            Tensor<S> next = cell_step(w, state, x_t);
            state = all_live ? next
                             : add(scale_rows(next, live), scale_rows(state, one_minus(live)));
        }
        steps.push_back(reshape(state, {1, b, h}));
    }
    SequenceResult<S> res;
    res.outputs = concat(steps, 0);
    res.final = state;
    return res;
}

template <typename S>
struct BiSequenceResult {
    Tensor<S> outputs;  // [T x b x 2h], forward then backward features
    Tensor<S> final;    // [b x 2h]
};

// Runs fwd over xs and bwd over the per-row reversed xs, then aligns the
// backward outputs to original positions. outputs[t] = [fwd_t, bwd_t] where
// bwd_t has consumed x_t..x_{L-1}.
template <typename S>
BiSequenceResult<S> bi_encode(const CellWeights<S>& fwd, const CellWeights<S>& bwd,
                              const Tensor<S>& xs, const std::vector<int>& lengths) {
    if (fwd.config.hidden_size != bwd.config.hidden_size)
        throw std::invalid_argument("bi_encode: direction hidden sizes disagree, " +
                                    std::to_string(fwd.config.hidden_size) + " vs " +
                                    std::to_string(bwd.config.hidden_size));
    if (fwd.config.input_size != bwd.config.input_size)
        throw std::invalid_argument("bi_encode: direction input sizes disagree, " +
                                    std::to_string(fwd.config.input_size) + " vs " +
                                    std::to_string(bwd.config.input_size));
    SequenceResult<S> f = run_sequence(fwd, xs, lengths);
    SequenceResult<S> r = run_sequence(bwd, reverse_time(xs, lengths), lengths);
    Tensor<S> aligned = reverse_time(r.outputs, lengths);
    BiSequenceResult<S> res;
    res.outputs = concat<S>({f.outputs, aligned}, 2);
    res.final = concat<S>({f.final, r.final}, 1);
    return res;
}

}  // namespace rnnkit
