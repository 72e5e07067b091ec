#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace vdc {

// Reverse-mode autodiff over a flat tape. The tape is rebuilt for every
// optimization iteration; nodes store input values by copy so constants
// (frozen weights, schedule coefficients) need no registration.

enum class Op {
    leaf,
    add,
    sub,
    mul,
    scale,
    matmul,
    sin_,
    cos_,
    tanh_,
    relu,
    sum,
    mean,
    squared_l2,
};

namespace detail {

// Broadcast contract: shapes equal, or one operand's shape is the other's
// shape minus a single leading batch extent.
enum class Bcast { none, a_batched, b_batched };

inline Bcast broadcast_kind(const Shape& a, const Shape& b, const char* what) {
    if (a == b) return Bcast::none;
    if (a.size() == b.size() + 1 && std::equal(b.begin(), b.end(), a.begin() + 1))
        return Bcast::a_batched;
    if (b.size() == a.size() + 1 && std::equal(a.begin(), a.end(), b.begin() + 1))
        return Bcast::b_batched;
    throw ShapeError(std::string(what) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

// Lift vector shapes for matmul: (k) as row on the left, column on the right.
struct MatDims {
    std::size_t m, k, n;
    bool a_vec, b_vec;
};

inline MatDims matmul_dims(const Shape& a, const Shape& b) {
    MatDims d{};
    if (a.size() == 2) {
        d.m = a[0];
        d.k = a[1];
        d.a_vec = false;
    } else if (a.size() == 1) {
        d.m = 1;
        d.k = a[0];
        d.a_vec = true;
    } else {
        throw ShapeError("matmul: lhs rank must be 1 or 2, got " + shape_str(a));
    }
    std::size_t bk;
    if (b.size() == 2) {
        bk = b[0];
        d.n = b[1];
        d.b_vec = false;
    } else if (b.size() == 1) {
        bk = b[0];
        d.n = 1;
        d.b_vec = true;
    } else {
        throw ShapeError("matmul: rhs rank must be 1 or 2, got " + shape_str(b));
    }
    if (d.k != bk)
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a) + " x " +
                         shape_str(b));
    return d;
}

inline Shape matmul_out_shape(const MatDims& d) {
    if (d.a_vec && d.b_vec) return Shape{1};
    if (d.a_vec) return Shape{d.n};
    if (d.b_vec) return Shape{d.m};
    return Shape{d.m, d.n};
}

// C[m,n] += or = A[m,k] * B[k,n]
inline void gemm(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(C, C + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = A + i * k;
        double* c_row = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = a_row[p];
            if (av == 0.0) continue;
            const double* b_row = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
        }
    }
}

// C[m,n] += A^T[m,k'] * B[k',n]  with A given as [k',m]
inline void gemm_at(const double* A, const double* B, double* C, std::size_t kp, std::size_t m,
                    std::size_t n) {
    for (std::size_t p = 0; p < kp; ++p) {
        const double* a_row = A + p * m;
        const double* b_row = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            double av = a_row[i];
            if (av == 0.0) continue;
            double* c_row = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
        }
    }
}

// C[m,n] += A[m,k'] * B^T[k',n]  with B given as [n,k']
inline void gemm_bt(const double* A, const double* B, double* C, std::size_t m, std::size_t kp,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = A + i * kp;
        double* c_row = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* b_row = B + j * kp;
            double acc = 0.0;
            for (std::size_t p = 0; p < kp; ++p) acc += a_row[p] * b_row[p];
            c_row[j] += acc;
        }
    }
}

}  // namespace detail

class Tape {
public:
    struct Node {
        Op op = Op::leaf;
        int pa = -1, pb = -1;       // parent node ids, -1 when the input is off-tape
        Tensor va, vb;              // input values as seen at record time
        Shape out_shape;
        double c = 0.0;             // scalar for Op::scale
        std::vector<double> out;    // saved output (tanh only)
    };

    int watch(Tensor& t) {
        Node n;
        n.op = Op::leaf;
        n.out_shape = t.shape;
        nodes_.push_back(std::move(n));
        t.tape = this;
        t.node = static_cast<int>(nodes_.size()) - 1;
        t.requires_grad = true;
        return t.node;
    }

    int record(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

    std::vector<Node> nodes_;
};

/// Per-node adjoints produced by backward(); query with grad().
struct Gradients {
    const Tape* tape = nullptr;
    std::vector<std::vector<double>> adj;

    Tensor grad(const Tensor& t) const {
        if (!t.requires_grad)
            throw ValueError("grad: tensor does not require grad");
        Tensor g(t.shape, 0.0);
        if (t.tape == tape && t.node >= 0 && static_cast<std::size_t>(t.node) < adj.size() &&
            !adj[static_cast<std::size_t>(t.node)].empty())
            g.data = adj[static_cast<std::size_t>(t.node)];
        return g;
    }
};

namespace detail {

inline Tape* result_tape(const Tensor& a, const Tensor& b) {
    if (a.on_tape() && b.on_tape() && a.tape != b.tape)
        throw ValueError("op: inputs recorded on different tapes");
    if (a.on_tape()) return a.tape;
    if (b.on_tape()) return b.tape;
    return nullptr;
}

inline Tensor finish(Tensor out, Op op, const Tensor& a, const Tensor& b, Tape* tape,
                     double c = 0.0, std::vector<double> saved = {}) {
    if (tape) {
        Tape::Node n;
        n.op = op;
        n.pa = (a.tape == tape) ? a.node : -1;
        n.pb = (b.tape == tape) ? b.node : -1;
        n.va = a.detach();
        n.vb = b.detach();
        n.out_shape = out.shape;
        n.c = c;
        n.out = std::move(saved);
        out.node = tape->record(std::move(n));
        out.tape = tape;
        out.requires_grad = true;
    }
    return out;
}

inline Tensor finish1(Tensor out, Op op, const Tensor& a, double c = 0.0,
                      std::vector<double> saved = {}) {
    Tape* tape = a.on_tape() ? a.tape : nullptr;
    static const Tensor none;
    return finish(std::move(out), op, a, none, tape, c, std::move(saved));
}

template <class F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* what, F f) {
    Bcast k = broadcast_kind(a.shape, b.shape, what);
    if (k == Bcast::none) {
        Tensor out(a.shape);
        for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
        return out;
    }
    const Tensor& big = (k == Bcast::a_batched) ? a : b;
    const Tensor& small = (k == Bcast::a_batched) ? b : a;
    Tensor out(big.shape);
    std::size_t inner = small.data.size();
    std::size_t batch = big.shape[0];
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t i = 0; i < inner; ++i) {
            std::size_t idx = r * inner + i;
            double av = (k == Bcast::a_batched) ? a.data[idx] : a.data[i];
            double bv = (k == Bcast::a_batched) ? b.data[i] : b.data[idx];
            out.data[idx] = f(av, bv);
        }
    return out;
}

// Reduce an adjoint of shape big down to shape small (sum over the leading extent).
inline std::vector<double> reduce_to(const std::vector<double>& g, const Shape& big,
                                     const Shape& small) {
    if (big == small) return g;
    std::size_t inner = numel(small);
    std::size_t batch = big[0];
    std::vector<double> out(inner, 0.0);
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t i = 0; i < inner; ++i) out[i] += g[r * inner + i];
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = detail::broadcast_binary(a, b, "add", [](double x, double y) { return x + y; });
    return detail::finish(std::move(out), Op::add, a, b, detail::result_tape(a, b));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    Tensor out = detail::broadcast_binary(a, b, "sub", [](double x, double y) { return x - y; });
    return detail::finish(std::move(out), Op::sub, a, b, detail::result_tape(a, b));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    Tensor out = detail::broadcast_binary(a, b, "mul", [](double x, double y) { return x * y; });
    return detail::finish(std::move(out), Op::mul, a, b, detail::result_tape(a, b));
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = c * a.data[i];
    return detail::finish1(std::move(out), Op::scale, a, c);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    auto d = detail::matmul_dims(a.shape, b.shape);
    Tensor out(detail::matmul_out_shape(d));
    detail::gemm(a.data.data(), b.data.data(), out.data.data(), d.m, d.k, d.n, false);
    return detail::finish(std::move(out), Op::matmul, a, b, detail::result_tape(a, b));
}

inline Tensor sin(const Tensor& a) {
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = std::sin(a.data[i]);
    return detail::finish1(std::move(out), Op::sin_, a);
}

inline Tensor cos(const Tensor& a) {
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = std::cos(a.data[i]);
    return detail::finish1(std::move(out), Op::cos_, a);
}

inline Tensor tanh(const Tensor& a) {
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = std::tanh(a.data[i]);
    std::vector<double> saved = out.data;
    return detail::finish1(std::move(out), Op::tanh_, a, 0.0, std::move(saved));
}

inline Tensor relu(const Tensor& a) {
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
    return detail::finish1(std::move(out), Op::relu, a);
}

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data) acc += v;
    return detail::finish1(Tensor::scalar(acc), Op::sum, a);
}

inline Tensor mean(const Tensor& a) {
    if (a.data.empty()) throw ShapeError("mean: empty tensor");
    double acc = 0.0;
    for (double v : a.data) acc += v;
    return detail::finish1(Tensor::scalar(acc / static_cast<double>(a.data.size())), Op::mean, a);
}

inline Tensor squared_l2(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data) acc += v * v;
    return detail::finish1(Tensor::scalar(acc), Op::squared_l2, a);
}

/// Reverse pass over the recorded tape. `loss` must be a scalar output of
/// `tape`. Every watched leaf not reached by the sweep reads back as zeros.
inline Gradients backward(const Tensor& loss, const Tape& tape) {
    if (loss.data.size() != 1)
        throw ValueError("backward: loss must be scalar, got shape " + shape_str(loss.shape));
    if (loss.tape != &tape || loss.node < 0)
        throw ValueError("backward: loss was not recorded on this tape");

    Gradients g;
    g.tape = &tape;
    g.adj.assign(tape.size(), {});
    auto ensure = [&](int id, const Shape& s) -> std::vector<double>& {
        auto& v = g.adj[static_cast<std::size_t>(id)];
        if (v.empty()) v.assign(numel(s), 0.0);
        return v;
    };
    ensure(loss.node, loss.shape)[0] = 1.0;

    for (int id = loss.node; id >= 0; --id) {
        const auto& n = tape.node(id);
        const auto& gout = g.adj[static_cast<std::size_t>(id)];
        if (gout.empty() || n.op == Op::leaf) continue;

        auto accum_a = [&](auto&& fn) {
            if (n.pa < 0) return;
            auto& ga = ensure(n.pa, n.va.shape);
            fn(ga);
        };
        auto accum_b = [&](auto&& fn) {
            if (n.pb < 0) return;
            auto& gb = ensure(n.pb, n.vb.shape);
            fn(gb);
        };

        switch (n.op) {
            case Op::add:
                accum_a([&](std::vector<double>& ga) {
                    auto r = detail::reduce_to(gout, n.out_shape, n.va.shape);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += r[i];
                });
                accum_b([&](std::vector<double>& gb) {
                    auto r = detail::reduce_to(gout, n.out_shape, n.vb.shape);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += r[i];
                });
                break;
            case Op::sub:
                accum_a([&](std::vector<double>& ga) {
                    auto r = detail::reduce_to(gout, n.out_shape, n.va.shape);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += r[i];
                });
                accum_b([&](std::vector<double>& gb) {
                    auto r = detail::reduce_to(gout, n.out_shape, n.vb.shape);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= r[i];
                });
                break;
            case Op::mul: {
                accum_a([&](std::vector<double>& ga) {
                    std::vector<double> t(gout.size());
                    std::size_t inner_b = n.vb.data.size();
                    for (std::size_t i = 0; i < gout.size(); ++i)
                        t[i] = gout[i] * n.vb.data[n.vb.shape == n.out_shape ? i : i % inner_b];
                    auto r = detail::reduce_to(t, n.out_shape, n.va.shape);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += r[i];
                });
                accum_b([&](std::vector<double>& gb) {
                    std::vector<double> t(gout.size());
                    std::size_t inner_a = n.va.data.size();
                    for (std::size_t i = 0; i < gout.size(); ++i)
                        t[i] = gout[i] * n.va.data[n.va.shape == n.out_shape ? i : i % inner_a];
                    auto r = detail::reduce_to(t, n.out_shape, n.vb.shape);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += r[i];
                });
                break;
            }
            case Op::scale:
                accum_a([&](std::vector<double>& ga) {
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.c * gout[i];
                });
                break;
            case Op::matmul: {
                auto d = detail::matmul_dims(n.va.shape, n.vb.shape);
                // gA += G * B^T ; gB += A^T * G, with G shaped (m,n)
                accum_a([&](std::vector<double>& ga) {
                    detail::gemm_bt(gout.data(), n.vb.data.data(), ga.data(), d.m, d.n, d.k);
                });
                accum_b([&](std::vector<double>& gb) {
                    detail::gemm_at(n.va.data.data(), gout.data(), gb.data(), d.m, d.k, d.n);
                });
                break;
            }
            case Op::sin_:
                accum_a([&](std::vector<double>& ga) {
                    for (std::size_t i = 0; i < ga.size(); ++i)
                        ga[i] += gout[i] * std::cos(n.va.data[i]);
                });
                break;
            case Op::cos_:
                accum_a([&](std::vector<double>& ga) {
                    for (std::size_t i = 0; i < ga.size(); ++i)
                        ga[i] -= gout[i] * std::sin(n.va.data[i]);
                });
                break;
            case Op::tanh_:
                accum_a([&](std::vector<double>& ga) {
                    for (std::size_t i = 0; i < ga.size(); ++i)
                        ga[i] += gout[i] * (1.0 - n.out[i] * n.out[i]);
                });
                break;
            case Op::relu:
                // subgradient at 0 is 0
                accum_a([&](std::vector<double>& ga) {
                    for (std::size_t i = 0; i < ga.size(); ++i)
                        ga[i] += n.va.data[i] > 0.0 ? gout[i] : 0.0;
                });
                break;
            case Op::sum:
                accum_a([&](std::vector<double>& ga) {
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[0];
                });
                break;
            case Op::mean:
                accum_a([&](std::vector<double>& ga) {
                    double c = gout[0] / static_cast<double>(ga.size());
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c;
                });
                break;
            case Op::squared_l2:
                accum_a([&](std::vector<double>& ga) {
                    for (std::size_t i = 0; i < ga.size(); ++i)
                        ga[i] += 2.0 * gout[0] * n.va.data[i];
                });
                break;
            case Op::leaf:
                break;
        }
    }
    return g;
}

}  // namespace vdc
