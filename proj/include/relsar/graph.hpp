// Reverse-mode automatic differentiation over a define-by-run tape.
//
// A GraphT owns every tensor produced during one forward pass. Ops append a
// node holding the result value, parent indices and a backward closure that
// scatters the node's gradient into its parents. backward(loss) marks the
// subgraph reachable from the loss and visits each marked node exactly once
// in reverse creation order, which is a reverse topological order by
// construction. Leaves that do not feed the loss keep an exactly-zero
// gradient accumulator.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "relsar/rng.hpp"
#include "relsar/tensor.hpp"

namespace relsar {

struct GraphError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Persistent batch-normalization statistics. They live outside the graph in
// the owning parameter set; the batchnorm op reads them in eval mode and
// updates them in training mode when update_running is set.
template <typename S>
struct BnStatsT {
    TensorT<S> running_mean;
    TensorT<S> running_var;
};

enum class ForwardMode { Train, Eval };

template <typename S>
class GraphT {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    // ---- graph construction -------------------------------------------

    Var leaf(TensorT<S> value, bool requires_grad = true) {
        return push(std::move(value), {}, nullptr, requires_grad);
    }

    Var constant(TensorT<S> value) { return leaf(std::move(value), false); }

    const TensorT<S>& value(Var v) const { return node(v).value; }

    const TensorT<S>& grad(Var v) const {
        const NodeRec& n = node(v);
        if (n.grad.numel() == 0) {
            // Never touched by backward: exactly zero by contract.
            zero_like_.shape = n.value.shape;
            zero_like_.data.assign(n.value.data.size(), S(0));
            return zero_like_;
        }
        return n.grad;
    }

    void zero_grad() {
        for (auto& n : nodes_) n.grad = TensorT<S>();
    }

    size_t size() const { return nodes_.size(); }

    // ---- elementwise and arithmetic ------------------------------------

    Var add(Var a, Var b) {
        check_same_shape(a, b, "add");
        TensorT<S> out = value(a);
        const auto& bv = value(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
        return push(std::move(out), {a, b}, [](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            g.accumulate(g.nodes_[id].parents[0], dy);
            g.accumulate(g.nodes_[id].parents[1], dy);
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape(a, b, "sub");
        TensorT<S> out = value(a);
        const auto& bv = value(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv[i];
        return push(std::move(out), {a, b}, [](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            g.accumulate(g.nodes_[id].parents[0], dy);
            auto& db = g.grad_buf(g.nodes_[id].parents[1]);
            for (size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
        });
    }

    Var mul(Var a, Var b) {
        check_same_shape(a, b, "mul");
        TensorT<S> out = value(a);
        const auto& bv = value(b).data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
        return push(std::move(out), {a, b}, [](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& av = g.nodes_[g.nodes_[id].parents[0].id].value.data;
            const auto& bv2 = g.nodes_[g.nodes_[id].parents[1].id].value.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            auto& db = g.grad_buf(g.nodes_[id].parents[1]);
            for (size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i] * bv2[i];
                db[i] += dy[i] * av[i];
            }
        });
    }

    Var scale(Var a, S c) {
        TensorT<S> out = value(a);
        for (auto& v : out.data) v *= c;
        return push(std::move(out), {a}, [c](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (size_t i = 0; i < dy.size(); ++i) da[i] += c * dy[i];
        });
    }

    Var add_scalar(Var a, S c) {
        TensorT<S> out = value(a);
        for (auto& v : out.data) v += c;
        return push(std::move(out), {a}, [](GraphT& g, int id) {
            g.accumulate(g.nodes_[id].parents[0], g.nodes_[id].grad.data);
        });
    }

    // a + b where b's shape is a suffix of a's shape (bias over the last
    // axis, positional embeddings over the trailing two axes, ...).
    Var add_suffix(Var a, Var b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (bv.rank() > av.rank())
            throw DimensionError("add_suffix: rhs rank exceeds lhs rank");
        for (int i = 0; i < bv.rank(); ++i) {
            if (bv.shape[bv.rank() - 1 - i] != av.shape[av.rank() - 1 - i])
                throw DimensionError("add_suffix: shape " + shape_str(bv.shape) +
                                     " is not a suffix of " + shape_str(av.shape));
        }
        const int64_t inner = bv.numel();
        TensorT<S> out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i % inner];
        return push(std::move(out), {a, b}, [inner](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            auto& db = g.grad_buf(g.nodes_[id].parents[1]);
            for (size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i];
                db[i % inner] += dy[i];
            }
        });
    }

    // ---- shape ----------------------------------------------------------

    Var reshape(Var a, Shape new_shape) {
        const auto& av = value(a);
        if (shape_numel(new_shape) != av.numel())
            throw DimensionError("reshape: cannot view " + shape_str(av.shape) + " as " + shape_str(new_shape));
        TensorT<S> out;
        out.shape = std::move(new_shape);
        out.data = av.data;
        return push(std::move(out), {a}, [](GraphT& g, int id) {
            g.accumulate(g.nodes_[id].parents[0], g.nodes_[id].grad.data);
        });
    }

    Var permute(Var a, std::vector<int> perm) {
        const auto& av = value(a);
        if (static_cast<int>(perm.size()) != av.rank())
            throw DimensionError("permute: axis list must match rank");
        TensorT<S> out = permuted(av, perm);
        std::vector<int> inv(perm.size());
        for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
        return push(std::move(out), {a}, [inv](GraphT& g, int id) {
            TensorT<S> dback = permuted(g.nodes_[id].grad, inv);
            g.accumulate(g.nodes_[id].parents[0], dback.data);
        });
    }

    // Prepend a learned token to every sequence in the batch:
    // tokens [B,N,D] + tok [D] -> [B,N+1,D].
    Var prepend_token(Var tokens, Var tok) {
        const auto& tv = value(tokens);
        const auto& cv = value(tok);
        if (tv.rank() != 3 || cv.rank() != 1 || cv.shape[0] != tv.shape[2])
            throw DimensionError("prepend_token: want [B,N,D] and [D]");
        const int64_t B = tv.shape[0], N = tv.shape[1], D = tv.shape[2];
        TensorT<S> out(Shape{B, N + 1, D});
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t d = 0; d < D; ++d) out(b, 0, d) = cv(d);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t d = 0; d < D; ++d) out(b, n + 1, d) = tv(b, n, d);
        }
        return push(std::move(out), {tokens, tok}, [B, N, D](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad;
            auto& dt = g.grad_buf(g.nodes_[id].parents[0]);
            auto& dc = g.grad_buf(g.nodes_[id].parents[1]);
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t d = 0; d < D; ++d) dc[static_cast<size_t>(d)] += dy(b, 0, d);
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t d = 0; d < D; ++d)
                        dt[static_cast<size_t>((b * N + n) * D + d)] += dy(b, n + 1, d);
            }
        });
    }

    // Select one position along axis 1: [B,N,D] -> [B,D].
    Var select_token(Var a, int64_t index) {
        const auto& av = value(a);
        if (av.rank() != 3 || index < 0 || index >= av.shape[1])
            throw DimensionError("select_token: index out of range");
        const int64_t B = av.shape[0], N = av.shape[1], D = av.shape[2];
        TensorT<S> out(Shape{B, D});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t d = 0; d < D; ++d) out(b, d) = av(b, index, d);
        return push(std::move(out), {a}, [B, N, D, index](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t d = 0; d < D; ++d)
                    da[static_cast<size_t>((b * N + index) * D + d)] += dy(b, d);
        });
    }

    // ---- linear algebra -------------------------------------------------

    Var matmul(Var a, Var b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (av.rank() != 2 || bv.rank() != 2)
            throw DimensionError("matmul: expected rank-2 operands");
        if (av.shape[1] != bv.shape[0])
            throw DimensionError("matmul: inner extents " + shape_str(av.shape) + " x " + shape_str(bv.shape));
        const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
        TensorT<S> out(Shape{m, n});
        gemm(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
        return push(std::move(out), {a, b}, [m, k, n](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& A = g.nodes_[g.nodes_[id].parents[0].id].value.data;
            const auto& B = g.nodes_[g.nodes_[id].parents[1].id].value.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            auto& db = g.grad_buf(g.nodes_[id].parents[1]);
            // dA += dY * B^T ; dB += A^T * dY
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    const S d = dy[static_cast<size_t>(i * n + j)];
                    if (d == S(0)) continue;
                    for (int64_t p = 0; p < k; ++p)
                        da[static_cast<size_t>(i * k + p)] += d * B[static_cast<size_t>(p * n + j)];
                }
            for (int64_t p = 0; p < k; ++p)
                for (int64_t i = 0; i < m; ++i) {
                    const S av2 = A[static_cast<size_t>(i * k + p)];
                    if (av2 == S(0)) continue;
                    for (int64_t j = 0; j < n; ++j)
                        db[static_cast<size_t>(p * n + j)] += av2 * dy[static_cast<size_t>(i * n + j)];
                }
        });
    }

    // Batched matmul: [G,m,k] x [G,k,n] -> [G,m,n].
    Var bmm(Var a, Var b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (av.rank() != 3 || bv.rank() != 3 || av.shape[0] != bv.shape[0] || av.shape[2] != bv.shape[1])
            throw DimensionError("bmm: shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
        const int64_t G = av.shape[0], m = av.shape[1], k = av.shape[2], n = bv.shape[2];
        TensorT<S> out(Shape{G, m, n});
        for (int64_t gidx = 0; gidx < G; ++gidx)
            gemm(av.data.data() + gidx * m * k, bv.data.data() + gidx * k * n,
                 out.data.data() + gidx * m * n, m, k, n);
        return push(std::move(out), {a, b}, [G, m, k, n](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& A = g.nodes_[g.nodes_[id].parents[0].id].value.data;
            const auto& B = g.nodes_[g.nodes_[id].parents[1].id].value.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            auto& db = g.grad_buf(g.nodes_[id].parents[1]);
            for (int64_t gi = 0; gi < G; ++gi) {
                const S* dyg = dy.data() + gi * m * n;
                const S* Ag = A.data() + gi * m * k;
                const S* Bg = B.data() + gi * k * n;
                S* dag = da.data() + gi * m * k;
                S* dbg = db.data() + gi * k * n;
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) {
                        const S d = dyg[i * n + j];
                        if (d == S(0)) continue;
                        for (int64_t p = 0; p < k; ++p) dag[i * k + p] += d * Bg[p * n + j];
                    }
                for (int64_t p = 0; p < k; ++p)
                    for (int64_t i = 0; i < m; ++i) {
                        const S av2 = Ag[i * k + p];
                        if (av2 == S(0)) continue;
                        for (int64_t j = 0; j < n; ++j) dbg[p * n + j] += av2 * dyg[i * n + j];
                    }
            }
        });
    }

    // ---- reductions -------------------------------------------------------

    Var sum(Var a) {
        const auto& av = value(a);
        S acc = S(0);
        for (S v : av.data) acc += v;
        TensorT<S> out(Shape{1});
        out(0) = acc;
        return push(std::move(out), {a}, [](GraphT& g, int id) {
            const S d = g.nodes_[id].grad(0);
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (auto& v : da) v += d;
        });
    }

    Var mean(Var a) {
        const auto& av = value(a);
        const S inv = S(1) / static_cast<S>(av.numel());
        S acc = S(0);
        for (S v : av.data) acc += v;
        TensorT<S> out(Shape{1});
        out(0) = acc * inv;
        return push(std::move(out), {a}, [inv](GraphT& g, int id) {
            const S d = g.nodes_[id].grad(0) * inv;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (auto& v : da) v += d;
        });
    }

    // Sum over the last axis: [..., D] -> [...].
    Var sum_last(Var a) {
        const auto& av = value(a);
        if (av.rank() < 1) throw DimensionError("sum_last: rank-0 input");
        const int64_t D = av.shape.back();
        const int64_t rows = av.numel() / D;
        Shape out_shape(av.shape.begin(), av.shape.end() - 1);
        if (out_shape.empty()) out_shape = {1};
        TensorT<S> out(out_shape);
        for (int64_t r = 0; r < rows; ++r) {
            S acc = S(0);
            for (int64_t d = 0; d < D; ++d) acc += av.data[static_cast<size_t>(r * D + d)];
            out.data[static_cast<size_t>(r)] = acc;
        }
        return push(std::move(out), {a}, [rows, D](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t d = 0; d < D; ++d) da[static_cast<size_t>(r * D + d)] += dy[static_cast<size_t>(r)];
        });
    }

    // ---- nonlinearities and normalizations --------------------------------

    Var selu(Var a) {
        TensorT<S> out = value(a);
        for (auto& v : out.data)
            v = v > S(0) ? kSeluLambda * v : kSeluLambda * kSeluAlpha * (std::exp(v) - S(1));
        return push(std::move(out), {a}, [](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& x = g.nodes_[g.nodes_[id].parents[0].id].value.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (size_t i = 0; i < dy.size(); ++i) {
                const S d = x[i] > S(0) ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x[i]);
                da[i] += dy[i] * d;
            }
        });
    }

    Var gelu(Var a) {
        TensorT<S> out = value(a);
        for (auto& v : out.data) v = gelu_scalar(v);
        return push(std::move(out), {a}, [](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& x = g.nodes_[g.nodes_[id].parents[0].id].value.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * gelu_grad_scalar(x[i]);
        });
    }

    Var softmax_last(Var a) {
        const auto& av = value(a);
        const int64_t D = av.shape.back();
        const int64_t rows = av.numel() / D;
        TensorT<S> out = av;
        for (int64_t r = 0; r < rows; ++r) softmax_row(out.data.data() + r * D, D);
        return push(std::move(out), {a}, [rows, D](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& y = g.nodes_[id].value.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (int64_t r = 0; r < rows; ++r) {
                const S* yr = y.data() + r * D;
                const S* dr = dy.data() + r * D;
                S dot = S(0);
                for (int64_t d = 0; d < D; ++d) dot += yr[d] * dr[d];
                for (int64_t d = 0; d < D; ++d)
                    da[static_cast<size_t>(r * D + d)] += yr[d] * (dr[d] - dot);
            }
        });
    }

    Var log_softmax_last(Var a) {
        const auto& av = value(a);
        const int64_t D = av.shape.back();
        const int64_t rows = av.numel() / D;
        TensorT<S> out = av;
        for (int64_t r = 0; r < rows; ++r) {
            S* x = out.data.data() + r * D;
            S mx = x[0];
            for (int64_t d = 1; d < D; ++d) mx = std::max(mx, x[d]);
            S lse = S(0);
            for (int64_t d = 0; d < D; ++d) lse += std::exp(x[d] - mx);
            lse = mx + std::log(lse);
            for (int64_t d = 0; d < D; ++d) x[d] -= lse;
        }
        return push(std::move(out), {a}, [rows, D](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& y = g.nodes_[id].value.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (int64_t r = 0; r < rows; ++r) {
                S tot = S(0);
                for (int64_t d = 0; d < D; ++d) tot += dy[static_cast<size_t>(r * D + d)];
                for (int64_t d = 0; d < D; ++d)
                    da[static_cast<size_t>(r * D + d)] +=
                        dy[static_cast<size_t>(r * D + d)] - std::exp(y[static_cast<size_t>(r * D + d)]) * tot;
            }
        });
    }

    // Unit L2 norm along the last axis, eps-guarded under the square root.
    Var l2_normalize_last(Var a, S eps = S(1e-12)) {
        const auto& av = value(a);
        const int64_t D = av.shape.back();
        const int64_t rows = av.numel() / D;
        TensorT<S> out = av;
        std::vector<S> norms(static_cast<size_t>(rows));
        for (int64_t r = 0; r < rows; ++r) {
            S* x = out.data.data() + r * D;
            S sq = S(0);
            for (int64_t d = 0; d < D; ++d) sq += x[d] * x[d];
            const S n = std::sqrt(sq + eps);
            norms[static_cast<size_t>(r)] = n;
            for (int64_t d = 0; d < D; ++d) x[d] /= n;
        }
        return push(std::move(out), {a}, [rows, D, norms](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& x = g.nodes_[g.nodes_[id].parents[0].id].value.data;
            auto& da = g.grad_buf(g.nodes_[id].parents[0]);
            for (int64_t r = 0; r < rows; ++r) {
                const S n = norms[static_cast<size_t>(r)];
                const S* xr = x.data() + r * D;
                const S* dr = dy.data() + r * D;
                S dot = S(0);
                for (int64_t d = 0; d < D; ++d) dot += dr[d] * xr[d];
                const S n3 = n * n * n;
                for (int64_t d = 0; d < D; ++d)
                    da[static_cast<size_t>(r * D + d)] += dr[d] / n - xr[d] * dot / n3;
            }
        });
    }

    // ---- structured layers -------------------------------------------------

    // 1D convolution over time with "same" zero padding.
    // x [B,T,Cin], w [K,Cin,Cout], bias [Cout] -> [B,T,Cout].
    Var conv1d(Var x, Var w, Var bias) {
        const auto& xv = value(x);
        const auto& wv = value(w);
        const auto& bv = value(bias);
        if (xv.rank() != 3 || wv.rank() != 3 || bv.rank() != 1)
            throw DimensionError("conv1d: want x[B,T,Cin], w[K,Cin,Cout], b[Cout]");
        if (xv.shape[2] != wv.shape[1] || wv.shape[2] != bv.shape[0])
            throw DimensionError("conv1d: channel mismatch " + shape_str(xv.shape) + " vs " + shape_str(wv.shape));
        const int64_t B = xv.shape[0], T = xv.shape[1], Cin = xv.shape[2];
        const int64_t K = wv.shape[0], Cout = wv.shape[2];
        const int64_t pad = (K - 1) / 2;
        TensorT<S> out(Shape{B, T, Cout});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < T; ++t) {
                S* o = out.data.data() + (b * T + t) * Cout;
                for (int64_t co = 0; co < Cout; ++co) o[co] = bv(co);
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t src = t + k - pad;
                    if (src < 0 || src >= T) continue;
                    const S* xi = xv.data.data() + (b * T + src) * Cin;
                    const S* wk = wv.data.data() + k * Cin * Cout;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        const S xvv = xi[ci];
                        if (xvv == S(0)) continue;
                        const S* wr = wk + ci * Cout;
                        for (int64_t co = 0; co < Cout; ++co) o[co] += xvv * wr[co];
                    }
                }
            }
        return push(std::move(out), {x, w, bias}, [B, T, Cin, K, Cout, pad](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& xv2 = g.nodes_[g.nodes_[id].parents[0].id].value.data;
            const auto& wv2 = g.nodes_[g.nodes_[id].parents[1].id].value.data;
            auto& dx = g.grad_buf(g.nodes_[id].parents[0]);
            auto& dw = g.grad_buf(g.nodes_[id].parents[1]);
            auto& db = g.grad_buf(g.nodes_[id].parents[2]);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t t = 0; t < T; ++t) {
                    const S* dyr = dy.data() + (b * T + t) * Cout;
                    for (int64_t co = 0; co < Cout; ++co) db[static_cast<size_t>(co)] += dyr[co];
                    for (int64_t k = 0; k < K; ++k) {
                        const int64_t src = t + k - pad;
                        if (src < 0 || src >= T) continue;
                        const S* xi = xv2.data() + (b * T + src) * Cin;
                        S* dxi = dx.data() + (b * T + src) * Cin;
                        const S* wk = wv2.data() + k * Cin * Cout;
                        S* dwk = dw.data() + k * Cin * Cout;
                        for (int64_t ci = 0; ci < Cin; ++ci) {
                            const S* wr = wk + ci * Cout;
                            S* dwr = dwk + ci * Cout;
                            S acc = S(0);
                            const S xvv = xi[ci];
                            for (int64_t co = 0; co < Cout; ++co) {
                                acc += dyr[co] * wr[co];
                                dwr[co] += dyr[co] * xvv;
                            }
                            dxi[ci] += acc;
                        }
                    }
                }
        });
    }

    // Max pooling over time. x [B,T,C] -> [B, (T-size)/stride + 1, C].
    Var maxpool1d(Var x, int64_t size = 2, int64_t stride = 2) {
        const auto& xv = value(x);
        if (xv.rank() != 3) throw DimensionError("maxpool1d: want [B,T,C]");
        const int64_t B = xv.shape[0], T = xv.shape[1], C = xv.shape[2];
        if (T < size)
            throw DimensionError("maxpool1d: temporal length " + std::to_string(T) +
                                 " shorter than pool size " + std::to_string(size));
        const int64_t To = (T - size) / stride + 1;
        TensorT<S> out(Shape{B, To, C});
        auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * To * C));
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < To; ++t)
                for (int64_t c = 0; c < C; ++c) {
                    int64_t best = t * stride;
                    S bv = xv(b, best, c);
                    for (int64_t k = 1; k < size; ++k) {
                        const S v = xv(b, t * stride + k, c);
                        if (v > bv) {
                            bv = v;
                            best = t * stride + k;
                        }
                    }
                    out(b, t, c) = bv;
                    (*argmax)[static_cast<size_t>((b * To + t) * C + c)] = best;
                }
        return push(std::move(out), {x}, [B, To, T, C, argmax](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            auto& dx = g.grad_buf(g.nodes_[id].parents[0]);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t t = 0; t < To; ++t)
                    for (int64_t c = 0; c < C; ++c) {
                        const int64_t src = (*argmax)[static_cast<size_t>((b * To + t) * C + c)];
                        dx[static_cast<size_t>((b * T + src) * C + c)] += dy[static_cast<size_t>((b * To + t) * C + c)];
                    }
        });
    }

    // Batch normalization over every axis except the last (channel) axis.
    // Training mode normalizes with batch statistics; eval mode uses the
    // running statistics stored in `stats`. Running stats are updated only
    // when training && update_running.
    Var batchnorm(Var x, Var gamma, Var beta, BnStatsT<S>* stats, bool training,
                  bool update_running = true, S momentum = S(0.1), S eps = S(1e-5)) {
        const auto& xv = value(x);
        const int64_t C = xv.shape.back();
        const int64_t rows = xv.numel() / C;
        if (value(gamma).numel() != C || value(beta).numel() != C)
            throw DimensionError("batchnorm: affine parameters must have C extents");
        std::vector<S> mu(static_cast<size_t>(C), S(0)), var(static_cast<size_t>(C), S(0));
        if (training) {
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < C; ++c) mu[static_cast<size_t>(c)] += xv.data[static_cast<size_t>(r * C + c)];
            for (auto& v : mu) v /= static_cast<S>(rows);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < C; ++c) {
                    const S d = xv.data[static_cast<size_t>(r * C + c)] - mu[static_cast<size_t>(c)];
                    var[static_cast<size_t>(c)] += d * d;
                }
            for (auto& v : var) v /= static_cast<S>(rows);
            if (update_running && stats) {
                for (int64_t c = 0; c < C; ++c) {
                    auto ci = static_cast<size_t>(c);
                    stats->running_mean.data[ci] = (S(1) - momentum) * stats->running_mean.data[ci] + momentum * mu[ci];
                    stats->running_var.data[ci] = (S(1) - momentum) * stats->running_var.data[ci] + momentum * var[ci];
                }
            }
        } else {
            if (!stats) throw GraphError("batchnorm: eval mode requires running statistics");
            for (int64_t c = 0; c < C; ++c) {
                mu[static_cast<size_t>(c)] = stats->running_mean.data[static_cast<size_t>(c)];
                var[static_cast<size_t>(c)] = stats->running_var.data[static_cast<size_t>(c)];
            }
        }
        TensorT<S> out = xv;
        std::vector<S> inv_std(static_cast<size_t>(C));
        for (int64_t c = 0; c < C; ++c)
            inv_std[static_cast<size_t>(c)] = S(1) / std::sqrt(var[static_cast<size_t>(c)] + eps);
        const auto& gv = value(gamma).data;
        const auto& betav = value(beta).data;
        auto xhat = std::make_shared<std::vector<S>>(xv.data.size());
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < C; ++c) {
                const size_t i = static_cast<size_t>(r * C + c);
                const size_t ci = static_cast<size_t>(c);
                (*xhat)[i] = (xv.data[i] - mu[ci]) * inv_std[ci];
                out.data[i] = gv[ci] * (*xhat)[i] + betav[ci];
            }
        return push(std::move(out), {x, gamma, beta},
                    [rows, C, inv_std, xhat, training](GraphT& g, int id) {
                        const auto& dy = g.nodes_[id].grad.data;
                        const auto& gv2 = g.nodes_[g.nodes_[id].parents[1].id].value.data;
                        auto& dx = g.grad_buf(g.nodes_[id].parents[0]);
                        auto& dg = g.grad_buf(g.nodes_[id].parents[1]);
                        auto& db = g.grad_buf(g.nodes_[id].parents[2]);
                        const S N = static_cast<S>(rows);
                        for (int64_t c = 0; c < C; ++c) {
                            const size_t ci = static_cast<size_t>(c);
                            S sum_dy = S(0), sum_dy_xhat = S(0);
                            for (int64_t r = 0; r < rows; ++r) {
                                const size_t i = static_cast<size_t>(r * C + c);
                                sum_dy += dy[i];
                                sum_dy_xhat += dy[i] * (*xhat)[i];
                            }
                            dg[ci] += sum_dy_xhat;
                            db[ci] += sum_dy;
                            if (training) {
                                for (int64_t r = 0; r < rows; ++r) {
                                    const size_t i = static_cast<size_t>(r * C + c);
                                    dx[i] += gv2[ci] * inv_std[ci] *
                                             (dy[i] - sum_dy / N - (*xhat)[i] * sum_dy_xhat / N);
                                }
                            } else {
                                for (int64_t r = 0; r < rows; ++r) {
                                    const size_t i = static_cast<size_t>(r * C + c);
                                    dx[i] += gv2[ci] * inv_std[ci] * dy[i];
                                }
                            }
                        }
                    });
    }

    // Layer normalization over the last axis with affine parameters.
    Var layernorm(Var x, Var gamma, Var beta, S eps = S(1e-5)) {
        const auto& xv = value(x);
        const int64_t D = xv.shape.back();
        const int64_t rows = xv.numel() / D;
        if (value(gamma).numel() != D || value(beta).numel() != D)
            throw DimensionError("layernorm: affine parameters must have D extents");
        TensorT<S> out = xv;
        auto xhat = std::make_shared<std::vector<S>>(xv.data.size());
        std::vector<S> inv_std(static_cast<size_t>(rows));
        const auto& gv = value(gamma).data;
        const auto& bv = value(beta).data;
        for (int64_t r = 0; r < rows; ++r) {
            const S* xr = xv.data.data() + r * D;
            S mu = S(0);
            for (int64_t d = 0; d < D; ++d) mu += xr[d];
            mu /= static_cast<S>(D);
            S var = S(0);
            for (int64_t d = 0; d < D; ++d) var += (xr[d] - mu) * (xr[d] - mu);
            var /= static_cast<S>(D);
            const S is = S(1) / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(r)] = is;
            for (int64_t d = 0; d < D; ++d) {
                const size_t i = static_cast<size_t>(r * D + d);
                (*xhat)[i] = (xr[d] - mu) * is;
                out.data[i] = gv[static_cast<size_t>(d)] * (*xhat)[i] + bv[static_cast<size_t>(d)];
            }
        }
        return push(std::move(out), {x, gamma, beta}, [rows, D, inv_std, xhat](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            const auto& gv2 = g.nodes_[g.nodes_[id].parents[1].id].value.data;
            auto& dx = g.grad_buf(g.nodes_[id].parents[0]);
            auto& dg = g.grad_buf(g.nodes_[id].parents[1]);
            auto& db = g.grad_buf(g.nodes_[id].parents[2]);
            for (int64_t r = 0; r < rows; ++r) {
                S sum_g = S(0), sum_gx = S(0);
                for (int64_t d = 0; d < D; ++d) {
                    const size_t i = static_cast<size_t>(r * D + d);
                    const S gd = dy[i] * gv2[static_cast<size_t>(d)];
                    sum_g += gd;
                    sum_gx += gd * (*xhat)[i];
                    dg[static_cast<size_t>(d)] += dy[i] * (*xhat)[i];
                    db[static_cast<size_t>(d)] += dy[i];
                }
                const S Dn = static_cast<S>(D);
                for (int64_t d = 0; d < D; ++d) {
                    const size_t i = static_cast<size_t>(r * D + d);
                    const S gd = dy[i] * gv2[static_cast<size_t>(d)];
                    dx[i] += inv_std[static_cast<size_t>(r)] * (gd - sum_g / Dn - (*xhat)[i] * sum_gx / Dn);
                }
            }
        });
    }

    // Inverted dropout. rate == 0 is an exact identity and consumes no
    // randomness, which keeps eval-mode streams comparable across runs.
    Var dropout(Var x, S rate, Rng* rng) {
        if (rate == S(0)) return x;
        if (rate < S(0) || rate >= S(1)) throw GraphError("dropout: rate must be in [0,1)");
        if (!rng) throw GraphError("dropout: rng required when rate > 0");
        const auto& xv = value(x);
        auto mask = std::make_shared<std::vector<S>>(xv.data.size());
        const S keep = S(1) - rate;
        TensorT<S> out = xv;
        for (size_t i = 0; i < out.data.size(); ++i) {
            const S m = rng->uniform() < static_cast<double>(rate) ? S(0) : S(1) / keep;
            (*mask)[i] = m;
            out.data[i] *= m;
        }
        return push(std::move(out), {x}, [mask](GraphT& g, int id) {
            const auto& dy = g.nodes_[id].grad.data;
            auto& dx = g.grad_buf(g.nodes_[id].parents[0]);
            for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
        });
    }

    // Pass the value through, block the gradient. The node records no
    // parents, so backward traversal never reaches the producing subgraph.
    Var stop_gradient(Var a) {
        return push(value(a), {}, nullptr, false);
    }

    // ---- backward ----------------------------------------------------------

    void backward(Var loss) {
        const NodeRec& ln = node(loss);
        if (ln.value.numel() != 1)
            throw GraphError("backward: loss must be scalar, got " + shape_str(ln.value.shape));
        std::vector<char> marked(nodes_.size(), 0);
        marked[static_cast<size_t>(loss.id)] = 1;
        for (int i = loss.id; i >= 0; --i) {
            if (!marked[static_cast<size_t>(i)]) continue;
            for (Var p : nodes_[static_cast<size_t>(i)].parents) marked[static_cast<size_t>(p.id)] = 1;
        }
        grad_buf(loss)[0] = S(1);
        for (int i = loss.id; i >= 0; --i) {
            auto& n = nodes_[static_cast<size_t>(i)];
            if (!marked[static_cast<size_t>(i)] || !n.backward) continue;
            if (n.grad.numel() == 0) continue;
            n.backward(*this, i);
        }
    }

    // Scalar helpers shared with non-graph code.
    static S gelu_scalar(S x) {
        return S(0.5) * x * (S(1) + static_cast<S>(std::erf(static_cast<double>(x) * kInvSqrt2)));
    }
    static S gelu_grad_scalar(S x) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
        const double pdf = std::exp(-0.5 * xd * xd) * kInvSqrt2Pi;
        return static_cast<S>(cdf + xd * pdf);
    }

    static constexpr S kSeluAlpha = S(1.6732632423543772848170429916717);
    static constexpr S kSeluLambda = S(1.0507009873554804934193349852946);

private:
    struct NodeRec {
        TensorT<S> value;
        TensorT<S> grad;
        std::vector<Var> parents;
        std::function<void(GraphT&, int)> backward;
        bool requires_grad = true;
    };

    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;

    std::vector<NodeRec> nodes_;
    mutable TensorT<S> zero_like_;

    NodeRec& node(Var v) {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw GraphError("invalid graph variable");
        return nodes_[static_cast<size_t>(v.id)];
    }
    const NodeRec& node(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw GraphError("invalid graph variable");
        return nodes_[static_cast<size_t>(v.id)];
    }

    Var push(TensorT<S> value, std::vector<Var> parents, std::function<void(GraphT&, int)> backward,
             bool requires_grad = true) {
        NodeRec n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<S>& grad_buf(Var v) {
        NodeRec& n = node(v);
        if (n.grad.numel() == 0) {
            n.grad.shape = n.value.shape;
            n.grad.data.assign(n.value.data.size(), S(0));
        }
        return n.grad.data;
    }

    void accumulate(Var v, const std::vector<S>& dy) {
        auto& buf = grad_buf(v);
        for (size_t i = 0; i < dy.size(); ++i) buf[i] += dy[i];
    }

    void check_same_shape(Var a, Var b, const char* op) {
        if (!value(a).same_shape(value(b)))
            throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(value(a).shape) + " vs " +
                                 shape_str(value(b).shape));
    }

    static void softmax_row(S* x, int64_t D) {
        S mx = x[0];
        for (int64_t d = 1; d < D; ++d) mx = std::max(mx, x[d]);
        S sum = S(0);
        for (int64_t d = 0; d < D; ++d) {
            x[d] = std::exp(x[d] - mx);
            sum += x[d];
        }
        for (int64_t d = 0; d < D; ++d) x[d] /= sum;
    }

    static TensorT<S> permuted(const TensorT<S>& x, const std::vector<int>& perm) {
        const int r = x.rank();
        Shape out_shape(static_cast<size_t>(r));
        for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x.shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        TensorT<S> out(out_shape);
        std::vector<int64_t> in_strides(static_cast<size_t>(r), 1), out_strides(static_cast<size_t>(r), 1);
        for (int i = r - 2; i >= 0; --i)
            in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * x.shape[static_cast<size_t>(i + 1)];
        for (int i = r - 2; i >= 0; --i)
            out_strides[static_cast<size_t>(i)] = out_strides[static_cast<size_t>(i + 1)] * out_shape[static_cast<size_t>(i + 1)];
        std::vector<int64_t> idx(static_cast<size_t>(r), 0);
        for (int64_t flat = 0; flat < x.numel(); ++flat) {
            int64_t rem = flat;
            int64_t src = 0;
            for (int i = 0; i < r; ++i) {
                idx[static_cast<size_t>(i)] = rem / out_strides[static_cast<size_t>(i)];
                rem %= out_strides[static_cast<size_t>(i)];
                src += idx[static_cast<size_t>(i)] * in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
            }
            out.data[static_cast<size_t>(flat)] = x.data[static_cast<size_t>(src)];
        }
        return out;
    }

    static void gemm(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
        for (int64_t i = 0; i < m; ++i) {
            S* cr = c + i * n;
            std::fill(cr, cr + n, S(0));
            for (int64_t p = 0; p < k; ++p) {
                const S av = a[i * k + p];
                if (av == S(0)) continue;
                const S* br = b + p * n;
                for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
            }
        }
    }
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

} // namespace relsar
