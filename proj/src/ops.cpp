#include "omnisal/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace omnisal::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

Node& parent(Node& self, size_t i) { return *self.parents[i]; }

void require_rank(const Var& x, int64_t rank, const char* op) {
    if (static_cast<int64_t>(x.shape().size()) != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
    }
}

int64_t norm_axis(int64_t axis, int64_t rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
    return axis;
}

// ---------------------------------------------------------------- broadcasting

struct Broadcast {
    Shape out;
    std::vector<int64_t> stride_a, stride_b;
    bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    Broadcast plan;
    plan.same = a == b;
    const size_t r = a.size();
    plan.out.resize(r);
    for (size_t i = 0; i < r; ++i) {
        if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        plan.out[i] = std::max(a[i], b[i]);
    }
    plan.stride_a.assign(r, 0);
    plan.stride_b.assign(r, 0);
    int64_t sa = 1, sb = 1;
    for (size_t i = r; i-- > 0;) {
        plan.stride_a[i] = a[i] == 1 ? 0 : sa;
        plan.stride_b[i] = b[i] == 1 ? 0 : sb;
        sa *= a[i];
        sb *= b[i];
    }
    return plan;
}

// Calls fn(out_index, a_index, b_index) over the broadcast output.
template <typename Fn>
void for_each_broadcast(const Broadcast& plan, Fn&& fn) {
    const int64_t n = shape_numel(plan.out);
    if (plan.same) {
        for (int64_t i = 0; i < n; ++i) fn(i, i, i);
        return;
    }
    const size_t r = plan.out.size();
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += plan.stride_a[d];
            ib += plan.stride_b[d];
            if (idx[d] < plan.out[d]) break;
            ia -= plan.stride_a[d] * plan.out[d];
            ib -= plan.stride_b[d] * plan.out[d];
            idx[d] = 0;
        }
    }
}

template <typename Unary, typename Deriv>
Var unary(const Var& x, Unary f, Deriv df) {
    Tensor out(x.shape());
    const auto& in = x.value();
    for (int64_t i = 0; i < in.numel(); ++i) out[i] = f(in[i]);
    return make_result(std::move(out), {x}, [df](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
    });
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    auto plan = plan_broadcast(a.shape(), b.shape(), "add");
    Tensor out(plan.out);
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t ib) { out[i] = pa[ia] + pb[ib]; });
    return make_result(std::move(out), {a, b}, [plan](Node& self) {
        Node& na = parent(self, 0);
        Node& nb = parent(self, 1);
        double* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
        double* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
        for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t ib) {
            if (ga) ga[ia] += self.grad[i];
            if (gb) gb[ib] += self.grad[i];
        });
    });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
    auto plan = plan_broadcast(a.shape(), b.shape(), "mul");
    Tensor out(plan.out);
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t ib) { out[i] = pa[ia] * pb[ib]; });
    return make_result(std::move(out), {a, b}, [plan](Node& self) {
        Node& na = parent(self, 0);
        Node& nb = parent(self, 1);
        double* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
        double* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
        const double* va = na.value.data();
        const double* vb = nb.value.data();
        for_each_broadcast(plan, [&](int64_t i, int64_t ia, int64_t ib) {
            if (ga) ga[ia] += self.grad[i] * vb[ib];
            if (gb) gb[ib] += self.grad[i] * va[ia];
        });
    });
}

Var scale(const Var& a, double factor) {
    return unary(a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var relu(const Var& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v, double) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Var sigmoid(const Var& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------- layout

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_result(std::move(out), {x}, [](Node& self) {
        Node& p = parent(self, 0);
        if (p.requires_grad) p.grad_buffer().add_(self.grad);
    });
}

Var permute(const Var& x, const std::vector<int>& order) {
    const Shape& in_shape = x.shape();
    const size_t r = in_shape.size();
    if (order.size() != r) throw ShapeError("permute: order size mismatch for " + shape_str(in_shape));
    std::vector<int64_t> in_stride(r, 1);
    for (size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
    Shape out_shape(r);
    std::vector<int64_t> src_stride(r);
    std::vector<bool> used(r, false);
    for (size_t i = 0; i < r; ++i) {
        const auto o = static_cast<size_t>(order[i]);
        if (o >= r || used[o]) throw ShapeError("permute: invalid axis order");
        used[o] = true;
        out_shape[i] = in_shape[o];
        src_stride[i] = in_stride[o];
    }
    // src_index[k] = input offset of output element k
    const int64_t n = shape_numel(out_shape);
    auto src_index = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
    {
        std::vector<int64_t> idx(r, 0);
        int64_t off = 0;
        for (int64_t k = 0; k < n; ++k) {
            (*src_index)[static_cast<size_t>(k)] = off;
            for (size_t d = r; d-- > 0;) {
                ++idx[d];
                off += src_stride[d];
                if (idx[d] < out_shape[d]) break;
                off -= src_stride[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    }
    Tensor out(out_shape);
    const double* src = x.value().data();
    for (int64_t k = 0; k < n; ++k) out[k] = src[(*src_index)[static_cast<size_t>(k)]];
    return make_result(std::move(out), {x}, [src_index](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        double* g = p.grad_buffer().data();
        for (int64_t k = 0; k < self.grad.numel(); ++k) g[(*src_index)[static_cast<size_t>(k)]] += self.grad[k];
    });
}

Var narrow(const Var& x, int64_t axis, int64_t start, int64_t length) {
    const Shape& s = x.shape();
    axis = norm_axis(axis, static_cast<int64_t>(s.size()));
    if (start < 0 || length < 0 || start + length > s[static_cast<size_t>(axis)]) {
        throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of bounds for " + shape_str(s));
    }
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    const int64_t full = s[static_cast<size_t>(axis)];
    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = length;
    Tensor out(out_shape);
    const double* src = x.value().data();
    for (int64_t o = 0; o < outer; ++o) {
        std::copy_n(src + (o * full + start) * inner, length * inner, out.data() + o * length * inner);
    }
    return make_result(std::move(out), {x}, [=](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        double* g = p.grad_buffer().data();
        for (int64_t o = 0; o < outer; ++o) {
            const double* gs = self.grad.data() + o * length * inner;
            double* gd = g + (o * full + start) * inner;
            for (int64_t i = 0; i < length * inner; ++i) gd[i] += gs[i];
        }
    });
}

Var concat(const std::vector<Var>& parts, int64_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    axis = norm_axis(axis, static_cast<int64_t>(s0.size()));
    const auto ax = static_cast<size_t>(axis);
    Shape out_shape = s0;
    out_shape[ax] = 0;
    std::vector<int64_t> sizes;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (size_t i = 0; i < s.size(); ++i) {
            if (i != ax && s[i] != s0[i]) {
                throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
            }
        }
        sizes.push_back(s[ax]);
        out_shape[ax] += s[ax];
    }
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < ax; ++i) outer *= s0[i];
    for (size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
    const int64_t full = out_shape[ax];
    Tensor out(out_shape);
    int64_t offset = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
        const double* src = parts[k].value().data();
        for (int64_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * sizes[k] * inner, sizes[k] * inner, out.data() + (o * full + offset) * inner);
        }
        offset += sizes[k];
    }
    return make_result(std::move(out), parts, [=](Node& self) {
        int64_t off = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (p.requires_grad) {
                double* g = p.grad_buffer().data();
                for (int64_t o = 0; o < outer; ++o) {
                    const double* gs = self.grad.data() + (o * full + off) * inner;
                    double* gd = g + o * sizes[k] * inner;
                    for (int64_t i = 0; i < sizes[k] * inner; ++i) gd[i] += gs[i];
                }
            }
            off += sizes[k];
        }
    });
}

// ---------------------------------------------------------------- dense

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require_rank(weight, 2, "linear");
    const int64_t out_f = weight.dim(0);
    const int64_t in_f = weight.dim(1);
    const Shape& xs = x.shape();
    if (xs.empty() || xs.back() != in_f) {
        throw ShapeError("linear: input " + shape_str(xs) + " does not end in " + std::to_string(in_f));
    }
    if (bias && (bias.shape() != Shape{out_f})) throw ShapeError("linear: bias shape " + shape_str(bias.shape()));
    const int64_t rows = x.numel() / in_f;
    Shape out_shape = xs;
    out_shape.back() = out_f;
    Tensor out(out_shape);
    ConstMatMap X(x.value().data(), rows, in_f);
    ConstMatMap W(weight.value().data(), out_f, in_f);
    MatMap Y(out.data(), rows, out_f);
    Y.noalias() = X * W.transpose();
    if (bias) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), out_f);
    mac_counter().layer += rows * in_f * out_f;

    std::vector<Var> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents), [rows, in_f, out_f](Node& self) {
        ConstMatMap dY(self.grad.data(), rows, out_f);
        Node& nx = parent(self, 0);
        Node& nw = parent(self, 1);
        if (nx.requires_grad) {
            MatMap dX(nx.grad_buffer().data(), rows, in_f);
            dX.noalias() += dY * ConstMatMap(nw.value.data(), out_f, in_f);
        }
        if (nw.requires_grad) {
            MatMap dW(nw.grad_buffer().data(), out_f, in_f);
            dW.noalias() += dY.transpose() * ConstMatMap(nx.value.data(), rows, in_f);
        }
        if (self.parents.size() > 2 && parent(self, 2).requires_grad) {
            Eigen::Map<Eigen::RowVectorXd> db(parent(self, 2).grad_buffer().data(), out_f);
            db += dY.colwise().sum();
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v, double scale_factor) {
    require_rank(q, 3, "attention");
    require_rank(k, 3, "attention");
    require_rank(v, 3, "attention");
    const int64_t groups = q.dim(0), nq = q.dim(1), d = q.dim(2);
    const int64_t nk = k.dim(1), dv = v.dim(2);
    if (k.dim(0) != groups || v.dim(0) != groups || k.dim(2) != d || v.dim(1) != nk) {
        throw ShapeError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()));
    }
    if (!q.value().all_finite() || !k.value().all_finite() || !v.value().all_finite()) {
        throw std::domain_error("attention: non-finite input");
    }
    const bool keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
    auto weights = std::make_shared<Tensor>(keep ? Shape{groups, nq, nk} : Shape{1, nq, nk});
    Tensor out({groups, nq, dv});
    for (int64_t g = 0; g < groups; ++g) {
        MatMap A(weights->data() + (keep ? g * nq * nk : 0), nq, nk);
        ConstMatMap Q(q.value().data() + g * nq * d, nq, d);
        ConstMatMap K(k.value().data() + g * nk * d, nk, d);
        ConstMatMap V(v.value().data() + g * nk * dv, nk, dv);
        A.noalias() = (Q * K.transpose()) * scale_factor;
        for (int64_t i = 0; i < nq; ++i) {
            auto row = A.row(i);
            const double m = row.maxCoeff();
            row = (row.array() - m).exp();
            row /= row.sum();
        }
        MatMap O(out.data() + g * nq * dv, nq, dv);
        O.noalias() = A * V;
    }
    mac_counter().attention += groups * nq * nk * (d + dv);
    if (!keep) weights.reset();
    return make_result(std::move(out), {q, k, v}, [=](Node& self) {
        Node& nq_ = parent(self, 0);
        Node& nk_ = parent(self, 1);
        Node& nv_ = parent(self, 2);
        RowMatrix dA(nq, nk);
        for (int64_t g = 0; g < groups; ++g) {
            ConstMatMap A(weights->data() + g * nq * nk, nq, nk);
            ConstMatMap dO(self.grad.data() + g * nq * dv, nq, dv);
            ConstMatMap Q(nq_.value.data() + g * nq * d, nq, d);
            ConstMatMap K(nk_.value.data() + g * nk * d, nk, d);
            ConstMatMap V(nv_.value.data() + g * nk * dv, nk, dv);
            if (nv_.requires_grad) {
                MatMap dV(nv_.grad_buffer().data() + g * nk * dv, nk, dv);
                dV.noalias() += A.transpose() * dO;
            }
            if (!nq_.requires_grad && !nk_.requires_grad) continue;
            dA.noalias() = dO * V.transpose();
            // softmax backward: dS = A ⊙ (dA − rowsum(dA ⊙ A))
            Eigen::VectorXd dot = (dA.array() * A.array()).rowwise().sum();
            dA = (A.array() * (dA.array().colwise() - dot.array())) * scale_factor;
            if (nq_.requires_grad) {
                MatMap dQ(nq_.grad_buffer().data() + g * nq * d, nq, d);
                dQ.noalias() += dA * K;
            }
            if (nk_.requires_grad) {
                MatMap dK(nk_.grad_buffer().data() + g * nk * d, nk, d);
                dK.noalias() += dA.transpose() * Q;
            }
        }
    });
}

// ---------------------------------------------------------------- normalization

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int64_t c = x.shape().back();
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("layer_norm: affine shape mismatch for " + shape_str(x.shape()));
    }
    const int64_t rows = x.numel() / c;
    Tensor out(x.shape());
    auto xhat = std::make_shared<Tensor>(x.shape());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* in = x.value().data();
    const double* gm = gamma.value().data();
    const double* bt = beta.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = in + r * c;
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        for (int64_t j = 0; j < c; ++j) {
            const double h = (row[j] - mu) * is;
            (*xhat)[r * c + j] = h;
            out[r * c + j] = h * gm[j] + bt[j];
        }
    }
    return make_result(std::move(out), {x, gamma, beta}, [=](Node& self) {
        Node& nx = parent(self, 0);
        Node& ng = parent(self, 1);
        Node& nb = parent(self, 2);
        const double* g = ng.value.data();
        const double* dy = self.grad.data();
        if (ng.requires_grad || nb.requires_grad) {
            double* dg = ng.requires_grad ? ng.grad_buffer().data() : nullptr;
            double* db = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t j = 0; j < c; ++j) {
                    if (dg) dg[j] += dy[r * c + j] * (*xhat)[r * c + j];
                    if (db) db[j] += dy[r * c + j];
                }
            }
        }
        if (!nx.requires_grad) return;
        double* dx = nx.grad_buffer().data();
        for (int64_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (int64_t j = 0; j < c; ++j) {
                const double dh = dy[r * c + j] * g[j];
                m1 += dh;
                m2 += dh * (*xhat)[r * c + j];
            }
            m1 /= static_cast<double>(c);
            m2 /= static_cast<double>(c);
            const double is = (*inv_std)[static_cast<size_t>(r)];
            for (int64_t j = 0; j < c; ++j) {
                const double dh = dy[r * c + j] * g[j];
                dx[r * c + j] += is * (dh - m1 - (*xhat)[r * c + j] * m2);
            }
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int64_t c = x.shape().back();
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("batch_norm: affine shape mismatch for " + shape_str(x.shape()));
    }
    const int64_t rows = x.numel() / c;
    const double* in = x.value().data();
    std::vector<double> mu(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < c; ++j) mu[static_cast<size_t>(j)] += in[r * c + j];
    for (auto& m : mu) m /= static_cast<double>(rows);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < c; ++j) {
            const double dlt = in[r * c + j] - mu[static_cast<size_t>(j)];
            var[static_cast<size_t>(j)] += dlt * dlt;
        }
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
    for (int64_t j = 0; j < c; ++j) {
        (*inv_std)[static_cast<size_t>(j)] = 1.0 / std::sqrt(var[static_cast<size_t>(j)] / static_cast<double>(rows) + eps);
    }
    auto xhat = std::make_shared<Tensor>(x.shape());
    Tensor out(x.shape());
    const double* gm = gamma.value().data();
    const double* bt = beta.value().data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < c; ++j) {
            const double h = (in[r * c + j] - mu[static_cast<size_t>(j)]) * (*inv_std)[static_cast<size_t>(j)];
            (*xhat)[r * c + j] = h;
            out[r * c + j] = h * gm[j] + bt[j];
        }
    return make_result(std::move(out), {x, gamma, beta}, [=](Node& self) {
        Node& nx = parent(self, 0);
        Node& ng = parent(self, 1);
        Node& nb = parent(self, 2);
        const double* dy = self.grad.data();
        std::vector<double> m1(static_cast<size_t>(c), 0.0), m2(static_cast<size_t>(c), 0.0);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) {
                m1[static_cast<size_t>(j)] += dy[r * c + j];
                m2[static_cast<size_t>(j)] += dy[r * c + j] * (*xhat)[r * c + j];
            }
        if (ng.requires_grad) {
            double* dg = ng.grad_buffer().data();
            for (int64_t j = 0; j < c; ++j) dg[j] += m2[static_cast<size_t>(j)];
        }
        if (nb.requires_grad) {
            double* db = nb.grad_buffer().data();
            for (int64_t j = 0; j < c; ++j) db[j] += m1[static_cast<size_t>(j)];
        }
        if (!nx.requires_grad) return;
        const double* g = ng.value.data();
        double* dx = nx.grad_buffer().data();
        const auto n = static_cast<double>(rows);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) {
                const auto sj = static_cast<size_t>(j);
                dx[r * c + j] += g[j] * (*inv_std)[sj] *
                                 (dy[r * c + j] - m1[sj] / n - (*xhat)[r * c + j] * m2[sj] / n);
            }
    });
}

// ---------------------------------------------------------------- spatial

Var soft_split(const Var& tokens, int64_t rows, int64_t cols, int64_t kernel, int64_t stride, int64_t padding) {
    require_rank(tokens, 3, "soft_split");
    const int64_t b = tokens.dim(0), len = tokens.dim(1), c = tokens.dim(2);
    if (rows * cols != len) {
        throw ShapeError("soft_split: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " does not match token count " + std::to_string(len));
    }
    if (kernel < 1 || stride < 1 || padding < 0 || rows + 2 * padding < kernel || cols + 2 * padding < kernel) {
        throw ShapeError("soft_split: kernel/stride/padding incompatible with grid");
    }
    const int64_t out_r = (rows + 2 * padding - kernel) / stride + 1;
    const int64_t out_c = (cols + 2 * padding - kernel) / stride + 1;
    const int64_t feat = c * kernel * kernel;
    Tensor out({b, out_r * out_c, feat});
    // Every (output feature slot) maps to at most one input element; record the map once.
    auto src = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out_r * out_c * feat), -1);
    for (int64_t oy = 0; oy < out_r; ++oy)
        for (int64_t ox = 0; ox < out_c; ++ox)
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t ky = 0; ky < kernel; ++ky)
                    for (int64_t kx = 0; kx < kernel; ++kx) {
                        const int64_t iy = oy * stride - padding + ky;
                        const int64_t ix = ox * stride - padding + kx;
                        if (iy < 0 || iy >= rows || ix < 0 || ix >= cols) continue;
                        const int64_t o = (oy * out_c + ox) * feat + ch * kernel * kernel + ky * kernel + kx;
                        (*src)[static_cast<size_t>(o)] = (iy * cols + ix) * c + ch;
                    }
    const int64_t per_in = len * c, per_out = out_r * out_c * feat;
    const double* in = tokens.value().data();
    for (int64_t n = 0; n < b; ++n)
        for (int64_t o = 0; o < per_out; ++o) {
            const int64_t s = (*src)[static_cast<size_t>(o)];
            out[n * per_out + o] = s < 0 ? 0.0 : in[n * per_in + s];
        }
    return make_result(std::move(out), {tokens}, [=](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        double* g = p.grad_buffer().data();
        for (int64_t n = 0; n < b; ++n)
            for (int64_t o = 0; o < per_out; ++o) {
                const int64_t s = (*src)[static_cast<size_t>(o)];
                if (s >= 0) g[n * per_in + s] += self.grad[n * per_out + o];
            }
    });
}

namespace {

void im2col(const double* img, int64_t c, int64_t h, int64_t w, int64_t k, int64_t pad, int64_t oh, int64_t ow,
            double* cols) {
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t ky = 0; ky < k; ++ky)
            for (int64_t kx = 0; kx < k; ++kx) {
                double* dst = cols + ((ch * k + ky) * k + kx) * oh * ow;
                for (int64_t y = 0; y < oh; ++y) {
                    const int64_t iy = y - pad + ky;
                    for (int64_t x = 0; x < ow; ++x) {
                        const int64_t ix = x - pad + kx;
                        dst[y * ow + x] = (iy < 0 || iy >= h || ix < 0 || ix >= w) ? 0.0 : img[(ch * h + iy) * w + ix];
                    }
                }
            }
}

void col2im(const double* cols, int64_t c, int64_t h, int64_t w, int64_t k, int64_t pad, int64_t oh, int64_t ow,
            double* img) {
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t ky = 0; ky < k; ++ky)
            for (int64_t kx = 0; kx < k; ++kx) {
                const double* src = cols + ((ch * k + ky) * k + kx) * oh * ow;
                for (int64_t y = 0; y < oh; ++y) {
                    const int64_t iy = y - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int64_t x = 0; x < ow; ++x) {
                        const int64_t ix = x - pad + kx;
                        if (ix >= 0 && ix < w) img[(ch * h + iy) * w + ix] += src[y * ow + x];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int64_t padding) {
    require_rank(x, 4, "conv2d");
    require_rank(weight, 4, "conv2d");
    const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t o = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != c || weight.dim(3) != k) {
        throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
    }
    if (bias && bias.shape() != Shape{o}) throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
    const int64_t oh = h + 2 * padding - k + 1, ow = w + 2 * padding - k + 1;
    if (oh < 1 || ow < 1) throw ShapeError("conv2d: kernel larger than padded input");
    const int64_t ckk = c * k * k, hw = oh * ow;
    Tensor out({b, o, oh, ow});
    std::vector<double> cols(static_cast<size_t>(ckk * hw));
    ConstMatMap W(weight.value().data(), o, ckk);
    for (int64_t n = 0; n < b; ++n) {
        im2col(x.value().data() + n * c * h * w, c, h, w, k, padding, oh, ow, cols.data());
        MatMap Y(out.data() + n * o * hw, o, hw);
        Y.noalias() = W * ConstMatMap(cols.data(), ckk, hw);
        if (bias) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), o);
    }
    mac_counter().layer += b * o * hw * ckk;

    std::vector<Var> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents), [=](Node& self) {
        Node& nx = parent(self, 0);
        Node& nw = parent(self, 1);
        const bool has_bias = self.parents.size() > 2 && parent(self, 2).requires_grad;
        std::vector<double> buf(static_cast<size_t>(ckk * hw));
        ConstMatMap Wm(nw.value.data(), o, ckk);
        for (int64_t n = 0; n < b; ++n) {
            ConstMatMap dY(self.grad.data() + n * o * hw, o, hw);
            if (nw.requires_grad) {
                im2col(nx.value.data() + n * c * h * w, c, h, w, k, padding, oh, ow, buf.data());
                MatMap dW(nw.grad_buffer().data(), o, ckk);
                dW.noalias() += dY * ConstMatMap(buf.data(), ckk, hw).transpose();
            }
            if (has_bias) {
                VecMap db(parent(self, 2).grad_buffer().data(), o);
                db += dY.rowwise().sum();
            }
            if (nx.requires_grad) {
                MatMap dcols(buf.data(), ckk, hw);
                dcols.noalias() = Wm.transpose() * dY;
                col2im(buf.data(), c, h, w, k, padding, oh, ow, nx.grad_buffer().data() + n * c * h * w);
            }
        }
    });
}

namespace {

struct Lerp {
    int64_t i0, i1;
    double w0, w1;
};

std::vector<Lerp> lerp_table(int64_t in, int64_t out) {
    std::vector<Lerp> t(static_cast<size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        auto i0 = static_cast<int64_t>(src);
        if (i0 > in - 1) i0 = in - 1;
        const int64_t i1 = i0 < in - 1 ? i0 + 1 : i0;
        const double l = src - static_cast<double>(i0);
        t[static_cast<size_t>(i)] = {i0, i1, 1.0 - l, l};
    }
    return t;
}

}  // namespace

Var upsample_bilinear(const Var& x, int64_t out_h, int64_t out_w) {
    require_rank(x, 4, "upsample_bilinear");
    const int64_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (out_h < 1 || out_w < 1) throw ShapeError("upsample_bilinear: empty target size");
    auto ty = std::make_shared<std::vector<Lerp>>(lerp_table(h, out_h));
    auto tx = std::make_shared<std::vector<Lerp>>(lerp_table(w, out_w));
    Tensor out({x.dim(0), x.dim(1), out_h, out_w});
    const double* in = x.value().data();
    for (int64_t p = 0; p < bc; ++p) {
        const double* src = in + p * h * w;
        double* dst = out.data() + p * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
            const Lerp& ly = (*ty)[static_cast<size_t>(y)];
            for (int64_t xx = 0; xx < out_w; ++xx) {
                const Lerp& lx = (*tx)[static_cast<size_t>(xx)];
                dst[y * out_w + xx] = ly.w0 * (lx.w0 * src[ly.i0 * w + lx.i0] + lx.w1 * src[ly.i0 * w + lx.i1]) +
                                      ly.w1 * (lx.w0 * src[ly.i1 * w + lx.i0] + lx.w1 * src[ly.i1 * w + lx.i1]);
            }
        }
    }
    return make_result(std::move(out), {x}, [=](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        double* g = p.grad_buffer().data();
        for (int64_t q = 0; q < bc; ++q) {
            double* dst = g + q * h * w;
            const double* gy = self.grad.data() + q * out_h * out_w;
            for (int64_t y = 0; y < out_h; ++y) {
                const Lerp& ly = (*ty)[static_cast<size_t>(y)];
                for (int64_t xx = 0; xx < out_w; ++xx) {
                    const Lerp& lx = (*tx)[static_cast<size_t>(xx)];
                    const double v = gy[y * out_w + xx];
                    dst[ly.i0 * w + lx.i0] += ly.w0 * lx.w0 * v;
                    dst[ly.i0 * w + lx.i1] += ly.w0 * lx.w1 * v;
                    dst[ly.i1 * w + lx.i0] += ly.w1 * lx.w0 * v;
                    dst[ly.i1 * w + lx.i1] += ly.w1 * lx.w1 * v;
                }
            }
        }
    });
}

Var global_avg_pool(const Var& x) {
    require_rank(x, 4, "global_avg_pool");
    const int64_t bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({x.dim(0), x.dim(1), 1, 1});
    for (int64_t p = 0; p < bc; ++p) {
        double s = 0.0;
        for (int64_t i = 0; i < hw; ++i) s += x.value()[p * hw + i];
        out[p] = s / static_cast<double>(hw);
    }
    return make_result(std::move(out), {x}, [bc, hw](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        double* g = p.grad_buffer().data();
        for (int64_t q = 0; q < bc; ++q)
            for (int64_t i = 0; i < hw; ++i) g[q * hw + i] += self.grad[q] / static_cast<double>(hw);
    });
}

Var global_max_pool(const Var& x) {
    require_rank(x, 4, "global_max_pool");
    const int64_t bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({x.dim(0), x.dim(1), 1, 1});
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(bc));
    for (int64_t p = 0; p < bc; ++p) {
        int64_t best = 0;
        for (int64_t i = 1; i < hw; ++i)
            if (x.value()[p * hw + i] > x.value()[p * hw + best]) best = i;
        (*arg)[static_cast<size_t>(p)] = p * hw + best;
        out[p] = x.value()[p * hw + best];
    }
    return make_result(std::move(out), {x}, [arg](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        double* g = p.grad_buffer().data();
        for (size_t q = 0; q < arg->size(); ++q) g[(*arg)[q]] += self.grad[static_cast<int64_t>(q)];
    });
}

Var channel_mean(const Var& x) {
    require_rank(x, 4, "channel_mean");
    const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({b, 1, x.dim(2), x.dim(3)});
    for (int64_t n = 0; n < b; ++n)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < hw; ++i) out[n * hw + i] += x.value()[(n * c + ch) * hw + i] / static_cast<double>(c);
    return make_result(std::move(out), {x}, [b, c, hw](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        double* g = p.grad_buffer().data();
        for (int64_t n = 0; n < b; ++n)
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t i = 0; i < hw; ++i) g[(n * c + ch) * hw + i] += self.grad[n * hw + i] / static_cast<double>(c);
    });
}

Var channel_max(const Var& x) {
    require_rank(x, 4, "channel_max");
    const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({b, 1, x.dim(2), x.dim(3)});
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(b * hw));
    for (int64_t n = 0; n < b; ++n)
        for (int64_t i = 0; i < hw; ++i) {
            int64_t best = (n * c) * hw + i;
            for (int64_t ch = 1; ch < c; ++ch) {
                const int64_t idx = (n * c + ch) * hw + i;
                if (x.value()[idx] > x.value()[best]) best = idx;
            }
            (*arg)[static_cast<size_t>(n * hw + i)] = best;
            out[n * hw + i] = x.value()[best];
        }
    return make_result(std::move(out), {x}, [arg](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        double* g = p.grad_buffer().data();
        for (size_t q = 0; q < arg->size(); ++q) g[(*arg)[q]] += self.grad[static_cast<int64_t>(q)];
    });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return make_result(Tensor({1}, s), {x}, [](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Var bce_mean(const Var& prediction, const Tensor& target, double eps) {
    if (prediction.shape() != target.shape()) {
        throw ShapeError("bce_mean: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
    }
    const int64_t n = target.numel();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double p = std::clamp(prediction.value()[i], eps, 1.0 - eps);
        const double g = target[i];
        total -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
    }
    return make_result(Tensor({1}, total / static_cast<double>(n)), {prediction}, [target, eps, n](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        double* g = p.grad_buffer().data();
        const double up = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const double v = p.value[i];
            if (v < eps || v > 1.0 - eps) continue;
            g[i] += up * (-target[i] / v + (1.0 - target[i]) / (1.0 - v));
        }
    });
}

}  // namespace omnisal::ops
