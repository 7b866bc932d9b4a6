#pragma once

// Dense reverse-mode automatic differentiation over row-major double matrices.
//
// Every Tensor is a handle to a node of a dynamically recorded computation
// graph. Primitives record a backward closure on their result whenever any
// input requires a gradient; backward() orders the reachable nodes
// topologically and replays the closures once each in reverse.

#include <ccl/errors.hpp>
#include <ccl/kernels.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ccl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

inline std::string shape_str(Index rows, Index cols) {
    std::ostringstream os;
    os << rows << "x" << cols;
    return os.str();
}

inline std::string shape_str(const Matrix& m) { return shape_str(m.rows(), m.cols()); }

namespace detail {

struct Node;
using BackwardFn = std::function<void(const Node& self)>;

struct Node {
    Matrix value;
    // Dense part of the gradient. Its contents are meaningful only while
    // grad_live is set, so zeroing is just clearing the flag.
    Matrix grad;
    bool grad_live = false;
    // Pending rank-r terms left^T * right from products with thin inputs;
    // folded into grad on demand, or handed to descend().
    std::vector<std::pair<Matrix, Matrix>> outer_terms;
    // Optimizer steps not yet written into value, in the same factored form.
    // The next product that reads value applies them in its own pass.
    std::vector<std::pair<Matrix, Matrix>> pending;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;

    Matrix& ensure_grad() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
            grad.resize(value.rows(), value.cols());
            grad_live = false;
        }
        if (!grad_live) {
            grad.setZero();
            grad_live = true;
        }
        for (const auto& [left, right] : outer_terms) {
            kernels::rank_update(grad.data(), grad.rows(), grad.cols(), left.data(), right.data(), left.rows());
        }
        outer_terms.clear();
        return grad;
    }

    void add_outer(const Matrix& left, const Matrix& right) {
        if (outer_terms.size() >= 16) ensure_grad();
        outer_terms.emplace_back(left, right);
    }

    void clear_grad() {
        grad_live = false;
        outer_terms.clear();
    }

    void settle() {
        for (const auto& [left, right] : pending) {
            kernels::rank_update(value.data(), value.rows(), value.cols(), left.data(), right.data(), left.rows());
        }
        pending.clear();
    }

    std::vector<kernels::Term> pending_terms() const {
        std::vector<kernels::Term> terms;
        terms.reserve(pending.size());
        for (const auto& [left, right] : pending) terms.push_back({left.data(), right.data(), left.rows()});
        return terms;
    }

    // value -= lr * grad, then grad = 0.
    void descend(double lr) {
        if (lr != 0.0) {
            if (grad_live) {
                settle();
                value.noalias() -= lr * grad;
            }
            for (auto& [left, right] : outer_terms) pending.emplace_back(Matrix(-lr * left), std::move(right));
            Index rank = 0;
            for (const auto& term : pending) rank += term.first.rows();
            if (rank > 32) settle();
        }
        clear_grad();
    }
};

// Products whose left operand has at most this many rows keep their weight
// gradient in factored form.
inline constexpr Index kOuterRankLimit = 8;

}  // namespace detail

class Tensor {
   public:
    Tensor() = default;

    explicit Tensor(Matrix value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
        if (requires_grad) node_->ensure_grad();
    }

    static Tensor scalar(double v) { return Tensor(Matrix::Constant(1, 1, v)); }
    static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
        return Tensor(Matrix::Zero(rows, cols), requires_grad);
    }
    static Tensor row(const std::vector<double>& values, bool requires_grad = false) {
        Matrix m(1, static_cast<Index>(values.size()));
        for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Index>(i)) = values[i];
        return Tensor(std::move(m), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    Index size() const { return node_->value.size(); }
    std::string shape() const { return shape_str(node_->value); }

    const Matrix& value() const {
        node_->settle();
        return node_->value;
    }
    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf; }

    // Leaves only: parameters are updated in place by the optimizer.
    Matrix& mutable_value() {
        if (!node_->is_leaf) throw ContractError("mutable_value() on a non-leaf tensor");
        node_->settle();
        return node_->value;
    }

    // Zero-filled when no gradient has been accumulated yet.
    const Matrix& grad() const { return node_->ensure_grad(); }
    Matrix& mutable_grad() { return node_->ensure_grad(); }

    void zero_grad() { node_->clear_grad(); }

    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor of shape " + shape());
        return node_->value(0, 0);
    }

    // Same value, no graph linkage.
    Tensor detach() const { return Tensor(value(), false); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

   private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Matrix value, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
    Tensor out(std::move(value), false);
    const auto& node = out.node();
    for (const Tensor* in : inputs) {
        if (in->requires_grad()) {
            node->requires_grad = true;
            node->parents.push_back(in->node());
        }
    }
    if (node->requires_grad) {
        node->is_leaf = false;
        node->backward = std::move(fn);
    }
    return out;
}

inline Tensor make_result(Matrix value, const std::vector<Tensor>& inputs, BackwardFn fn) {
    Tensor out(std::move(value), false);
    const auto& node = out.node();
    for (const Tensor& in : inputs) {
        if (in.requires_grad()) {
            node->requires_grad = true;
            node->parents.push_back(in.node());
        }
    }
    if (node->requires_grad) {
        node->is_leaf = false;
        node->backward = std::move(fn);
    }
    return out;
}

enum class Broadcast { Same, Row, Col, Scalar };

inline Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline Matrix expand(const Matrix& b, Index rows, Index cols, Broadcast kind) {
    switch (kind) {
        case Broadcast::Same:
            return b;
        case Broadcast::Scalar:
            return Matrix::Constant(rows, cols, b(0, 0));
        case Broadcast::Row:
            return b.replicate(rows, 1);
        case Broadcast::Col:
            return b.replicate(1, cols);
    }
    return b;
}

inline void reduce_into(Matrix& target, const Matrix& g, Broadcast kind) {
    switch (kind) {
        case Broadcast::Same:
            target += g;
            break;
        case Broadcast::Scalar:
            target(0, 0) += g.sum();
            break;
        case Broadcast::Row:
            target += g.colwise().sum();
            break;
        case Broadcast::Col:
            target += g.rowwise().sum();
            break;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + a.shape() + " and " + b.shape());
    }
    const Index m = a.rows();
    const Index k = a.cols();
    const Index n = b.cols();
    Matrix out(m, n);
    const Matrix& av = a.value();
    detail::Node* bn_raw = b.node().get();
    if (m >= 1 && m <= kernels::kMaxRows) {
        if (bn_raw->pending.empty()) {
            kernels::product(av.data(), m, k, bn_raw->value.data(), n, out.data());
        } else {
            kernels::product(av.data(), m, k, bn_raw->value.data(), n, out.data(), bn_raw->pending_terms());
            bn_raw->pending.clear();
        }
    } else {
        out.noalias() = av * b.value();
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result(std::move(out), {&a, &b}, [an, bn](const detail::Node& self) {
        const Index m = self.value.rows();
        const bool thin = m >= 1 && m <= kernels::kMaxRows;
        if (an->requires_grad) {
            Matrix& ga = an->ensure_grad();
            if (thin) {
                kernels::product_nt(self.grad.data(), m, self.grad.cols(), bn->value.data(), bn->value.rows(), ga.data());
            } else {
                ga.noalias() += self.grad * bn->value.transpose();
            }
        }
        if (bn->requires_grad) {
            if (bn->is_leaf && m <= detail::kOuterRankLimit) {
                bn->add_outer(an->value, self.grad);
            } else if (thin) {
                Matrix& gb = bn->ensure_grad();
                kernels::rank_update(gb.data(), gb.rows(), gb.cols(), an->value.data(), self.grad.data(), m);
            } else {
                bn->ensure_grad().noalias() += an->value.transpose() * self.grad;
            }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    auto an = a.node();
    return detail::make_result(a.value().transpose(), {&a}, [an](const detail::Node& self) {
        an->ensure_grad() += self.grad.transpose();
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (b.rows() >= a.rows() && b.cols() >= a.cols() && b.size() > a.size()) return add(b, a);
    const auto kind = detail::broadcast_kind(a.value(), b.value(), "add");
    Matrix out = kind == detail::Broadcast::Same ? Matrix(a.value() + b.value())
                                                 : Matrix(a.value() + detail::expand(b.value(), a.rows(), a.cols(), kind));
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result(std::move(out), {&a, &b}, [an, bn, kind](const detail::Node& self) {
        if (an->requires_grad) an->ensure_grad() += self.grad;
        if (bn->requires_grad) detail::reduce_into(bn->ensure_grad(), self.grad, kind);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    const auto kind = detail::broadcast_kind(a.value(), b.value(), "sub");
    Matrix out = a.value() - detail::expand(b.value(), a.rows(), a.cols(), kind);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result(std::move(out), {&a, &b}, [an, bn, kind](const detail::Node& self) {
        if (an->requires_grad) an->ensure_grad() += self.grad;
        if (bn->requires_grad) detail::reduce_into(bn->ensure_grad(), Matrix(-self.grad), kind);
    });
}

// Elementwise product; b may be a row, column or scalar broadcast over a.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (b.rows() > a.rows() || b.cols() > a.cols()) return mul(b, a);
    const auto kind = detail::broadcast_kind(a.value(), b.value(), "mul");
    Matrix bx = detail::expand(b.value(), a.rows(), a.cols(), kind);
    Matrix out = a.value().cwiseProduct(bx);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result(std::move(out), {&a, &b}, [an, bn, kind, bx = std::move(bx)](const detail::Node& self) {
        if (an->requires_grad) an->ensure_grad() += self.grad.cwiseProduct(bx);
        if (bn->requires_grad) detail::reduce_into(bn->ensure_grad(), self.grad.cwiseProduct(an->value), kind);
    });
}

inline Tensor scale(const Tensor& a, double c) {
    auto an = a.node();
    return detail::make_result(a.value() * c, {&a}, [an, c](const detail::Node& self) {
        an->ensure_grad() += c * self.grad;
    });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor operator-(double c, const Tensor& a) { return add(scale(a, -1.0), Tensor::scalar(c)); }

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const Index rows = parts.front().rows();
    Index cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) {
            throw DimensionError("concat_cols: row mismatch, " + parts.front().shape() + " and " + p.shape());
        }
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<std::shared_ptr<detail::Node>> nodes;
    Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
        nodes.push_back(p.node());
    }
    return detail::make_result(std::move(out), parts, [nodes](const detail::Node& self) {
        Index offset = 0;
        for (const auto& n : nodes) {
            if (n->requires_grad) n->ensure_grad() += self.grad.middleCols(offset, n->value.cols());
            offset += n->value.cols();
        }
    });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const Index cols = parts.front().cols();
    Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw DimensionError("concat_rows: column mismatch, " + parts.front().shape() + " and " + p.shape());
        }
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<std::shared_ptr<detail::Node>> nodes;
    Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
        nodes.push_back(p.node());
    }
    return detail::make_result(std::move(out), parts, [nodes](const detail::Node& self) {
        Index offset = 0;
        for (const auto& n : nodes) {
            if (n->requires_grad) n->ensure_grad() += self.grad.middleRows(offset, n->value.rows());
            offset += n->value.rows();
        }
    });
}

inline Tensor slice_cols(const Tensor& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") outside " + a.shape());
    }
    auto an = a.node();
    return detail::make_result(a.value().middleCols(start, count), {&a}, [an, start, count](const detail::Node& self) {
        an->ensure_grad().middleCols(start, count) += self.grad;
    });
}

inline Tensor slice_rows(const Tensor& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw DimensionError("slice_rows: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") outside " + a.shape());
    }
    auto an = a.node();
    return detail::make_result(a.value().middleRows(start, count), {&a}, [an, start, count](const detail::Node& self) {
        an->ensure_grad().middleRows(start, count) += self.grad;
    });
}

// Row-major reinterpretation.
inline Tensor reshape(const Tensor& a, Index rows, Index cols) {
    if (rows * cols != a.size()) {
        throw DimensionError("reshape: cannot view " + a.shape() + " as " + shape_str(rows, cols));
    }
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
    auto an = a.node();
    return detail::make_result(std::move(out), {&a}, [an](const detail::Node& self) {
        an->ensure_grad() += Eigen::Map<const Matrix>(self.grad.data(), an->value.rows(), an->value.cols());
    });
}

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

inline Tensor selu(const Tensor& x) {
    Matrix out = x.value().unaryExpr([](double v) {
        return v > 0.0 ? kSeluLambda * v : kSeluLambda * kSeluAlpha * std::expm1(v);
    });
    auto xn = x.node();
    return detail::make_result(std::move(out), {&x}, [xn](const detail::Node& self) {
        Matrix& g = xn->ensure_grad();
        const Index n = self.value.size();
        const double* in = xn->value.data();
        const double* out = self.value.data();
        const double* up = self.grad.data();
        double* dst = g.data();
        for (Index i = 0; i < n; ++i) {
            // d/dx of lambda*alpha*(e^x - 1) is out + lambda*alpha
            dst[i] += up[i] * (in[i] > 0.0 ? kSeluLambda : out[i] + kSeluLambda * kSeluAlpha);
        }
    });
}

inline Tensor sigmoid(const Tensor& x) {
    Matrix out = x.value().unaryExpr([](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    });
    auto xn = x.node();
    return detail::make_result(std::move(out), {&x}, [xn](const detail::Node& self) {
        xn->ensure_grad().array() += self.grad.array() * self.value.array() * (1.0 - self.value.array());
    });
}

inline Tensor exp(const Tensor& x) {
    Matrix out = x.value().array().exp().matrix();
    auto xn = x.node();
    return detail::make_result(std::move(out), {&x}, [xn](const detail::Node& self) {
        xn->ensure_grad().array() += self.grad.array() * self.value.array();
    });
}

inline Tensor log(const Tensor& x) {
    Matrix out = x.value().array().log().matrix();
    auto xn = x.node();
    return detail::make_result(std::move(out), {&x}, [xn](const detail::Node& self) {
        xn->ensure_grad().array() += self.grad.array() / xn->value.array();
    });
}

inline Tensor abs(const Tensor& x) {
    Matrix out = x.value().cwiseAbs();
    auto xn = x.node();
    return detail::make_result(std::move(out), {&x}, [xn](const detail::Node& self) {
        xn->ensure_grad().array() += self.grad.array() * xn->value.array().sign();
    });
}

// Gradient passes only where lo <= x <= hi.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
    Matrix out = x.value().cwiseMax(lo).cwiseMin(hi);
    auto xn = x.node();
    return detail::make_result(std::move(out), {&x}, [xn, lo, hi](const detail::Node& self) {
        Matrix& g = xn->ensure_grad();
        for (Index i = 0; i < g.size(); ++i) {
            const double v = xn->value.data()[i];
            if (v >= lo && v <= hi) g.data()[i] += self.grad.data()[i];
        }
    });
}

inline Tensor softmax_rows(const Tensor& x) {
    Matrix out = x.value();
    for (Index r = 0; r < out.rows(); ++r) {
        const double m = out.row(r).maxCoeff();
        out.row(r) = (out.row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    auto xn = x.node();
    return detail::make_result(std::move(out), {&x}, [xn](const detail::Node& self) {
        const Matrix gy = self.grad.cwiseProduct(self.value);
        const Eigen::VectorXd dot = gy.rowwise().sum();
        Matrix& g = xn->ensure_grad();
        g += gy - (self.value.array().colwise() * dot.array()).matrix();
    });
}

inline Tensor sum(const Tensor& x) {
    auto xn = x.node();
    return detail::make_result(Matrix::Constant(1, 1, x.value().sum()), {&x}, [xn](const detail::Node& self) {
        xn->ensure_grad().array() += self.grad(0, 0);
    });
}

inline Tensor mean(const Tensor& x) {
    const double n = static_cast<double>(x.size());
    auto xn = x.node();
    return detail::make_result(Matrix::Constant(1, 1, x.value().sum() / n), {&x}, [xn, n](const detail::Node& self) {
        xn->ensure_grad().array() += self.grad(0, 0) / n;
    });
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes each row, then applies the per-column affine gamma/beta (both 1xd).
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps) {
    const Index d = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
        throw DimensionError("layer_norm: affine shapes " + gamma.shape() + ", " + beta.shape() +
                             " do not match input " + x.shape());
    }
    Matrix xhat(x.rows(), d);
    Eigen::VectorXd inv_std(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
        const double mu = x.value().row(r).mean();
        const double var = (x.value().row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return detail::make_result(
        std::move(out), {&x, &gamma, &beta},
        [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std)](const detail::Node& self) {
            if (gn->requires_grad) gn->ensure_grad() += self.grad.cwiseProduct(xhat).colwise().sum();
            if (bn->requires_grad) bn->ensure_grad() += self.grad.colwise().sum();
            if (xn->requires_grad) {
                const Matrix dxhat = (self.grad.array().rowwise() * gn->value.row(0).array()).matrix();
                const double n = static_cast<double>(xhat.cols());
                Matrix& g = xn->ensure_grad();
                for (Index r = 0; r < xhat.rows(); ++r) {
                    const double m1 = dxhat.row(r).sum() / n;
                    const double m2 = dxhat.row(r).dot(xhat.row(r)) / n;
                    g.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                }
            }
        });
}

inline constexpr double kCosineEps = 1e-8;

// <u,v> / max(|u||v|, eps). Zero vectors give 0.
inline Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
    if (u.rows() != v.rows() || u.cols() != v.cols() || u.size() == 0) {
        throw DimensionError("cosine_similarity: shapes " + u.shape() + " and " + v.shape());
    }
    const double dot = u.value().cwiseProduct(v.value()).sum();
    const double nu = u.value().norm();
    const double nv = v.value().norm();
    const double den = std::max(nu * nv, kCosineEps);
    const bool scaled = nu * nv > kCosineEps;
    auto un = u.node();
    auto vn = v.node();
    return detail::make_result(Matrix::Constant(1, 1, dot / den), {&u, &v},
                               [un, vn, dot, nu, nv, den, scaled](const detail::Node& self) {
                                   const double g = self.grad(0, 0);
                                   const double k = g * dot / (den * den);
                                   if (un->requires_grad) {
                                       Matrix& gu = un->ensure_grad();
                                       gu += (g / den) * vn->value;
                                       if (scaled) gu -= (k * nv / nu) * un->value;
                                   }
                                   if (vn->requires_grad) {
                                       Matrix& gv = vn->ensure_grad();
                                       gv += (g / den) * un->value;
                                       if (scaled) gv -= (k * nu / nv) * vn->value;
                                   }
                               });
}

// Cosine similarity of a 1xd query against each row of a constant mxd bank,
// returned as 1xm. Gradients flow to the query only.
inline Tensor cosine_rows(const Tensor& query, const Matrix& bank) {
    if (query.rows() != 1 || query.cols() != bank.cols()) {
        throw DimensionError("cosine_rows: query " + query.shape() + " against bank " + shape_str(bank));
    }
    const Index m = bank.rows();
    const Eigen::VectorXd dots = bank * query.value().row(0).transpose();
    const Eigen::VectorXd norms = bank.rowwise().norm();
    const double nq = query.value().norm();
    const Eigen::VectorXd den = (norms * nq).array().max(kCosineEps);
    Matrix out(1, m);
    for (Index j = 0; j < m; ++j) out(0, j) = dots(j) / den(j);
    auto qn = query.node();
    return detail::make_result(std::move(out), {&query},
                               [qn, bank, dots, norms, nq, den](const detail::Node& self) {
                                   const Index m = bank.rows();
                                   Eigen::RowVectorXd c1(m);
                                   double c2 = 0.0;
                                   for (Index j = 0; j < m; ++j) {
                                       const double g = self.grad(0, j);
                                       c1(j) = g / den(j);
                                       if (norms(j) * nq > kCosineEps) c2 += g * dots(j) * norms(j) / (den(j) * den(j));
                                   }
                                   Matrix& gq = qn->ensure_grad();
                                   gq.row(0) += c1 * bank;
                                   if (nq > 0.0) gq -= (c2 / nq) * qn->value;
                               });
}

// ---------------------------------------------------------------------------
// Backward pass

inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + loss.shape());
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) {
        if (!n->is_leaf) n->clear_grad();
    }
    loss.node()->ensure_grad()(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (!n->is_leaf && n->backward) {
            n->ensure_grad();
            n->backward(*n);
        }
    }
    // Interior gradients are not needed after the pass.
    for (detail::Node* n : order) {
        if (!n->is_leaf) {
            n->grad.resize(0, 0);
            n->grad_live = false;
        }
    }
}

}  // namespace ccl
