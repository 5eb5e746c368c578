#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// Every op evaluates eagerly and, when its tape is recording and any operand
// requires a gradient, appends a backward closure. Nodes are stored in creation
// order, so reverse iteration is a valid topological order.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "geodist/errors.hpp"

namespace geodist::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
class Tape;

/// Handle to a node on a tape. Cheap to copy; it and references to its value
/// stay valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  const Matrix<Scalar>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat&)>;

  /// A non-recording tape evaluates values only (inference).
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// Leaf whose gradient is collected by backward().
  Var<Scalar> parameter(Mat value) { return push(std::move(value), recording_, nullptr); }

  /// Appends an op result. `backward` receives the result's gradient and must
  /// accumulate into the operands.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
    bool needs = false;
    if (recording_) {
      for (const auto& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  bool requires_grad(const Var<Scalar>& v) const { return nodes_[v.id()].requires_grad; }
  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }

  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[v.id()];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0)
      node.grad = g;
    else
      node.grad += g;
  }

  /// Populates gradients of every parameter reachable from `loss`. A tape can
  /// be consumed only once.
  void backward(const Var<Scalar>& loss) {
    if (consumed_) throw Error("tape already consumed by backward()");
    if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward() needs a 1x1 loss");
    consumed_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Mat::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward && node.grad.size() != 0) {
        node.backward(*this, node.grad);
        // Intermediate gradients are not needed once propagated.
        if (node.backward) node.grad.resize(0, 0);
      }
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<Scalar> push(Mat value, bool requires_grad, Backward backward) {
#ifndef NDEBUG
    if (!value.allFinite()) throw Error("non-finite value recorded on tape");
#endif
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(backward)});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  bool recording_;
  bool consumed_ = false;
};

namespace detail {

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

/// a · wᵀ, the layout used by linear layers with one weight row per output.
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& w) {
  if (a.cols() != w.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  Matrix<Scalar> out = a.value() * w.value().transpose();
  return a.tape().record(std::move(out), {a, w}, [a, w](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * w.value());
    if (t.requires_grad(w)) t.accumulate(w, g.transpose() * a.value());
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Matrix<Scalar> out = a.value() + b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Matrix<Scalar> out = a.value() - b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar k) {
  Matrix<Scalar> out = a.value() * k;
  return a.tape().record(std::move(out), {a}, [a, k](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g * k);
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar k) {
  Matrix<Scalar> out = (a.value().array() + k).matrix();
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g);
  });
}

/// a + r with the 1×C row r broadcast down every row.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("add_row: expected a 1xC row");
  Matrix<Scalar> out = a.value().rowwise() + r.value().row(0);
  return a.tape().record(std::move(out), {a, r}, [a, r](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(r)) t.accumulate(r, g.colwise().sum());
  });
}

/// Row i of a scaled by c(i); c is N×1.
template <typename Scalar>
Var<Scalar> mul_col(const Var<Scalar>& a, const Var<Scalar>& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) throw ShapeError("mul_col: expected an Nx1 column");
  Matrix<Scalar> out = (a.value().array().colwise() * c.value().col(0).array()).matrix();
  return a.tape().record(std::move(out), {a, c}, [a, c](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(a)) t.accumulate(a, (g.array().colwise() * c.value().col(0).array()).matrix());
    if (t.requires_grad(c)) t.accumulate(c, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

/// a times the 1×1 variable s.
template <typename Scalar>
Var<Scalar> mul_scalar(const Var<Scalar>& a, const Var<Scalar>& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("mul_scalar: expected a 1x1 scalar");
  const Scalar k = s.value()(0, 0);
  Matrix<Scalar> out = a.value() * k;
  return a.tape().record(std::move(out), {a, s}, [a, s](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * s.value()(0, 0));
    if (t.requires_grad(s)) t.accumulate(s, Matrix<Scalar>::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
  });
}

/// Sum of every entry, as 1×1.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, a.value().sum());
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

/// Column sums (reduction over rows), as 1×C.
template <typename Scalar>
Var<Scalar> sum_rows(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().colwise().sum();
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g.replicate(a.rows(), 1));
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row counts differ");
  Matrix<Scalar> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g.leftCols(a.cols()));
    t.accumulate(b, g.rightCols(b.cols()));
  });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().square().matrix();
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, (Scalar(2) * g.array() * a.value().array()).matrix());
  });
}

/// x·sigmoid(x).
template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& a) {
  const auto x = a.value().array();
  Matrix<Scalar> out = (x / (Scalar(1) + (-x).exp())).matrix();
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto xa = a.value().array();
    const auto s = (Scalar(1) / (Scalar(1) + (-xa).exp())).eval();
    t.accumulate(a, (g.array() * s * (Scalar(1) + xa * (Scalar(1) - s))).matrix());
  });
}

template <typename Scalar>
Var<Scalar> sin(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().sin().matrix();
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, (g.array() * a.value().array().cos()).matrix());
  });
}

template <typename Scalar>
Var<Scalar> cos(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().cos().matrix();
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, (-g.array() * a.value().array().sin()).matrix());
  });
}

/// Scales each row to unit RMS: x / (eps + ‖x‖/sqrt(C)).
template <typename Scalar>
Var<Scalar> normalize_rows(const Var<Scalar>& a, Scalar eps) {
  const Scalar inv_sqrt_c = Scalar(1) / std::sqrt(static_cast<Scalar>(a.cols()));
  Vector<Scalar> norms = a.value().rowwise().norm();
  Vector<Scalar> denom = (norms.array() * inv_sqrt_c + eps).matrix();
  Matrix<Scalar> out = (a.value().array().colwise() / denom.array()).matrix();
  return a.tape().record(
      std::move(out), {a},
      [a, norms = std::move(norms), denom = std::move(denom), inv_sqrt_c](Tape<Scalar>& t,
                                                                         const Matrix<Scalar>& g) {
        const auto& x = a.value();
        // d/dx [x/s] = g/s - x (g·x) / (s² ‖x‖ sqrt(C))
        Vector<Scalar> gx = g.cwiseProduct(x).rowwise().sum();
        Vector<Scalar> coef(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
          coef(i) = norms(i) > Scalar(0) ? gx(i) * inv_sqrt_c / (denom(i) * denom(i) * norms(i)) : Scalar(0);
        Matrix<Scalar> ga = (g.array().colwise() / denom.array()).matrix();
        ga -= (x.array().colwise() * coef.array()).matrix();
        t.accumulate(a, ga);
      });
}

/// Scales each row to unit L2 norm: w / max(‖w‖, eps). Rows shorter than eps
/// are divided by eps, so a zero row stays zero.
template <typename Scalar>
Var<Scalar> unit_rows(const Var<Scalar>& w, Scalar eps) {
  Vector<Scalar> norms = w.value().rowwise().norm();
  Vector<Scalar> denom = norms.cwiseMax(eps);
  Matrix<Scalar> out = (w.value().array().colwise() / denom.array()).matrix();
  return w.tape().record(
      std::move(out), {w},
      [w, norms = std::move(norms), denom = std::move(denom), eps](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& x = w.value();
        Matrix<Scalar> gw = (g.array().colwise() / denom.array()).matrix();
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          if (norms(i) > eps) {
            const Scalar gy = g.row(i).dot(x.row(i)) / (norms(i) * norms(i) * norms(i));
            gw.row(i) -= gy * x.row(i);
          }
        }
        t.accumulate(w, gw);
      });
}

/// Adam with bias correction.
template <typename Scalar>
struct AdamState {
  Vector<Scalar> m;
  Vector<Scalar> v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(Eigen::Index n, double lr_ = 1e-3, double beta1_ = 0.9, double beta2_ = 0.99,
                     double eps_ = 1e-8)
      : m(Vector<Scalar>::Zero(n)), v(Vector<Scalar>::Zero(n)), lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {}
};

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Eigen::Ref<Vector<Scalar>> params,
               const Eigen::Ref<const Vector<Scalar>>& grads) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: parameter, gradient and state lengths differ");
  ++state.step;
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  state.m = b1 * state.m + (Scalar(1) - b1) * grads;
  state.v = b2 * state.v + (Scalar(1) - b2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const auto step_size = static_cast<Scalar>(state.lr / c1);
  const auto inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
  const auto eps = static_cast<Scalar>(state.eps);
  params.array() -= step_size * state.m.array() / (state.v.array().sqrt() * inv_sqrt_c2 + eps);
}

}  // namespace geodist::ad
