#include "selrank/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace selrank {

using detail::Node;

namespace {

[[noreturn]] void fail(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

std::string dims(const Tensor& t) {
  std::ostringstream os;
  os << "[" << t.rows() << "x" << t.cols() << " rank " << t.rank() << "]";
  return os.str();
}

std::shared_ptr<Node> make_node(Mat value, int rank,
                                std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->rank = rank;
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void accum(Node& p, const Mat& g) {
  if (!p.requires_grad) return;
  if (p.grad.size() == 0) p.grad = Mat::Zero(p.value.rows(), p.value.cols());
  p.grad += g;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rows() != b.rows() || a.cols() != b.cols())
    fail(op, "operand shapes differ: " + dims(a) + " vs " + dims(b));
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) fail(op, "undefined tensor");
}

}  // namespace

// --- Tensor basics -----------------------------------------------------------

Tensor Tensor::scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return Tensor(make_node(std::move(m), 0, {}, nullptr));
}

Tensor Tensor::row(std::vector<double> v) {
  Mat m(1, static_cast<Index>(v.size()));
  for (Index i = 0; i < m.cols(); ++i) m(0, i) = v[static_cast<size_t>(i)];
  return Tensor(make_node(std::move(m), 1, {}, nullptr));
}

Tensor Tensor::matrix(Mat m) {
  return Tensor(make_node(std::move(m), 2, {}, nullptr));
}

Tensor Tensor::leaf(Mat m, int rank) {
  auto n = make_node(std::move(m), rank, {}, nullptr);
  n->requires_grad = true;
  n->is_leaf = true;
  return Tensor(n);
}

int Tensor::rank() const { return node_->rank; }
Index Tensor::rows() const { return node_->value.rows(); }
Index Tensor::cols() const { return node_->value.cols(); }
Index Tensor::size() const { return node_->value.size(); }

std::vector<Index> Tensor::shape() const {
  switch (node_->rank) {
    case 0: return {};
    case 1: return {cols()};
    default: return {rows(), cols()};
  }
}

const Mat& Tensor::value() const { return node_->value; }

Mat& Tensor::mutable_value() {
  if (!node_->is_leaf) fail("mutable_value", "only leaves may be mutated");
  return node_->value;
}

double Tensor::item() const {
  if (node_->rank != 0) fail("item", "tensor is not a scalar: " + dims(*this));
  return node_->value(0, 0);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return node_->grad.size() != 0; }

const Mat& Tensor::grad() const {
  if (node_->grad.size() == 0) fail("grad", "no gradient present");
  return node_->grad;
}

void Tensor::clear_grad() { node_->grad.resize(0, 0); }

// --- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto pa = a.node(), pb = b.node();
  return Tensor(make_node(a.value() + b.value(), a.rank(), {pa, pb},
                          [](Node& self) {
                            accum(*self.parents[0], self.grad);
                            accum(*self.parents[1], self.grad);
                          }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return Tensor(make_node(a.value() - b.value(), a.rank(), {a.node(), b.node()},
                          [](Node& self) {
                            accum(*self.parents[0], self.grad);
                            accum(*self.parents[1], -self.grad);
                          }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  return Tensor(make_node(
      (a.value().array() * b.value().array()).matrix(), a.rank(),
      {a.node(), b.node()}, [](Node& self) {
        accum(*self.parents[0],
              (self.grad.array() * self.parents[1]->value.array()).matrix());
        accum(*self.parents[1],
              (self.grad.array() * self.parents[0]->value.array()).matrix());
      }));
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  return Tensor(make_node(
      (a.value().array() / b.value().array()).matrix(), a.rank(),
      {a.node(), b.node()}, [](Node& self) {
        const auto& av = self.parents[0]->value.array();
        const auto& bv = self.parents[1]->value.array();
        accum(*self.parents[0], (self.grad.array() / bv).matrix());
        accum(*self.parents[1],
              (-self.grad.array() * av / (bv * bv)).matrix());
      }));
}

Tensor scale(const Tensor& a, double c) {
  require_defined("scale", a);
  return Tensor(make_node(a.value() * c, a.rank(), {a.node()},
                          [c](Node& self) {
                            accum(*self.parents[0], self.grad * c);
                          }));
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.rank() != 0) fail("mul_scalar", "factor must be a scalar, got " + dims(s));
  return Tensor(make_node(a.value() * s.item(), a.rank(), {a.node(), s.node()},
                          [](Node& self) {
                            const Mat& av = self.parents[0]->value;
                            const double sv = self.parents[1]->value(0, 0);
                            accum(*self.parents[0], self.grad * sv);
                            Mat gs(1, 1);
                            gs(0, 0) = (self.grad.array() * av.array()).sum();
                            accum(*self.parents[1], gs);
                          }));
}

// --- linear algebra ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2)
    fail("matmul", "expects vector-or-matrix x matrix, got " + dims(a) + " x " + dims(b));
  if (a.cols() != b.rows())
    fail("matmul", "inner dimensions differ: " + dims(a) + " x " + dims(b));
  const int out_rank = a.rank() == 1 ? 1 : 2;
  return Tensor(make_node(a.value() * b.value(), out_rank, {a.node(), b.node()},
                          [](Node& self) {
                            const Mat& av = self.parents[0]->value;
                            const Mat& bv = self.parents[1]->value;
                            accum(*self.parents[0], self.grad * bv.transpose());
                            accum(*self.parents[1], av.transpose() * self.grad);
                          }));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail("transpose", "expects a matrix, got " + dims(a));
  return Tensor(make_node(a.value().transpose(), 2, {a.node()},
                          [](Node& self) {
                            accum(*self.parents[0], self.grad.transpose());
                          }));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.cols() != b.cols())
    fail("dot", "expects equal-length vectors, got " + dims(a) + " and " + dims(b));
  Mat v(1, 1);
  v(0, 0) = (a.value().array() * b.value().array()).sum();
  return Tensor(make_node(std::move(v), 0, {a.node(), b.node()},
                          [](Node& self) {
                            const double g = self.grad(0, 0);
                            accum(*self.parents[0], g * self.parents[1]->value);
                            accum(*self.parents[1], g * self.parents[0]->value);
                          }));
}

// --- structural ops -------------------------------------------------------------

Tensor gather_rows(const Tensor& a, std::vector<Index> indices) {
  if (a.rank() != 2) fail("gather_rows", "expects a matrix, got " + dims(a));
  for (Index i : indices)
    if (i < 0 || i >= a.rows())
      fail("gather_rows", "row index " + std::to_string(i) + " out of range [0, " +
                              std::to_string(a.rows()) + ")");
  Mat out(static_cast<Index>(indices.size()), a.cols());
  for (size_t j = 0; j < indices.size(); ++j) out.row(static_cast<Index>(j)) = a.value().row(indices[j]);
  return Tensor(make_node(std::move(out), 2, {a.node()},
                          [idx = std::move(indices)](Node& self) {
                            Node& p = *self.parents[0];
                            if (!p.requires_grad) return;
                            if (p.grad.size() == 0)
                              p.grad = Mat::Zero(p.value.rows(), p.value.cols());
                            for (size_t j = 0; j < idx.size(); ++j)
                              p.grad.row(idx[j]) += self.grad.row(static_cast<Index>(j));
                          }));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_rows", "no parts");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) fail("concat_rows", "column counts differ");
    if (p.rank() == 0) fail("concat_rows", "scalar part not allowed");
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<std::shared_ptr<Node>> parents;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    parents.push_back(p.node());
    at += p.rows();
  }
  return Tensor(make_node(std::move(out), 2, std::move(parents),
                          [](Node& self) {
                            Index at = 0;
                            for (auto& p : self.parents) {
                              accum(*p, self.grad.middleRows(at, p->value.rows()));
                              at += p->value.rows();
                            }
                          }));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_cols", "no parts");
  const Index rows = parts[0].rows();
  bool all_vec = true;
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) fail("concat_cols", "row counts differ");
    if (p.rank() == 0) fail("concat_cols", "scalar part not allowed");
    if (p.rank() != 1) all_vec = false;
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<std::shared_ptr<Node>> parents;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    parents.push_back(p.node());
    at += p.cols();
  }
  return Tensor(make_node(std::move(out), all_vec ? 1 : 2, std::move(parents),
                          [](Node& self) {
                            Index at = 0;
                            for (auto& p : self.parents) {
                              accum(*p, self.grad.middleCols(at, p->value.cols()));
                              at += p->value.cols();
                            }
                          }));
}

Tensor concat_scalars(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_scalars", "no parts");
  Mat out(1, static_cast<Index>(parts.size()));
  std::vector<std::shared_ptr<Node>> parents;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].rank() != 0) fail("concat_scalars", "part is not a scalar");
    out(0, static_cast<Index>(i)) = parts[i].item();
    parents.push_back(parts[i].node());
  }
  return Tensor(make_node(std::move(out), 1, std::move(parents),
                          [](Node& self) {
                            for (size_t i = 0; i < self.parents.size(); ++i) {
                              Mat g(1, 1);
                              g(0, 0) = self.grad(0, static_cast<Index>(i));
                              accum(*self.parents[i], g);
                            }
                          }));
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  if (a.rank() < 1) fail("slice_cols", "expects vector or matrix");
  if (start < 0 || count < 0 || start + count > a.cols())
    fail("slice_cols", "range [" + std::to_string(start) + ", " +
                           std::to_string(start + count) + ") out of bounds");
  return Tensor(make_node(a.value().middleCols(start, count), a.rank(),
                          {a.node()}, [start, count](Node& self) {
                            Node& p = *self.parents[0];
                            if (!p.requires_grad) return;
                            if (p.grad.size() == 0)
                              p.grad = Mat::Zero(p.value.rows(), p.value.cols());
                            p.grad.middleCols(start, count) += self.grad;
                          }));
}

Tensor element(const Tensor& a, Index i) {
  if (a.rank() != 1) fail("element", "expects a vector, got " + dims(a));
  if (i < 0 || i >= a.cols()) fail("element", "index out of range");
  Mat v(1, 1);
  v(0, 0) = a.value()(0, i);
  return Tensor(make_node(std::move(v), 0, {a.node()},
                          [i](Node& self) {
                            Node& p = *self.parents[0];
                            if (!p.requires_grad) return;
                            if (p.grad.size() == 0)
                              p.grad = Mat::Zero(p.value.rows(), p.value.cols());
                            p.grad(0, i) += self.grad(0, 0);
                          }));
}

Tensor flatten_vector(const Tensor& a) {
  if (a.rank() == 1) return a;
  if (a.rank() != 2 || (a.rows() != 1 && a.cols() != 1))
    fail("flatten_vector", "expects a single row or column, got " + dims(a));
  const bool is_col = a.cols() == 1 && a.rows() > 1;
  Mat out = is_col ? Mat(a.value().transpose()) : a.value();
  return Tensor(make_node(std::move(out), 1, {a.node()},
                          [is_col](Node& self) {
                            accum(*self.parents[0],
                                  is_col ? Mat(self.grad.transpose()) : self.grad);
                          }));
}

// --- reductions -----------------------------------------------------------------

namespace {
void require_matrix_axis(const char* op, const Tensor& a, int axis) {
  if (a.rank() != 2) fail(op, "expects a matrix, got " + dims(a));
  if (axis != 0 && axis != 1) fail(op, "axis must be 0 or 1");
}
}  // namespace

Tensor mean(const Tensor& a, int axis) {
  require_matrix_axis("mean", a, axis);
  if (axis == 0) {
    Mat out = a.value().colwise().mean();
    const double inv = 1.0 / static_cast<double>(a.rows());
    return Tensor(make_node(std::move(out), 1, {a.node()},
                            [inv](Node& self) {
                              const Node& p = *self.parents[0];
                              Mat g = (self.grad * inv).replicate(p.value.rows(), 1);
                              accum(*self.parents[0], g);
                            }));
  }
  Mat out = a.value().rowwise().mean().transpose();
  const double inv = 1.0 / static_cast<double>(a.cols());
  return Tensor(make_node(std::move(out), 1, {a.node()},
                          [inv](Node& self) {
                            const Node& p = *self.parents[0];
                            Mat g = (self.grad.transpose() * inv)
                                        .replicate(1, p.value.cols());
                            accum(*self.parents[0], g);
                          }));
}

Tensor sum(const Tensor& a, int axis) {
  require_matrix_axis("sum", a, axis);
  if (axis == 0) {
    Mat out = a.value().colwise().sum();
    return Tensor(make_node(std::move(out), 1, {a.node()},
                            [](Node& self) {
                              const Node& p = *self.parents[0];
                              accum(*self.parents[0],
                                    self.grad.replicate(p.value.rows(), 1));
                            }));
  }
  Mat out = a.value().rowwise().sum().transpose();
  return Tensor(make_node(std::move(out), 1, {a.node()},
                          [](Node& self) {
                            const Node& p = *self.parents[0];
                            accum(*self.parents[0],
                                  self.grad.transpose().replicate(1, p.value.cols()));
                          }));
}

Tensor max(const Tensor& a, int axis) {
  require_matrix_axis("max", a, axis);
  const Mat& v = a.value();
  if (axis == 0) {
    Mat out(1, v.cols());
    std::vector<Index> arg(static_cast<size_t>(v.cols()));
    for (Index c = 0; c < v.cols(); ++c) {
      Index best = 0;
      for (Index r = 1; r < v.rows(); ++r)
        if (v(r, c) > v(best, c)) best = r;  // first maximum wins ties
      arg[static_cast<size_t>(c)] = best;
      out(0, c) = v(best, c);
    }
    return Tensor(make_node(std::move(out), 1, {a.node()},
                            [arg = std::move(arg)](Node& self) {
                              Node& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              if (p.grad.size() == 0)
                                p.grad = Mat::Zero(p.value.rows(), p.value.cols());
                              for (Index c = 0; c < p.value.cols(); ++c)
                                p.grad(arg[static_cast<size_t>(c)], c) += self.grad(0, c);
                            }));
  }
  Mat out(1, v.rows());
  std::vector<Index> arg(static_cast<size_t>(v.rows()));
  for (Index r = 0; r < v.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < v.cols(); ++c)
      if (v(r, c) > v(r, best)) best = c;
    arg[static_cast<size_t>(r)] = best;
    out(0, r) = v(r, best);
  }
  return Tensor(make_node(std::move(out), 1, {a.node()},
                          [arg = std::move(arg)](Node& self) {
                            Node& p = *self.parents[0];
                            if (!p.requires_grad) return;
                            if (p.grad.size() == 0)
                              p.grad = Mat::Zero(p.value.rows(), p.value.cols());
                            for (Index r = 0; r < p.value.rows(); ++r)
                              p.grad(r, arg[static_cast<size_t>(r)]) += self.grad(0, r);
                          }));
}

Tensor sum_all(const Tensor& a) {
  require_defined("sum_all", a);
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return Tensor(make_node(std::move(v), 0, {a.node()},
                          [](Node& self) {
                            const Node& p = *self.parents[0];
                            accum(*self.parents[0],
                                  Mat::Constant(p.value.rows(), p.value.cols(),
                                                self.grad(0, 0)));
                          }));
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

// --- pointwise nonlinearities ------------------------------------------------------

namespace {
template <typename Fwd, typename Bwd>
Tensor unary(const char* /*op*/, const Tensor& a, Fwd fwd, Bwd bwd) {
  Mat out = fwd(a.value());
  return Tensor(make_node(std::move(out), a.rank(), {a.node()},
                          [bwd](Node& self) {
                            accum(*self.parents[0],
                                  bwd(self.parents[0]->value, self.value, self.grad));
                          }));
}
}  // namespace

Tensor exp(const Tensor& a) {
  return unary("exp", a,
               [](const Mat& x) -> Mat { return x.array().exp().matrix(); },
               [](const Mat&, const Mat& out, const Mat& g) -> Mat {
                 return (g.array() * out.array()).matrix();
               });
}

Tensor log(const Tensor& a) {
  if ((a.value().array() <= 0.0).any())
    fail("log", "non-positive entry");
  return unary("log", a,
               [](const Mat& x) -> Mat { return x.array().log().matrix(); },
               [](const Mat& x, const Mat&, const Mat& g) -> Mat {
                 return (g.array() / x.array()).matrix();
               });
}

Tensor sqrt(const Tensor& a) {
  if ((a.value().array() <= 0.0).any())
    fail("sqrt", "non-positive entry");
  return unary("sqrt", a,
               [](const Mat& x) -> Mat { return x.array().sqrt().matrix(); },
               [](const Mat&, const Mat& out, const Mat& g) -> Mat {
                 return (0.5 * g.array() / out.array()).matrix();
               });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a,
               [](const Mat& x) -> Mat { return x.array().tanh().matrix(); },
               [](const Mat&, const Mat& out, const Mat& g) -> Mat {
                 return (g.array() * (1.0 - out.array().square())).matrix();
               });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a,
               [](const Mat& x) -> Mat {
                 return (1.0 / (1.0 + (-x.array()).exp())).matrix();
               },
               [](const Mat&, const Mat& out, const Mat& g) -> Mat {
                 return (g.array() * out.array() * (1.0 - out.array())).matrix();
               });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a,
               [](const Mat& x) -> Mat { return x.array().max(0.0).matrix(); },
               [](const Mat& x, const Mat&, const Mat& g) -> Mat {
                 return (g.array() * (x.array() > 0.0).cast<double>()).matrix();
               });
}

Tensor log1p_neg(const Tensor& a) {
  if ((a.value().array() >= 1.0).any())
    fail("log1p_neg", "entry >= 1");
  return unary("log1p_neg", a,
               [](const Mat& x) -> Mat {
                 return x.unaryExpr([](double v) { return std::log1p(-v); });
               },
               [](const Mat& x, const Mat&, const Mat& g) -> Mat {
                 return (-g.array() / (1.0 - x.array())).matrix();
               });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary("clamp", a,
               [lo, hi](const Mat& x) -> Mat {
                 return x.array().max(lo).min(hi).matrix();
               },
               [lo, hi](const Mat& x, const Mat&, const Mat& g) -> Mat {
                 return (g.array() *
                         ((x.array() >= lo) && (x.array() <= hi)).cast<double>())
                     .matrix();
               });
}

// --- softmax --------------------------------------------------------------------

Tensor softmax(const Tensor& a) {
  if (a.rank() < 1) fail("softmax", "expects vector or matrix");
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    if (!(m > -std::numeric_limits<double>::infinity()))
      fail("softmax", "row " + std::to_string(r) + " has no finite entry");
    // std::exp maps -inf sentinels to exactly zero; Eigen's packet exp
    // leaves a denormal behind.
    Eigen::ArrayXd e = (x.row(r).array() - m)
                           .unaryExpr([](double v) { return std::exp(v); });
    out.row(r) = (e / e.sum()).matrix();
  }
  return Tensor(make_node(std::move(out), a.rank(), {a.node()},
                          [](Node& self) {
                            Node& p = *self.parents[0];
                            if (!p.requires_grad) return;
                            Mat dx(self.value.rows(), self.value.cols());
                            for (Index r = 0; r < self.value.rows(); ++r) {
                              const auto pr = self.value.row(r).array();
                              const auto gr = self.grad.row(r).array();
                              const double s = (gr * pr).sum();
                              dx.row(r) = (pr * (gr - s)).matrix();
                            }
                            accum(p, dx);
                          }));
}

// --- broadcast helpers -------------------------------------------------------------

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 && m.rank() != 1) fail("add_rowvec", "expects matrix or vector lhs");
  if (v.rank() != 1 || v.cols() != m.cols())
    fail("add_rowvec", "vector length " + dims(v) + " does not match columns of " + dims(m));
  Mat out = m.value().rowwise() + Eigen::RowVectorXd(v.value().row(0));
  return Tensor(make_node(std::move(out), m.rank(), {m.node(), v.node()},
                          [](Node& self) {
                            accum(*self.parents[0], self.grad);
                            accum(*self.parents[1], self.grad.colwise().sum());
                          }));
}

Tensor scale_rows(const Tensor& m, const Tensor& c) {
  if (m.rank() != 2) fail("scale_rows", "expects a matrix lhs");
  if (c.rank() != 1 || c.cols() != m.rows())
    fail("scale_rows", "factor length does not match rows");
  Mat out = m.value().array().colwise() *
            Eigen::ArrayXd(c.value().row(0).transpose());
  return Tensor(make_node(std::move(out), 2, {m.node(), c.node()},
                          [](Node& self) {
                            const Mat& mv = self.parents[0]->value;
                            const Mat& cv = self.parents[1]->value;
                            accum(*self.parents[0],
                                  (self.grad.array().colwise() *
                                   Eigen::ArrayXd(cv.row(0).transpose()))
                                      .matrix());
                            accum(*self.parents[1],
                                  ((self.grad.array() * mv.array()).rowwise().sum())
                                      .matrix()
                                      .transpose());
                          }));
}

// --- layer norm ----------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() < 1) fail("layer_norm", "expects vector or matrix input");
  if (gain.rank() != 1 || bias.rank() != 1 || gain.cols() != x.cols() ||
      bias.cols() != x.cols())
    fail("layer_norm", "gain/bias must be vectors matching the feature width");
  const Mat& xv = x.value();
  const Index n = xv.cols();
  Mat xhat(xv.rows(), n);
  Eigen::ArrayXd inv(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().sum() / static_cast<double>(n);
    inv(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((xv.row(r).array() - mu) * inv(r)).matrix();
  }
  Mat out = (xhat.array().rowwise() *
             Eigen::ArrayXd(gain.value().row(0).transpose()).transpose())
                .matrix()
                .rowwise() +
            Eigen::RowVectorXd(bias.value().row(0));
  return Tensor(make_node(
      std::move(out), x.rank(), {x.node(), gain.node(), bias.node()},
      [xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const Index n = xhat.cols();
        accum(pg, (self.grad.array() * xhat.array()).colwise().sum().matrix());
        accum(pb, self.grad.colwise().sum());
        if (!px.requires_grad) return;
        Mat dx(xhat.rows(), n);
        const Eigen::ArrayXd gainv = pg.value.row(0).transpose();
        for (Index r = 0; r < xhat.rows(); ++r) {
          const Eigen::ArrayXd dxh = self.grad.row(r).transpose().array() * gainv;
          const double m1 = dxh.mean();
          const double m2 = (dxh * xhat.row(r).transpose().array()).mean();
          dx.row(r) = (inv(r) *
                       (dxh - m1 - xhat.row(r).transpose().array() * m2))
                          .matrix()
                          .transpose();
        }
        accum(px, dx);
      }));
}

// --- dropout ------------------------------------------------------------------

Tensor dropout(const Tensor& a, double keep, SeededRng& rng, bool training) {
  if (!(keep > 0.0 && keep <= 1.0)) fail("dropout", "keep probability outside (0, 1]");
  if (!training || keep == 1.0) {
    // Identity in inference mode; still a graph node so gradients flow.
    return scale(a, 1.0);
  }
  Mat mask(a.rows(), a.cols());
  for (Index r = 0; r < mask.rows(); ++r)
    for (Index c = 0; c < mask.cols(); ++c)
      mask(r, c) = rng.uniform01() < keep ? 1.0 / keep : 0.0;
  Mat out = (a.value().array() * mask.array()).matrix();
  return Tensor(make_node(std::move(out), a.rank(), {a.node()},
                          [mask = std::move(mask)](Node& self) {
                            accum(*self.parents[0],
                                  (self.grad.array() * mask.array()).matrix());
                          }));
}

// --- straight-through ------------------------------------------------------------

Tensor straight_through_scale(const Tensor& t, const Tensor& s) {
  if (s.rank() != 0) fail("straight_through_scale", "weight must be a scalar");
  if (t.rank() < 1) fail("straight_through_scale", "input must be vector or matrix");
  Mat out = t.value();  // forward pass ignores the weight entirely
  return Tensor(make_node(std::move(out), t.rank(), {t.node(), s.node()},
                          [](Node& self) {
                            const Mat& tv = self.parents[0]->value;
                            const double sv = self.parents[1]->value(0, 0);
                            accum(*self.parents[0], self.grad * sv);
                            Mat gs(1, 1);
                            gs(0, 0) = (self.grad.array() * tv.array()).sum();
                            accum(*self.parents[1], gs);
                          }));
}

// --- backward engine -----------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
  if (loss.rank() != 0)
    throw std::invalid_argument("backward: loss must be a scalar");
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order over grad-requiring ancestors.
  std::vector<Node*> order;
  std::unordered_set<Node*> done;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (done.count(node)) {
      stack.pop_back();
      continue;
    }
    bool descended = false;
    while (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !done.count(p)) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && next >= node->parents.size()) {
      done.insert(node);
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (root->grad.size() == 0) root->grad = Mat::Zero(1, 1);
  root->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
    if (!n->is_leaf && n != root.get()) n->grad.resize(0, 0);
  }
}

}  // namespace selrank
