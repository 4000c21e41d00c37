#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "selrank/rng.hpp"

namespace selrank {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace detail {

// One vertex of the define-by-run differentiation graph. Values are dense
// row-major doubles; rank distinguishes scalar (1x1), vector (1xn) and
// matrix storage that share the same Eigen backing type.
struct Node {
  Mat value;
  Mat grad;  // empty until backward touches this node
  int rank = 2;
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // accumulates into parents' grads
};

}  // namespace detail

// Value-semantic handle to a graph node. Copies share the node; graphs are
// rebuilt per training step, while leaf (parameter) tensors persist across
// graphs and accumulate gradients until explicitly cleared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);
  static Tensor matrix(Mat m);
  // Trainable leaf; gradients accumulate across backward calls.
  static Tensor leaf(Mat m, int rank);

  bool defined() const { return node_ != nullptr; }
  int rank() const;
  Index rows() const;
  Index cols() const;
  Index size() const;
  std::vector<Index> shape() const;

  const Mat& value() const;
  Mat& mutable_value();  // leaves only (finite-difference probing, optimizer)
  double item() const;   // rank-0 only

  bool requires_grad() const;
  bool has_grad() const;
  const Mat& grad() const;
  void clear_grad();

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// --- graph construction -----------------------------------------------------
//
// Free functions; each records its backward rule. Shapes must conform
// exactly, no implicit broadcasting beyond the dedicated *_rowvec /
// scale_rows helpers.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor div(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, const Tensor& s);  // s is rank-0, on-graph
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);  // rank-1 x rank-1 -> rank-0

Tensor gather_rows(const Tensor& a, std::vector<Index> indices);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_scalars(const std::vector<Tensor>& parts);  // -> rank-1
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor element(const Tensor& a, Index i);     // rank-1 -> rank-0
Tensor flatten_vector(const Tensor& a);       // 1xn or nx1 matrix -> rank-1

// axis 0 reduces over rows (result length = cols), axis 1 over columns.
Tensor mean(const Tensor& a, int axis);
Tensor sum(const Tensor& a, int axis);
// Max routes its gradient to the first maximal element along the axis.
Tensor max(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // rejects non-positive entries
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor log1p_neg(const Tensor& a);  // log(1 - x), evaluated with log1p
Tensor clamp(const Tensor& a, double lo, double hi);

// Row-wise softmax over the last axis, max-subtracted. -inf entries carry
// zero probability; a row of only -inf is rejected.
Tensor softmax(const Tensor& a);

Tensor add_rowvec(const Tensor& m, const Tensor& v);   // bias broadcast over rows
Tensor scale_rows(const Tensor& m, const Tensor& c);   // per-row scalar factors

// Row-wise normalization: y = gain * (x - mu) / sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Inverted dropout with keep probability `keep`; identity when !training.
Tensor dropout(const Tensor& a, double keep, SeededRng& rng, bool training);

// Forward pass is the identity on t; backward behaves as if the output had
// been t * s, so the selection weight s receives dot(t, upstream) and t is
// scaled by s on the way down.
Tensor straight_through_scale(const Tensor& t, const Tensor& s);

// Elementwise sugar.
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// Reverse-mode sweep from a scalar loss. Repeated calls accumulate into
// leaf gradients; intermediate gradients live only for the sweep.
void backward(const Tensor& loss);

}  // namespace selrank
