#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "odflow/errors.hpp"

// Reverse-mode automatic differentiation over dense double tensors of rank
// 0..2, recorded on an explicit Tape. Values are 64-bit; gradients live in a
// same-shape accumulator allocated for any tensor that participates in
// differentiation. A tape is single-threaded; independent tapes may run on
// independent threads.
//
// Reduction kernels (scatter_add, segment_softmax, layer_norm, ...) iterate
// elements in storage order, so results are bit-reproducible and invariant
// under node relabeling that preserves edge-list order.

namespace odflow::ad {

using Shape = std::vector<int>;

struct TensorData {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // empty unless tracked
  bool requires_grad = false;
  bool tracked = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int rows() const;
  int cols() const;
  std::size_t numel() const { return d_->val.size(); }

  const std::vector<double>& values() const { return d_->val; }
  std::vector<double>& values() { return d_->val; }
  const std::vector<double>& grad() const;
  std::vector<double>& grad();

  bool requires_grad() const { return d_->requires_grad; }
  bool tracked() const { return d_->tracked; }
  void zero_grad();

  double item() const;
  double at(int i, int j) const { return d_->val[static_cast<std::size_t>(i) * cols() + j]; }

  TensorData* data() const { return d_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
  friend Tensor make_tracked(Shape shape);
};

class Tape {
 public:
  void record(std::function<void()> backward_fn) { recs_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return recs_.size(); }
  void clear() { recs_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded adjoints in reverse.
  // Throws contract_error if loss is not a tracked scalar.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> recs_;
};

// When enabled, every kernel validates that its output is finite and throws
// contract_error otherwise. Off by default; tests switch it on.
void set_debug_checks(bool enabled);
bool debug_checks();

// ---- kernels -------------------------------------------------------------

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor hadamard(Tape& t, const Tensor& a, const Tensor& b);
Tensor scalar_scale(Tape& t, const Tensor& a, double c);
// a * s where s is a one-element tensor (learnable scalar broadcast).
Tensor mul_scalar_tensor(Tape& t, const Tensor& a, const Tensor& s);
// row-vector broadcasts over an [m x n] matrix
Tensor add_rowvec(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul_rowvec(Tape& t, const Tensor& a, const Tensor& b);
// scales row i of a by s[i]
Tensor scale_rows(Tape& t, const Tensor& a, const Tensor& s);
Tensor concat(Tape& t, const std::vector<Tensor>& parts, int axis);
Tensor slice_cols(Tape& t, const Tensor& a, int begin, int end);
Tensor gather_rows(Tape& t, const Tensor& a, const std::vector<int>& index);
Tensor scatter_add(Tape& t, const Tensor& a, const std::vector<int>& index, int out_rows);
Tensor row_sum(Tape& t, const Tensor& a);
// Softmax over elements sharing a segment id; empty segments are legal.
Tensor segment_softmax(Tape& t, const Tensor& x, const std::vector<int>& segment, int num_segments);
// Row-wise masked softmax; rows whose mask is entirely false come back zero.
Tensor softmax_rows(Tape& t, const Tensor& a, const std::vector<std::uint8_t>* mask = nullptr);
Tensor layer_norm(Tape& t, const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor tanh_op(Tape& t, const Tensor& a);
Tensor sigmoid_op(Tape& t, const Tensor& a);
Tensor sum_all(Tape& t, const Tensor& a);
Tensor mean_all(Tape& t, const Tensor& a);
// mean |a - b| with the subgradient at exact zeros defined as 0
Tensor l1_mean(Tape& t, const Tensor& a, const Tensor& b);

}  // namespace odflow::ad
