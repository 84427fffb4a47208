#include "odflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace odflow::ad {

namespace {

bool g_debug_checks = false;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw contract_error("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Messages must be free until a check actually fails: accept literals as-is
// and build composed messages through a callable.
template <class Msg>
void require(bool cond, Msg&& msg) {
  if (cond) [[likely]]
    return;
  if constexpr (std::is_invocable_v<Msg>)
    throw contract_error(msg());
  else
    throw contract_error(msg);
}

void check_finite(const Tensor& t, const char* op) {
  if (!g_debug_checks) return;
  for (double v : t.values())
    if (!std::isfinite(v))
      throw contract_error(std::string("non-finite value produced by ") + op);
}

Tensor make_out(Shape shape, bool track) {
  Tensor out = Tensor::zeros(std::move(shape));
  if (track) {
    out.data()->tracked = true;
    out.data()->grad.assign(out.numel(), 0.0);
  }
  return out;
}

bool tracked(const Tensor& a) { return a.tracked(); }

}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks() { return g_debug_checks; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->val.assign(shape_numel(d->shape), 0.0);
  d->requires_grad = requires_grad;
  d->tracked = requires_grad;
  if (requires_grad) d->grad.assign(d->val.size(), 0.0);
  return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  require(values.size() == t.numel(), "value count does not match shape");
  t.values() = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{}, {value}, requires_grad);
}

int Tensor::rows() const {
  require(rank() == 2, [&] { return "rows() needs a rank-2 tensor, got " + shape_str(d_->shape); });
  return d_->shape[0];
}

int Tensor::cols() const {
  require(rank() == 2, [&] { return "cols() needs a rank-2 tensor, got " + shape_str(d_->shape); });
  return d_->shape[1];
}

const std::vector<double>& Tensor::grad() const {
  require(d_->tracked, "grad requested on an untracked tensor");
  return d_->grad;
}

std::vector<double>& Tensor::grad() {
  require(d_->tracked, "grad requested on an untracked tensor");
  return d_->grad;
}

void Tensor::zero_grad() {
  if (d_->tracked) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

double Tensor::item() const {
  require(numel() == 1, [&] { return "item() needs a one-element tensor, got " + shape_str(d_->shape); });
  return d_->val[0];
}

void Tape::backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, "backward requires a scalar loss");
  require(loss.tracked(), "backward requires a tracked loss");
  std::fill(loss.data()->grad.begin(), loss.data()->grad.end(), 0.0);
  loss.data()->grad[0] = 1.0;
  for (auto it = recs_.rbegin(); it != recs_.rend(); ++it) (*it)();
}

// ---- kernels ---------------------------------------------------------------

namespace {

// C[m x n] += A[m x k] * B[k x n]; ikj order so the inner loop is contiguous.
void gemm_acc(const double* __restrict a, const double* __restrict b, double* __restrict c,
              int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B^T where B is [k x n]. B is transposed into a
// scratch buffer so the inner loop stays a contiguous saxpy; the summation
// order over n is unchanged, keeping results bit-identical.
void gemm_bt_acc(const double* __restrict a, const double* b, double* __restrict c, int m, int n,
                 int k) {
  thread_local std::vector<double> scratch;
  scratch.resize(static_cast<std::size_t>(n) * k);
  for (int j = 0; j < k; ++j)
    for (int p = 0; p < n; ++p)
      scratch[static_cast<std::size_t>(p) * k + j] = b[static_cast<std::size_t>(j) * n + p];
  const double* __restrict bt = scratch.data();
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * n;
    double* crow = c + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < n; ++p) {
      const double aip = arow[p];
      const double* btrow = bt + static_cast<std::size_t>(p) * k;
      for (int j = 0; j < k; ++j) crow[j] += aip * btrow[j];
    }
  }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n]
void gemm_at_acc(const double* __restrict a, const double* __restrict b, double* __restrict c,
                 int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double aip = arow[p];
      double* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, [&] {
    return "matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " +
           shape_str(b.shape());
  });
  require(a.cols() == b.rows(), [&] {
    return "matmul shape mismatch: " + shape_str(a.shape()) + " * " + shape_str(b.shape());
  });
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_out({m, n}, tracked(a) || tracked(b));
  gemm_acc(a.values().data(), b.values().data(), out.values().data(), m, k, n);
  check_finite(out, "matmul");
  if (out.tracked()) {
    t.record([a, b, out, m, k, n] {
      if (a.tracked())
        gemm_bt_acc(out.grad().data(), b.values().data(), a.data()->grad.data(), m, n, k);
      if (b.tracked())
        gemm_at_acc(a.values().data(), out.grad().data(), b.data()->grad.data(), m, k, n);
    });
  }
  return out;
}

namespace {

template <class Fwd, class Bwd>
Tensor elementwise2(Tape& t, const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  require(a.shape() == b.shape(), [&] {
    return std::string(name) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
           shape_str(b.shape());
  });
  Tensor out = make_out(a.shape(), tracked(a) || tracked(b));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = fwd(a.values()[i], b.values()[i]);
  check_finite(out, name);
  if (out.tracked()) {
    t.record([a, b, out, n, bwd] {
      for (std::size_t i = 0; i < n; ++i) bwd(a, b, out, i);
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  return elementwise2(
      t, a, b, "add", [](double x, double y) { return x + y; },
      [](const Tensor& a, const Tensor& b, const Tensor& out, std::size_t i) {
        const double g = out.grad()[i];
        if (a.tracked()) a.data()->grad[i] += g;
        if (b.tracked()) b.data()->grad[i] += g;
      });
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
  return elementwise2(
      t, a, b, "sub", [](double x, double y) { return x - y; },
      [](const Tensor& a, const Tensor& b, const Tensor& out, std::size_t i) {
        const double g = out.grad()[i];
        if (a.tracked()) a.data()->grad[i] += g;
        if (b.tracked()) b.data()->grad[i] -= g;
      });
}

Tensor hadamard(Tape& t, const Tensor& a, const Tensor& b) {
  return elementwise2(
      t, a, b, "hadamard", [](double x, double y) { return x * y; },
      [](const Tensor& a, const Tensor& b, const Tensor& out, std::size_t i) {
        const double g = out.grad()[i];
        if (a.tracked()) a.data()->grad[i] += g * b.values()[i];
        if (b.tracked()) b.data()->grad[i] += g * a.values()[i];
      });
}

Tensor scalar_scale(Tape& t, const Tensor& a, double c) {
  Tensor out = make_out(a.shape(), tracked(a));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * c;
  check_finite(out, "scalar_scale");
  if (out.tracked()) {
    t.record([a, out, c, n] {
      for (std::size_t i = 0; i < n; ++i) a.data()->grad[i] += out.grad()[i] * c;
    });
  }
  return out;
}

Tensor mul_scalar_tensor(Tape& t, const Tensor& a, const Tensor& s) {
  require(s.numel() == 1, [&] {
    return "mul_scalar_tensor needs a one-element scalar, got " + shape_str(s.shape());
  });
  Tensor out = make_out(a.shape(), tracked(a) || tracked(s));
  const double c = s.values()[0];
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * c;
  check_finite(out, "mul_scalar_tensor");
  if (out.tracked()) {
    t.record([a, s, out, c, n] {
      if (a.tracked())
        for (std::size_t i = 0; i < n; ++i) a.data()->grad[i] += out.grad()[i] * c;
      if (s.tracked()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += out.grad()[i] * a.values()[i];
        s.data()->grad[0] += acc;
      }
    });
  }
  return out;
}

namespace {

void require_rowvec(const Tensor& a, const Tensor& b, const char* name) {
  require(a.rank() == 2, [&] {
    return std::string(name) + " needs a rank-2 left operand, got " + shape_str(a.shape());
  });
  require(b.rank() == 1 && b.shape()[0] == a.cols(), [&] {
    return std::string(name) + " row vector must be [" + std::to_string(a.cols()) + "], got " +
           shape_str(b.shape());
  });
}

}  // namespace

Tensor add_rowvec(Tape& t, const Tensor& a, const Tensor& b) {
  require_rowvec(a, b, "add_rowvec");
  const int m = a.rows(), n = a.cols();
  Tensor out = make_out({m, n}, tracked(a) || tracked(b));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<std::size_t>(i) * n + j] =
          a.values()[static_cast<std::size_t>(i) * n + j] + b.values()[j];
  check_finite(out, "add_rowvec");
  if (out.tracked()) {
    t.record([a, b, out, m, n] {
      const bool ta = a.tracked(), tb = b.tracked();
      const double* og = out.grad().data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double g = og[static_cast<std::size_t>(i) * n + j];
          if (ta) a.data()->grad[static_cast<std::size_t>(i) * n + j] += g;
          if (tb) b.data()->grad[j] += g;
        }
    });
  }
  return out;
}

Tensor mul_rowvec(Tape& t, const Tensor& a, const Tensor& b) {
  require_rowvec(a, b, "mul_rowvec");
  const int m = a.rows(), n = a.cols();
  Tensor out = make_out({m, n}, tracked(a) || tracked(b));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<std::size_t>(i) * n + j] =
          a.values()[static_cast<std::size_t>(i) * n + j] * b.values()[j];
  check_finite(out, "mul_rowvec");
  if (out.tracked()) {
    t.record([a, b, out, m, n] {
      const bool ta = a.tracked(), tb = b.tracked();
      const double* og = out.grad().data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          const double g = og[idx];
          if (ta) a.data()->grad[idx] += g * b.values()[j];
          if (tb) b.data()->grad[j] += g * a.values()[idx];
        }
    });
  }
  return out;
}

Tensor scale_rows(Tape& t, const Tensor& a, const Tensor& s) {
  require(a.rank() == 2,
          [&] { return "scale_rows needs a rank-2 tensor, got " + shape_str(a.shape()); });
  require(s.rank() == 1 && s.shape()[0] == a.rows(), [&] {
    return "scale_rows scale must be [" + std::to_string(a.rows()) + "], got " +
           shape_str(s.shape());
  });
  const int m = a.rows(), n = a.cols();
  Tensor out = make_out({m, n}, tracked(a) || tracked(s));
  for (int i = 0; i < m; ++i) {
    const double c = s.values()[i];
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<std::size_t>(i) * n + j] =
          a.values()[static_cast<std::size_t>(i) * n + j] * c;
  }
  check_finite(out, "scale_rows");
  if (out.tracked()) {
    t.record([a, s, out, m, n] {
      for (int i = 0; i < m; ++i) {
        const double c = s.values()[i];
        double srow = 0.0;
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          const double g = out.grad()[idx];
          if (a.tracked()) a.data()->grad[idx] += g * c;
          srow += g * a.values()[idx];
        }
        if (s.tracked()) s.data()->grad[i] += srow;
      }
    });
  }
  return out;
}

Tensor concat(Tape& t, const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat needs at least one tensor");
  require(axis == 0 || axis == 1, "concat supports axis 0 or 1");
  bool track = false;
  for (const Tensor& p : parts) {
    require(p.rank() == 2,
            [&] { return "concat needs rank-2 tensors, got " + shape_str(p.shape()); });
    track = track || tracked(p);
  }
  int rows = parts[0].rows(), cols = parts[0].cols();
  if (axis == 0) {
    rows = 0;
    for (const Tensor& p : parts) {
      require(p.cols() == cols, "concat axis 0 column mismatch");
      rows += p.rows();
    }
  } else {
    cols = 0;
    for (const Tensor& p : parts) {
      require(p.rows() == rows, "concat axis 1 row mismatch");
      cols += p.cols();
    }
  }
  Tensor out = make_out({rows, cols}, track);
  if (axis == 0) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      std::copy(p.values().begin(), p.values().end(), out.values().begin() + offset);
      offset += p.numel();
    }
  } else {
    int col0 = 0;
    for (const Tensor& p : parts) {
      for (int i = 0; i < rows; ++i)
        std::copy(p.values().begin() + static_cast<std::size_t>(i) * p.cols(),
                  p.values().begin() + static_cast<std::size_t>(i + 1) * p.cols(),
                  out.values().begin() + static_cast<std::size_t>(i) * cols + col0);
      col0 += p.cols();
    }
  }
  check_finite(out, "concat");
  if (out.tracked()) {
    t.record([parts, out, axis, rows, cols] {
      if (axis == 0) {
        std::size_t offset = 0;
        for (const Tensor& p : parts) {
          if (p.tracked())
            for (std::size_t i = 0; i < p.numel(); ++i) p.data()->grad[i] += out.grad()[offset + i];
          offset += p.numel();
        }
      } else {
        int col0 = 0;
        const double* og = out.grad().data();
        for (const Tensor& p : parts) {
          const int w = p.cols();
          if (p.tracked()) {
            double* pg = p.data()->grad.data();
            for (int i = 0; i < rows; ++i)
              for (int j = 0; j < w; ++j)
                pg[static_cast<std::size_t>(i) * w + j] +=
                    og[static_cast<std::size_t>(i) * cols + col0 + j];
          }
          col0 += w;
        }
      }
    });
  }
  return out;
}

Tensor slice_cols(Tape& t, const Tensor& a, int begin, int end) {
  require(a.rank() == 2, "slice_cols needs a rank-2 tensor");
  require(0 <= begin && begin < end && end <= a.cols(), "slice_cols range out of bounds");
  const int m = a.rows(), n = a.cols(), w = end - begin;
  Tensor out = make_out({m, w}, tracked(a));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j)
      out.values()[static_cast<std::size_t>(i) * w + j] =
          a.values()[static_cast<std::size_t>(i) * n + begin + j];
  if (out.tracked()) {
    t.record([a, out, m, n, w, begin] {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          a.data()->grad[static_cast<std::size_t>(i) * n + begin + j] +=
              out.grad()[static_cast<std::size_t>(i) * w + j];
    });
  }
  return out;
}

Tensor gather_rows(Tape& t, const Tensor& a, const std::vector<int>& index) {
  require(a.rank() == 2, "gather_rows needs a rank-2 tensor");
  const int m = a.rows(), n = a.cols();
  for (int i : index)
    require(0 <= i && i < m,
            [&] { return "gather_rows index " + std::to_string(i) + " out of range"; });
  Tensor out = make_out({static_cast<int>(index.size()), n}, tracked(a));
  for (std::size_t k = 0; k < index.size(); ++k)
    std::copy(a.values().begin() + static_cast<std::size_t>(index[k]) * n,
              a.values().begin() + static_cast<std::size_t>(index[k] + 1) * n,
              out.values().begin() + k * n);
  if (out.tracked()) {
    t.record([a, out, index, n] {
      for (std::size_t k = 0; k < index.size(); ++k)
        for (int j = 0; j < n; ++j)
          a.data()->grad[static_cast<std::size_t>(index[k]) * n + j] += out.grad()[k * n + j];
    });
  }
  return out;
}

Tensor scatter_add(Tape& t, const Tensor& a, const std::vector<int>& index, int out_rows) {
  require(a.rank() == 2, "scatter_add needs a rank-2 tensor");
  require(static_cast<std::size_t>(a.rows()) == index.size(),
          "scatter_add index count must equal row count");
  const int n = a.cols();
  for (int i : index)
    require(0 <= i && i < out_rows,
            [&] { return "scatter_add index " + std::to_string(i) + " out of range"; });
  Tensor out = make_out({out_rows, n}, tracked(a));
  for (std::size_t k = 0; k < index.size(); ++k)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<std::size_t>(index[k]) * n + j] += a.values()[k * n + j];
  check_finite(out, "scatter_add");
  if (out.tracked()) {
    t.record([a, out, index, n] {
      for (std::size_t k = 0; k < index.size(); ++k)
        for (int j = 0; j < n; ++j)
          a.data()->grad[k * n + j] += out.grad()[static_cast<std::size_t>(index[k]) * n + j];
    });
  }
  return out;
}

Tensor row_sum(Tape& t, const Tensor& a) {
  require(a.rank() == 2, "row_sum needs a rank-2 tensor");
  const int m = a.rows(), n = a.cols();
  Tensor out = make_out({m}, tracked(a));
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += a.values()[static_cast<std::size_t>(i) * n + j];
    out.values()[i] = s;
  }
  if (out.tracked()) {
    t.record([a, out, m, n] {
      for (int i = 0; i < m; ++i) {
        const double g = out.grad()[i];
        for (int j = 0; j < n; ++j) a.data()->grad[static_cast<std::size_t>(i) * n + j] += g;
      }
    });
  }
  return out;
}

Tensor segment_softmax(Tape& t, const Tensor& x, const std::vector<int>& segment,
                       int num_segments) {
  require(x.rank() == 1,
          [&] { return "segment_softmax needs a rank-1 tensor, got " + shape_str(x.shape()); });
  require(x.numel() == segment.size(), "segment id count must equal element count");
  for (int s : segment)
    require(0 <= s && s < num_segments, "segment id out of range");
  const std::size_t n = x.numel();
  Tensor out = make_out({static_cast<int>(n)}, tracked(x));
  std::vector<double> seg_max(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    seg_max[segment[i]] = std::max(seg_max[segment[i]], x.values()[i]);
  std::vector<double> seg_sum(num_segments, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    out.values()[i] = std::exp(x.values()[i] - seg_max[segment[i]]);
    seg_sum[segment[i]] += out.values()[i];
  }
  for (std::size_t i = 0; i < n; ++i) out.values()[i] /= seg_sum[segment[i]];
  check_finite(out, "segment_softmax");
  if (out.tracked()) {
    t.record([x, out, segment, num_segments, n] {
      std::vector<double> seg_dot(num_segments, 0.0);
      for (std::size_t i = 0; i < n; ++i) seg_dot[segment[i]] += out.values()[i] * out.grad()[i];
      for (std::size_t i = 0; i < n; ++i)
        x.data()->grad[i] += out.values()[i] * (out.grad()[i] - seg_dot[segment[i]]);
    });
  }
  return out;
}

Tensor softmax_rows(Tape& t, const Tensor& a, const std::vector<std::uint8_t>* mask) {
  require(a.rank() == 2, "softmax_rows needs a rank-2 tensor");
  const int m = a.rows(), n = a.cols();
  if (mask)
    require(mask->size() == a.numel(), "softmax mask must match the logits shape");
  Tensor out = make_out({m, n}, tracked(a));
  for (int i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      if (mask && !(*mask)[idx]) continue;
      any = true;
      mx = std::max(mx, a.values()[idx]);
    }
    if (!any) continue;  // all-masked row stays zero by contract
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      if (mask && !(*mask)[idx]) continue;
      out.values()[idx] = std::exp(a.values()[idx] - mx);
      sum += out.values()[idx];
    }
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      if (mask && !(*mask)[idx]) continue;
      out.values()[idx] /= sum;
    }
  }
  check_finite(out, "softmax_rows");
  if (out.tracked()) {
    t.record([a, out, m, n] {
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          dot += out.values()[idx] * out.grad()[idx];
        }
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          a.data()->grad[idx] += out.values()[idx] * (out.grad()[idx] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& t, const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  require(a.rank() == 2, "layer_norm needs a rank-2 tensor");
  const int m = a.rows(), n = a.cols();
  require(gain.rank() == 1 && gain.shape()[0] == n,
          [&] { return "layer_norm gain must be [" + std::to_string(n) + "]"; });
  require(bias.rank() == 1 && bias.shape()[0] == n,
          [&] { return "layer_norm bias must be [" + std::to_string(n) + "]"; });
  Tensor out = make_out({m, n}, tracked(a) || tracked(gain) || tracked(bias));
  // Keep normalized activations for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(a.numel());
  auto inv_sigma = std::make_shared<std::vector<double>>(m);
  for (int i = 0; i < m; ++i) {
    const double* row = a.values().data() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      (*xhat)[idx] = (row[j] - mu) * is;
      out.values()[idx] = (*xhat)[idx] * gain.values()[j] + bias.values()[j];
    }
  }
  check_finite(out, "layer_norm");
  if (out.tracked()) {
    t.record([a, gain, bias, out, xhat, inv_sigma, m, n] {
      for (int i = 0; i < m; ++i) {
        const double is = (*inv_sigma)[i];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          const double g = out.grad()[idx];
          const double dxhat = g * gain.values()[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * (*xhat)[idx];
          if (gain.tracked()) gain.data()->grad[j] += g * (*xhat)[idx];
          if (bias.tracked()) bias.data()->grad[j] += g;
        }
        if (a.tracked())
          for (int j = 0; j < n; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * n + j;
            const double dxhat = out.grad()[idx] * gain.values()[j];
            a.data()->grad[idx] +=
                is * (dxhat - sum_dxhat / n - (*xhat)[idx] * sum_dxhat_xhat / n);
          }
      }
    });
  }
  return out;
}

namespace {

template <class Fwd, class Deriv>
Tensor unary(Tape& t, const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
  Tensor out = make_out(a.shape(), tracked(a));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = fwd(a.values()[i]);
  check_finite(out, name);
  if (out.tracked()) {
    t.record([a, out, n, deriv] {
      for (std::size_t i = 0; i < n; ++i) a.data()->grad[i] += out.grad()[i] * deriv(out.values()[i]);
    });
  }
  return out;
}

}  // namespace

Tensor tanh_op(Tape& t, const Tensor& a) {
  return unary(
      t, a, "tanh", [](double x) { return std::tanh(x); }, [](double y) { return 1.0 - y * y; });
}

Tensor sigmoid_op(Tape& t, const Tensor& a) {
  return unary(
      t, a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double y) { return y * (1.0 - y); });
}

Tensor sum_all(Tape& t, const Tensor& a) {
  Tensor out = make_out({}, tracked(a));
  double s = 0.0;
  for (double v : a.values()) s += v;
  out.values()[0] = s;
  if (out.tracked()) {
    t.record([a, out] {
      const double g = out.grad()[0];
      for (std::size_t i = 0; i < a.numel(); ++i) a.data()->grad[i] += g;
    });
  }
  return out;
}

Tensor mean_all(Tape& t, const Tensor& a) {
  require(a.numel() > 0, "mean_all of an empty tensor");
  return scalar_scale(t, sum_all(t, a), 1.0 / static_cast<double>(a.numel()));
}

Tensor l1_mean(Tape& t, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), [&] {
    return "l1_mean shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape());
  });
  require(a.numel() > 0, "l1_mean of empty tensors");
  Tensor out = make_out({}, tracked(a) || tracked(b));
  const std::size_t n = a.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(a.values()[i] - b.values()[i]);
  out.values()[0] = s / static_cast<double>(n);
  check_finite(out, "l1_mean");
  if (out.tracked()) {
    t.record([a, b, out, n] {
      const double g = out.grad()[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = a.values()[i] - b.values()[i];
        const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        if (a.tracked()) a.data()->grad[i] += g * sign;
        if (b.tracked()) b.data()->grad[i] -= g * sign;
      }
    });
  }
  return out;
}

}  // namespace odflow::ad
