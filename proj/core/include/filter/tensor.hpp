#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace filter {

class Tape;
namespace detail {
struct TensorAccess;
}

// Dense 2-D double tensor with optional participation in reverse-mode
// autodiff. Copies share storage (handle semantics); gradients accumulate
// into the shared state so leaves held by the caller see them after
// backward(). All math is 64-bit; see gradcheck.hpp for the oracle.
class Tensor {
 public:
  Tensor();
  Tensor(int rows, int cols, bool requires_grad = false);

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double value,
                     bool requires_grad = false);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                          bool requires_grad = false);
  static Tensor from_flat(int rows, int cols, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor row(std::initializer_list<double> values,
                    bool requires_grad = false);

  int rows() const;
  int cols() const;
  std::size_t size() const;
  bool is_scalar() const;  // 1x1

  double operator()(int r, int c) const;
  double& at(int r, int c);
  std::span<const double> values() const;
  // Mutating values invalidates any tape recorded against this tensor;
  // only touch between steps (optimizer, finite differences).
  std::span<double> values_mut();

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;  // valid only when has_grad()
  void zero_grad();

  // Value of a 1x1 tensor; throws ShapeError otherwise.
  double item() const;

  bool same_storage(const Tensor& other) const;
  std::string shape_str() const;

 private:
  struct State;
  std::shared_ptr<State> st_;
  friend struct detail::TensorAccess;
};

// Ordered record of one forward pass. Backward replays it exactly once in
// reverse. A tape and the tensors recorded on it form a single-threaded
// unit; activation is per-thread, so independent tapes may run on
// independent threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
  friend struct detail::TensorAccess;
};

// RAII activation of a tape on the current thread. Ops executed while a
// tape is active (and touching at least one requires_grad tensor) are
// recorded; with no active tape they run value-only.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

// --- Differentiable operations -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// tanh-approximation gelu: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& a);

// Row-wise softmax, stabilized by row-max subtraction. Throws NumericError
// on non-finite input.
Tensor softmax_rows(const Tensor& a);

// Per-row standardization with population variance, then y = gain*x_hat + bias.
// gain and bias are 1 x cols.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor concat_cols(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_cols(const Tensor& x, int left_cols);

// Row-axis variants. With one row per sequence position these implement
// joining a pair of streams into one attention span and cutting it back.
Tensor concat_rows(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_rows(const Tensor& x, int top_rows);

// Column gather: out[:,i] = table[:,indices[i]]. Backward scatter-adds.
// This is the embedding lookup and the pooling primitive.
Tensor gather_cols(const Tensor& table, const std::vector<int>& indices);

Tensor sum(const Tensor& a);  // 1x1

// -log softmax(logits)[target] over a 1xC row of logits.
Tensor cross_entropy(const Tensor& logits, int target_index);

// Mean over rows of per-row cross entropy; one target per row.
Tensor cross_entropy_rows(const Tensor& logits,
                          const std::vector<int>& targets);

// KL(p || softmax(q)) with p a fixed 1xC probability row (no gradient side)
// and q a 1xC logits row. 0*ln(0) := 0. Gradient flows only into q.
Tensor kl_divergence(const Tensor& p_fixed, const Tensor& q_logits);

// Mean over rows of per-row KL; p_fixed and q_logits are both len x C.
Tensor kl_divergence_rows(const Tensor& p_fixed, const Tensor& q_logits);

// Seeds d(loss)/d(loss) = 1 and replays the active tape in reverse. loss
// must be 1x1 and recorded on the active tape; the tape may be consumed
// only once.
void backward(const Tensor& loss);

}  // namespace filter
