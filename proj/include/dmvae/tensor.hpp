#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmvae {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t numel_of(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Floor applied to the argument of log() unless the strict variant is used.
inline constexpr double kLogFloor = 1e-12;

/// Dense row-major array of doubles.
///
/// Tensors are immutable values: the storage is shared between copies and
/// never written after construction, so copies are cheap and tensors can be
/// handed to other threads once detached from a tape. A tensor produced while
/// a Tape is active carries the id of the node that produced it.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  /// Row-major 2-D tensor from nested rows (all rows the same length).
  static Tensor matrix(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_->size(); }
  std::span<const double> data() const { return *data_; }
  std::vector<double> to_vector() const { return *data_; }

  double operator[](std::size_t flat) const { return (*data_)[flat]; }
  double at(std::size_t row, std::size_t col) const;
  /// Value of a single-element tensor.
  double item() const;

  int node() const { return node_; }
  bool tracked() const { return node_ >= 0; }
  /// Same values, no tape association.
  Tensor detach() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  int node_ = -1;
};

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  mul,
  div,
  neg,
  relu,
  sigmoid,
  exp,
  log,
  square,
  clamp,
  sum,
  sum_lastdim,
  mean,
  broadcast,
  reshape,
  concat,
  slice,
  softmax_lastdim,
  logsumexp_lastdim,
  max_lastdim,
  take_rows,
  transpose,
  /// Composite op recorded outside this module through Tape::record.
  custom,
};

const char* op_name(OpKind kind);

/// Gradients produced by Tape::backward, indexed by node id.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<std::vector<double>> grads, std::vector<Shape> shapes);

  /// dLoss/dt. A tensor the loss does not depend on gets an all-zero gradient.
  Tensor of(const Tensor& t) const;
  bool reached(const Tensor& t) const;

 private:
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
};

/// Records operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the list is topologically
/// sorted and backward() walks it once from the end.
class Tape {
 public:
  /// Receives dLoss/dOutput and fills dLoss/dInput for every input whose
  /// buffer is non-empty (constants get an empty buffer and are skipped).
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::vector<std::vector<double>>& grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a differentiable input and returns a tracked copy of it.
  Tensor watch(const Tensor& t);

  Gradients backward(const Tensor& loss) const;

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t node) const { return nodes_.at(node).kind; }
  const std::vector<int>& inputs(std::size_t node) const { return nodes_.at(node).inputs; }

  /// Used by the op implementations. Returns `out` with its node id set, or
  /// `out` untouched when none of the inputs is tracked.
  Tensor record(OpKind kind, const std::vector<const Tensor*>& inputs, Tensor out, BackwardFn fn);

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    std::vector<std::size_t> input_sizes;
    Shape shape;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

/// The tape operations record onto on this thread, or nullptr.
Tape* active_tape();

/// Makes a tape active on the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (e.g. for evaluation passes) for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops broadcast numpy-style. The *_lastdim
// reductions keep the reduced axis with size 1.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
/// log(max(a, floor)); the gradient is zero where the floor is active.
Tensor log(const Tensor& a, double floor = kLogFloor);
/// log(a) that throws DomainError on any non-positive entry.
Tensor log_strict(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor sum(const Tensor& a);
Tensor sum_lastdim(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor broadcast(const Tensor& a, const Shape& shape);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts);
/// Columns [begin, end) of the last axis.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);
Tensor softmax_lastdim(const Tensor& a);
Tensor logsumexp_lastdim(const Tensor& a);
Tensor max_lastdim(const Tensor& a);

/// Swaps the last two axes: [..., a, b] -> [..., b, a].
Tensor transpose(const Tensor& a);

/// Rows selected by index along the first axis (gather). Gradient scatters back.
Tensor take_rows(const Tensor& a, std::span<const std::size_t> rows);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }
inline Tensor operator-(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }

}  // namespace dmvae
