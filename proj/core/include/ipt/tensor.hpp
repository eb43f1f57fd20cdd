#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "ipt/errors.hpp"

namespace ipt {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Dense row-major float64 tensor with value semantics. Copies share the
/// underlying buffer until someone calls mut(); no Tensor ever observes a
/// mutation made through another Tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  /// Wraps an existing buffer without copying (used by reshape-like ops).
  static Tensor share(Shape shape, std::shared_ptr<const std::vector<double>> buf);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return size_; }
  bool defined() const { return static_cast<bool>(buf_); }

  const double* data() const { return buf_->data(); }
  /// Copy-on-write mutable access. Detaches the tensor from any tape.
  double* mut();

  double at(std::initializer_list<std::int64_t> idx) const;
  /// Single element of a size-1 tensor.
  double item() const;

  const std::shared_ptr<const std::vector<double>>& buf() const { return buf_; }

  bool requires_grad = false;

  // Gradient-tape bookkeeping. A node id is only meaningful together with
  // the id of the tape that issued it; stale ids from dead tapes are ignored.
  std::uint64_t tape_id = 0;
  int node = -1;
  int node_on(const Tape& tape) const;
  void bind(const Tape& tape, int node_id);
  void detach() {
    tape_id = 0;
    node = -1;
  }

 private:
  Shape shape_;
  std::int64_t size_ = 0;
  std::shared_ptr<const std::vector<double>> buf_;
};

/// Reverse-mode gradient tape, confined to one logical thread. Constructing
/// a Tape makes it the active tape for the current thread (scoped, nestable);
/// ops record nodes only while a tape is active and an input is tracked.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::uint64_t id() const { return id_; }

  /// Registers a leaf (typically a parameter) so its gradient can be read
  /// back after backward().
  int watch(Tensor& t);

  /// Records an interior node. `back` runs during backward(); it reads this
  /// node's gradient and accumulates into its parents.
  int push(std::int64_t out_size, std::function<void(Tape&, int)> back);

  /// Adds `g` (length = node size) into the node's gradient buffer.
  void accumulate(int node_id, const double* g, std::int64_t n);
  void accumulate(int node_id, const std::vector<double>& g) {
    accumulate(node_id, g.data(), static_cast<std::int64_t>(g.size()));
  }

  bool has_grad(int node_id) const;
  const std::vector<double>& grad_of(int node_id) const;

  /// Reverse-mode sweep from a scalar loss recorded on this tape.
  void backward(const Tensor& loss);

  /// Gradient of a watched/interior tensor; zeros if it was never reached.
  Tensor grad(const Tensor& t) const;

 private:
  struct Node {
    std::int64_t size = 0;
    std::function<void(Tape&, int)> back;
  };
  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  Tape* prev_ = nullptr;
};

/// True when `t` carries a live node on the active tape.
bool tracked(const Tensor& t);

/// backward() on the active tape; `loss` must be scalar.
void backward(const Tensor& loss);

}  // namespace ipt
