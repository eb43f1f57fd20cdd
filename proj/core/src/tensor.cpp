#include "ipt/tensor.hpp"

#include <atomic>
#include <cstring>
#include <sstream>

namespace ipt {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      size_(numel(shape_)),
      buf_(std::make_shared<std::vector<double>>(static_cast<std::size_t>(size_), 0.0)) {
  for (auto d : shape_) {
    if (d < 0) throw DimensionError("negative extent in shape " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  size_ = numel(shape_);
  if (size_ != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape_));
  }
  buf_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::share(Shape shape, std::shared_ptr<const std::vector<double>> buf) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.size_ = numel(t.shape_);
  if (!buf || t.size_ != static_cast<std::int64_t>(buf->size())) {
    throw DimensionError("share(): buffer size does not match shape " +
                         shape_str(t.shape_));
  }
  t.buf_ = std::move(buf);
  return t;
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::vector<double>& d = *std::const_pointer_cast<std::vector<double>>(t.buf_);
  std::fill(d.begin(), d.end(), v);
  return t;
}

double* Tensor::mut() {
  if (!buf_) throw ContractError("mut() on an undefined tensor");
  if (buf_.use_count() > 1) {
    buf_ = std::make_shared<std::vector<double>>(*buf_);
  }
  detach();
  return std::const_pointer_cast<std::vector<double>>(buf_)->data();
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw DimensionError("index rank " + std::to_string(idx.size()) +
                         " vs tensor rank " + std::to_string(rank()));
  }
  std::int64_t off = 0;
  int i = 0;
  for (auto v : idx) {
    off = off * shape_[static_cast<std::size_t>(i)] + v;
    ++i;
  }
  return (*buf_)[static_cast<std::size_t>(off)];
}

double Tensor::item() const {
  if (size_ != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return (*buf_)[0];
}

int Tensor::node_on(const Tape& tape) const {
  return (tape_id == tape.id()) ? node : -1;
}

void Tensor::bind(const Tape& tape, int node_id) {
  tape_id = tape.id();
  node = node_id;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_counter{1};
}  // namespace

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

int Tape::watch(Tensor& t) {
  if (!t.defined()) throw ContractError("watch() on an undefined tensor");
  int existing = t.node_on(*this);
  if (existing >= 0) return existing;
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{t.size(), nullptr});
  grads_.emplace_back();
  t.requires_grad = true;
  t.bind(*this, id);
  return id;
}

int Tape::push(std::int64_t out_size, std::function<void(Tape&, int)> back) {
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{out_size, std::move(back)});
  grads_.emplace_back();
  return id;
}

void Tape::accumulate(int node_id, const double* g, std::int64_t n) {
  auto& buf = grads_[static_cast<std::size_t>(node_id)];
  if (nodes_[static_cast<std::size_t>(node_id)].size != n) {
    throw ContractError("gradient size mismatch at node " + std::to_string(node_id));
  }
  if (buf.empty()) buf.assign(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] += g[i];
}

bool Tape::has_grad(int node_id) const {
  return node_id >= 0 && node_id < static_cast<int>(grads_.size()) &&
         !grads_[static_cast<std::size_t>(node_id)].empty();
}

const std::vector<double>& Tape::grad_of(int node_id) const {
  return grads_[static_cast<std::size_t>(node_id)];
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  }
  int start = loss.node_on(*this);
  if (start < 0) throw ContractError("backward(): loss is not recorded on this tape");
  grads_[static_cast<std::size_t>(start)].assign(1, 1.0);
  for (int i = start; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.back && !grads_[static_cast<std::size_t>(i)].empty()) {
      node.back(*this, i);
    }
  }
}

Tensor Tape::grad(const Tensor& t) const {
  int id = t.node_on(*this);
  if (id < 0) throw ContractError("grad(): tensor is not on this tape");
  Tensor g(t.shape());
  if (has_grad(id)) {
    const auto& buf = grads_[static_cast<std::size_t>(id)];
    std::memcpy(g.mut(), buf.data(), buf.size() * sizeof(double));
  }
  return g;
}

bool tracked(const Tensor& t) {
  Tape* tape = Tape::active();
  return tape && t.node_on(*tape) >= 0;
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw ContractError("backward() called with no active tape");
  tape->backward(loss);
}

}  // namespace ipt
