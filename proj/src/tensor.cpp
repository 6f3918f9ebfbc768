#include "dmvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dmvae/kernels.hpp"

namespace dmvae {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
  if (numel_of(shape_) != data.size())
    throw ShapeError("shape " + to_string(shape_) + " does not match " + std::to_string(data.size()) +
                     " values");
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("matrix() needs at least one row");
  const auto cols = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("matrix() rows have different lengths");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(flat));
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) on tensor of shape " + to_string(shape_));
  return (*data_)[row * shape_[1] + col];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.node_ = -1;
  return t;
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::neg: return "neg";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::square: return "square";
    case OpKind::clamp: return "clamp";
    case OpKind::sum: return "sum";
    case OpKind::sum_lastdim: return "sum_lastdim";
    case OpKind::mean: return "mean";
    case OpKind::broadcast: return "broadcast";
    case OpKind::reshape: return "reshape";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::softmax_lastdim: return "softmax_lastdim";
    case OpKind::logsumexp_lastdim: return "logsumexp_lastdim";
    case OpKind::max_lastdim: return "max_lastdim";
    case OpKind::take_rows: return "take_rows";
    case OpKind::transpose: return "transpose";
    case OpKind::custom: return "custom";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active = nullptr;
}

Tape* active_tape() { return g_active; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

NoGradScope::NoGradScope() : previous_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = previous_; }

Gradients::Gradients(std::vector<std::vector<double>> grads, std::vector<Shape> shapes)
    : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

Tensor Gradients::of(const Tensor& t) const {
  if (!t.tracked()) throw TapeError("gradient requested for a tensor that is not on the tape");
  const auto id = static_cast<std::size_t>(t.node());
  if (id >= grads_.size() || grads_[id].empty()) return Tensor::zeros(t.shape());
  return Tensor(shapes_[id], grads_[id]);
}

bool Gradients::reached(const Tensor& t) const {
  return t.tracked() && static_cast<std::size_t>(t.node()) < grads_.size() &&
         !grads_[static_cast<std::size_t>(t.node())].empty();
}

Tensor Tape::watch(const Tensor& t) {
  Tensor out = t.detach();
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{OpKind::leaf, {}, {}, t.shape(), nullptr});
  return out;
}

Tensor Tape::record(OpKind kind, const std::vector<const Tensor*>& inputs, Tensor out,
                    BackwardFn fn) {
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->tracked(); });
  if (!any) return out;
  Node node{kind, {}, {}, out.shape(), std::move(fn)};
  for (const Tensor* t : inputs) {
    if (t->tracked() && static_cast<std::size_t>(t->node()) >= nodes_.size())
      throw TapeError(std::string(op_name(kind)) + ": input recorded on a different tape");
    node.inputs.push_back(t->node());
    node.input_sizes.push_back(t->numel());
  }
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
  return out;
}

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.numel() != 1)
    throw TapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.tracked() || static_cast<std::size_t>(loss.node()) >= nodes_.size())
    throw TapeError("backward(): loss was not recorded on this tape");

  std::vector<std::vector<double>> grads(nodes_.size());
  std::vector<Shape> shapes(nodes_.size());
  grads[static_cast<std::size_t>(loss.node())] = {1.0};

  for (std::size_t i = static_cast<std::size_t>(loss.node()) + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    shapes[i] = node.shape;
    if (grads[i].empty() || node.kind == OpKind::leaf) continue;

    std::vector<std::vector<double>> grad_in(node.inputs.size());
    for (std::size_t k = 0; k < node.inputs.size(); ++k)
      if (node.inputs[k] >= 0) grad_in[k].assign(node.input_sizes[k], 0.0);
    node.backward(grads[i], grad_in);

    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (node.inputs[k] < 0) continue;
      auto& dst = grads[static_cast<std::size_t>(node.inputs[k])];
      if (dst.empty()) {
        dst = std::move(grad_in[k]);
      } else {
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += grad_in[k][j];
      }
    }
    // Interior gradients are not needed once propagated.
    grads[i].clear();
    grads[i].shrink_to_fit();
  }
  return Gradients(std::move(grads), std::move(shapes));
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Tensor record(OpKind kind, std::vector<const Tensor*> inputs, Tensor out, Tape::BackwardFn fn) {
  Tape* tape = active_tape();
  if (tape == nullptr) return out;
  return tape->record(kind, inputs, std::move(out), std::move(fn));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// Maps a flat output index to the flat index of a broadcast input.
struct IndexMap {
  enum class Mode { identity, zero, modulo, table } mode = Mode::identity;
  std::size_t mod = 1;
  std::vector<std::size_t> table;

  std::size_t operator()(std::size_t i) const {
    switch (mode) {
      case Mode::identity: return i;
      case Mode::zero: return 0;
      case Mode::modulo: return i % mod;
      case Mode::table: return table[i];
    }
    return 0;
  }
};

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Whether `in` equals the trailing dims of `out` (leading 1s ignored).
bool is_suffix(const Shape& in, const Shape& out) {
  std::size_t lead = 0;
  while (lead < in.size() && in[lead] == 1) ++lead;
  const std::size_t len = in.size() - lead;
  if (len > out.size()) return false;
  return std::equal(in.begin() + static_cast<std::ptrdiff_t>(lead), in.end(),
                    out.end() - static_cast<std::ptrdiff_t>(len));
}

IndexMap make_index_map(const Shape& in, const Shape& out) {
  IndexMap m;
  const auto n_in = numel_of(in);
  const auto n_out = numel_of(out);
  if (n_in == n_out) return m;
  if (n_in == 1) {
    m.mode = IndexMap::Mode::zero;
    return m;
  }
  if (is_suffix(in, out)) {
    m.mode = IndexMap::Mode::modulo;
    m.mod = n_in;
    return m;
  }
  m.mode = IndexMap::Mode::table;
  m.table.resize(n_out);
  const std::size_t r = out.size();
  std::vector<std::size_t> in_stride(r, 0);
  {
    std::size_t s = 1;
    for (std::size_t i = r; i-- > 0;) {
      const std::size_t off = r - in.size();
      if (i < off) continue;
      const std::size_t d = in[i - off];
      in_stride[i] = d == 1 ? 0 : s;
      s *= d;
    }
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n_out; ++flat) {
    m.table[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      ++idx[i];
      src += in_stride[i];
      if (idx[i] < out[i]) break;
      src -= in_stride[i] * idx[i];
      idx[i] = 0;
    }
  }
  return m;
}

// Last-axis view: rows x cols.
struct Rows {
  std::size_t rows;
  std::size_t cols;
};

Rows lastdim_view(const char* op, const Tensor& t) {
  if (t.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1, got scalar");
  const auto cols = t.shape().back();
  return {t.numel() / cols, cols};
}

Shape keepdim_shape(const Shape& s) {
  Shape out = s;
  out.back() = 1;
  return out;
}

// Calls fn(index_fn) with a callable specialized to the map's mode, so the
// mode switch happens once per loop rather than once per element.
template <class Fn>
void with_index(const IndexMap& m, Fn&& fn) {
  switch (m.mode) {
    case IndexMap::Mode::identity:
      fn([](std::size_t i) { return i; });
      break;
    case IndexMap::Mode::zero:
      fn([](std::size_t) { return std::size_t{0}; });
      break;
    case IndexMap::Mode::modulo:
      fn([mod = m.mod](std::size_t i) { return i % mod; });
      break;
    case IndexMap::Mode::table:
      fn([t = m.table.data()](std::size_t i) { return t[i]; });
      break;
  }
}

template <class Fn>
void for_each_index(std::size_t n, const IndexMap& ma, const IndexMap& mb, Fn&& fn) {
  with_index(ma, [&](auto ia) {
    with_index(mb, [&](auto ib) {
      for (std::size_t i = 0; i < n; ++i) fn(i, ia(i), ib(i));
    });
  });
}

template <class F, class DA, class DB>
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Shape out_shape = broadcast_shape(op_name(kind), a.shape(), b.shape());
  const auto n = numel_of(out_shape);
  auto ma = std::make_shared<IndexMap>(make_index_map(a.shape(), out_shape));
  auto mb = std::make_shared<IndexMap>(make_index_map(b.shape(), out_shape));
  std::vector<double> out(n);
  const auto pa = a.data();
  const auto pb = b.data();
  if (ma->mode == IndexMap::Mode::identity && mb->mode == IndexMap::Mode::identity) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i]);
  } else if (ma->mode == IndexMap::Mode::identity && mb->mode == IndexMap::Mode::modulo) {
    const std::size_t m = mb->mod;
    for (std::size_t i0 = 0; i0 < n; i0 += m)
      for (std::size_t j = 0; j < m; ++j) out[i0 + j] = f(pa[i0 + j], pb[j]);
  } else {
    for_each_index(n, *ma, *mb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(pa[ia], pb[ib]); });
  }
  return record(kind, {&a, &b}, Tensor(out_shape, std::move(out)),
                [a, b, ma, mb, n, da, db](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  const auto pa = a.data();
                  const auto pb = b.data();
                  if (!gin[0].empty()) {
                    double* ga = gin[0].data();
                    for_each_index(n, *ma, *mb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                      ga[ia] += g[i] * da(pa[ia], pb[ib]);
                    });
                  }
                  if (!gin[1].empty()) {
                    double* gb = gin[1].data();
                    for_each_index(n, *ma, *mb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                      gb[ib] += g[i] * db(pa[ia], pb[ib]);
                    });
                  }
                });
}

// df receives (x, y) and returns dy/dx.
template <class F, class DF>
Tensor unary(OpKind kind, const Tensor& a, F f, DF df) {
  const auto n = a.numel();
  std::vector<double> out(n);
  const auto pa = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[i]);
  Tensor result(a.shape(), std::move(out));
  return record(kind, {&a}, result,
                [a, result, n, df](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  const auto x = a.data();
                  const auto y = result.data();
                  for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[i] * df(x[i], y[i]);
                });
}

}  // namespace

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::matmul(a.data(), b.data(), out, m, k, n);
  return record(OpKind::matmul, {&a, &b}, Tensor({m, n}, std::move(out)),
                [a, b, m, k, n](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  if (!gin[0].empty()) {
                    std::vector<double> ga(m * k);
                    kernels::matmul_nt(g, b.data(), ga, m, n, k);
                    for (std::size_t i = 0; i < ga.size(); ++i) gin[0][i] += ga[i];
                  }
                  if (!gin[1].empty()) {
                    std::vector<double> gb(k * n);
                    kernels::matmul_tn(a.data(), g, gb, m, k, n);
                    for (std::size_t i = 0; i < gb.size(); ++i) gin[1][i] += gb[i];
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::add, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::sub, a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::mul, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::div, a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
  return unary(OpKind::neg, a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      OpKind::relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      OpKind::sigmoid, a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary(OpKind::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a, double floor) {
  return unary(
      OpKind::log, a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Tensor log_strict(const Tensor& a) {
  const auto d = a.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!(d[i] > 0.0))
      throw DomainError("log: non-positive value " + std::to_string(d[i]) + " at index " + std::to_string(i));
  return unary(
      OpKind::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary(
      OpKind::square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw DomainError("clamp: lo > hi");
  return unary(
      OpKind::clamp, a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const auto n = a.numel();
  return record(OpKind::sum, {&a}, Tensor::scalar(acc),
                [n](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
                });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const auto n = a.numel();
  const double inv = 1.0 / static_cast<double>(n);
  return record(OpKind::mean, {&a}, Tensor::scalar(acc * inv),
                [n, inv](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0] * inv;
                });
}

Tensor sum_lastdim(const Tensor& a) {
  const auto [rows, cols] = lastdim_view("sum_lastdim", a);
  std::vector<double> out(rows, 0.0);
  const auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += d[r * cols + c];
    out[r] = acc;
  }
  return record(OpKind::sum_lastdim, {&a}, Tensor(keepdim_shape(a.shape()), std::move(out)),
                [rows, cols](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) gin[0][r * cols + c] += g[r];
                });
}

Tensor broadcast(const Tensor& a, const Shape& shape) {
  if (broadcast_shape("broadcast", a.shape(), shape) != shape) shape_error("broadcast", a.shape(), shape);
  const auto n = numel_of(shape);
  auto map = std::make_shared<IndexMap>(make_index_map(a.shape(), shape));
  std::vector<double> out(n);
  const auto d = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = d[(*map)(i)];
  return record(OpKind::broadcast, {&a}, Tensor(shape, std::move(out)),
                [map, n](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  for (std::size_t i = 0; i < n; ++i) gin[0][(*map)(i)] += g[i];
                });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (numel_of(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  const auto n = a.numel();
  return record(OpKind::reshape, {&a}, Tensor(shape, a.to_vector()),
                [n](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[i];
                });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw ShapeError("concat: scalar inputs");
  const std::size_t rows = parts.front().numel() / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin()))
      shape_error("concat", first, s);
    widths.push_back(s.back());
    total += s.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto d = parts[k].data();
    const auto w = widths[k];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    offset += w;
  }
  Shape out_shape = first;
  out_shape.back() = total;
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return record(OpKind::concat, inputs, Tensor(out_shape, std::move(out)),
                [rows, total, widths](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  std::size_t offset = 0;
                  for (std::size_t k = 0; k < widths.size(); ++k) {
                    const auto w = widths[k];
                    if (!gin[k].empty())
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < w; ++c) gin[k][r * w + c] += g[r * total + offset + c];
                    offset += w;
                  }
                });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  const auto [rows, cols] = lastdim_view("slice", a);
  if (begin >= end || end > cols)
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside last axis of " + to_string(a.shape()));
  const auto w = end - begin;
  std::vector<double> out(rows * w);
  const auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = d[r * cols + begin + c];
  Shape shape = a.shape();
  shape.back() = w;
  return record(OpKind::slice, {&a}, Tensor(shape, std::move(out)),
                [rows = rows, cols = cols, begin, w](std::span<const double> g,
                                                     std::vector<std::vector<double>>& gin) {
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < w; ++c) gin[0][r * cols + begin + c] += g[r * w + c];
                });
}

Tensor softmax_lastdim(const Tensor& a) {
  const auto [rows, cols] = lastdim_view("softmax_lastdim", a);
  std::vector<double> out(a.numel());
  const auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = d.data() + r * cols;
    double* y = out.data() + r * cols;
    const double m = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - m));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  Tensor result(a.shape(), std::move(out));
  return record(OpKind::softmax_lastdim, {&a}, result,
                [result, rows = rows, cols = cols](std::span<const double> g,
                                                   std::vector<std::vector<double>>& gin) {
                  const auto y = result.data();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                    for (std::size_t c = 0; c < cols; ++c)
                      gin[0][r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
                  }
                });
}

Tensor logsumexp_lastdim(const Tensor& a) {
  const auto [rows, cols] = lastdim_view("logsumexp_lastdim", a);
  std::vector<double> out(rows);
  const auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = d.data() + r * cols;
    const double m = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - m);
    out[r] = m + std::log(z);
  }
  Tensor result(keepdim_shape(a.shape()), std::move(out));
  return record(OpKind::logsumexp_lastdim, {&a}, result,
                [a, result, rows = rows, cols = cols](std::span<const double> g,
                                                      std::vector<std::vector<double>>& gin) {
                  const auto x = a.data();
                  const auto y = result.data();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c)
                      gin[0][r * cols + c] += g[r] * std::exp(x[r * cols + c] - y[r]);
                });
}

Tensor max_lastdim(const Tensor& a) {
  const auto [rows, cols] = lastdim_view("max_lastdim", a);
  std::vector<double> out(rows);
  std::vector<std::size_t> arg(rows);
  const auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = d.data() + r * cols;
    const auto it = std::max_element(x, x + cols);  // first maximum wins ties
    arg[r] = static_cast<std::size_t>(it - x);
    out[r] = *it;
  }
  return record(OpKind::max_lastdim, {&a}, Tensor(keepdim_shape(a.shape()), std::move(out)),
                [arg, cols = cols](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  for (std::size_t r = 0; r < arg.size(); ++r) gin[0][r * cols + arg[r]] += g[r];
                });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose: needs rank >= 2, got " + to_string(a.shape()));
  const auto r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  const auto batches = a.numel() / (r * c);
  std::vector<double> out(a.numel());
  for (std::size_t b = 0; b < batches; ++b)
    kernels::transpose(a.data().subspan(b * r * c, r * c), std::span(out).subspan(b * r * c, r * c), r, c);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  return record(OpKind::transpose, {&a}, Tensor(shape, std::move(out)),
                [batches, r, c](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  for (std::size_t b = 0; b < batches; ++b)
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) gin[0][b * r * c + i * c + j] += g[b * r * c + j * r + i];
                });
}

Tensor take_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() == 0 || rows.empty()) throw ShapeError("take_rows: needs rank >= 1 and at least one row");
  const auto stride = a.numel() / a.dim(0);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * stride);
  const auto d = a.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.dim(0))
      throw ShapeError("take_rows: row " + std::to_string(idx[i]) + " out of range for " + to_string(a.shape()));
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(idx[i] * stride), stride,
                out.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  Shape shape = a.shape();
  shape[0] = idx.size();
  return record(OpKind::take_rows, {&a}, Tensor(shape, std::move(out)),
                [idx, stride](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < stride; ++c) gin[0][idx[i] * stride + c] += g[i * stride + c];
                });
}

}  // namespace dmvae
