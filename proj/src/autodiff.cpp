#include "sysid/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace sysid::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::optional<std::size_t> id_of(const Tensor& t) {
  if (t.node) return t.node->id;
  return std::nullopt;
}

// Tape shared by the tracked inputs, or nullptr when none is tracked.
Tape* tape_of(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->node) continue;
    if (tape && tape != t->node->tape) throw std::logic_error("inputs recorded on different tapes");
    tape = t->node->tape;
  }
  return tape;
}

Tensor tracked(Tensor out, Tape* tape, std::string op, std::vector<std::size_t> inputs,
               Tape::BackwardFn fn) {
  out.requires_grad = true;
  out.node = NodeRef{tape, tape->record(std::move(op), std::move(inputs), out.shape, std::move(fn))};
  return out;
}

std::vector<std::size_t> ids(std::initializer_list<const Tensor*> inputs) {
  std::vector<std::size_t> out;
  for (const Tensor* t : inputs)
    if (t->node) out.push_back(t->node->id);
  return out;
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& what, const Shape& a) {
  throw ShapeError(op + ": " + what + " " + shape_str(a));
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Elementwise unary op: value and derivative as functions of (x, y).
template <class F, class D>
Tensor unary(const Tensor& a, const char* op, F f, D dfdx) {
  Tensor out(a.shape, std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i]);
  Tape* tape = tape_of({&a});
  if (!tape) return out;
  std::size_t aid = a.node->id;
  std::vector<double> deriv(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) deriv[i] = dfdx(a.data[i], out.data[i]);
  return tracked(std::move(out), tape, op, {aid},
                 [aid, deriv = std::move(deriv)](std::span<const double> g, auto& grads) {
                   auto& ga = grad_slot(grads, aid, deriv.size());
                   for (std::size_t i = 0; i < deriv.size(); ++i) ga[i] += g[i] * deriv[i];
                 });
}

enum class BinKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinKind kind, const char* op) {
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar && a.shape != b.shape) shape_fail(op, a.shape, b.shape);
  const Shape& out_shape = a_scalar ? b.shape : a.shape;
  const std::size_t n = numel(out_shape);
  Tensor out(out_shape, std::vector<double>(n));
  auto av = [&](std::size_t i) { return a_scalar ? a.data[0] : a.data[i]; };
  auto bv = [&](std::size_t i) { return b_scalar ? b.data[0] : b.data[i]; };
  for (std::size_t i = 0; i < n; ++i) {
    switch (kind) {
      case BinKind::kAdd: out.data[i] = av(i) + bv(i); break;
      case BinKind::kSub: out.data[i] = av(i) - bv(i); break;
      case BinKind::kMul: out.data[i] = av(i) * bv(i); break;
    }
  }
  Tape* tape = tape_of({&a, &b});
  if (!tape) return out;
  auto aid = id_of(a), bid = id_of(b);
  std::vector<double> a_vals, b_vals;
  if (kind == BinKind::kMul) {
    if (bid) a_vals = a.data;
    if (aid) b_vals = b.data;
  }
  const std::size_t asz = a.size(), bsz = b.size();
  return tracked(
      std::move(out), tape, op, ids({&a, &b}),
      [=, a_vals = std::move(a_vals), b_vals = std::move(b_vals)](std::span<const double> g,
                                                                  auto& grads) {
        const std::size_t m = g.size();
        if (aid) {
          auto& ga = grad_slot(grads, *aid, asz);
          for (std::size_t i = 0; i < m; ++i) {
            double d = g[i];
            if (kind == BinKind::kMul) d *= b_scalar ? b_vals[0] : b_vals[i];
            ga[a_scalar ? 0 : i] += d;
          }
        }
        if (bid) {
          auto& gb = grad_slot(grads, *bid, bsz);
          for (std::size_t i = 0; i < m; ++i) {
            double d = g[i];
            if (kind == BinKind::kSub) d = -d;
            if (kind == BinKind::kMul) d *= a_scalar ? a_vals[0] : a_vals[i];
            gb[b_scalar ? 0 : i] += d;
          }
        }
      });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape.empty()) throw ShapeError("tensor: empty shape");
  for (std::size_t e : shape)
    if (e == 0) throw ShapeError("tensor: zero extent in " + shape_str(shape));
  if (numel(shape) != data.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
}

Tensor::Tensor(Shape s, double fill) : Tensor(s, std::vector<double>(numel(s), fill)) {}

double Tensor::item() const {
  if (data.size() != 1) throw ShapeError("item: tensor is not scalar " + shape_str(shape));
  return data[0];
}

std::vector<double>& grad_slot(std::vector<std::vector<double>>& grads, std::size_t id,
                               std::size_t size) {
  auto& slot = grads[id];
  if (slot.empty()) slot.assign(size, 0.0);
  return slot;
}

void accumulate(std::vector<std::vector<double>>& grads, std::size_t id, std::size_t size,
                std::span<const double> src) {
  auto& slot = grad_slot(grads, id, size);
  for (std::size_t i = 0; i < size; ++i) slot[i] += src[i];
}

Tensor Gradients::of(const Tensor& t) const {
  if (!t.node || t.node->tape != tape_) return Tensor(t.shape, 0.0);
  const auto* g = raw(t.node->id);
  if (!g) return Tensor(t.shape, 0.0);
  return Tensor(t.shape, *g);
}

const std::vector<double>* Gradients::raw(std::size_t node_id) const {
  if (node_id >= grads_.size() || grads_[node_id].empty()) return nullptr;
  return &grads_[node_id];
}

Tensor Tape::variable(Tensor value) {
  value.requires_grad = true;
  value.node = NodeRef{this, record("leaf", {}, value.shape, nullptr)};
  return value;
}

std::size_t Tape::record(std::string op, std::vector<std::size_t> inputs, const Shape& out_shape,
                         BackwardFn fn) {
  const std::size_t id = nodes_.size();
  for (std::size_t in : inputs)
    if (in >= id) throw std::logic_error("tape: input recorded after node");
  nodes_.push_back(Node{std::move(op), std::move(inputs), numel(out_shape), out_shape, std::move(fn)});
  return id;
}

Gradients Tape::backward(const Tensor& root) const {
  if (root.size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape));
  std::vector<std::vector<double>> grads(nodes_.size());
  if (!root.node || root.node->tape != this) return Gradients(this, std::move(grads));
  const std::size_t rid = root.node->id;
  grads[rid].assign(1, 1.0);
  for (std::size_t k = rid + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    if (grads[k].empty() || !n.backward) continue;
    // Inputs precede k, so the callback never touches grads[k] itself.
    n.backward(grads[k], grads);
  }
  return Gradients(this, std::move(grads));
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::kSub, "subtract"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::kMul, "multiply"); }

Tensor scale(const Tensor& a, double c) {
  return unary(a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) shape_fail("matmul", a.shape, b.shape);
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out({m, n}, std::vector<double>(m * n));
  CMapMat A(a.data.data(), m, k), B(b.data.data(), k, n);
  MapMat(out.data.data(), m, n).noalias() = A * B;
  Tape* tape = tape_of({&a, &b});
  if (!tape) return out;
  auto aid = id_of(a), bid = id_of(b);
  std::vector<double> a_vals = bid ? a.data : std::vector<double>{};
  std::vector<double> b_vals = aid ? b.data : std::vector<double>{};
  return tracked(std::move(out), tape, "matmul", ids({&a, &b}),
                 [=, a_vals = std::move(a_vals), b_vals = std::move(b_vals)](
                     std::span<const double> g, auto& grads) {
                   CMapMat G(g.data(), m, n);
                   if (aid) {
                     auto& ga = grad_slot(grads, *aid, m * k);
                     MapMat(ga.data(), m, k).noalias() += G * CMapMat(b_vals.data(), k, n).transpose();
                   }
                   if (bid) {
                     auto& gb = grad_slot(grads, *bid, k * n);
                     MapMat(gb.data(), k, n).noalias() += CMapMat(a_vals.data(), m, k).transpose() * G;
                   }
                 });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v;
  Tensor out = Tensor::scalar(s);
  Tape* tape = tape_of({&a});
  if (!tape) return out;
  std::size_t aid = a.node->id, n = a.size();
  return tracked(std::move(out), tape, "sum", {aid}, [aid, n](std::span<const double> g, auto& grads) {
    auto& ga = grad_slot(grads, aid, n);
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor tanh(const Tensor& a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, "sigmoid",
               [](double x) {
                 if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                 const double e = std::exp(x);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor lstm_cell(const Tensor& z, const Tensor& c_prev) {
  if (z.rank() != 2 || c_prev.rank() != 2 || z.shape[0] != c_prev.shape[0] || z.shape[1] != 4 * c_prev.shape[1])
    shape_fail("lstm_cell", z.shape, c_prev.shape);
  const std::size_t rows = c_prev.shape[0], hd = c_prev.shape[1];
  auto sig = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  // Gate activations i, f, g, o and tanh(c), kept for backward.
  std::vector<double> gates(rows * 4 * hd), tc(rows * hd);
  Tensor out({rows, 2 * hd}, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < hd; ++j) {
      const double* zr = z.data.data() + r * 4 * hd;
      double* gr = gates.data() + r * 4 * hd;
      const double i = sig(zr[j]), f = sig(zr[hd + j]), g = std::tanh(zr[2 * hd + j]), o = sig(zr[3 * hd + j]);
      gr[j] = i;
      gr[hd + j] = f;
      gr[2 * hd + j] = g;
      gr[3 * hd + j] = o;
      const double c = f * c_prev.data[r * hd + j] + i * g;
      const double t = std::tanh(c);
      tc[r * hd + j] = t;
      out.data[r * 2 * hd + j] = o * t;
      out.data[r * 2 * hd + hd + j] = c;
    }
  Tape* tape = tape_of({&z, &c_prev});
  if (!tape) return out;
  auto zid = id_of(z), cid = id_of(c_prev);
  return tracked(std::move(out), tape, "lstm_cell", ids({&z, &c_prev}),
                 [=, gates = std::move(gates), tc = std::move(tc), cp = c_prev.data](std::span<const double> g,
                                                                                      auto& grads) {
                   std::vector<double>* gz = zid ? &grad_slot(grads, *zid, rows * 4 * hd) : nullptr;
                   std::vector<double>* gc = cid ? &grad_slot(grads, *cid, rows * hd) : nullptr;
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t j = 0; j < hd; ++j) {
                       const double* gr = gates.data() + r * 4 * hd;
                       const double i = gr[j], f = gr[hd + j], gg = gr[2 * hd + j], o = gr[3 * hd + j];
                       const double t = tc[r * hd + j];
                       const double dh = g[r * 2 * hd + j];
                       const double dc = g[r * 2 * hd + hd + j] + dh * o * (1.0 - t * t);
                       if (gz) {
                         double* dz = gz->data() + r * 4 * hd;
                         dz[j] += dc * gg * i * (1.0 - i);
                         dz[hd + j] += dc * cp[r * hd + j] * f * (1.0 - f);
                         dz[2 * hd + j] += dc * i * (1.0 - gg * gg);
                         dz[3 * hd + j] += dh * t * o * (1.0 - o);
                       }
                       if (gc) (*gc)[r * hd + j] += dc * f;
                     }
                 });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
  return unary(a, "softplus",
               [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); },
               [](double x, double) {
                 if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                 const double e = std::exp(x);
                 return e / (1.0 + e);
               });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_fail("reshape", a.shape, shape);
  Tensor out(std::move(shape), a.data);
  Tape* tape = tape_of({&a});
  if (!tape) return out;
  std::size_t aid = a.node->id, n = a.size();
  return tracked(std::move(out), tape, "reshape", {aid},
                 [aid, n](std::span<const double> g, auto& grads) { accumulate(grads, aid, n, g); });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape;
  if (axis >= s0.size()) shape_fail("concat", "axis out of range for", s0);
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size()) shape_fail("concat", s0, p.shape);
    for (std::size_t d = 0; d < s0.size(); ++d)
      if (d != axis && p.shape[d] != s0[d]) shape_fail("concat", s0, p.shape);
    out_shape[axis] += p.shape[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  Tensor out(out_shape, std::vector<double>(numel(out_shape)));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.shape[axis] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(p.data.begin() + o * chunk, chunk,
                  out.data.begin() + o * os.extent * os.inner + off * os.inner);
    off += p.shape[axis];
  }
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    if (!p.node) continue;
    if (tape && tape != p.node->tape) throw std::logic_error("inputs recorded on different tapes");
    tape = p.node->tape;
  }
  if (!tape) return out;
  struct Part {
    std::optional<std::size_t> id;
    std::size_t extent, offset;
  };
  std::vector<Part> info;
  std::vector<std::size_t> in_ids;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    info.push_back({id_of(parts[i]), parts[i].shape[axis], offsets[i]});
    if (parts[i].node) in_ids.push_back(parts[i].node->id);
  }
  return tracked(std::move(out), tape, "concat", std::move(in_ids),
                 [info, os](std::span<const double> g, auto& grads) {
                   for (const auto& p : info) {
                     if (!p.id) continue;
                     const std::size_t chunk = p.extent * os.inner;
                     auto& gp = grad_slot(grads, *p.id, os.outer * chunk);
                     for (std::size_t o = 0; o < os.outer; ++o) {
                       const double* src = g.data() + o * os.extent * os.inner + p.offset * os.inner;
                       double* dst = gp.data() + o * chunk;
                       for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                     }
                   }
                 });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank()) shape_fail("slice", "axis out of range for", a.shape);
  if (begin >= end || end > a.shape[axis])
    shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside", a.shape);
  const AxisSplit s = split_at(a.shape, axis);
  Shape out_shape = a.shape;
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  Tensor out(out_shape, std::vector<double>(s.outer * chunk));
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(a.data.begin() + o * s.extent * s.inner + begin * s.inner, chunk,
                out.data.begin() + o * chunk);
  Tape* tape = tape_of({&a});
  if (!tape) return out;
  std::size_t aid = a.node->id, n = a.size();
  return tracked(std::move(out), tape, "slice", {aid},
                 [=](std::span<const double> g, auto& grads) {
                   auto& ga = grad_slot(grads, aid, n);
                   for (std::size_t o = 0; o < s.outer; ++o) {
                     double* dst = ga.data() + o * s.extent * s.inner + begin * s.inner;
                     const double* src = g.data() + o * chunk;
                     for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                   }
                 });
}

Tensor index_permute(const Tensor& a, const std::vector<std::size_t>& index) {
  const std::size_t last = a.shape.back();
  if (index.size() != last) shape_fail("index_permute", "index length " + std::to_string(index.size()) + " vs", a.shape);
  for (std::size_t j : index)
    if (j >= last) shape_fail("index_permute", "index out of range for", a.shape);
  const std::size_t rows = a.size() / last;
  Tensor out(a.shape, std::vector<double>(a.size()));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < last; ++j) out.data[r * last + j] = a.data[r * last + index[j]];
  Tape* tape = tape_of({&a});
  if (!tape) return out;
  std::size_t aid = a.node->id, n = a.size();
  return tracked(std::move(out), tape, "index_permute", {aid},
                 [=](std::span<const double> g, auto& grads) {
                   auto& ga = grad_slot(grads, aid, n);
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t j = 0; j < last; ++j) ga[r * last + index[j]] += g[r * last + j];
                 });
}

Tensor tile_rows(const Tensor& v, std::size_t rows) {
  const bool ok = v.rank() == 1 || (v.rank() == 2 && v.shape[0] == 1);
  if (!ok || rows == 0) shape_fail("tile_rows", "expected a row vector, got", v.shape);
  const std::size_t n = v.size();
  Tensor out({rows, n}, std::vector<double>(rows * n));
  for (std::size_t r = 0; r < rows; ++r) std::copy(v.data.begin(), v.data.end(), out.data.begin() + r * n);
  Tape* tape = tape_of({&v});
  if (!tape) return out;
  std::size_t vid = v.node->id;
  return tracked(std::move(out), tape, "tile_rows", {vid},
                 [=](std::span<const double> g, auto& grads) {
                   auto& gv = grad_slot(grads, vid, n);
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t j = 0; j < n; ++j) gv[j] += g[r * n + j];
                 });
}

namespace {

// (C×H×W) → (C·9 × H·W) patch matrix for 3×3 "same" convolution.
// Source coordinate for output position p and kernel offset k in {0,1,2}, or -1 when padded with zero.
long source_index(std::size_t p, std::size_t k, std::size_t extent, Padding padding) {
  long s = static_cast<long>(p) + static_cast<long>(k) - 1;
  const long n = static_cast<long>(extent);
  if (s >= 0 && s < n) return s;
  if (padding == Padding::kZero) return -1;
  return (s + n) % n;
}

std::vector<double> im2col3(const double* in, std::size_t c, std::size_t h, std::size_t w, Padding padding) {
  std::vector<double> cols(c * 9 * h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = cols.data() + ((ch * 3 + ky) * 3 + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = source_index(y, ky, h, padding);
          if (sy < 0) continue;
          const double* src = in + (ch * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = source_index(x, kx, w, padding);
            if (sx >= 0) row[y * w + x] = src[sx];
          }
        }
      }
  return cols;
}

void col2im3(const double* cols, double* out, std::size_t c, std::size_t h, std::size_t w, Padding padding) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* row = cols + ((ch * 3 + ky) * 3 + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = source_index(y, ky, h, padding);
          if (sy < 0) continue;
          double* dst = out + (ch * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = source_index(x, kx, w, padding);
            if (sx >= 0) dst[sx] += row[y * w + x];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Padding padding) {
  if (input.rank() != 3) shape_fail("conv2d", "input must be C×H×W, got", input.shape);
  const std::size_t cin = input.shape[0], h = input.shape[1], w = input.shape[2];
  if (weight.rank() != 4 || weight.shape[1] != cin || weight.shape[2] != 3 || weight.shape[3] != 3)
    shape_fail("conv2d", input.shape, weight.shape);
  const std::size_t cout = weight.shape[0];
  if (bias.size() != cout) shape_fail("conv2d", weight.shape, bias.shape);
  const std::size_t hw = h * w, kk = cin * 9;
  std::vector<double> cols = im2col3(input.data.data(), cin, h, w, padding);
  Tensor out({cout, h, w}, std::vector<double>(cout * hw));
  MapMat O(out.data.data(), cout, hw);
  O.noalias() = CMapMat(weight.data.data(), cout, kk) * CMapMat(cols.data(), kk, hw);
  for (std::size_t o = 0; o < cout; ++o) O.row(o).array() += bias.data[o];
  Tape* tape = tape_of({&input, &weight, &bias});
  if (!tape) return out;
  auto iid = id_of(input), wid = id_of(weight), bid = id_of(bias);
  std::vector<double> wv = iid ? weight.data : std::vector<double>{};
  // The unfolded input is 9x larger than the input; rebuild it in backward instead of keeping it.
  std::vector<double> in_v = wid ? input.data : std::vector<double>{};
  cols = {};
  return tracked(std::move(out), tape, "conv2d", ids({&input, &weight, &bias}),
                 [=, in_v = std::move(in_v), wv = std::move(wv)](std::span<const double> g, auto& grads) {
                   CMapMat G(g.data(), cout, hw);
                   if (wid) {
                     const std::vector<double> cols = im2col3(in_v.data(), cin, h, w, padding);
                     auto& gw = grad_slot(grads, *wid, cout * kk);
                     MapMat(gw.data(), cout, kk).noalias() += G * CMapMat(cols.data(), kk, hw).transpose();
                   }
                   if (bid) {
                     auto& gb = grad_slot(grads, *bid, cout);
                     for (std::size_t o = 0; o < cout; ++o) gb[o] += G.row(o).sum();
                   }
                   if (iid) {
                     RowMat dcols = CMapMat(wv.data(), cout, kk).transpose() * G;
                     auto& gi = grad_slot(grads, *iid, cin * hw);
                     col2im3(dcols.data(), gi.data(), cin, h, w, padding);
                   }
                 });
}

Tensor maxpool2d(const Tensor& input) {
  if (input.rank() != 3) shape_fail("maxpool2d", "input must be C×H×W, got", input.shape);
  const std::size_t c = input.shape[0], h = input.shape[1], w = input.shape[2];
  if (h % 2 || w % 2) shape_fail("maxpool2d", "odd spatial extent in input", input.shape);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({c, oh, ow}, std::vector<double>(c * oh * ow));
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (ch * h + 2 * y + dy) * w + 2 * x + dx;
            if (input.data[idx] > input.data[best]) best = idx;
          }
        const std::size_t o = (ch * oh + y) * ow + x;
        out.data[o] = input.data[best];
        argmax[o] = best;
      }
  Tape* tape = tape_of({&input});
  if (!tape) return out;
  std::size_t iid = input.node->id, n = input.size();
  return tracked(std::move(out), tape, "maxpool2d", {iid},
                 [=, argmax = std::move(argmax)](std::span<const double> g, auto& grads) {
                   auto& gi = grad_slot(grads, iid, n);
                   for (std::size_t o = 0; o < argmax.size(); ++o) gi[argmax[o]] += g[o];
                 });
}

Tensor upsample2d(const Tensor& input) {
  if (input.rank() != 3) shape_fail("upsample2d", "input must be C×H×W, got", input.shape);
  const std::size_t c = input.shape[0], h = input.shape[1], w = input.shape[2];
  const std::size_t oh = 2 * h, ow = 2 * w;
  Tensor out({c, oh, ow}, std::vector<double>(c * oh * ow));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        out.data[(ch * oh + y) * ow + x] = input.data[(ch * h + y / 2) * w + x / 2];
  Tape* tape = tape_of({&input});
  if (!tape) return out;
  std::size_t iid = input.node->id, n = input.size();
  return tracked(std::move(out), tape, "upsample2d", {iid},
                 [=](std::span<const double> g, auto& grads) {
                   auto& gi = grad_slot(grads, iid, n);
                   for (std::size_t ch = 0; ch < c; ++ch)
                     for (std::size_t y = 0; y < oh; ++y)
                       for (std::size_t x = 0; x < ow; ++x)
                         gi[(ch * h + y / 2) * w + x / 2] += g[(ch * oh + y) * ow + x];
                 });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) shape_fail("mse", a.shape, b.shape);
  const std::size_t n = a.size();
  double acc = 0.0;
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = a.data[i] - b.data[i];
    acc += diff[i] * diff[i];
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  Tape* tape = tape_of({&a, &b});
  if (!tape) return out;
  auto aid = id_of(a), bid = id_of(b);
  return tracked(std::move(out), tape, "mse", ids({&a, &b}),
                 [=, diff = std::move(diff)](std::span<const double> g, auto& grads) {
                   const double c = 2.0 * g[0] / static_cast<double>(n);
                   if (aid) {
                     auto& ga = grad_slot(grads, *aid, n);
                     for (std::size_t i = 0; i < n; ++i) ga[i] += c * diff[i];
                   }
                   if (bid) {
                     auto& gb = grad_slot(grads, *bid, n);
                     for (std::size_t i = 0; i < n; ++i) gb[i] -= c * diff[i];
                   }
                 });
}

// ---------------------------------------------------------------------------

GradcheckResult gradcheck_fn(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                             const std::vector<Tensor>& inputs, double step) {
  Tape tape;
  std::vector<Tensor> vars;
  for (const auto& in : inputs) vars.push_back(tape.variable(in.detach()));
  const Tensor root = f(vars);
  const Gradients grads = tape.backward(root);

  GradcheckResult res;
  std::vector<Tensor> probe;
  for (const auto& in : inputs) probe.push_back(in.detach());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = grads.of(vars[k]);
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double orig = probe[k].data[i];
      probe[k].data[i] = orig + step;
      const double fp = f(probe).item();
      probe[k].data[i] = orig - step;
      const double fm = f(probe).item();
      probe[k].data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double rel = std::abs(analytic.data[i] - numeric) / (std::abs(numeric) + 1e-8);
      if (rel > res.max_relative_error) {
        res.max_relative_error = rel;
        res.worst_input = k;
        res.worst_index = i;
        res.worst_analytic = analytic.data[i];
        res.worst_numeric = numeric;
      }
      ++res.entries_checked;
    }
  }
  return res;
}

GradcheckResult gradcheck_directional(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                      const std::vector<Tensor>& inputs, std::size_t directions,
                                      std::uint64_t seed, double step) {
  Tape tape;
  std::vector<Tensor> vars;
  for (const auto& in : inputs) vars.push_back(tape.variable(in.detach()));
  const Tensor root = f(vars);
  const Gradients grads = tape.backward(root);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GradcheckResult res;
  std::vector<Tensor> probe;
  for (const auto& in : inputs) probe.push_back(in.detach());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = grads.of(vars[k]);
    const std::vector<double> orig = probe[k].data;
    for (std::size_t d = 0; d < directions; ++d) {
      std::vector<double> v(orig.size());
      double projected = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = u(rng);
        projected += analytic.data[i] * v[i];
      }
      for (std::size_t i = 0; i < v.size(); ++i) probe[k].data[i] = orig[i] + step * v[i];
      const double fp = f(probe).item();
      for (std::size_t i = 0; i < v.size(); ++i) probe[k].data[i] = orig[i] - step * v[i];
      const double fm = f(probe).item();
      probe[k].data = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double rel = std::abs(projected - numeric) / (std::abs(numeric) + 1e-8);
      if (rel > res.max_relative_error) {
        res.max_relative_error = rel;
        res.worst_input = k;
        res.worst_index = d;
        res.worst_analytic = projected;
        res.worst_numeric = numeric;
      }
      ++res.entries_checked;
    }
  }
  return res;
}

namespace {

struct OpEntry {
  std::function<Tensor(const std::vector<Tensor>&)> apply;
  std::vector<Shape> shapes;
  // Input value domain: 0 = uniform(-1,1) away from 0, 1 = positive, 2 = distinct grid (pooling).
  int domain = 0;
};

const std::map<std::string, OpEntry>& registry() {
  static const std::map<std::string, OpEntry> ops = {
      {"add", {[](auto& x) { return add(x[0], x[1]); }, {{3, 4}, {3, 4}}}},
      {"subtract", {[](auto& x) { return sub(x[0], x[1]); }, {{3, 4}, {3, 4}}}},
      {"multiply", {[](auto& x) { return mul(x[0], x[1]); }, {{3, 4}, {3, 4}}}},
      {"scalar_multiply", {[](auto& x) { return mul(x[0], x[1]); }, {{1}, {2, 3}}}},
      {"scale", {[](auto& x) { return scale(x[0], -2.5); }, {{5}}}},
      {"matmul", {[](auto& x) { return matmul(x[0], x[1]); }, {{2, 3}, {3, 2}}}},
      {"sum", {[](auto& x) { return sum(x[0]); }, {{2, 3}}}},
      {"mean", {[](auto& x) { return mean(x[0]); }, {{2, 3}}}},
      {"tanh", {[](auto& x) { return tanh(x[0]); }, {{4}}}},
      {"sigmoid", {[](auto& x) { return sigmoid(x[0]); }, {{4}}}},
      {"relu", {[](auto& x) { return relu(x[0]); }, {{6}}}},
      {"lstm_cell", {[](auto& x) { return lstm_cell(x[0], x[1]); }, {{2, 12}, {2, 3}}}},
      {"exp", {[](auto& x) { return exp(x[0]); }, {{4}}}},
      {"log", {[](auto& x) { return log(x[0]); }, {{4}}, 1}},
      {"softplus", {[](auto& x) { return softplus(x[0]); }, {{4}}}},
      {"square", {[](auto& x) { return square(x[0]); }, {{4}}}},
      {"clamp", {[](auto& x) { return clamp(x[0], -0.5, 0.5); }, {{6}}}},
      {"reshape", {[](auto& x) { return reshape(x[0], {3, 2}); }, {{2, 3}}}},
      {"concat", {[](auto& x) { return concat({x[0], x[1]}, 1); }, {{2, 3}, {2, 2}}}},
      {"slice", {[](auto& x) { return slice(x[0], 1, 1, 3); }, {{2, 4}}}},
      {"index_permute", {[](auto& x) { return index_permute(x[0], {2, 0, 1}); }, {{2, 3}}}},
      {"tile_rows", {[](auto& x) { return tile_rows(x[0], 3); }, {{4}}}},
      {"conv2d", {[](auto& x) { return conv2d(x[0], x[1], x[2]); }, {{2, 5, 4}, {3, 2, 3, 3}, {3}}}},
      {"conv2d_circular",
       {[](auto& x) { return conv2d(x[0], x[1], x[2], Padding::kCircular); }, {{2, 5, 4}, {3, 2, 3, 3}, {3}}}},
      {"maxpool2d", {[](auto& x) { return maxpool2d(x[0]); }, {{1, 4, 4}}, 2}},
      {"upsample2d", {[](auto& x) { return upsample2d(x[0]); }, {{2, 2, 3}}}},
      {"mse", {[](auto& x) { return mse(x[0], x[1]); }, {{2, 3}, {2, 3}}}},
  };
  return ops;
}

const OpEntry& lookup(const std::string& name) {
  const auto& ops = registry();
  auto it = ops.find(name);
  if (it == ops.end()) throw std::invalid_argument("gradcheck: unknown op '" + name + "'");
  return it->second;
}

}  // namespace

std::vector<std::string> registered_ops() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

std::vector<Shape> default_shapes(const std::string& op_name) { return lookup(op_name).shapes; }

double gradcheck(const std::string& op_name, const std::vector<Shape>& input_shapes,
                 std::uint64_t seed) {
  const OpEntry& entry = lookup(op_name);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Tensor> inputs;
  for (const auto& shape : input_shapes) {
    Tensor t(shape, 0.0);
    if (entry.domain == 2) {
      // Distinct values spaced far beyond the difference step: no ties, no argmax flips.
      std::vector<double> grid(t.size());
      for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.05 * static_cast<double>(i);
      std::shuffle(grid.begin(), grid.end(), rng);
      t.data = grid;
    } else {
      for (auto& v : t.data) {
        v = unit(rng);
        if (entry.domain == 1) v = 0.5 + std::abs(v) * 1.5;
        // Keep away from kinks of relu/clamp.
        else if (std::abs(v) < 0.05 || std::abs(std::abs(v) - 0.5) < 0.05) v += 0.11;
      }
    }
    inputs.push_back(std::move(t));
  }
  // Fixed positive weights so every output entry feeds the scalar.
  std::vector<double> weights;
  auto reduce = [&](const std::vector<Tensor>& x) {
    Tensor y = entry.apply(x);
    if (weights.size() != y.size()) {
      std::mt19937_64 wrng(seed ^ 0x9e3779b97f4a7c15ULL);
      std::uniform_real_distribution<double> wd(0.5, 1.5);
      weights.resize(y.size());
      for (auto& v : weights) v = wd(wrng);
    }
    return sum(mul(y, Tensor(y.shape, weights)));
  };
  return gradcheck_fn(reduce, inputs).max_relative_error;
}

}  // namespace sysid::ad
