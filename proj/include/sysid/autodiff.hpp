#pragma once

// Reverse-mode automatic differentiation over dense float64 tensors.
//
// A Tensor is a value: shape + row-major data. When it was produced by an op
// on a Tape (or registered as a variable) it also carries a handle to its tape
// node. Ops record a node whenever at least one input carries a handle, so the
// same forward code runs both with and without gradient tracking.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sysid::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

struct NodeRef {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<NodeRef> node;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d);
  explicit Tensor(Shape s, double fill = 0.0);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  double item() const;
  bool tracked() const { return node.has_value(); }

  // Detached copy: same values, no tape handle.
  Tensor detach() const { return Tensor(shape, data); }
};

// Gradients produced by Tape::backward. Unreached nodes read as zeros.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::vector<std::vector<double>> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  Tensor of(const Tensor& t) const;
  const std::vector<double>* raw(std::size_t node_id) const;

 private:
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> grads_;
};

class Tape {
 public:
  // Accumulates d(root)/d(input) contributions given d(root)/d(output).
  using BackwardFn = std::function<void(std::span<const double> grad_out,
                                        std::vector<std::vector<double>>& grads)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    std::size_t size = 0;
    Shape shape;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `value` as a differentiable leaf.
  Tensor variable(Tensor value);

  std::size_t record(std::string op, std::vector<std::size_t> inputs, const Shape& out_shape,
                     BackwardFn fn);

  // root must be scalar. Seeds grad(root) = 1 and sweeps nodes in reverse.
  Gradients backward(const Tensor& root) const;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

// Adds src into dst[id], allocating zeros of `size` on first touch.
void accumulate(std::vector<std::vector<double>>& grads, std::size_t id, std::size_t size,
                std::span<const double> src);
std::vector<double>& grad_slot(std::vector<std::vector<double>>& grads, std::size_t id,
                               std::size_t size);

// ---------------------------------------------------------------------------
// Op set. Shapes are checked; mismatches throw ShapeError naming the op.
// Elementwise binaries require equal shapes, or one operand with a single
// element (scalar broadcast).
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

// (m×k)·(k×n) → m×n
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);
// Hard clamp; gradient passes only strictly inside (lo, hi).
Tensor clamp(const Tensor& a, double lo, double hi);

// Fused LSTM cell. z: B×4h pre-activations packed [i, f, g, o]; c_prev: B×h.
// Returns B×2h holding [h, c] with c = σ(f)⊙c_prev + σ(i)⊙tanh(g), h = σ(o)⊙tanh(c).
Tensor lstm_cell(const Tensor& z, const Tensor& c_prev);

Tensor reshape(const Tensor& a, Shape shape);
// Concatenate along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Gathers along the last axis: out[..., j] = a[..., index[j]].
Tensor index_permute(const Tensor& a, const std::vector<std::size_t>& index);
// Row vector (n) or (1×n) repeated to (rows×n).
Tensor tile_rows(const Tensor& v, std::size_t rows);

enum class Padding { kZero, kCircular };

// input (C_in×H×W), weight (C_out×C_in×3×3), bias (C_out). Stride 1, "same"
// extent; borders are zero-padded or wrap around.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Padding padding = Padding::kZero);
// input (C×H×W) with even H, W. 2×2 window, stride 2, ties go to the first element.
Tensor maxpool2d(const Tensor& input);
// input (C×H×W) → (C×2H×2W), nearest neighbour.
Tensor upsample2d(const Tensor& input);

// mean((a − b)²) over all entries.
Tensor mse(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Finite-difference verification.
// ---------------------------------------------------------------------------

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  // Location and values of the worst entry.
  std::size_t worst_input = 0, worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

// f maps tracked inputs to a scalar. Compares backward() with central
// differences of the given step for every input entry.
GradcheckResult gradcheck_fn(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                             const std::vector<Tensor>& inputs, double step = 1e-5);

// Same comparison projected on random directions: for each input tensor and
// each of `directions` draws v ~ U(-1, 1), compares grad·v with the central
// difference of f along v. Suited to deep compositions where single entries
// have gradients below the finite-difference noise floor.
GradcheckResult gradcheck_directional(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                      const std::vector<Tensor>& inputs, std::size_t directions,
                                      std::uint64_t seed, double step = 1e-5);

std::vector<std::string> registered_ops();

// Random inputs of the given shapes drawn from `seed`; the op's output is
// reduced with fixed random weights so every output entry contributes.
double gradcheck(const std::string& op_name, const std::vector<Shape>& input_shapes,
                 std::uint64_t seed);

// Default input shapes for an op, for suites that sweep the registry.
std::vector<Shape> default_shapes(const std::string& op_name);

}  // namespace sysid::ad
