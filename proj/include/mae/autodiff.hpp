#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mae/tensor.hpp"

// Reverse-mode differentiation over a recorded tape of dense tensor ops.
//
// Ops execute eagerly while being recorded, so every node carries its value
// as soon as it is created. The tape can later be re-run with new leaf
// bindings (forward) and differentiated from any scalar node (backward).
namespace mae::ad {

using NodeId = std::size_t;

enum class OpKind {
  kLeaf,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kExp,
  kLog,
  kSoftplus,
  kSigmoid,
  kTanh,
  kRelu,
  kSquare,
  kSqrt,
  kClamp,
  kMaskMul,
  kSum,
  kSumAxis,
  kMean,
  kReshape,
  kBroadcastTo,
  kConcat,
  kSlice,
};

const char* op_name(OpKind op);

enum class LeafKind { kNone, kInput, kParameter, kConstant };

struct OpAttr {
  double lo = 0.0;  // clamp lower bound, scalar factor or offset
  double hi = 0.0;  // clamp upper bound
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool keepdim = false;
  Shape shape;
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const;
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(std::string name, Tensor value);
  Var parameter(std::string name, Tensor value);
  Var constant(Tensor value);

  // Labels a node so that forward() reports its value under `name`.
  void label(const Var& node, std::string name);

  // Re-evaluates every node after replacing named leaves with `bindings`.
  // Returns the values of all labelled and named nodes.
  std::map<std::string, Tensor> forward(const std::map<std::string, Tensor>& bindings);

  // Reverse accumulation from a scalar node. Returns the gradient for every
  // parameter leaf (zeros when the output does not depend on it).
  std::map<std::string, Tensor> backward(const Var& output);

  // Adjoint of any node from the last backward() call.
  const Tensor& adjoint(const Var& node) const;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  OpKind op(NodeId id) const { return nodes_[id].op; }
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_[id].parents; }

  Var record(OpKind op, std::vector<NodeId> parents, OpAttr attr = {});

 private:
  struct Node {
    OpKind op = OpKind::kLeaf;
    LeafKind leaf = LeafKind::kNone;
    std::vector<NodeId> parents;
    OpAttr attr;
    Tensor value;
    std::string name;
  };

  Var add_leaf(LeafKind kind, std::string name, Tensor value);
  Tensor evaluate(const Node& node) const;
  void propagate(const Node& node, const Tensor& grad);
  void check_finite(NodeId id) const;
  Tensor& adjoint_slot(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
  std::vector<bool> has_adjoint_;
};

// Elementwise binary ops broadcast numpy-style (right-aligned, extent 1
// stretches).
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double c, const Var& a);
Var operator*(const Var& a, double c);
Var operator+(const Var& a, double c);
Var operator+(double c, const Var& a);
Var operator-(const Var& a, double c);
Var operator-(double c, const Var& a);

Var matmul(const Var& a, const Var& b);
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
// Gradient passes through where lo <= x <= hi and is zero outside.
Var clamp(const Var& a, double lo, double hi);
// a * mask with the mask held constant.
Var mask_multiply(const Var& a, const Tensor& mask);
Var sum(const Var& a);
Var sum(const Var& a, std::size_t axis, bool keepdim = false);
Var mean(const Var& a);
Var mean(const Var& a, std::size_t axis, bool keepdim = false);
Var reshape(const Var& a, Shape shape);
Var broadcast_to(const Var& a, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);

double softplus(double x);
double sigmoid(double x);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
};

// Builds a scalar from leaves registered as parameters on a fresh tape.
using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares reverse-mode gradients with central differences of step h.
// Relative error per coordinate is |a - c| / max(|a|, |c|, 1e-12).
GradCheckResult grad_check(const GraphBuilder& build, const std::vector<Tensor>& point,
                           double h);
double grad_check(const std::function<Var(Tape&, const Var&)>& build, const Tensor& point,
                  double h);

}  // namespace mae::ad
