#include "mae/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "mae/errors.hpp"

namespace mae::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

// Index mapping from an output shape back to two broadcast operands.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;

  static std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
    const std::size_t rank = out.size();
    std::vector<std::size_t> strides(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const std::size_t src = in.size() - 1 - i;
      const std::size_t dst = rank - 1 - i;
      strides[dst] = in[src] == 1 ? 0 : stride;
      stride *= in[src];
    }
    return strides;
  }

  static BroadcastPlan make(const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    const std::size_t rank = std::max(a.size(), b.size());
    plan.out.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
      const std::size_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
      const std::size_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
      if (ea != eb && ea != 1 && eb != 1) {
        throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
      }
      plan.out[rank - 1 - i] = std::max(ea, eb);
    }
    plan.a_strides = aligned_strides(a, plan.out);
    plan.b_strides = aligned_strides(b, plan.out);
    return plan;
  }

  // f(out_index, a_index, b_index) over every output element in order.
  template <typename F>
  void for_each(F&& f) const {
    const std::size_t rank = out.size();
    const std::size_t n = numel(out);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ai = 0;
    std::size_t bi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      f(i, ai, bi);
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        ai += a_strides[d];
        bi += b_strides[d];
        if (idx[d] < out[d]) break;
        ai -= a_strides[d] * out[d];
        bi -= b_strides[d] * out[d];
        idx[d] = 0;
      }
    }
  }
};

// Sizes of the blocks before, along and after an axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

template <typename F>
Tensor map_unary(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kClamp: return "clamp";
    case OpKind::kMaskMul: return "mask_multiply";
    case OpKind::kSum: return "sum";
    case OpKind::kSumAxis: return "sum_axis";
    case OpKind::kMean: return "mean";
    case OpKind::kReshape: return "reshape";
    case OpKind::kBroadcastTo: return "broadcast_to";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
  }
  return "unknown";
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

const Shape& Var::shape() const { return value().shape(); }

Var Tape::add_leaf(LeafKind kind, std::string name, Tensor value) {
  Node node;
  node.leaf = kind;
  node.name = std::move(name);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  check_finite(nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(std::string name, Tensor value) {
  return add_leaf(LeafKind::kInput, std::move(name), std::move(value));
}

Var Tape::parameter(std::string name, Tensor value) {
  return add_leaf(LeafKind::kParameter, std::move(name), std::move(value));
}

Var Tape::constant(Tensor value) { return add_leaf(LeafKind::kConstant, {}, std::move(value)); }

void Tape::label(const Var& node, std::string name) { nodes_.at(node.id()).name = std::move(name); }

Var Tape::record(OpKind op, std::vector<NodeId> parents, OpAttr attr) {
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("parent node does not exist");
  }
  Node node;
  node.op = op;
  node.parents = std::move(parents);
  node.attr = std::move(attr);
  node.value = evaluate(node);
  nodes_.push_back(std::move(node));
  check_finite(nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

void Tape::check_finite(NodeId id) const {
  if (!nodes_[id].value.all_finite()) {
    std::string what = "non-finite value at node #" + std::to_string(id) + " (" +
                       op_name(nodes_[id].op);
    if (!nodes_[id].name.empty()) what += " '" + nodes_[id].name + "'";
    throw NumericError(what + ")");
  }
}

Tensor Tape::evaluate(const Node& node) const {
  auto arg = [&](std::size_t i) -> const Tensor& { return nodes_[node.parents[i]].value; };
  auto shape_error = [&](const std::string& msg) {
    return ShapeError(std::string(op_name(node.op)) + " (node #" + std::to_string(nodes_.size()) +
                      "): " + msg);
  };
  const OpAttr& at = node.attr;

  switch (node.op) {
    case OpKind::kLeaf:
      return node.value;

    case OpKind::kMatMul: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw shape_error(to_string(a.shape()) + " x " + to_string(b.shape()));
      }
      Tensor out({a.dim(0), b.dim(1)});
      MutMap(out.data().data(), a.dim(0), b.dim(1)).noalias() =
          ConstMap(a.data().data(), a.dim(0), a.dim(1)) *
          ConstMap(b.data().data(), b.dim(0), b.dim(1));
      return out;
    }

    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      BroadcastPlan plan;
      try {
        plan = BroadcastPlan::make(a.shape(), b.shape());
      } catch (const ShapeError& e) {
        throw shape_error(e.what());
      }
      Tensor out(plan.out);
      auto pa = a.data();
      auto pb = b.data();
      auto po = out.data();
      const OpKind op = node.op;
      auto apply = [op](double x, double y) {
        switch (op) {
          case OpKind::kAdd: return x + y;
          case OpKind::kSub: return x - y;
          case OpKind::kMul: return x * y;
          default: return x / y;
        }
      };
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < po.size(); ++i) po[i] = apply(pa[i], pb[i]);
      } else {
        plan.for_each([&](std::size_t i, std::size_t ai, std::size_t bi) {
          po[i] = apply(pa[ai], pb[bi]);
        });
      }
      return out;
    }

    case OpKind::kScale:
      return map_unary(arg(0), [c = at.lo](double x) { return c * x; });
    case OpKind::kAddScalar:
      return map_unary(arg(0), [c = at.lo](double x) { return x + c; });
    case OpKind::kExp:
      return map_unary(arg(0), [](double x) { return std::exp(x); });
    case OpKind::kLog:
      return map_unary(arg(0), [](double x) { return std::log(x); });
    case OpKind::kSoftplus:
      return map_unary(arg(0), [](double x) { return softplus(x); });
    case OpKind::kSigmoid:
      return map_unary(arg(0), [](double x) { return sigmoid(x); });
    case OpKind::kTanh:
      return map_unary(arg(0), [](double x) { return std::tanh(x); });
    case OpKind::kRelu:
      return map_unary(arg(0), [](double x) { return x > 0 ? x : 0.0; });
    case OpKind::kSquare:
      return map_unary(arg(0), [](double x) { return x * x; });
    case OpKind::kSqrt:
      return map_unary(arg(0), [](double x) { return std::sqrt(x); });
    case OpKind::kClamp:
      return map_unary(arg(0), [lo = at.lo, hi = at.hi](double x) { return std::clamp(x, lo, hi); });

    case OpKind::kMaskMul: {
      const Tensor& a = arg(0);
      const Tensor& m = arg(1);
      if (a.shape() != m.shape()) {
        throw shape_error("mask " + to_string(m.shape()) + " vs " + to_string(a.shape()));
      }
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * m[i];
      return out;
    }

    case OpKind::kSum: {
      double total = 0.0;
      for (double v : arg(0).data()) total += v;
      return Tensor::scalar(total);
    }
    case OpKind::kMean: {
      double total = 0.0;
      for (double v : arg(0).data()) total += v;
      return Tensor::scalar(total / static_cast<double>(arg(0).size()));
    }
    case OpKind::kSumAxis: {
      const Tensor& a = arg(0);
      if (at.axis >= a.rank()) throw shape_error("axis out of range for " + to_string(a.shape()));
      const AxisSplit s = split_at(a.shape(), at.axis);
      Tensor out(at.shape);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t k = 0; k < s.extent; ++k) {
          const double* src = a.data().data() + (o * s.extent + k) * s.inner;
          double* dst = out.data().data() + o * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
      }
      return out;
    }

    case OpKind::kReshape: {
      if (numel(at.shape) != arg(0).size()) {
        throw shape_error(to_string(arg(0).shape()) + " -> " + to_string(at.shape));
      }
      return arg(0).reshaped(at.shape);
    }

    case OpKind::kBroadcastTo: {
      const Tensor& a = arg(0);
      BroadcastPlan plan;
      try {
        plan = BroadcastPlan::make(a.shape(), at.shape);
      } catch (const ShapeError& e) {
        throw shape_error(e.what());
      }
      if (plan.out != at.shape) {
        throw shape_error(to_string(a.shape()) + " does not broadcast to " + to_string(at.shape));
      }
      Tensor out(at.shape);
      auto pa = a.data();
      auto po = out.data();
      plan.for_each([&](std::size_t i, std::size_t ai, std::size_t) { po[i] = pa[ai]; });
      return out;
    }

    case OpKind::kConcat: {
      const Tensor& first = arg(0);
      if (at.axis >= first.rank()) throw shape_error("axis out of range");
      Shape out_shape = first.shape();
      out_shape[at.axis] = 0;
      for (std::size_t p = 0; p < node.parents.size(); ++p) {
        const Shape& s = arg(p).shape();
        if (s.size() != first.rank()) throw shape_error("rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d) {
          if (d != at.axis && s[d] != first.shape()[d]) {
            throw shape_error(to_string(s) + " vs " + to_string(first.shape()));
          }
        }
        out_shape[at.axis] += s[at.axis];
      }
      Tensor out(out_shape);
      const AxisSplit so = split_at(out_shape, at.axis);
      std::size_t offset = 0;
      for (std::size_t p = 0; p < node.parents.size(); ++p) {
        const Tensor& part = arg(p);
        const std::size_t len = part.dim(at.axis) * so.inner;
        for (std::size_t o = 0; o < so.outer; ++o) {
          std::copy_n(part.data().data() + o * len, len,
                      out.data().data() + o * so.extent * so.inner + offset);
        }
        offset += len;
      }
      return out;
    }

    case OpKind::kSlice: {
      const Tensor& a = arg(0);
      if (at.axis >= a.rank() || at.begin >= at.end || at.end > a.dim(at.axis)) {
        throw shape_error("invalid slice [" + std::to_string(at.begin) + "," +
                          std::to_string(at.end) + ") of " + to_string(a.shape()));
      }
      Shape out_shape = a.shape();
      out_shape[at.axis] = at.end - at.begin;
      Tensor out(out_shape);
      const AxisSplit s = split_at(a.shape(), at.axis);
      const std::size_t len = (at.end - at.begin) * s.inner;
      for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(a.data().data() + (o * s.extent + at.begin) * s.inner, len,
                    out.data().data() + o * len);
      }
      return out;
    }
  }
  throw ContractError("unhandled op");
}

std::map<std::string, Tensor> Tape::forward(const std::map<std::string, Tensor>& bindings) {
  std::size_t bound = 0;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    Node& node = nodes_[id];
    if (node.op == OpKind::kLeaf) {
      if (node.name.empty()) continue;
      auto it = bindings.find(node.name);
      if (it == bindings.end()) continue;
      if (it->second.shape() != node.value.shape()) {
        throw ShapeError("binding for '" + node.name + "' has shape " +
                         to_string(it->second.shape()) + ", expected " +
                         to_string(node.value.shape()));
      }
      node.value = it->second;
      ++bound;
    } else {
      node.value = evaluate(node);
    }
    check_finite(id);
  }
  if (bound != bindings.size()) {
    for (const auto& [name, _] : bindings) {
      bool found = std::any_of(nodes_.begin(), nodes_.end(), [&](const Node& n) {
        return n.op == OpKind::kLeaf && n.name == name;
      });
      if (!found) throw ContractError("no leaf named '" + name + "' on tape");
    }
  }
  std::map<std::string, Tensor> out;
  for (const Node& node : nodes_) {
    if (!node.name.empty()) out[node.name] = node.value;
  }
  return out;
}

Tensor& Tape::adjoint_slot(NodeId id) {
  if (!has_adjoint_[id]) {
    adjoints_[id] = Tensor(nodes_[id].value.shape(), 0.0);
    has_adjoint_[id] = true;
  }
  return adjoints_[id];
}

std::map<std::string, Tensor> Tape::backward(const Var& output) {
  if (&output.tape() != this) throw ContractError("output node belongs to another tape");
  const Node& out = nodes_.at(output.id());
  if (out.value.size() != 1) {
    throw ContractError("backward requires a scalar output, got shape " +
                        to_string(out.value.shape()));
  }
  adjoints_.assign(nodes_.size(), Tensor());
  has_adjoint_.assign(nodes_.size(), false);
  adjoint_slot(output.id()).fill(1.0);

  for (NodeId id = output.id() + 1; id-- > 0;) {
    if (!has_adjoint_[id] || nodes_[id].op == OpKind::kLeaf) continue;
    propagate(nodes_[id], adjoints_[id]);
  }

  std::map<std::string, Tensor> grads;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.leaf != LeafKind::kParameter) continue;
    Tensor g = has_adjoint_[id] ? adjoints_[id] : Tensor(node.value.shape(), 0.0);
    auto [it, inserted] = grads.emplace(node.name, g);
    if (!inserted) {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  return grads;
}

const Tensor& Tape::adjoint(const Var& node) const {
  if (node.id() >= has_adjoint_.size()) throw ContractError("backward has not been run");
  if (!has_adjoint_[node.id()]) {
    static thread_local Tensor zero;
    zero = Tensor(nodes_[node.id()].value.shape(), 0.0);
    return zero;
  }
  return adjoints_[node.id()];
}

void Tape::propagate(const Node& node, const Tensor& g) {
  const auto& par = node.parents;
  auto val = [&](std::size_t i) -> const Tensor& { return nodes_[par[i]].value; };
  const Tensor& y = node.value;
  const OpAttr& at = node.attr;

  auto unary = [&](auto&& dydx) {
    Tensor& ga = adjoint_slot(par[0]);
    const Tensor& x = val(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(x[i], y[i]);
  };

  switch (node.op) {
    case OpKind::kLeaf:
      return;

    case OpKind::kMatMul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      ConstMap G(g.data().data(), m, n);
      {
        Tensor& ga = adjoint_slot(par[0]);
        MutMap(ga.data().data(), m, k).noalias() += G * ConstMap(b.data().data(), k, n).transpose();
      }
      {
        Tensor& gb = adjoint_slot(par[1]);
        MutMap(gb.data().data(), k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * G;
      }
      return;
    }

    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      auto pa = a.data();
      auto pb = b.data();
      auto pg = g.data();
      // Both slots first: a and b may be the same node.
      adjoint_slot(par[0]);
      adjoint_slot(par[1]);
      auto ga = adjoints_[par[0]].data();
      auto gb = adjoints_[par[1]].data();
      const OpKind op = node.op;
      auto step = [&](std::size_t i, std::size_t ai, std::size_t bi) {
        switch (op) {
          case OpKind::kAdd:
            ga[ai] += pg[i];
            gb[bi] += pg[i];
            break;
          case OpKind::kSub:
            ga[ai] += pg[i];
            gb[bi] -= pg[i];
            break;
          case OpKind::kMul:
            ga[ai] += pg[i] * pb[bi];
            gb[bi] += pg[i] * pa[ai];
            break;
          default:
            ga[ai] += pg[i] / pb[bi];
            gb[bi] -= pg[i] * pa[ai] / (pb[bi] * pb[bi]);
            break;
        }
      };
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < pg.size(); ++i) step(i, i, i);
      } else {
        BroadcastPlan::make(a.shape(), b.shape()).for_each(step);
      }
      return;
    }

    case OpKind::kScale:
      unary([c = at.lo](double, double) { return c; });
      return;
    case OpKind::kAddScalar:
      unary([](double, double) { return 1.0; });
      return;
    case OpKind::kExp:
      unary([](double, double v) { return v; });
      return;
    case OpKind::kLog:
      unary([](double x, double) { return 1.0 / x; });
      return;
    case OpKind::kSoftplus:
      unary([](double x, double) { return sigmoid(x); });
      return;
    case OpKind::kSigmoid:
      unary([](double, double v) { return v * (1.0 - v); });
      return;
    case OpKind::kTanh:
      unary([](double, double v) { return 1.0 - v * v; });
      return;
    case OpKind::kRelu:
      unary([](double x, double) { return x > 0 ? 1.0 : 0.0; });
      return;
    case OpKind::kSquare:
      unary([](double x, double) { return 2.0 * x; });
      return;
    case OpKind::kSqrt:
      unary([](double, double v) { return 0.5 / v; });
      return;
    case OpKind::kClamp:
      unary([lo = at.lo, hi = at.hi](double x, double) { return x >= lo && x <= hi ? 1.0 : 0.0; });
      return;

    case OpKind::kMaskMul: {
      Tensor& ga = adjoint_slot(par[0]);
      const Tensor& m = val(1);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m[i];
      return;
    }

    case OpKind::kSum:
    case OpKind::kMean: {
      Tensor& ga = adjoint_slot(par[0]);
      double d = g[0];
      if (node.op == OpKind::kMean) d /= static_cast<double>(ga.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d;
      return;
    }

    case OpKind::kSumAxis: {
      Tensor& ga = adjoint_slot(par[0]);
      const AxisSplit s = split_at(val(0).shape(), at.axis);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t k = 0; k < s.extent; ++k) {
          double* dst = ga.data().data() + (o * s.extent + k) * s.inner;
          const double* src = g.data().data() + o * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
      }
      return;
    }

    case OpKind::kReshape: {
      Tensor& ga = adjoint_slot(par[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      return;
    }

    case OpKind::kBroadcastTo: {
      Tensor& ga = adjoint_slot(par[0]);
      auto pg = g.data();
      auto pa = ga.data();
      BroadcastPlan::make(val(0).shape(), at.shape)
          .for_each([&](std::size_t i, std::size_t ai, std::size_t) { pa[ai] += pg[i]; });
      return;
    }

    case OpKind::kConcat: {
      const AxisSplit so = split_at(y.shape(), at.axis);
      std::size_t offset = 0;
      for (std::size_t p = 0; p < par.size(); ++p) {
        Tensor& gp = adjoint_slot(par[p]);
        const std::size_t len = val(p).dim(at.axis) * so.inner;
        for (std::size_t o = 0; o < so.outer; ++o) {
          const double* src = g.data().data() + o * so.extent * so.inner + offset;
          double* dst = gp.data().data() + o * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
        offset += len;
      }
      return;
    }

    case OpKind::kSlice: {
      Tensor& ga = adjoint_slot(par[0]);
      const AxisSplit s = split_at(val(0).shape(), at.axis);
      const std::size_t len = (at.end - at.begin) * s.inner;
      for (std::size_t o = 0; o < s.outer; ++o) {
        double* dst = ga.data().data() + (o * s.extent + at.begin) * s.inner;
        const double* src = g.data().data() + o * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
      return;
    }
  }
}

// --- op constructors -------------------------------------------------------

namespace {

Var binary(OpKind op, const Var& a, const Var& b) {
  return same_tape(a, b).record(op, {a.id(), b.id()});
}

Var unary(OpKind op, const Var& a, OpAttr attr = {}) {
  return a.tape().record(op, {a.id()}, std::move(attr));
}

OpAttr scalar_attr(double c) {
  OpAttr attr;
  attr.lo = c;
  return attr;
}

}  // namespace

Var operator+(const Var& a, const Var& b) { return binary(OpKind::kAdd, a, b); }
Var operator-(const Var& a, const Var& b) { return binary(OpKind::kSub, a, b); }
Var operator*(const Var& a, const Var& b) { return binary(OpKind::kMul, a, b); }
Var operator/(const Var& a, const Var& b) { return binary(OpKind::kDiv, a, b); }
Var operator-(const Var& a) { return unary(OpKind::kScale, a, scalar_attr(-1.0)); }
Var operator*(double c, const Var& a) { return unary(OpKind::kScale, a, scalar_attr(c)); }
Var operator*(const Var& a, double c) { return c * a; }
Var operator+(const Var& a, double c) { return unary(OpKind::kAddScalar, a, scalar_attr(c)); }
Var operator+(double c, const Var& a) { return a + c; }
Var operator-(const Var& a, double c) { return a + (-c); }
Var operator-(double c, const Var& a) { return (-a) + c; }

Var matmul(const Var& a, const Var& b) { return binary(OpKind::kMatMul, a, b); }
Var exp(const Var& a) { return unary(OpKind::kExp, a); }
Var log(const Var& a) { return unary(OpKind::kLog, a); }
Var softplus(const Var& a) { return unary(OpKind::kSoftplus, a); }
Var sigmoid(const Var& a) { return unary(OpKind::kSigmoid, a); }
Var tanh(const Var& a) { return unary(OpKind::kTanh, a); }
Var relu(const Var& a) { return unary(OpKind::kRelu, a); }
Var square(const Var& a) { return unary(OpKind::kSquare, a); }
Var sqrt(const Var& a) { return unary(OpKind::kSqrt, a); }

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp requires lo <= hi");
  OpAttr attr;
  attr.lo = lo;
  attr.hi = hi;
  return unary(OpKind::kClamp, a, attr);
}

Var mask_multiply(const Var& a, const Tensor& mask) {
  Var m = a.tape().constant(mask);
  return a.tape().record(OpKind::kMaskMul, {a.id(), m.id()});
}

Var sum(const Var& a) { return unary(OpKind::kSum, a); }
Var mean(const Var& a) { return unary(OpKind::kMean, a); }

Var sum(const Var& a, std::size_t axis, bool keepdim) {
  const Shape& in = a.shape();
  if (axis >= in.size()) {
    throw ShapeError("sum axis " + std::to_string(axis) + " out of range for " + to_string(in));
  }
  OpAttr attr;
  attr.axis = axis;
  attr.keepdim = keepdim;
  attr.shape = in;
  if (keepdim) {
    attr.shape[axis] = 1;
  } else {
    attr.shape.erase(attr.shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return unary(OpKind::kSumAxis, a, attr);
}

Var mean(const Var& a, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(a.shape().at(axis));
  return (1.0 / n) * sum(a, axis, keepdim);
}

Var reshape(const Var& a, Shape shape) {
  OpAttr attr;
  attr.shape = std::move(shape);
  return unary(OpKind::kReshape, a, attr);
}

Var broadcast_to(const Var& a, Shape shape) {
  OpAttr attr;
  attr.shape = std::move(shape);
  return unary(OpKind::kBroadcastTo, a, attr);
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  std::vector<NodeId> ids;
  for (const auto& p : parts) {
    same_tape(parts.front(), p);
    ids.push_back(p.id());
  }
  OpAttr attr;
  attr.axis = axis;
  return parts.front().tape().record(OpKind::kConcat, std::move(ids), attr);
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  OpAttr attr;
  attr.axis = axis;
  attr.begin = begin;
  attr.end = end;
  return unary(OpKind::kSlice, a, attr);
}

// --- gradient checking -----------------------------------------------------

GradCheckResult grad_check(const GraphBuilder& build, const std::vector<Tensor>& point,
                           double h) {
  if (!(h > 0)) throw ContractError("grad_check step must be positive");

  auto make_names = [&](std::size_t i) { return "p" + std::to_string(i); };
  auto evaluate = [&](const std::vector<Tensor>& at) {
    Tape tape;
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < at.size(); ++i) leaves.push_back(tape.parameter(make_names(i), at[i]));
    return build(tape, leaves).value().item();
  };

  Tape tape;
  std::vector<Var> leaves;
  for (std::size_t i = 0; i < point.size(); ++i) leaves.push_back(tape.parameter(make_names(i), point[i]));
  auto grads = tape.backward(build(tape, leaves));

  GradCheckResult result;
  std::vector<Tensor> probe = point;
  for (std::size_t leaf = 0; leaf < point.size(); ++leaf) {
    const Tensor& analytic = grads.at(make_names(leaf));
    for (std::size_t i = 0; i < point[leaf].size(); ++i) {
      const double x0 = point[leaf][i];
      probe[leaf][i] = x0 + h;
      const double up = evaluate(probe);
      probe[leaf][i] = x0 - h;
      const double down = evaluate(probe);
      probe[leaf][i] = x0;
      const double central = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(central), 1e-12});
      const double rel = std::abs(a - central) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_leaf = leaf;
        result.worst_index = i;
      }
    }
  }
  return result;
}

double grad_check(const std::function<Var(Tape&, const Var&)>& build, const Tensor& point,
                  double h) {
  return grad_check(
             [&](Tape& tape, const std::vector<Var>& leaves) { return build(tape, leaves[0]); },
             {point}, h)
      .max_rel_error;
}

}  // namespace mae::ad
