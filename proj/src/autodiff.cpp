#include "energyformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "energyformer/error.hpp"

namespace ef {

namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on an empty Var");
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an empty Var");
  return *a.tape();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

std::size_t normalize_axis(const char* op, int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// View of a tensor as [outer, n, inner] around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape keep_axis_shape(Shape shape, std::size_t axis) {
  shape[axis] = 1;
  return shape;
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <class Fwd, class Deriv>
Var unary(const char* name, Var a, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  Tape* tp = &t;
  // Derivative sees (input, output) so closed forms such as sigmoid' = y(1-y) stay cheap.
  return t.record(name, std::move(out), {a}, [tp, a, deriv](const Tensor& g, const Tensor& y, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    const Tensor& xv = tp->value(a);
    auto d = pg[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * deriv(xv[i], y[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- Var / Tape

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() of an empty Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

Var Tape::push(Node node) {
  if (precision_ == Precision::f32) {
    for (double& v : node.value.storage()) v = static_cast<double>(static_cast<float>(v));
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf tensor holds a non-finite value");
  Node n;
  n.requires_grad = value.requires_grad();
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor value) {
  value.set_requires_grad(true);
  return leaf(std::move(value));
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

Var Tape::record(const char* name, Tensor value, std::vector<Var> parents, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string(name) + " produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (p.tape() != this) throw ContractError(std::string(name) + ": parent from another tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.size() == 0) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (nodes_.empty()) throw ContractError("backward on an empty tape");
  if (backward_done_) throw ContractError("backward called twice without reset_gradients()");
  Node& root = nodes_[loss.id()];
  if (root.value.size() != 1)
    throw ContractError("backward needs a scalar loss, got shape " + to_string(root.value.shape()));
  backward_done_ = true;
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::int64_t i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    slots.assign(n.parents.size(), nullptr);
    for (std::size_t p = 0; p < n.parents.size(); ++p) {
      Node& parent = nodes_[n.parents[p]];
      if (!parent.requires_grad) continue;
      if (parent.grad.size() == 0) parent.grad = Tensor(parent.value.shape(), 0.0);
      slots[p] = &parent.grad;
    }
    n.backward(n.grad, n.value, slots);
    // Interior gradients are no longer needed once pushed to the parents.
    n.grad = Tensor();
  }
}

void Tape::reset_gradients() {
  for (Node& n : nodes_) n.grad = Tensor();
  backward_done_ = false;
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return t.record("add", std::move(out), {a, b}, [](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
    accumulate(pg[0], g);
    accumulate(pg[1], g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t.record("sub", std::move(out), {a, b}, [](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
    accumulate(pg[0], g);
    if (pg[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Tape* tp = &t;
  return t.record("mul", std::move(out), {a, b}, [tp, a, b](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
    const Tensor& av = tp->value(a);
    const Tensor& bv = tp->value(b);
    if (pg[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * bv[i];
    if (pg[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * av[i];
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (double& v : out.storage()) v *= factor;
  return t.record("scale", std::move(out), {a}, [factor](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
    if (pg[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += factor * g[i];
  });
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  out.set_requires_grad(false);
  for (double& v : out.storage()) v += c;
  return t.record("add_scalar", std::move(out), {a},
                  [](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) { accumulate(pg[0], g); });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var rsqrt(Var a) {
  return unary(
      "rsqrt", a, [](double x) { return 1.0 / std::sqrt(x); }, [](double x, double y) { return -0.5 * y / x; });
}

Var relu(Var a) {
  // Subgradient at 0 is 0.
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var a) {
  return unary(
      "silu", a,
      [](double x) {
        const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return x * s;
      },
      [](double x, double) {
        const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return s * (1.0 + x * (1.0 - s));
      });
}

// ---------------------------------------------------------------- shape ops

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  out.set_requires_grad(false);
  return t.record("reshape", std::move(out), {a},
                  [](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) { accumulate(pg[0], g); });
}

Var expand(Var a, Shape shape) {
  Tape& t = tape_of(a);
  const Shape& in = a.value().shape();
  if (in.size() != shape.size())
    throw DimensionError("expand: rank mismatch " + to_string(in) + " -> " + to_string(shape));
  const std::size_t r = shape.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = r; i-- > 0;) {
    if (in[i] != shape[i] && in[i] != 1)
      throw DimensionError("expand: cannot broadcast " + to_string(in) + " to " + to_string(shape));
    in_stride[i] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  const std::size_t total = shape_size(shape);
  // Source index for every output element.
  std::vector<std::size_t> src(total);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < total; ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_stride[i];
    src[o] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(shape);
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < total; ++o) out[o] = av[src[o]];
  return t.record("expand", std::move(out), {a},
                  [src = std::move(src)](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
                    if (!pg[0]) return;
                    for (std::size_t o = 0; o < src.size(); ++o) (*pg[0])[src[o]] += g[o];
                  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Shape& in = a.value().shape();
  if (in.size() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(in));
  const std::size_t r = in.size();
  const std::size_t rows = in[r - 2], cols = in[r - 1];
  const std::size_t batch = shape_size(in) / (rows * cols);
  Shape os = in;
  std::swap(os[r - 2], os[r - 1]);
  Tensor out(os);
  const Tensor& av = a.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out[b * rows * cols + j * rows + i] = av[b * rows * cols + i * cols + j];
  return t.record("transpose", std::move(out), {a},
                  [batch, rows, cols](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
                    if (!pg[0]) return;
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j)
                          (*pg[0])[b * rows * cols + i * cols + j] += g[b * rows * cols + j * rows + i];
                  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Tape& t = tape_of(parts[0]);
  const Shape& first = parts[0].value().shape();
  const std::size_t ax = normalize_axis("concat", axis, first.size());
  Shape os = first;
  os[ax] = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const Shape& s = p.value().shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch " + to_string(first) + " vs " + to_string(s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != first[i])
        throw DimensionError("concat: shape mismatch " + to_string(first) + " vs " + to_string(s));
    os[ax] += s[ax];
    extents.push_back(s[ax]);
  }
  const AxisSplit sp = split_at(os, ax);
  Tensor out(os);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    const std::size_t e = extents[p];
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(o * e * sp.inner), e * sp.inner,
                  out.data().begin() + static_cast<std::ptrdiff_t>((o * sp.n + offset) * sp.inner));
    offset += e;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return t.record("concat", std::move(out), std::move(parents),
                  [sp, extents](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
                    std::size_t off = 0;
                    for (std::size_t p = 0; p < pg.size(); ++p) {
                      const std::size_t e = extents[p];
                      if (pg[p])
                        for (std::size_t o = 0; o < sp.outer; ++o)
                          for (std::size_t k = 0; k < e * sp.inner; ++k)
                            (*pg[p])[o * e * sp.inner + k] += g[(o * sp.n + off) * sp.inner + k];
                      off += e;
                    }
                  });
}

Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Shape& in = a.value().shape();
  const std::size_t ax = normalize_axis("slice", axis, in.size());
  if (begin >= end || end > in[ax])
    throw BoundsError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for axis of extent " +
                      std::to_string(in[ax]));
  const AxisSplit sp = split_at(in, ax);
  const std::size_t e = end - begin;
  Shape os = in;
  os[ax] = e;
  Tensor out(os);
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>((o * sp.n + begin) * sp.inner), e * sp.inner,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * e * sp.inner));
  return t.record("slice", std::move(out), {a}, [sp, e, begin](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < e * sp.inner; ++k) (*pg[0])[(o * sp.n + begin) * sp.inner + k] += g[o * e * sp.inner + k];
  });
}

// ---------------------------------------------------------------- reductions

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record("sum", Tensor::scalar(s), {a}, [](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    for (double& v : pg[0]->storage()) v += g[0];
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum(Var a, int axis) {
  Tape& t = tape_of(a);
  const Shape& in = a.value().shape();
  const std::size_t ax = normalize_axis("sum", axis, in.size());
  const AxisSplit sp = split_at(in, ax);
  Tensor out(keep_axis_shape(in, ax), 0.0);
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.n; ++i)
      for (std::size_t j = 0; j < sp.inner; ++j) out[o * sp.inner + j] += av[(o * sp.n + i) * sp.inner + j];
  return t.record("sum_axis", std::move(out), {a}, [sp](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.n; ++i)
        for (std::size_t j = 0; j < sp.inner; ++j) (*pg[0])[(o * sp.n + i) * sp.inner + j] += g[o * sp.inner + j];
  });
}

Var mean(Var a, int axis) {
  const std::size_t n = a.value().extent(axis);
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Var max_reduce(Var a, int axis) {
  Tape& t = tape_of(a);
  const Shape& in = a.value().shape();
  const std::size_t ax = normalize_axis("max_reduce", axis, in.size());
  const AxisSplit sp = split_at(in, ax);
  Tensor out(keep_axis_shape(in, ax));
  std::vector<std::size_t> arg(sp.outer * sp.inner);
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      std::size_t best = (o * sp.n) * sp.inner + j;
      for (std::size_t i = 1; i < sp.n; ++i) {
        const std::size_t k = (o * sp.n + i) * sp.inner + j;
        if (av[k] > av[best]) best = k;
      }
      out[o * sp.inner + j] = av[best];
      arg[o * sp.inner + j] = best;
    }
  return t.record("max_reduce", std::move(out), {a}, [arg = std::move(arg)](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    for (std::size_t k = 0; k < arg.size(); ++k) (*pg[0])[arg[k]] += g[k];
  });
}

namespace {

// Iteration plan for reductions that may skip the diagonal of the last two axes.
struct ReducePlan {
  AxisSplit sp;
  bool exclude = false;
  bool along_rows = false;  // reducing axis rank-2 (skip when i == inner index)
  std::size_t rows = 0;     // extent of axis rank-2 when reducing the last axis

  bool skip(std::size_t o, std::size_t i, std::size_t j) const {
    if (!exclude) return false;
    return along_rows ? i == j : i == o % rows;
  }
};

ReducePlan plan_reduce(const char* op, const Shape& shape, int axis, bool exclude_diagonal) {
  ReducePlan p;
  const std::size_t ax = normalize_axis(op, axis, shape.size());
  p.sp = split_at(shape, ax);
  p.exclude = exclude_diagonal;
  if (exclude_diagonal) {
    const std::size_t r = shape.size();
    if (r < 2 || shape[r - 1] != shape[r - 2])
      throw DimensionError(std::string(op) + ": exclude_diagonal needs square trailing axes, got " + to_string(shape));
    if (ax + 2 != r && ax + 1 != r)
      throw DimensionError(std::string(op) + ": exclude_diagonal reduces one of the two trailing axes");
    if (shape[ax] < 2)
      throw ContractError(std::string(op) + ": exclude_diagonal needs extent >= 2 along the reduced axis");
    p.along_rows = ax + 2 == r;
    p.rows = shape[r - 2];
  }
  return p;
}

}  // namespace

Var logsumexp(Var a, int axis, bool exclude_diagonal) {
  Tape& t = tape_of(a);
  const Shape& in = a.value().shape();
  const ReducePlan plan = plan_reduce("logsumexp", in, axis, exclude_diagonal);
  const AxisSplit& sp = plan.sp;
  const std::size_t ax = normalize_axis("logsumexp", axis, in.size());
  Tensor out(keep_axis_shape(in, ax));
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sp.n; ++i)
        if (!plan.skip(o, i, j)) m = std::max(m, av[(o * sp.n + i) * sp.inner + j]);
      double s = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i)
        if (!plan.skip(o, i, j)) s += std::exp(av[(o * sp.n + i) * sp.inner + j] - m);
      out[o * sp.inner + j] = m + std::log(s);
    }
  Tape* tp = &t;
  // d lse / d a_i = exp(a_i - lse), zero on skipped entries.
  return t.record("logsumexp", std::move(out), {a}, [tp, a, plan](const Tensor& g, const Tensor& lse, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    const Tensor& av2 = tp->value(a);
    const AxisSplit& s = plan.sp;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t j = 0; j < s.inner; ++j) {
          if (plan.skip(o, i, j)) continue;
          const std::size_t k = (o * s.n + i) * s.inner + j;
          (*pg[0])[k] += g[o * s.inner + j] * std::exp(av2[k] - lse[o * s.inner + j]);
        }
  });
}

Var softmax(Var a, int axis, bool exclude_diagonal) {
  Tape& t = tape_of(a);
  const Shape& in = a.value().shape();
  const ReducePlan plan = plan_reduce("softmax", in, axis, exclude_diagonal);
  const AxisSplit& sp = plan.sp;
  Tensor out(in, 0.0);
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sp.n; ++i)
        if (!plan.skip(o, i, j)) m = std::max(m, av[(o * sp.n + i) * sp.inner + j]);
      double s = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        if (plan.skip(o, i, j)) continue;
        const std::size_t k = (o * sp.n + i) * sp.inner + j;
        out[k] = std::exp(av[k] - m);
        s += out[k];
      }
      for (std::size_t i = 0; i < sp.n; ++i) out[(o * sp.n + i) * sp.inner + j] /= s;
    }
  return t.record("softmax", std::move(out), {a}, [plan](const Tensor& g, const Tensor& y, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    const AxisSplit& s = plan.sp;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.inner; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = (o * s.n + i) * s.inner + j;
          dot += g[k] * y[k];
        }
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = (o * s.n + i) * s.inner + j;
          (*pg[0])[k] += y[k] * (g[k] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------- layernorm

namespace {

Var layernorm_impl(Var a, const Var* gain, const Var* shift, double eps) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t d = x.extent(-1);
  const std::size_t rows = x.size() / d;
  if (gain) {
    same_tape(a, *gain);
    same_tape(a, *shift);
    if (gain->value().shape() != Shape{d} || shift->value().shape() != Shape{d})
      throw DimensionError("layernorm: gain/shift must have shape [" + std::to_string(d) + "], got " +
                           to_string(gain->value().shape()) + " and " + to_string(shift->value().shape()));
  }
  Tensor xhat(x.shape());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += x[r * d + c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (x[r * d + c] - mu) * (x[r * d + c] - mu);
    var /= static_cast<double>(d);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) xhat[r * d + c] = (x[r * d + c] - mu) * inv[r];
  }
  Tensor out = xhat;
  std::vector<Var> parents{a};
  if (gain) {
    const Tensor& gv = gain->value();
    const Tensor& bv = shift->value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] = gv[c] * xhat[r * d + c] + bv[c];
    parents.push_back(*gain);
    parents.push_back(*shift);
  }
  Tape* tp = &t;
  const bool affine = gain != nullptr;
  const Var gvar = affine ? *gain : Var();
  return t.record("layernorm", std::move(out), std::move(parents),
                  [tp, affine, gvar, d, rows, xhat = std::move(xhat), inv = std::move(inv)](
                      const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
                    const double* gain_v = affine ? tp->value(gvar).data().data() : nullptr;
                    std::vector<double> gx(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        gx[c] = g[r * d + c] * (gain_v ? gain_v[c] : 1.0);
                        s1 += gx[c];
                        s2 += gx[c] * xhat[r * d + c];
                      }
                      s1 /= static_cast<double>(d);
                      s2 /= static_cast<double>(d);
                      if (pg[0])
                        for (std::size_t c = 0; c < d; ++c)
                          (*pg[0])[r * d + c] += inv[r] * (gx[c] - s1 - xhat[r * d + c] * s2);
                      if (affine) {
                        if (pg[1])
                          for (std::size_t c = 0; c < d; ++c) (*pg[1])[c] += g[r * d + c] * xhat[r * d + c];
                        if (pg[2])
                          for (std::size_t c = 0; c < d; ++c) (*pg[2])[c] += g[r * d + c];
                      }
                    }
                  });
}

}  // namespace

Var layernorm(Var a, double eps) { return layernorm_impl(a, nullptr, nullptr, eps); }

Var layernorm(Var a, Var gain, Var shift, double eps) { return layernorm_impl(a, &gain, &shift, eps); }

// ---------------------------------------------------------------- matmul

namespace {

struct BatchPlan {
  Shape batch;
  std::vector<std::size_t> a_off, b_off;  // per output batch entry, in matrices
};

BatchPlan plan_batches(const Shape& as, const Shape& bs) {
  const std::size_t ra = as.size() - 2, rb = bs.size() - 2;
  const std::size_t r = std::max(ra, rb);
  BatchPlan p;
  p.batch.assign(r, 1);
  std::vector<std::size_t> ea(r, 1), eb(r, 1);
  for (std::size_t i = 0; i < ra; ++i) ea[r - ra + i] = as[i];
  for (std::size_t i = 0; i < rb; ++i) eb[r - rb + i] = bs[i];
  for (std::size_t i = 0; i < r; ++i) {
    if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1)
      throw DimensionError("matmul: batch axes not broadcastable: " + to_string(as) + " x " + to_string(bs));
    p.batch[i] = std::max(ea[i], eb[i]);
  }
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  std::size_t stra = 1, strb = 1;
  for (std::size_t i = r; i-- > 0;) {
    sa[i] = ea[i] == 1 ? 0 : stra;
    sb[i] = eb[i] == 1 ? 0 : strb;
    stra *= ea[i];
    strb *= eb[i];
  }
  const std::size_t total = shape_size(p.batch);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < total; ++o) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < r; ++i) {
      oa += idx[i] * sa[i];
      ob += idx[i] * sb[i];
    }
    p.a_off.push_back(oa);
    p.b_off.push_back(ob);
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < p.batch[i]) break;
      idx[i] = 0;
    }
  }
  return p;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Shape& as = a.value().shape();
  const Shape& bs = b.value().shape();
  if (as.size() < 2 || bs.size() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(as) + " x " + to_string(bs));
  const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
  if (bs[bs.size() - 2] != k)
    throw DimensionError("matmul: inner extents differ: " + to_string(as) + " x " + to_string(bs));
  BatchPlan plan = plan_batches(as, bs);
  Shape os = plan.batch;
  os.push_back(m);
  os.push_back(n);
  Tensor out(os, 0.0);
  const double* A = a.value().data().data();
  const double* B = b.value().data().data();
  double* C = out.data().data();
  for (std::size_t q = 0; q < plan.a_off.size(); ++q) {
    const double* Aq = A + plan.a_off[q] * m * k;
    const double* Bq = B + plan.b_off[q] * k * n;
    double* Cq = C + q * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = Aq[i * k + p];
        for (std::size_t j = 0; j < n; ++j) Cq[i * n + j] += aip * Bq[p * n + j];
      }
  }
  Tape* tp = &t;
  return t.record("matmul", std::move(out), {a, b},
                  [tp, a, b, m, k, n, plan = std::move(plan)](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
                    const double* Av = tp->value(a).data().data();
                    const double* Bv = tp->value(b).data().data();
                    for (std::size_t q = 0; q < plan.a_off.size(); ++q) {
                      const double* G = g.data().data() + q * m * n;
                      if (pg[0]) {  // dA = G B^T
                        double* dA = pg[0]->data().data() + plan.a_off[q] * m * k;
                        const double* Bq = Bv + plan.b_off[q] * k * n;
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t p = 0; p < k; ++p) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * Bq[p * n + j];
                            dA[i * k + p] += s;
                          }
                      }
                      if (pg[1]) {  // dB = A^T G
                        double* dB = pg[1]->data().data() + plan.b_off[q] * k * n;
                        const double* Aq = Av + plan.a_off[q] * m * k;
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t p = 0; p < k; ++p) {
                            const double aip = Aq[i * k + p];
                            for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * G[i * n + j];
                          }
                      }
                    }
                  });
}

// ---------------------------------------------------------------- conv2d

namespace {

Var conv2d_impl(Var x, Var kernel, const Var* bias) {
  Tape& t = same_tape(x, kernel);
  const Shape& xs = x.value().shape();
  const Shape& ks = kernel.value().shape();
  if (xs.size() != 4) throw DimensionError("conv2d: input must be [B,H,W,Cin], got " + to_string(xs));
  if (ks.size() != 4) throw DimensionError("conv2d: kernel must be [kh,kw,Cin,Cout], got " + to_string(ks));
  const std::size_t B = xs[0], H = xs[1], W = xs[2], Ci = xs[3];
  const std::size_t kh = ks[0], kw = ks[1], Co = ks[3];
  if (ks[2] != Ci) throw DimensionError("conv2d: channel mismatch " + to_string(xs) + " vs kernel " + to_string(ks));
  if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv2d: same padding needs odd kernel, got " + to_string(ks));
  if (bias) {
    same_tape(x, *bias);
    if (bias->value().shape() != Shape{Co})
      throw DimensionError("conv2d: bias must be [" + std::to_string(Co) + "], got " + to_string(bias->value().shape()));
  }
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  Tensor out(Shape{B, H, W, Co}, 0.0);
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  // Visits every (output pixel, kernel tap) pair that lands inside the image.
  auto for_taps = [=](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          for (std::size_t dy = 0; dy < kh; ++dy) {
            const long sy = static_cast<long>(y) + static_cast<long>(dy) - ph;
            if (sy < 0 || sy >= static_cast<long>(H)) continue;
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const long sx = static_cast<long>(xx) + static_cast<long>(dx) - pw;
              if (sx < 0 || sx >= static_cast<long>(W)) continue;
              const std::size_t in_base = ((b * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)) * Ci;
              const std::size_t out_base = ((b * H + y) * W + xx) * Co;
              const std::size_t k_base = (dy * kw + dx) * Ci * Co;
              fn(in_base, out_base, k_base);
            }
          }
  };
  for_taps([&](std::size_t ib, std::size_t ob, std::size_t kb) {
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      const double v = xv[ib + ci];
      for (std::size_t co = 0; co < Co; ++co) out[ob + co] += v * kv[kb + ci * Co + co];
    }
  });
  std::vector<Var> parents{x, kernel};
  if (bias) {
    const Tensor& bv = bias->value();
    for (std::size_t p = 0; p < B * H * W; ++p)
      for (std::size_t co = 0; co < Co; ++co) out[p * Co + co] += bv[co];
    parents.push_back(*bias);
  }
  Tape* tp = &t;
  return t.record("conv2d", std::move(out), std::move(parents),
                  [tp, x, kernel, for_taps, Ci, Co, B, H, W](const Tensor& g, const Tensor&, std::span<Tensor* const> pg) {
                    const Tensor& xv2 = tp->value(x);
                    const Tensor& kv2 = tp->value(kernel);
                    for_taps([&](std::size_t ib, std::size_t ob, std::size_t kb) {
                      for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t co = 0; co < Co; ++co) {
                          const double gv = g[ob + co];
                          if (pg[0]) (*pg[0])[ib + ci] += gv * kv2[kb + ci * Co + co];
                          if (pg[1]) (*pg[1])[kb + ci * Co + co] += gv * xv2[ib + ci];
                        }
                    });
                    if (pg.size() > 2 && pg[2])
                      for (std::size_t p = 0; p < B * H * W; ++p)
                        for (std::size_t co = 0; co < Co; ++co) (*pg[2])[co] += g[p * Co + co];
                  });
}

}  // namespace

Var conv2d(Var x, Var kernel) { return conv2d_impl(x, kernel, nullptr); }

Var conv2d(Var x, Var kernel, Var bias) { return conv2d_impl(x, kernel, &bias); }

// ---------------------------------------------------------------- complex pair rotation

Var rotate_pairs(Var x, Var re, Var im, std::span<const std::uint8_t> active, bool conjugate) {
  Tape& t = same_tape(x, re);
  same_tape(x, im);
  const Shape& xs = x.value().shape();
  if (xs.size() < 2) throw DimensionError("rotate_pairs: input must be [..,N,2P], got " + to_string(xs));
  const std::size_t N = xs[xs.size() - 2], D = xs.back();
  if (D % 2 != 0) throw ConfigError("rotate_pairs: last extent must be even, got " + std::to_string(D));
  const std::size_t P = D / 2;
  const Shape phase_shape{N, P};
  if (re.value().shape() != phase_shape || im.value().shape() != phase_shape)
    throw DimensionError("rotate_pairs: phase must be " + to_string(phase_shape) + ", got " +
                         to_string(re.value().shape()) + " and " + to_string(im.value().shape()));
  if (active.size() != N * P)
    throw DimensionError("rotate_pairs: active mask has " + std::to_string(active.size()) + " entries, expected " +
                         std::to_string(N * P));
  const std::size_t batch = x.value().size() / (N * D);
  const double sgn = conjugate ? -1.0 : 1.0;
  Tensor out = x.value();
  out.set_requires_grad(false);
  const Tensor& rv = re.value();
  const Tensor& iv = im.value();
  for (std::size_t q = 0; q < batch; ++q)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < P; ++m) {
        if (!active[n * P + m]) continue;
        const std::size_t k = (q * N + n) * D + 2 * m;
        const double a = rv[n * P + m], b = sgn * iv[n * P + m];
        const double u = out[k], v = out[k + 1];
        out[k] = a * u - b * v;
        out[k + 1] = a * v + b * u;
      }
  Tape* tp = &t;
  std::vector<std::uint8_t> mask(active.begin(), active.end());
  return t.record("rotate_pairs", std::move(out), {x, re, im},
                  [tp, x, re, im, mask = std::move(mask), batch, N, P, D, sgn](const Tensor& g, const Tensor&,
                                                                                std::span<Tensor* const> pg) {
                    const Tensor& xv = tp->value(x);
                    const Tensor& rv2 = tp->value(re);
                    const Tensor& iv2 = tp->value(im);
                    for (std::size_t q = 0; q < batch; ++q)
                      for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t m = 0; m < P; ++m) {
                          const std::size_t k = (q * N + n) * D + 2 * m;
                          const double gu = g[k], gv = g[k + 1];
                          if (!mask[n * P + m]) {
                            if (pg[0]) {
                              (*pg[0])[k] += gu;
                              (*pg[0])[k + 1] += gv;
                            }
                            continue;
                          }
                          const double a = rv2[n * P + m], b = sgn * iv2[n * P + m];
                          const double u = xv[k], v = xv[k + 1];
                          if (pg[0]) {
                            (*pg[0])[k] += a * gu + b * gv;
                            (*pg[0])[k + 1] += -b * gu + a * gv;
                          }
                          if (pg[1]) (*pg[1])[n * P + m] += gu * u + gv * v;
                          if (pg[2]) (*pg[2])[n * P + m] += sgn * (-gu * v + gv * u);
                        }
                  });
}

}  // namespace ef
