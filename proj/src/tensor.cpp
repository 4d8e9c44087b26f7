#include "lvat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace lvat {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != numel(shape)) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape s) {
  const std::size_t n = numel(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape s, double value) {
  const std::size_t n = numel(s);
  return Tensor(std::move(s), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::from(std::vector<double> v, Shape s) { return Tensor(std::move(s), std::move(v)); }

bool Tensor::all_finite() const {
  for (const double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::item() const {
  if (values.size() != 1) {
    throw std::invalid_argument("item: tensor of shape " + shape_str(shape) + " is not a scalar");
  }
  return values[0];
}

Tensor detach(const Tensor& t) {
  Tensor out;
  out.shape = t.shape;
  out.values = t.values;
  out.nonfinite = t.nonfinite;
  return out;
}

Tensor Tape::input(const Tensor& value) {
  if (value.recorded()) {
    throw std::invalid_argument("Tape::input: tensor is already recorded");
  }
  Tensor out = detach(value);
  out.tape = this;
  out.node = emit(out.shape, {}, nullptr);
  return out;
}

int Tape::emit(const Shape& shape, std::vector<int> parents, BackwardFn fn) {
  for (const int p : parents) {
    if (p < 0 || static_cast<std::size_t>(p) >= nodes_.size()) {
      throw std::invalid_argument("Tape::emit: parent index out of range");
    }
  }
  nodes_.push_back(Node{shape, std::move(parents), std::move(fn)});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(const Tensor& root) {
  if (root.tape != this) {
    throw std::invalid_argument("backward: root is not recorded on this tape");
  }
  if (!root.is_scalar()) {
    throw std::invalid_argument("backward: root has shape " + shape_str(root.shape) +
                                ", expected a scalar");
  }
  grads_.assign(nodes_.size(), {});
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    grads_[i].assign(numel(nodes_[i].shape), 0.0);
  }
  // Reachability from the root, walking parent edges only.
  std::vector<char> reachable(nodes_.size(), 0);
  reachable[static_cast<std::size_t>(root.node)] = 1;
  for (int i = root.node; i >= 0; --i) {
    if (!reachable[static_cast<std::size_t>(i)]) continue;
    for (const int p : nodes_[static_cast<std::size_t>(i)].parents) {
      reachable[static_cast<std::size_t>(p)] = 1;
    }
  }
  grads_[static_cast<std::size_t>(root.node)][0] = 1.0;
  for (int i = root.node; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    if (!reachable[ui] || !nodes_[ui].backward) continue;
    std::vector<std::vector<double>*> parent_grads;
    parent_grads.reserve(nodes_[ui].parents.size());
    for (const int p : nodes_[ui].parents) {
      parent_grads.push_back(&grads_[static_cast<std::size_t>(p)]);
    }
    nodes_[ui].backward(grads_[ui], parent_grads);
  }
  has_grads_ = true;
}

Tensor Tape::grad(const Tensor& t) const {
  if (t.tape != this) {
    throw std::invalid_argument("grad: tensor is not recorded on this tape");
  }
  if (!has_grads_) {
    throw std::invalid_argument("grad: backward has not been run on this tape");
  }
  Tensor out;
  out.shape = nodes_[static_cast<std::size_t>(t.node)].shape;
  out.values = grads_[static_cast<std::size_t>(t.node)];
  return out;
}

namespace {

Tape* common_tape(const Tensor& a, const Tensor& b) {
  if (a.tape && b.tape && a.tape != b.tape) {
    throw std::invalid_argument("op: operands are recorded on different tapes");
  }
  return a.tape ? a.tape : b.tape;
}

Shape broadcast_shape(const char* name, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument(std::string(name) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " are not broadcastable");
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `in` aligned to the trailing dims of `out`, with zero
// stride wherever `in` is broadcast.
std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t d = in.size() - 1 - i;
    const std::size_t od = out.size() - 1 - i;
    strides[od] = (in[d] == 1 && out[od] != 1) ? 0 : stride;
    stride *= in[d];
  }
  return strides;
}

// Iterates the output index space of a broadcast binary op, handing the callee
// linear offsets into the output and both (stride-aligned) inputs.
template <typename Fn>
void bcast_loop(const Shape& out_shape, const std::vector<std::size_t>& a_str,
                const std::vector<std::size_t>& b_str, Fn&& fn) {
  const std::size_t total = numel(out_shape);
  const std::size_t rank = out_shape.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ai = 0, bi = 0;
  for (std::size_t oi = 0; oi < total; ++oi) {
    fn(oi, ai, bi);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ai += a_str[d];
      bi += b_str[d];
      if (idx[d] < out_shape[d]) break;
      idx[d] = 0;
      ai -= a_str[d] * out_shape[d];
      bi -= b_str[d] * out_shape[d];
    }
  }
}

bool scan_finite(const std::vector<double>& v) {
  for (const double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// Shared skeleton for broadcasting binary ops. dfa/dfb map (a_i, b_i, y_i) to
// the local partial derivative w.r.t. the respective operand.
template <typename F, typename DFA, typename DFB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DFA dfa, DFB dfb) {
  const Shape out_shape = broadcast_shape(name, a.shape, b.shape);
  const auto a_str = aligned_strides(a.shape, out_shape);
  const auto b_str = aligned_strides(b.shape, out_shape);

  Tensor out;
  out.shape = out_shape;
  out.values.resize(numel(out_shape));
  bcast_loop(out_shape, a_str, b_str, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
    out.values[oi] = f(a.values[ai], b.values[bi]);
  });
  out.nonfinite = a.nonfinite || b.nonfinite || !scan_finite(out.values);

  Tape* tape = common_tape(a, b);
  if (!tape) return out;

  std::vector<int> parents;
  const bool rec_a = a.recorded();
  const bool rec_b = b.recorded();
  if (rec_a) parents.push_back(a.node);
  if (rec_b) parents.push_back(b.node);

  out.tape = tape;
  out.node = tape->emit(
      out.shape, std::move(parents),
      [av = a.values, bv = b.values, yv = out.values, out_shape, a_str, b_str, rec_a, rec_b, dfa,
       dfb](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        std::vector<double>* da = rec_a ? pg[0] : nullptr;
        std::vector<double>* db = rec_b ? pg[rec_a ? 1 : 0] : nullptr;
        bcast_loop(out_shape, a_str, b_str, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
          if (da) (*da)[ai] += g[oi] * dfa(av[ai], bv[bi], yv[oi]);
          if (db) (*db)[bi] += g[oi] * dfb(av[ai], bv[bi], yv[oi]);
        });
      });
  return out;
}

// Shared skeleton for elementwise unary ops; df maps (x_i, y_i) to dy/dx.
template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
  Tensor out;
  out.shape = a.shape;
  out.values.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] = f(a.values[i]);
  out.nonfinite = a.nonfinite || !scan_finite(out.values);

  if (!a.recorded()) return out;
  out.tape = a.tape;
  out.node = a.tape->emit(
      out.shape, {a.node},
      [av = a.values, yv = out.values, df](const std::vector<double>& g,
                                           const std::vector<std::vector<double>*>& pg) {
        std::vector<double>& da = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * df(av[i], yv[i]);
      });
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a, [](double x) { return stable_softplus(x); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo exceeds hi");
  return unary_op(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor neg(const Tensor& a) {
  return unary_op(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul: expected rank-2 operands, got " + shape_str(a.shape) +
                                " and " + shape_str(b.shape));
  }
  if (a.shape[1] != b.shape[0]) {
    throw std::invalid_argument("matmul: inner dimensions of " + shape_str(a.shape) + " and " +
                                shape_str(b.shape) + " do not match");
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out;
  out.shape = {m, n};
  out.values.assign(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a.values[i * k + kk];
      const double* brow = &b.values[kk * n];
      double* orow = &out.values[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  out.nonfinite = a.nonfinite || b.nonfinite || !scan_finite(out.values);

  Tape* tape = common_tape(a, b);
  if (!tape) return out;
  std::vector<int> parents;
  const bool rec_a = a.recorded();
  const bool rec_b = b.recorded();
  if (rec_a) parents.push_back(a.node);
  if (rec_b) parents.push_back(b.node);
  out.tape = tape;
  out.node = tape->emit(
      out.shape, std::move(parents),
      [av = a.values, bv = b.values, m, k, n, rec_a,
       rec_b](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        std::vector<double>* da = rec_a ? pg[0] : nullptr;
        std::vector<double>* db = rec_b ? pg[rec_a ? 1 : 0] : nullptr;
        if (da) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              const double* grow = &g[i * n];
              const double* brow = &bv[kk * n];
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              (*da)[i * k + kk] += acc;
            }
          }
        }
        if (db) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            for (std::size_t i = 0; i < m; ++i) {
              const double av_ik = av[i * k + kk];
              const double* grow = &g[i * n];
              double* drow = &(*db)[kk * n];
              for (std::size_t j = 0; j < n; ++j) drow[j] += av_ik * grow[j];
            }
          }
        }
      });
  return out;
}

namespace {

struct ReducePlan {
  Shape out_shape;
  // For each input element, the linear output slot it reduces into; encoded as
  // strides so the mapping never materializes.
  std::vector<std::size_t> out_strides;  // aligned to input dims, 0 on reduced dims
  std::size_t count = 1;                 // elements reduced per output slot
};

ReducePlan make_reduce_plan(const char* name, const Shape& in, std::vector<std::size_t> axes,
                            bool keepdims) {
  if (axes.empty()) {
    axes.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) axes[i] = i;
  }
  std::set<std::size_t> axis_set;
  for (const std::size_t ax : axes) {
    if (ax >= in.size()) {
      throw std::invalid_argument(std::string(name) + ": axis " + std::to_string(ax) +
                                  " out of range for shape " + shape_str(in));
    }
    if (!axis_set.insert(ax).second) {
      throw std::invalid_argument(std::string(name) + ": duplicate axis " + std::to_string(ax));
    }
  }
  ReducePlan plan;
  std::vector<char> reduced(in.size(), 0);
  for (const std::size_t ax : axis_set) {
    reduced[ax] = 1;
    plan.count *= in[ax];
  }
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (!reduced[d]) {
      plan.out_shape.push_back(in[d]);
    } else if (keepdims) {
      plan.out_shape.push_back(1);
    }
  }
  // Strides of the output laid over the input's index space.
  plan.out_strides.assign(in.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    if (!reduced[i]) {
      plan.out_strides[i] = stride;
      stride *= in[i];
    }
  }
  return plan;
}

template <typename Fn>
void reduce_loop(const Shape& in_shape, const std::vector<std::size_t>& out_strides, Fn&& fn) {
  const std::size_t total = numel(in_shape);
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oi = 0;
  for (std::size_t ii = 0; ii < total; ++ii) {
    fn(ii, oi);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oi += out_strides[d];
      if (idx[d] < in_shape[d]) break;
      idx[d] = 0;
      oi -= out_strides[d] * in_shape[d];
    }
  }
}

Tensor reduce_impl(const char* name, const Tensor& a, std::vector<std::size_t> axes, bool keepdims,
                   bool mean) {
  const ReducePlan plan = make_reduce_plan(name, a.shape, std::move(axes), keepdims);
  const double scale = mean ? 1.0 / static_cast<double>(plan.count) : 1.0;

  Tensor out;
  out.shape = plan.out_shape;
  out.values.assign(numel(plan.out_shape), 0.0);
  reduce_loop(a.shape, plan.out_strides,
              [&](std::size_t ii, std::size_t oi) { out.values[oi] += a.values[ii]; });
  if (mean) {
    for (double& v : out.values) v *= scale;
  }
  out.nonfinite = a.nonfinite || !scan_finite(out.values);

  if (!a.recorded()) return out;
  out.tape = a.tape;
  out.node = a.tape->emit(
      out.shape, {a.node},
      [in_shape = a.shape, out_strides = plan.out_strides,
       scale](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        std::vector<double>& da = *pg[0];
        reduce_loop(in_shape, out_strides,
                    [&](std::size_t ii, std::size_t oi) { da[ii] += g[oi] * scale; });
      });
  return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, std::vector<std::size_t> axes, bool keepdims) {
  return reduce_impl("reduce_sum", a, std::move(axes), keepdims, false);
}

Tensor reduce_mean(const Tensor& a, std::vector<std::size_t> axes, bool keepdims) {
  return reduce_impl("reduce_mean", a, std::move(axes), keepdims, true);
}

Tensor reshape(const Tensor& a, Shape target) {
  if (numel(target) != a.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape) + " as " +
                                shape_str(target));
  }
  Tensor out;
  out.shape = std::move(target);
  out.values = a.values;
  out.nonfinite = a.nonfinite;
  if (!a.recorded()) return out;
  out.tape = a.tape;
  out.node = a.tape->emit(out.shape, {a.node},
                          [](const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& pg) {
                            std::vector<double>& da = *pg[0];
                            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                          });
  return out;
}

namespace {

struct SlicePlan {
  std::size_t outer = 1;   // product of dims before axis
  std::size_t inner = 1;   // product of dims after axis
  std::size_t extent = 0;  // input extent along axis
};

SlicePlan make_slice_plan(const Shape& shape, std::size_t axis) {
  SlicePlan plan;
  plan.extent = shape[axis];
  for (std::size_t d = 0; d < axis; ++d) plan.outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) plan.inner *= shape[d];
  return plan;
}

}  // namespace

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t end) {
  if (axis >= a.rank()) {
    throw std::invalid_argument("slice: axis " + std::to_string(axis) + " out of range for " +
                                shape_str(a.shape));
  }
  if (start >= end || end > a.shape[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(end) + ") invalid for extent " +
                                std::to_string(a.shape[axis]));
  }
  const SlicePlan plan = make_slice_plan(a.shape, axis);
  const std::size_t len = end - start;
  Shape out_shape = a.shape;
  out_shape[axis] = len;

  Tensor out;
  out.shape = out_shape;
  out.values.resize(numel(out_shape));
  for (std::size_t o = 0; o < plan.outer; ++o) {
    const double* src = &a.values[(o * plan.extent + start) * plan.inner];
    double* dst = &out.values[o * len * plan.inner];
    std::copy(src, src + len * plan.inner, dst);
  }
  out.nonfinite = a.nonfinite;

  if (!a.recorded()) return out;
  out.tape = a.tape;
  out.node = a.tape->emit(
      out.shape, {a.node},
      [plan, start, len](const std::vector<double>& g,
                         const std::vector<std::vector<double>*>& pg) {
        std::vector<double>& da = *pg[0];
        for (std::size_t o = 0; o < plan.outer; ++o) {
          const double* src = &g[o * len * plan.inner];
          double* dst = &da[(o * plan.extent + start) * plan.inner];
          for (std::size_t i = 0; i < len * plan.inner; ++i) dst[i] += src[i];
        }
      });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no tensors given");
  const Shape& base = parts[0].shape;
  if (axis >= base.size()) {
    throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range for " +
                                shape_str(base));
  }
  std::size_t total_extent = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != base.size()) {
      throw std::invalid_argument("concat: rank mismatch between parts");
    }
    for (std::size_t d = 0; d < base.size(); ++d) {
      if (d != axis && p.shape[d] != base[d]) {
        throw std::invalid_argument("concat: part shape " + shape_str(p.shape) +
                                    " incompatible with " + shape_str(base) + " on axis " +
                                    std::to_string(axis));
      }
    }
    total_extent += p.shape[axis];
  }
  Shape out_shape = base;
  out_shape[axis] = total_extent;
  const SlicePlan plan = make_slice_plan(out_shape, axis);

  Tensor out;
  out.shape = out_shape;
  out.values.resize(numel(out_shape));
  std::size_t offset = 0;
  bool nonfinite = false;
  for (const Tensor& p : parts) {
    const std::size_t len = p.shape[axis];
    for (std::size_t o = 0; o < plan.outer; ++o) {
      const double* src = &p.values[o * len * plan.inner];
      double* dst = &out.values[(o * plan.extent + offset) * plan.inner];
      std::copy(src, src + len * plan.inner, dst);
    }
    offset += len;
    nonfinite = nonfinite || p.nonfinite;
  }
  out.nonfinite = nonfinite;

  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    if (p.recorded()) {
      if (tape && tape != p.tape) {
        throw std::invalid_argument("concat: parts are recorded on different tapes");
      }
      tape = p.tape;
    }
  }
  if (!tape) return out;

  std::vector<int> parents;
  struct Segment {
    std::size_t offset, len;
    bool recorded;
  };
  std::vector<Segment> segments;
  offset = 0;
  for (const Tensor& p : parts) {
    segments.push_back({offset, p.shape[axis], p.recorded()});
    if (p.recorded()) parents.push_back(p.node);
    offset += p.shape[axis];
  }
  out.tape = tape;
  out.node = tape->emit(
      out.shape, std::move(parents),
      [plan, segments](const std::vector<double>& g,
                       const std::vector<std::vector<double>*>& pg) {
        std::size_t which = 0;
        for (const Segment& seg : segments) {
          if (!seg.recorded) continue;
          std::vector<double>& dp = *pg[which++];
          for (std::size_t o = 0; o < plan.outer; ++o) {
            const double* src = &g[(o * plan.extent + seg.offset) * plan.inner];
            double* dst = &dp[o * seg.len * plan.inner];
            for (std::size_t i = 0; i < seg.len * plan.inner; ++i) dst[i] += src[i];
          }
        }
      });
  return out;
}

Tensor gather_cols(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() != 2) {
    throw std::invalid_argument("gather_cols: expected rank-2 tensor, got " + shape_str(a.shape));
  }
  if (idx.empty()) throw std::invalid_argument("gather_cols: empty index list");
  const std::size_t rows = a.shape[0], cols = a.shape[1], out_cols = idx.size();
  for (const std::size_t c : idx) {
    if (c >= cols) {
      throw std::invalid_argument("gather_cols: index " + std::to_string(c) +
                                  " out of range for " + std::to_string(cols) + " columns");
    }
  }
  Tensor out;
  out.shape = {rows, out_cols};
  out.values.resize(rows * out_cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < out_cols; ++j) {
      out.values[r * out_cols + j] = a.values[r * cols + idx[j]];
    }
  }
  out.nonfinite = a.nonfinite;
  if (!a.recorded()) return out;
  out.tape = a.tape;
  out.node = a.tape->emit(
      out.shape, {a.node},
      [rows, cols, idx](const std::vector<double>& g,
                        const std::vector<std::vector<double>*>& pg) {
        std::vector<double>& da = *pg[0];
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < idx.size(); ++j) {
            da[r * cols + idx[j]] += g[r * idx.size() + j];
          }
        }
      });
  return out;
}

Tensor scatter_cols(const Tensor& a, const std::vector<std::size_t>& idx, std::size_t out_cols) {
  if (a.rank() != 2) {
    throw std::invalid_argument("scatter_cols: expected rank-2 tensor, got " + shape_str(a.shape));
  }
  if (idx.size() != a.shape[1]) {
    throw std::invalid_argument("scatter_cols: index count " + std::to_string(idx.size()) +
                                " does not match " + std::to_string(a.shape[1]) + " columns");
  }
  std::set<std::size_t> seen;
  for (const std::size_t c : idx) {
    if (c >= out_cols) {
      throw std::invalid_argument("scatter_cols: index " + std::to_string(c) +
                                  " out of range for " + std::to_string(out_cols) + " columns");
    }
    if (!seen.insert(c).second) {
      throw std::invalid_argument("scatter_cols: duplicate index " + std::to_string(c));
    }
  }
  const std::size_t rows = a.shape[0], cols = a.shape[1];
  Tensor out;
  out.shape = {rows, out_cols};
  out.values.assign(rows * out_cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      out.values[r * out_cols + idx[j]] = a.values[r * cols + j];
    }
  }
  out.nonfinite = a.nonfinite;
  if (!a.recorded()) return out;
  out.tape = a.tape;
  out.node = a.tape->emit(
      out.shape, {a.node},
      [rows, cols, out_cols, idx](const std::vector<double>& g,
                                  const std::vector<std::vector<double>*>& pg) {
        std::vector<double>& da = *pg[0];
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < cols; ++j) {
            da[r * cols + j] += g[r * out_cols + idx[j]];
          }
        }
      });
  return out;
}

Tensor row_max_const(const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("row_max_const: expected rank-2 tensor, got " +
                                shape_str(a.shape));
  }
  const std::size_t rows = a.shape[0], cols = a.shape[1];
  Tensor out;
  out.shape = {rows, 1};
  out.values.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double m = a.values[r * cols];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, a.values[r * cols + c]);
    out.values[r] = m;
  }
  out.nonfinite = a.nonfinite;
  return out;
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace lvat
