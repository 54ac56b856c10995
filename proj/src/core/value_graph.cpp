#include "star/core/value_graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "star/core/error.hpp"

namespace star::core {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(Op op, const Shape& a, const Shape& b, const std::string& what = {}) {
  std::string msg = std::string(op_name(op)) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b);
  if (!what.empty()) msg += " (" + what + ")";
  throw ShapeError(msg);
}

[[noreturn]] void shape_fail(Op op, const Shape& a, const std::string& what) {
  throw ShapeError(std::string(op_name(op)) + ": invalid shape " + shape_str(a) + " (" + what + ")");
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::parameter: return "parameter";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::leaky_relu: return "leaky_relu";
    case Op::sigmoid: return "sigmoid";
    case Op::row_softmax: return "row_softmax";
    case Op::log: return "log";
    case Op::mean: return "mean";
    case Op::sum: return "sum";
    case Op::concat: return "concat";
    case Op::l2_normalize: return "l2_normalize";
    case Op::row_dot: return "row_dot";
    case Op::batch_norm: return "batch_norm";
    case Op::gather_rows: return "gather_rows";
    case Op::bag_mean: return "bag_mean";
    case Op::gather_elements: return "gather_elements";
    case Op::reshape: return "reshape";
    case Op::bce: return "bce";
    case Op::head_scores: return "head_scores";
    case Op::head_combine: return "head_combine";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// builders

Var ValueGraph::push(Node node) {
  for (int in : node.inputs) {
    if (in < 0 || in >= static_cast<int>(nodes_.size())) throw Error("invalid input Var");
    if (nodes_[in].requires_grad) node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  Node& n = nodes_.back();
  if (n.op != Op::constant && n.op != Op::parameter) {
    try {
      compute(n);
    } catch (...) {
      nodes_.pop_back();
      throw;
    }
  }
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var ValueGraph::constant(Tensor t) {
  Node n;
  n.op = Op::constant;
  n.value = std::move(t);
  return push(std::move(n));
}

Var ValueGraph::parameter(ParamId id) {
  if (!params_) throw Error("parameter node requires a ParameterSet");
  Node n;
  n.op = Op::parameter;
  n.param = id;
  n.requires_grad = params_->entry(id).trainable;
  return push(std::move(n));
}

Var ValueGraph::parameter(const std::string& name) {
  if (!params_) throw Error("parameter node requires a ParameterSet");
  return parameter(params_->require(name));
}

void ValueGraph::assign(Var leaf, Tensor t) {
  Node& n = nodes_.at(leaf.id);
  if (n.op != Op::constant) throw Error("assign() only applies to constant leaves");
  n.value = std::move(t);
}

#define STAR_UNARY(fn, opkind)      \
  Var ValueGraph::fn(Var a) {       \
    Node n;                         \
    n.op = Op::opkind;              \
    n.inputs = {a.id};              \
    return push(std::move(n));      \
  }

#define STAR_BINARY(fn, opkind)     \
  Var ValueGraph::fn(Var a, Var b) { \
    Node n;                         \
    n.op = Op::opkind;              \
    n.inputs = {a.id, b.id};        \
    return push(std::move(n));      \
  }

STAR_BINARY(matmul, matmul)
STAR_UNARY(transpose, transpose)
STAR_BINARY(add, add)
STAR_BINARY(sub, sub)
STAR_BINARY(mul, mul)
STAR_UNARY(leaky_relu, leaky_relu)
STAR_UNARY(sigmoid, sigmoid)
STAR_UNARY(log, log)
STAR_UNARY(sum, sum)
STAR_UNARY(l2_normalize, l2_normalize)
STAR_BINARY(row_dot, row_dot)

#undef STAR_UNARY
#undef STAR_BINARY

Var ValueGraph::scale(Var a, double factor) {
  Node n;
  n.op = Op::scale;
  n.inputs = {a.id};
  n.scalar = factor;
  return push(std::move(n));
}

Var ValueGraph::row_softmax(Var a, std::vector<std::uint8_t> mask) {
  Node n;
  n.op = Op::row_softmax;
  n.inputs = {a.id};
  n.mask = std::move(mask);
  return push(std::move(n));
}

Var ValueGraph::mean(Var a, int axis) {
  Node n;
  n.op = Op::mean;
  n.inputs = {a.id};
  n.axis = axis;
  return push(std::move(n));
}

Var ValueGraph::concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  Node n;
  n.op = Op::concat;
  for (Var p : parts) n.inputs.push_back(p.id);
  n.axis = axis;
  return push(std::move(n));
}

Var ValueGraph::batch_norm(Var x, Var gamma, Var beta, ParamId running_mean, ParamId running_var,
                           bool training) {
  if (!params_) throw Error("batch_norm requires a ParameterSet for running statistics");
  Node n;
  n.op = Op::batch_norm;
  n.inputs = {x.id, gamma.id, beta.id};
  n.aux_param_a = running_mean;
  n.aux_param_b = running_var;
  n.training = training;
  return push(std::move(n));
}

Var ValueGraph::gather_rows(Var table, std::vector<std::int64_t> indices) {
  Node n;
  n.op = Op::gather_rows;
  n.inputs = {table.id};
  n.indices = std::move(indices);
  return push(std::move(n));
}

Var ValueGraph::bag_mean(Var table, std::vector<std::int64_t> offsets, std::vector<std::int64_t> indices) {
  Node n;
  n.op = Op::bag_mean;
  n.inputs = {table.id};
  n.offsets = std::move(offsets);
  n.indices = std::move(indices);
  return push(std::move(n));
}

Var ValueGraph::gather_elements(Var a, std::vector<std::int64_t> flat_indices) {
  Node n;
  n.op = Op::gather_elements;
  n.inputs = {a.id};
  n.indices = std::move(flat_indices);
  return push(std::move(n));
}

Var ValueGraph::reshape(Var a, Shape shape) {
  Node n;
  n.op = Op::reshape;
  n.inputs = {a.id};
  n.shape = std::move(shape);
  return push(std::move(n));
}

Var ValueGraph::bce(Var probs, Tensor labels) {
  Node n;
  n.op = Op::bce;
  n.inputs = {probs.id};
  n.aux = std::move(labels);
  return push(std::move(n));
}

Var ValueGraph::head_scores(Var q, Var k, std::size_t heads, std::size_t keys) {
  Node n;
  n.op = Op::head_scores;
  n.inputs = {q.id, k.id};
  n.heads = heads;
  n.keys = keys;
  return push(std::move(n));
}

Var ValueGraph::head_combine(Var w, Var v, std::size_t heads, std::size_t keys) {
  Node n;
  n.op = Op::head_combine;
  n.inputs = {w.id, v.id};
  n.heads = heads;
  n.keys = keys;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// evaluation

const Tensor& ValueGraph::val(int id) const {
  const Node& n = nodes_[id];
  if (n.op == Op::parameter) return params_->value(n.param);
  return n.value;
}

const Tensor& ValueGraph::value(Var v) const { return val(v.id); }

const Tensor& ValueGraph::grad(Var v) const {
  if (v.id >= static_cast<int>(grads_.size()) || !touched_[v.id]) {
    static const Tensor empty;
    return empty;
  }
  return grads_[v.id];
}

void ValueGraph::forward() {
  for (auto& n : nodes_) {
    if (n.op != Op::constant && n.op != Op::parameter) compute(n);
  }
}

void ValueGraph::compute(Node& n) {
  const Op op = n.op;
  auto in = [&](std::size_t i) -> const Tensor& { return val(n.inputs[i]); };

  switch (op) {
    case Op::constant:
    case Op::parameter:
      return;

    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail(op, a.shape(), b.shape());
      Tensor out(Shape{a.dim(0), b.dim(1)});
      Map(out.data(), a.dim(0), b.dim(1)).noalias() =
          MapC(a.data(), a.dim(0), a.dim(1)) * MapC(b.data(), b.dim(0), b.dim(1));
      n.value = std::move(out);
      break;
    }

    case Op::transpose: {
      const Tensor& a = in(0);
      if (a.rank() != 2) shape_fail(op, a.shape(), "rank 2 required");
      Tensor out(Shape{a.dim(1), a.dim(0)});
      for (std::size_t r = 0; r < a.dim(0); ++r)
        for (std::size_t c = 0; c < a.dim(1); ++c) out.at(c, r) = a.at(r, c);
      n.value = std::move(out);
      break;
    }

    case Op::add: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor out = a;
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
      } else if (b.rank() == 1 && a.rank() == 2 && b.dim(0) == a.dim(1)) {
        const std::size_t cols = a.dim(1);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i % cols];
      } else if (b.rank() == 0) {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[0];
      } else {
        shape_fail(op, a.shape(), b.shape());
      }
      n.value = std::move(out);
      break;
    }

    case Op::sub:
    case Op::mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
      Tensor out = a;
      if (op == Op::sub) {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
      } else {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
      }
      n.value = std::move(out);
      break;
    }

    case Op::scale: {
      Tensor out = in(0);
      for (auto& x : out.values()) x *= n.scalar;
      n.value = std::move(out);
      break;
    }

    case Op::leaky_relu: {
      Tensor out = in(0);
      for (auto& x : out.values()) x = x > 0 ? x : kLeakySlope * x;
      n.value = std::move(out);
      break;
    }

    case Op::sigmoid: {
      Tensor out = in(0);
      for (auto& x : out.values()) x = stable_sigmoid(x);
      n.value = std::move(out);
      break;
    }

    case Op::row_softmax: {
      const Tensor& a = in(0);
      if (a.rank() != 1 && a.rank() != 2) shape_fail(op, a.shape(), "rank 1 or 2 required");
      if (!n.mask.empty() && n.mask.size() != a.numel()) {
        shape_fail(op, a.shape(), Shape{n.mask.size()}, "mask");
      }
      Tensor out(a.shape());
      const std::size_t rows = a.rows(), cols = a.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * cols;
        double mx = -INFINITY;
        for (std::size_t c = 0; c < cols; ++c) {
          if (n.mask.empty() || n.mask[base + c]) mx = std::max(mx, a[base + c]);
        }
        if (mx == -INFINITY) continue;  // fully masked row
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          if (n.mask.empty() || n.mask[base + c]) {
            out[base + c] = std::exp(a[base + c] - mx);
            z += out[base + c];
          }
        }
        for (std::size_t c = 0; c < cols; ++c) out[base + c] /= z;
      }
      n.value = std::move(out);
      break;
    }

    case Op::log: {
      Tensor out = in(0);
      for (auto& x : out.values()) x = std::log(x);
      n.value = std::move(out);
      break;
    }

    case Op::mean: {
      const Tensor& a = in(0);
      if (n.axis == -1) {
        double s = 0.0;
        for (double x : a.values()) s += x;
        n.value = Tensor::scalar(a.numel() ? s / static_cast<double>(a.numel()) : 0.0);
      } else {
        if (a.rank() != 2 || (n.axis != 0 && n.axis != 1)) shape_fail(op, a.shape(), "axis " + std::to_string(n.axis));
        const std::size_t rows = a.dim(0), cols = a.dim(1);
        if (n.axis == 0) {
          Tensor out(Shape{cols});
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out[c] += a.at(r, c);
          for (auto& x : out.values()) x /= static_cast<double>(rows);
          n.value = std::move(out);
        } else {
          Tensor out(Shape{rows});
          for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += a.at(r, c);
            out[r] = s / static_cast<double>(cols);
          }
          n.value = std::move(out);
        }
      }
      break;
    }

    case Op::sum: {
      double s = 0.0;
      for (double x : in(0).values()) s += x;
      n.value = Tensor::scalar(s);
      break;
    }

    case Op::concat: {
      const Tensor& first = in(0);
      if (n.axis == 0) {
        if (first.rank() == 1) {
          std::vector<double> data;
          for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            const Tensor& t = in(i);
            if (t.rank() != 1) shape_fail(op, first.shape(), t.shape());
            data.insert(data.end(), t.values().begin(), t.values().end());
          }
          n.value = Tensor::vector(std::move(data));
        } else {
          if (first.rank() != 2) shape_fail(op, first.shape(), "rank 2 required");
          std::size_t rows = 0;
          for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            const Tensor& t = in(i);
            if (t.rank() != 2 || t.dim(1) != first.dim(1)) shape_fail(op, first.shape(), t.shape());
            rows += t.dim(0);
          }
          std::vector<double> data;
          data.reserve(rows * first.dim(1));
          for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            const Tensor& t = in(i);
            data.insert(data.end(), t.values().begin(), t.values().end());
          }
          n.value = Tensor(Shape{rows, first.dim(1)}, std::move(data));
        }
      } else if (n.axis == 1) {
        if (first.rank() != 2) shape_fail(op, first.shape(), "rank 2 required");
        const std::size_t rows = first.dim(0);
        std::size_t cols = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor& t = in(i);
          if (t.rank() != 2 || t.dim(0) != rows) shape_fail(op, first.shape(), t.shape());
          cols += t.dim(1);
        }
        Tensor out(Shape{rows, cols});
        std::size_t off = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor& t = in(i);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < t.dim(1); ++c) out.at(r, off + c) = t.at(r, c);
          off += t.dim(1);
        }
        n.value = std::move(out);
      } else {
        shape_fail(op, first.shape(), "axis " + std::to_string(n.axis));
      }
      break;
    }

    case Op::l2_normalize: {
      const Tensor& a = in(0);
      if (a.rank() != 1 && a.rank() != 2) shape_fail(op, a.shape(), "rank 1 or 2 required");
      Tensor out = a;
      Tensor norms(Shape{a.rows()});
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (double x : a.row(r)) s += x * x;
        const double nrm = std::sqrt(s);
        if (nrm == 0.0) throw NonFiniteError("l2_normalize: zero-norm row " + std::to_string(r));
        norms[r] = nrm;
        for (double& x : out.row(r)) x /= nrm;
      }
      n.cache = std::move(norms);
      n.value = std::move(out);
      break;
    }

    case Op::row_dot: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape() != b.shape() || (a.rank() != 1 && a.rank() != 2)) shape_fail(op, a.shape(), b.shape());
      Tensor out = a.rank() == 2 ? Tensor(Shape{a.dim(0)}) : Tensor::scalar(0.0);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        auto ra = a.row(r);
        auto rb = b.row(r);
        for (std::size_t c = 0; c < ra.size(); ++c) s += ra[c] * rb[c];
        out[r] = s;
      }
      n.value = std::move(out);
      break;
    }

    case Op::batch_norm: {
      const Tensor& x = in(0);
      const Tensor& gamma = in(1);
      const Tensor& beta = in(2);
      if (x.rank() != 2) shape_fail(op, x.shape(), "rank 2 required");
      const std::size_t m = x.dim(0), f = x.dim(1);
      if (gamma.shape() != Shape{f} || beta.shape() != Shape{f}) shape_fail(op, x.shape(), gamma.shape(), "gamma/beta");
      Tensor& rmean = params_->value(n.aux_param_a);
      Tensor& rvar = params_->value(n.aux_param_b);
      if (rmean.shape() != Shape{f} || rvar.shape() != Shape{f}) shape_fail(op, x.shape(), rmean.shape(), "running stats");
      // cache layout: [m*f xhat | f inv_std]
      Tensor cache(Shape{m * f + f});
      Tensor out(x.shape());
      for (std::size_t c = 0; c < f; ++c) {
        double mu, var;
        if (n.training) {
          if (m == 0) shape_fail(op, x.shape(), "empty batch");
          double s = 0.0;
          for (std::size_t r = 0; r < m; ++r) s += x.at(r, c);
          mu = s / static_cast<double>(m);
          double v = 0.0;
          for (std::size_t r = 0; r < m; ++r) v += (x.at(r, c) - mu) * (x.at(r, c) - mu);
          var = v / static_cast<double>(m);
          const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var;
          rmean[c] = kBatchNormMomentum * rmean[c] + (1.0 - kBatchNormMomentum) * mu;
          rvar[c] = kBatchNormMomentum * rvar[c] + (1.0 - kBatchNormMomentum) * unbiased;
        } else {
          mu = rmean[c];
          var = rvar[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
        cache[m * f + c] = inv_std;
        for (std::size_t r = 0; r < m; ++r) {
          const double xh = (x.at(r, c) - mu) * inv_std;
          cache[r * f + c] = xh;
          out.at(r, c) = gamma[c] * xh + beta[c];
        }
      }
      n.cache = std::move(cache);
      n.value = std::move(out);
      break;
    }

    case Op::gather_rows: {
      const Tensor& t = in(0);
      if (t.rank() != 2) shape_fail(op, t.shape(), "rank 2 table required");
      const std::size_t cols = t.dim(1);
      Tensor out(Shape{n.indices.size(), cols});
      for (std::size_t i = 0; i < n.indices.size(); ++i) {
        const std::int64_t idx = n.indices[i];
        if (idx == -1) continue;
        if (idx < 0 || static_cast<std::size_t>(idx) >= t.dim(0)) {
          throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range for " + shape_str(t.shape()));
        }
        std::copy_n(t.data() + idx * cols, cols, out.data() + i * cols);
      }
      n.value = std::move(out);
      break;
    }

    case Op::bag_mean: {
      const Tensor& t = in(0);
      if (t.rank() != 2) shape_fail(op, t.shape(), "rank 2 table required");
      if (n.offsets.empty() || n.offsets.back() != static_cast<std::int64_t>(n.indices.size())) {
        throw ShapeError("bag_mean: offsets do not cover indices");
      }
      const std::size_t bags = n.offsets.size() - 1, cols = t.dim(1);
      Tensor out(Shape{bags, cols});
      for (std::size_t b = 0; b < bags; ++b) {
        const auto lo = n.offsets[b], hi = n.offsets[b + 1];
        if (hi < lo) throw ShapeError("bag_mean: decreasing offsets");
        if (hi == lo) continue;
        double* o = out.data() + b * cols;
        for (auto j = lo; j < hi; ++j) {
          const std::int64_t idx = n.indices[j];
          if (idx < 0 || static_cast<std::size_t>(idx) >= t.dim(0)) {
            throw ShapeError("bag_mean: index " + std::to_string(idx) + " out of range for " + shape_str(t.shape()));
          }
          const double* row = t.data() + idx * cols;
          for (std::size_t c = 0; c < cols; ++c) o[c] += row[c];
        }
        const double inv = 1.0 / static_cast<double>(hi - lo);
        for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
      }
      n.value = std::move(out);
      break;
    }

    case Op::gather_elements: {
      const Tensor& a = in(0);
      Tensor out(Shape{n.indices.size()});
      for (std::size_t i = 0; i < n.indices.size(); ++i) {
        const auto idx = n.indices[i];
        if (idx < 0 || static_cast<std::size_t>(idx) >= a.numel()) {
          throw ShapeError("gather_elements: index " + std::to_string(idx) + " out of range for " + shape_str(a.shape()));
        }
        out[i] = a[idx];
      }
      n.value = std::move(out);
      break;
    }

    case Op::reshape: {
      const Tensor& a = in(0);
      if (shape_numel(n.shape) != a.numel()) shape_fail(op, a.shape(), n.shape);
      n.value = a.reshaped(n.shape);
      break;
    }

    case Op::bce: {
      const Tensor& p = in(0);
      if (p.shape() != n.aux.shape()) shape_fail(op, p.shape(), n.aux.shape(), "labels");
      Tensor out(p.shape());
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double pc = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        const double y = n.aux[i];
        out[i] = -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
      }
      n.value = std::move(out);
      break;
    }

    case Op::head_scores: {
      const Tensor& q = in(0);
      const Tensor& k = in(1);
      const std::size_t H = n.heads, S = n.keys;
      if (q.rank() != 2 || k.rank() != 2 || H == 0 || q.dim(1) % H != 0 || k.dim(1) != q.dim(1) ||
          k.dim(0) != q.dim(0) * S) {
        shape_fail(op, q.shape(), k.shape(), "heads=" + std::to_string(H) + " keys=" + std::to_string(S));
      }
      const std::size_t B = q.dim(0), D = q.dim(1), dh = D / H;
      const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
      Tensor out(Shape{B * H, S});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t s = 0; s < S; ++s) {
            const double* qp = q.data() + b * D + h * dh;
            const double* kp = k.data() + (b * S + s) * D + h * dh;
            double acc = 0.0;
            for (std::size_t d = 0; d < dh; ++d) acc += qp[d] * kp[d];
            out[(b * H + h) * S + s] = acc * sc;
          }
      n.value = std::move(out);
      break;
    }

    case Op::head_combine: {
      const Tensor& w = in(0);
      const Tensor& v = in(1);
      const std::size_t H = n.heads, S = n.keys;
      if (w.rank() != 2 || v.rank() != 2 || H == 0 || w.dim(1) != S || w.dim(0) % H != 0 || v.dim(1) % H != 0 ||
          v.dim(0) != (w.dim(0) / H) * S) {
        shape_fail(op, w.shape(), v.shape(), "heads=" + std::to_string(H) + " keys=" + std::to_string(S));
      }
      const std::size_t B = w.dim(0) / H, D = v.dim(1), dh = D / H;
      Tensor out(Shape{B, D});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t s = 0; s < S; ++s) {
            const double ws = w[(b * H + h) * S + s];
            if (ws == 0.0) continue;
            const double* vp = v.data() + (b * S + s) * D + h * dh;
            double* op_ = out.data() + b * D + h * dh;
            for (std::size_t d = 0; d < dh; ++d) op_[d] += ws * vp[d];
          }
      n.value = std::move(out);
      break;
    }
  }

  if (!n.value.all_finite()) {
    throw NonFiniteError(std::string(op_name(op)) + " produced a non-finite value");
  }
}

// ---------------------------------------------------------------------------
// backward

Tensor& ValueGraph::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.op == Op::parameter) return params_->grad(n.param);
  if (!touched_[id]) {
    grads_[id] = Tensor(val(id).shape());
    touched_[id] = 1;
  }
  return grads_[id];
}

void ValueGraph::backward(Var loss) {
  const Tensor& lv = val(loss.id);
  if (lv.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(lv.shape()));
  grads_.assign(nodes_.size(), Tensor());
  touched_.assign(nodes_.size(), 0);
  if (!nodes_[loss.id].requires_grad) return;
  if (nodes_[loss.id].op == Op::parameter) {
    params_->grad(nodes_[loss.id].param)[0] += 1.0;
    return;
  }
  grads_[loss.id] = Tensor(lv.shape(), 1.0);
  touched_[loss.id] = 1;
  for (int i = loss.id; i >= 0; --i) {
    if (!touched_[i] || !nodes_[i].requires_grad) continue;
    const Op op = nodes_[i].op;
    if (op == Op::constant || op == Op::parameter) continue;
    backprop(i);
  }
}

void ValueGraph::backprop(int id) {
  Node& n = nodes_[id];
  const Tensor& g = grads_[id];
  const Tensor& y = n.value;
  auto in = [&](std::size_t i) -> const Tensor& { return val(n.inputs[i]); };
  auto needs = [&](std::size_t i) { return nodes_[n.inputs[i]].requires_grad; };
  auto acc = [&](std::size_t i) -> Tensor& { return grad_buffer(n.inputs[i]); };

  switch (n.op) {
    case Op::constant:
    case Op::parameter:
      return;

    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      MapC G(g.data(), g.dim(0), g.dim(1));
      if (needs(0)) {
        Tensor& ga = acc(0);
        Map(ga.data(), a.dim(0), a.dim(1)).noalias() += G * MapC(b.data(), b.dim(0), b.dim(1)).transpose();
      }
      if (needs(1)) {
        Tensor& gb = acc(1);
        Map(gb.data(), b.dim(0), b.dim(1)).noalias() += MapC(a.data(), a.dim(0), a.dim(1)).transpose() * G;
      }
      break;
    }

    case Op::transpose: {
      if (!needs(0)) break;
      Tensor& ga = acc(0);
      for (std::size_t r = 0; r < g.dim(0); ++r)
        for (std::size_t c = 0; c < g.dim(1); ++c) ga.at(c, r) += g.at(r, c);
      break;
    }

    case Op::add: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (needs(0)) {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (needs(1)) {
        Tensor& gb = acc(1);
        if (a.shape() == b.shape()) {
          for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        } else if (b.rank() == 1) {
          const std::size_t cols = a.dim(1);
          for (std::size_t i = 0; i < g.numel(); ++i) gb[i % cols] += g[i];
        } else {
          double s = 0.0;
          for (double x : g.values()) s += x;
          gb[0] += s;
        }
      }
      break;
    }

    case Op::sub: {
      if (needs(0)) {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (needs(1)) {
        Tensor& gb = acc(1);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
      }
      break;
    }

    case Op::mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (needs(0)) {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * b[i];
      }
      if (needs(1)) {
        Tensor& gb = acc(1);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }

    case Op::scale: {
      Tensor& ga = acc(0);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.scalar;
      break;
    }

    case Op::leaky_relu: {
      const Tensor& a = in(0);
      Tensor& ga = acc(0);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (a[i] > 0 ? 1.0 : kLeakySlope);
      break;
    }

    case Op::sigmoid: {
      Tensor& ga = acc(0);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }

    case Op::row_softmax: {
      Tensor& ga = acc(0);
      const std::size_t rows = y.rows(), cols = y.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
        for (std::size_t c = 0; c < cols; ++c) ga[base + c] += y[base + c] * (g[base + c] - dot);
      }
      break;
    }

    case Op::log: {
      const Tensor& a = in(0);
      Tensor& ga = acc(0);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / a[i];
      break;
    }

    case Op::mean: {
      const Tensor& a = in(0);
      Tensor& ga = acc(0);
      if (n.axis == -1) {
        const double s = g[0] / static_cast<double>(a.numel());
        for (auto& x : ga.values()) x += s;
      } else if (n.axis == 0) {
        const std::size_t rows = a.dim(0), cols = a.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) ga.at(r, c) += g[c] / static_cast<double>(rows);
      } else {
        const std::size_t rows = a.dim(0), cols = a.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) ga.at(r, c) += g[r] / static_cast<double>(cols);
      }
      break;
    }

    case Op::sum: {
      Tensor& ga = acc(0);
      for (auto& x : ga.values()) x += g[0];
      break;
    }

    case Op::concat: {
      if (n.axis == 0) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const std::size_t len = in(i).numel();
          if (needs(i)) {
            Tensor& gi = acc(i);
            for (std::size_t j = 0; j < len; ++j) gi[j] += g[off + j];
          }
          off += len;
        }
      } else {
        const std::size_t rows = g.dim(0);
        std::size_t off = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const std::size_t cols = in(i).dim(1);
          if (needs(i)) {
            Tensor& gi = acc(i);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c) gi.at(r, c) += g.at(r, off + c);
          }
          off += cols;
        }
      }
      break;
    }

    case Op::l2_normalize: {
      Tensor& ga = acc(0);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = g.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
        auto gar = ga.row(r);
        const double inv = 1.0 / n.cache[r];
        for (std::size_t c = 0; c < yr.size(); ++c) gar[c] += (gr[c] - yr[c] * dot) * inv;
      }
      break;
    }

    case Op::row_dot: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      for (int side = 0; side < 2; ++side) {
        if (!needs(side)) continue;
        const Tensor& other = side == 0 ? b : a;
        Tensor& gs = acc(side);
        for (std::size_t r = 0; r < a.rows(); ++r) {
          auto o = other.row(r);
          auto gr = gs.row(r);
          for (std::size_t c = 0; c < o.size(); ++c) gr[c] += g[r] * o[c];
        }
      }
      break;
    }

    case Op::batch_norm: {
      const Tensor& x = in(0);
      const Tensor& gamma = in(1);
      const std::size_t m = x.dim(0), f = x.dim(1);
      const Tensor& cache = n.cache;
      if (needs(1)) {
        Tensor& gg = acc(1);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < f; ++c) gg[c] += g.at(r, c) * cache[r * f + c];
      }
      if (needs(2)) {
        Tensor& gb = acc(2);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < f; ++c) gb[c] += g.at(r, c);
      }
      if (needs(0)) {
        Tensor& gx = acc(0);
        for (std::size_t c = 0; c < f; ++c) {
          const double inv_std = cache[m * f + c];
          if (!n.training) {
            for (std::size_t r = 0; r < m; ++r) gx.at(r, c) += g.at(r, c) * gamma[c] * inv_std;
            continue;
          }
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t r = 0; r < m; ++r) {
            const double d = g.at(r, c) * gamma[c];
            sum_d += d;
            sum_dx += d * cache[r * f + c];
          }
          const double md = static_cast<double>(m);
          for (std::size_t r = 0; r < m; ++r) {
            const double d = g.at(r, c) * gamma[c];
            gx.at(r, c) += inv_std / md * (md * d - sum_d - cache[r * f + c] * sum_dx);
          }
        }
      }
      break;
    }

    case Op::gather_rows: {
      Tensor& gt = acc(0);
      const std::size_t cols = in(0).dim(1);
      for (std::size_t i = 0; i < n.indices.size(); ++i) {
        const auto idx = n.indices[i];
        if (idx < 0) continue;
        double* dst = gt.data() + idx * cols;
        const double* src = g.data() + i * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
      break;
    }

    case Op::bag_mean: {
      Tensor& gt = acc(0);
      const std::size_t cols = in(0).dim(1);
      const std::size_t bags = n.offsets.size() - 1;
      for (std::size_t b = 0; b < bags; ++b) {
        const auto lo = n.offsets[b], hi = n.offsets[b + 1];
        if (hi == lo) continue;
        const double inv = 1.0 / static_cast<double>(hi - lo);
        const double* src = g.data() + b * cols;
        for (auto j = lo; j < hi; ++j) {
          double* dst = gt.data() + n.indices[j] * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c] * inv;
        }
      }
      break;
    }

    case Op::gather_elements: {
      Tensor& ga = acc(0);
      for (std::size_t i = 0; i < n.indices.size(); ++i) ga[n.indices[i]] += g[i];
      break;
    }

    case Op::reshape: {
      Tensor& ga = acc(0);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      break;
    }

    case Op::bce: {
      const Tensor& p = in(0);
      Tensor& gp = acc(0);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
        const double yv = n.aux[i];
        gp[i] += g[i] * (p[i] - yv) / (p[i] * (1.0 - p[i]));
      }
      break;
    }

    case Op::head_scores: {
      const Tensor& q = in(0);
      const Tensor& k = in(1);
      const std::size_t H = n.heads, S = n.keys;
      const std::size_t B = q.dim(0), D = q.dim(1), dh = D / H;
      const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
      Tensor* gq = needs(0) ? &acc(0) : nullptr;
      Tensor* gk = needs(1) ? &acc(1) : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t s = 0; s < S; ++s) {
            const double gs = g[(b * H + h) * S + s] * sc;
            if (gs == 0.0) continue;
            const std::size_t qo = b * D + h * dh, ko = (b * S + s) * D + h * dh;
            if (gq)
              for (std::size_t d = 0; d < dh; ++d) (*gq)[qo + d] += gs * k[ko + d];
            if (gk)
              for (std::size_t d = 0; d < dh; ++d) (*gk)[ko + d] += gs * q[qo + d];
          }
      break;
    }

    case Op::head_combine: {
      const Tensor& w = in(0);
      const Tensor& v = in(1);
      const std::size_t H = n.heads, S = n.keys;
      const std::size_t B = w.dim(0) / H, D = v.dim(1), dh = D / H;
      Tensor* gw = needs(0) ? &acc(0) : nullptr;
      Tensor* gv = needs(1) ? &acc(1) : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t wi = (b * H + h) * S + s;
            const std::size_t vo = (b * S + s) * D + h * dh, go = b * D + h * dh;
            if (gw) {
              double acc_w = 0.0;
              for (std::size_t d = 0; d < dh; ++d) acc_w += g[go + d] * v[vo + d];
              (*gw)[wi] += acc_w;
            }
            if (gv) {
              const double ws = w[wi];
              for (std::size_t d = 0; d < dh; ++d) (*gv)[vo + d] += ws * g[go + d];
            }
          }
      break;
    }
  }
}

}  // namespace star::core
