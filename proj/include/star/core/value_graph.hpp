#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "star/core/parameters.hpp"
#include "star/core/tensor.hpp"

namespace star::core {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kProbClamp = 1e-12;

/// Handle to a node in a ValueGraph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op : std::uint8_t {
  constant,
  parameter,
  matmul,
  transpose,
  add,
  sub,
  mul,
  scale,
  leaky_relu,
  sigmoid,
  row_softmax,
  log,
  mean,
  sum,
  concat,
  l2_normalize,
  row_dot,
  batch_norm,
  gather_rows,
  bag_mean,
  gather_elements,
  reshape,
  bce,
  head_scores,
  head_combine,
};

std::string_view op_name(Op op);

/// Recorded computation over dense tensors with reverse-mode differentiation.
///
/// Nodes are appended in dependency order, so insertion order is a topological
/// order. Every builder evaluates its node immediately; forward() re-evaluates
/// the whole graph (after a leaf was reassigned or a parameter changed).
/// backward() adds into gradient buffers: parameter gradients land in the
/// ParameterSet and are never cleared here, so two backward passes give twice
/// the gradient.
class ValueGraph {
 public:
  explicit ValueGraph(ParameterSet* params = nullptr) : params_(params) {}

  Var constant(Tensor t);
  Var parameter(ParamId id);
  Var parameter(const std::string& name);
  void assign(Var leaf, Tensor t);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  /// Same shape, or b broadcast as a row vector (rank 1, length = a.cols()) or a scalar.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var leaky_relu(Var a);
  Var sigmoid(Var a);
  /// Softmax along the last axis. A non-empty mask (1 = keep) zeroes masked
  /// entries; a fully masked row yields all zeros.
  Var row_softmax(Var a, std::vector<std::uint8_t> mask = {});
  Var log(Var a);
  /// axis -1 reduces everything to a scalar; 0 averages rows; 1 averages columns.
  Var mean(Var a, int axis = -1);
  Var sum(Var a);
  Var concat(std::span<const Var> parts, int axis);
  Var l2_normalize(Var a);
  /// Row-wise dot product of two equally shaped matrices.
  Var row_dot(Var a, Var b);
  Var batch_norm(Var x, Var gamma, Var beta, ParamId running_mean, ParamId running_var, bool training);
  /// Rows of a rank-2 tensor; index -1 yields a zero row.
  Var gather_rows(Var table, std::vector<std::int64_t> indices);
  /// Mean of table rows per bag; bag b spans indices[offsets[b], offsets[b+1]). Empty bag -> zeros.
  Var bag_mean(Var table, std::vector<std::int64_t> offsets, std::vector<std::int64_t> indices);
  Var gather_elements(Var a, std::vector<std::int64_t> flat_indices);
  Var reshape(Var a, Shape shape);
  /// Elementwise binary cross-entropy of probabilities against constant labels,
  /// probabilities clamped to [kProbClamp, 1 - kProbClamp].
  Var bce(Var probs, Tensor labels);
  /// Scaled per-head dot products: q [B, D], k [B*S, D] -> [B*H, S].
  Var head_scores(Var q, Var k, std::size_t heads, std::size_t keys);
  /// Per-head weighted sums: w [B*H, S], v [B*S, D] -> [B, D].
  Var head_combine(Var w, Var v, std::size_t heads, std::size_t keys);

  const Tensor& value(Var v) const;
  /// Gradient of an intermediate node from the last backward pass. For
  /// parameter nodes use ParameterSet::grad.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  Op op(Var v) const { return nodes_.at(v.id).op; }
  const std::vector<int>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  void forward();
  void backward(Var loss);

  ParameterSet* params() const { return params_; }

 private:
  struct Node {
    Op op = Op::constant;
    std::vector<int> inputs;
    Tensor value;
    bool requires_grad = false;
    // op attributes
    double scalar = 0.0;
    int axis = -1;
    std::size_t heads = 0;
    std::size_t keys = 0;
    bool training = false;
    ParamId param;
    ParamId aux_param_a;
    ParamId aux_param_b;
    Shape shape;
    std::vector<std::int64_t> indices;
    std::vector<std::int64_t> offsets;
    std::vector<std::uint8_t> mask;
    Tensor aux;    // constant side input (labels)
    Tensor cache;  // forward cache used by backward
  };

  Var push(Node node);
  const Tensor& val(int id) const;
  void compute(Node& n);
  void backprop(int id);
  Tensor& grad_buffer(int id);

  ParameterSet* params_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::uint8_t> touched_;
};

}  // namespace star::core
