#pragma once

// Random small instances for every differentiable op, shared by the unit
// tests and the acceptance run.

#include <functional>
#include <vector>

#include "star/core/parameters.hpp"
#include "star/core/rng.hpp"
#include "star/core/value_graph.hpp"
#include "support/gradcheck.hpp"

namespace star::testing {

inline core::Tensor random_tensor(core::Rng& rng, core::Shape shape, double lo = -1.0, double hi = 1.0) {
  core::Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

// Weighted sum with a random constant so every output element matters.
inline core::Var weighted_sum(core::ValueGraph& g, core::Var y, core::Rng& rng) {
  core::Tensor w = random_tensor(rng, g.value(y).shape(), 0.5, 1.5);
  return g.sum(g.mul(y, g.constant(std::move(w))));
}

struct OpCase {
  const char* name;
  std::function<void(core::Rng&, core::ParameterSet&, LossBuilder&)> setup;
};

inline std::vector<OpCase> op_gradient_cases() {
  using namespace star::core;
  namespace gc = star::testing;
  return {
      {"matmul",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t m = 1 + r.below(4), k = 1 + r.below(4), n = 1 + r.below(4);
         ps.add("a", random_tensor(r, {m, k}));
         ps.add("b", random_tensor(r, {k, n}));
         Tensor w = random_tensor(r, {m, n}, 0.5, 1.5);
         b = [w](ValueGraph& g) {
           return g.sum(g.mul(g.matmul(g.parameter("a"), g.parameter("b")), g.constant(w)));
         };
       }},
      {"transpose",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         ps.add("a", random_tensor(r, {1 + r.below(4), 1 + r.below(4)}));
         auto seed = r.next_u64();
         b = [seed](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.transpose(g.parameter("a")), rr);
         };
       }},
      {"add_broadcast",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t m = 1 + r.below(4), n = 1 + r.below(4);
         ps.add("a", random_tensor(r, {m, n}));
         ps.add("row", random_tensor(r, {n}));
         ps.add("same", random_tensor(r, {m, n}));
         ps.add("s", Tensor::scalar(r.uniform()));
         auto seed = r.next_u64();
         b = [seed](ValueGraph& g) {
           Rng rr(seed);
           Var y = g.add(g.add(g.add(g.parameter("a"), g.parameter("row")), g.parameter("same")), g.parameter("s"));
           return weighted_sum(g, y, rr);
         };
       }},
      {"sub_mul_scale",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t m = 1 + r.below(4), n = 1 + r.below(4);
         ps.add("a", random_tensor(r, {m, n}));
         ps.add("b", random_tensor(r, {m, n}));
         const double f = r.uniform(-2, 2);
         auto seed = r.next_u64();
         b = [seed, f](ValueGraph& g) {
           Rng rr(seed);
           Var a = g.parameter("a"), bb = g.parameter("b");
           return weighted_sum(g, g.scale(g.mul(g.sub(a, bb), a), f), rr);
         };
       }},
      {"leaky_relu",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         Tensor a = random_tensor(r, {1 + r.below(4), 1 + r.below(4)});
         for (auto& x : a.values()) x += (x >= 0 ? 0.01 : -0.01);  // keep away from the kink
         ps.add("a", a);
         auto seed = r.next_u64();
         b = [seed](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.leaky_relu(g.parameter("a")), rr);
         };
       }},
      {"sigmoid",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         ps.add("a", random_tensor(r, {1 + r.below(4), 1 + r.below(4)}, -4, 4));
         auto seed = r.next_u64();
         b = [seed](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.sigmoid(g.parameter("a")), rr);
         };
       }},
      {"row_softmax_masked",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t m = 1 + r.below(4), n = 1 + r.below(5);
         ps.add("a", random_tensor(r, {m, n}, -3, 3));
         std::vector<std::uint8_t> mask;
         if (r.bernoulli(0.5)) {
           mask.resize(m * n);
           for (auto& x : mask) x = r.bernoulli(0.7);
         }
         auto seed = r.next_u64();
         b = [seed, mask](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.row_softmax(g.parameter("a"), mask), rr);
         };
       }},
      {"log",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         ps.add("a", random_tensor(r, {1 + r.below(4), 1 + r.below(4)}, 0.3, 3.0));
         auto seed = r.next_u64();
         b = [seed](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.log(g.parameter("a")), rr);
         };
       }},
      {"mean_axes",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         ps.add("a", random_tensor(r, {1 + r.below(4), 1 + r.below(4)}));
         const int axis = static_cast<int>(r.below(3)) - 1;
         auto seed = r.next_u64();
         b = [seed, axis](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.mean(g.parameter("a"), axis), rr);
         };
       }},
      {"concat",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const int axis = static_cast<int>(r.below(2));
         const std::size_t m = 1 + r.below(3), n = 1 + r.below(3);
         ps.add("a", random_tensor(r, {m, n}));
         ps.add("b", axis == 0 ? random_tensor(r, {1 + r.below(3), n}) : random_tensor(r, {m, 1 + r.below(3)}));
         auto seed = r.next_u64();
         b = [seed, axis](ValueGraph& g) {
           Rng rr(seed);
           Var parts[] = {g.parameter("a"), g.parameter("b"), g.parameter("a")};
           return weighted_sum(g, g.concat(parts, axis), rr);
         };
       }},
      {"l2_normalize",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         ps.add("a", random_tensor(r, {1 + r.below(4), 2 + r.below(4)}));
         auto seed = r.next_u64();
         b = [seed](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.l2_normalize(g.parameter("a")), rr);
         };
       }},
      {"row_dot",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t m = 1 + r.below(4), n = 1 + r.below(4);
         ps.add("a", random_tensor(r, {m, n}));
         ps.add("b", random_tensor(r, {m, n}));
         auto seed = r.next_u64();
         b = [seed](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.row_dot(g.parameter("a"), g.parameter("b")), rr);
         };
       }},
      {"batch_norm_train",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t m = 3 + r.below(4), f = 1 + r.below(3);  // m = 2 pins xhat to +-1
         ps.add("x", random_tensor(r, {m, f}, -2, 2));
         ps.add("gamma", random_tensor(r, {f}, 0.5, 1.5));
         ps.add("beta", random_tensor(r, {f}));
         ps.add("rm", Tensor(Shape{f}), false);
         ps.add("rv", Tensor(Shape{f}, 1.0), false);
         auto seed = r.next_u64();
         b = [seed, &ps](ValueGraph& g) {
           Rng rr(seed);
           Var y = g.batch_norm(g.parameter("x"), g.parameter("gamma"), g.parameter("beta"), ps.require("rm"),
                                ps.require("rv"), true);
           return weighted_sum(g, y, rr);
         };
       }},
      {"batch_norm_eval",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t m = 1 + r.below(4), f = 1 + r.below(3);
         ps.add("x", random_tensor(r, {m, f}, -2, 2));
         ps.add("gamma", random_tensor(r, {f}, 0.5, 1.5));
         ps.add("beta", random_tensor(r, {f}));
         ps.add("rm", random_tensor(r, {f}), false);
         ps.add("rv", random_tensor(r, {f}, 0.5, 2.0), false);
         auto seed = r.next_u64();
         b = [seed, &ps](ValueGraph& g) {
           Rng rr(seed);
           Var y = g.batch_norm(g.parameter("x"), g.parameter("gamma"), g.parameter("beta"), ps.require("rm"),
                                ps.require("rv"), false);
           return weighted_sum(g, y, rr);
         };
       }},
      {"gather_rows",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t n = 1 + r.below(5);
         ps.add("t", random_tensor(r, {n, 1 + r.below(4)}));
         std::vector<std::int64_t> idx(1 + r.below(6));
         for (auto& i : idx) i = r.bernoulli(0.2) ? -1 : static_cast<std::int64_t>(r.below(n));
         auto seed = r.next_u64();
         b = [seed, idx](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.gather_rows(g.parameter("t"), idx), rr);
         };
       }},
      {"bag_mean",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t n = 1 + r.below(5);
         ps.add("t", random_tensor(r, {n, 1 + r.below(4)}));
         std::vector<std::int64_t> offsets{0}, idx;
         const std::size_t bags = 1 + r.below(4);
         for (std::size_t i = 0; i < bags; ++i) {
           const std::size_t len = r.below(4);
           for (std::size_t j = 0; j < len; ++j) idx.push_back(static_cast<std::int64_t>(r.below(n)));
           offsets.push_back(static_cast<std::int64_t>(idx.size()));
         }
         auto seed = r.next_u64();
         b = [seed, offsets, idx](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.bag_mean(g.parameter("t"), offsets, idx), rr);
         };
       }},
      {"gather_elements_reshape",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t m = 1 + r.below(4), n = 1 + r.below(4);
         ps.add("a", random_tensor(r, {m, n}));
         std::vector<std::int64_t> idx(1 + r.below(6));
         for (auto& i : idx) i = static_cast<std::int64_t>(r.below(m * n));
         auto seed = r.next_u64();
         b = [seed, idx, m, n](ValueGraph& g) {
           Rng rr(seed);
           Var flat = g.reshape(g.parameter("a"), Shape{n * m});
           return weighted_sum(g, g.gather_elements(flat, idx), rr);
         };
       }},
      {"bce",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t n = 1 + r.below(6);
         ps.add("p", random_tensor(r, {n}, 0.05, 0.95));
         Tensor y(Shape{n});
         for (auto& v : y.values()) v = r.bernoulli(0.5) ? 1.0 : 0.0;
         auto seed = r.next_u64();
         b = [seed, y](ValueGraph& g) {
           Rng rr(seed);
           return weighted_sum(g, g.bce(g.parameter("p"), y), rr);
         };
       }},
      {"attention_heads",
       [](Rng& r, ParameterSet& ps, gc::LossBuilder& b) {
         const std::size_t B = 1 + r.below(3), S = 1 + r.below(3), H = 1 + r.below(3), dh = 1 + r.below(3);
         const std::size_t D = H * dh;
         ps.add("q", random_tensor(r, {B, D}));
         ps.add("k", random_tensor(r, {B * S, D}));
         ps.add("v", random_tensor(r, {B * S, D}));
         auto seed = r.next_u64();
         b = [seed, H, S](ValueGraph& g) {
           Rng rr(seed);
           Var sc = g.head_scores(g.parameter("q"), g.parameter("k"), H, S);
           Var w = g.row_softmax(sc);
           return weighted_sum(g, g.head_combine(w, g.parameter("v"), H, S), rr);
         };
       }},
  };
}

}  // namespace star::testing
