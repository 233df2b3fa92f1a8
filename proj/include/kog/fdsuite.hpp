#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kog/attention.hpp"
#include "kog/gradcheck.hpp"
#include "kog/model.hpp"

// The full finite-difference validation suite, run at 64-bit precision:
// randomized instances of every differentiable primitive, both attention
// sublayers, and tiny end-to-end models. Used by the test suite, the
// acceptance gate and the `gradcheck` CLI subcommand.

namespace kog {

struct FdSuiteReport {
  std::vector<FdResult> results;
  bool all_pass = true;
  double max_rel_err = 0.0;

  void absorb(FdResult r) {
    all_pass = all_pass && r.pass;
    max_rel_err = std::max(max_rel_err, r.max_rel_err);
    results.push_back(std::move(r));
  }
};

namespace fddetail {

using D = double;

inline Tensor<D> rand_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<D> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

// Project an op output to a scalar through a fixed random weighting so every
// output element influences the loss.
inline Tensor<D> project(Tensor<D> out, Tensor<D> proj) {
  return sum_all(mul(out, proj));
}

inline std::vector<int> rand_index_map(std::size_t l, std::size_t r, Rng& rng) {
  std::vector<int> map(l * l);
  for (auto& v : map) v = static_cast<int>(rng.next_index(r));
  return map;
}

}  // namespace fddetail

inline FdSuiteReport run_fd_suite(std::uint64_t seed, int instances = 20) {
  using namespace fddetail;
  FdSuiteReport rep;
  Rng rng(seed);
  auto dim = [&](std::size_t lo, std::size_t hi) {
    return lo + rng.next_index(hi - lo + 1);
  };

  for (int it = 0; it < instances; ++it) {
    const std::string tag = "#" + std::to_string(it);

    {  // matmul
      const std::size_t m = dim(1, 4), k = dim(1, 4), n = dim(1, 4);
      auto a = rand_tensor({m, k}, rng), b = rand_tensor({k, n}, rng);
      auto proj = rand_tensor({m, n}, rng);
      rep.absorb(fd_check<D>("matmul " + tag, {a, b}, [=]() {
        return project(matmul(a, b), proj);
      }));
    }
    {  // bmm, shared and batched rhs
      const std::size_t B = dim(1, 3), m = dim(1, 3), k = dim(1, 3), n = dim(1, 3);
      auto a = rand_tensor({B, m, k}, rng);
      auto w = rand_tensor({k, n}, rng);
      auto b3 = rand_tensor({B, k, n}, rng);
      auto proj = rand_tensor({B, m, n}, rng);
      rep.absorb(fd_check<D>("bmm shared " + tag, {a, w}, [=]() {
        return project(bmm(a, w), proj);
      }));
      rep.absorb(fd_check<D>("bmm batched " + tag, {a, b3}, [=]() {
        return project(bmm(a, b3), proj);
      }));
    }
    {  // bmm_t
      const std::size_t B = dim(1, 3), m = dim(1, 3), k = dim(1, 3), n = dim(1, 3);
      auto a = rand_tensor({B, m, k}, rng);
      auto b = rand_tensor({B, n, k}, rng);
      auto proj = rand_tensor({B, m, n}, rng);
      rep.absorb(fd_check<D>("bmm_t " + tag, {a, b}, [=]() {
        return project(bmm_t(a, b), proj);
      }));
    }
    {  // lmm
      const std::size_t B = dim(1, 3), m = dim(1, 4), l = dim(1, 4), d = dim(1, 3);
      auto w = rand_tensor({m, l}, rng);
      auto x = rand_tensor({B, l, d}, rng);
      auto proj = rand_tensor({B, m, d}, rng);
      rep.absorb(fd_check<D>("lmm " + tag, {w, x}, [=]() {
        return project(lmm(w, x), proj);
      }));
    }
    {  // transpose
      const std::size_t B = dim(1, 3), r = dim(1, 4), c = dim(1, 4);
      auto a = rand_tensor({B, r, c}, rng);
      auto proj = rand_tensor({B, c, r}, rng);
      rep.absorb(fd_check<D>("transpose " + tag, {a}, [=]() {
        return project(transpose(a), proj);
      }));
    }
    {  // add/sub/mul/scalar_mul
      const std::size_t m = dim(1, 5), n = dim(1, 5);
      auto a = rand_tensor({m, n}, rng), b = rand_tensor({m, n}, rng);
      auto proj = rand_tensor({m, n}, rng);
      rep.absorb(fd_check<D>("add " + tag, {a, b}, [=]() {
        return project(add(a, b), proj);
      }));
      rep.absorb(fd_check<D>("sub " + tag, {a, b}, [=]() {
        return project(sub(a, b), proj);
      }));
      rep.absorb(fd_check<D>("mul " + tag, {a, b}, [=]() {
        return project(mul(a, b), proj);
      }));
      rep.absorb(fd_check<D>("scalar_mul " + tag, {a}, [=]() {
        return project(scalar_mul(a, D(1.7)), proj);
      }));
    }
    {  // add_rowvec + masked_add
      const std::size_t B = dim(1, 3), l = dim(1, 4), d = dim(1, 4);
      auto x = rand_tensor({B, l, d}, rng);
      auto v = rand_tensor({d}, rng);
      auto proj = rand_tensor({B, l, d}, rng);
      rep.absorb(fd_check<D>("add_rowvec " + tag, {x, v}, [=]() {
        return project(add_rowvec(x, v), proj);
      }));
      auto s = rand_tensor({B, l, l}, rng);
      auto mask = rand_tensor({l, l}, rng);
      auto proj2 = rand_tensor({B, l, l}, rng);
      rep.absorb(fd_check<D>("masked_add " + tag, {s, mask}, [=]() {
        return project(masked_add(s, mask), proj2);
      }));
    }
    {  // row_softmax, plain and with masked entries
      const std::size_t B = dim(1, 3), l = dim(2, 5);
      auto x = rand_tensor({B, l, l}, rng, 2.0);
      auto proj = rand_tensor({B, l, l}, rng);
      rep.absorb(fd_check<D>("row_softmax " + tag, {x}, [=]() {
        return project(row_softmax(x), proj);
      }));
      // Mask one random entry per row plus one fully-masked row.
      Tensor<D> mask({l, l});
      for (std::size_t m = 0; m < l; ++m)
        mask.data()[m * l + rng.next_index(l)] = masked_floor<D>() * D(1e4);
      for (std::size_t n = 0; n < l; ++n)
        mask.data()[0 * l + n] = masked_floor<D>() * D(1e4);
      rep.absorb(fd_check<D>("row_softmax masked " + tag, {x}, [=]() {
        return project(row_softmax(masked_add(x, mask)), proj);
      }));
      rep.absorb(fd_check<D>("scaled_softmax " + tag, {x}, [=]() {
        return project(scaled_softmax(x, D(0.7)), proj);
      }));
      rep.absorb(fd_check<D>("masked_scaled_softmax " + tag, {x}, [=]() {
        return project(masked_scaled_softmax(x, mask, D(0.7)), proj);
      }));
    }
    {  // gather_rows
      const std::size_t n = dim(2, 5), d = dim(1, 4), m = dim(1, 6);
      auto x = rand_tensor({n, d}, rng);
      std::vector<int> idx(m);
      for (auto& i : idx) i = static_cast<int>(rng.next_index(n));
      auto proj = rand_tensor({m, d}, rng);
      rep.absorb(fd_check<D>("gather_rows " + tag, {x}, [=]() {
        return project(gather_rows(x, idx), proj);
      }));
    }
    {  // index_expand / index_reduce
      const std::size_t B = dim(1, 3), l = dim(2, 4), r = dim(1, 4);
      auto map = rand_index_map(l, r, rng);
      auto q = rand_tensor({B, l, r}, rng);
      auto proj = rand_tensor({B, l, l}, rng);
      rep.absorb(fd_check<D>("index_expand " + tag, {q}, [=]() {
        return project(index_expand(q, map, l), proj);
      }));
      auto a = rand_tensor({B, l, l}, rng);
      auto proj2 = rand_tensor({B, l, r}, rng);
      rep.absorb(fd_check<D>("index_reduce " + tag, {a}, [=]() {
        return project(index_reduce(a, map, r), proj2);
      }));
    }
    {  // layer_norm
      const std::size_t B = dim(1, 3), l = dim(1, 3), d = dim(2, 6);
      auto x = rand_tensor({B, l, d}, rng);
      auto gain = rand_tensor({d}, rng);
      auto bias = rand_tensor({d}, rng);
      auto proj = rand_tensor({B, l, d}, rng);
      rep.absorb(fd_check<D>("layer_norm " + tag, {x, gain, bias}, [=]() {
        return project(layer_norm(x, gain, bias), proj);
      }));
    }
    {  // gelu
      const std::size_t m = dim(1, 5), n = dim(1, 5);
      auto x = rand_tensor({m, n}, rng, 2.0);
      auto proj = rand_tensor({m, n}, rng);
      rep.absorb(fd_check<D>("gelu " + tag, {x}, [=]() {
        return project(gelu(x), proj);
      }));
    }
    {  // dropout with a replayed mask
      const std::size_t m = dim(1, 5), n = dim(1, 5);
      auto x = rand_tensor({m, n}, rng);
      auto proj = rand_tensor({m, n}, rng);
      const std::uint64_t drop_seed = rng.next_u64();
      rep.absorb(fd_check<D>("dropout " + tag, {x}, [=]() {
        Rng drop(drop_seed);
        return project(dropout(x, 0.3, true, &drop), proj);
      }));
    }
    {  // concat_last / split_last
      const std::size_t l = dim(1, 4), da = dim(1, 4), db = dim(1, 4);
      auto a = rand_tensor({l, da}, rng), b = rand_tensor({l, db}, rng);
      auto proj = rand_tensor({l, da + db}, rng);
      rep.absorb(fd_check<D>("concat_last " + tag, {a, b}, [=]() {
        return project(concat_last(a, b), proj);
      }));
      auto x = rand_tensor({l, da + db}, rng);
      auto pa = rand_tensor({l, da}, rng), pb = rand_tensor({l, db}, rng);
      rep.absorb(fd_check<D>("split_last " + tag, {x}, [=]() {
        auto [u, v] = split_last(x, da);
        return add(project(u, pa), project(v, pb));
      }));
    }
    {  // reshape / split_heads / merge_heads / tile_batch
      const std::size_t B = dim(1, 3), l = dim(1, 4), h = dim(1, 3),
                        dh = dim(1, 3);
      auto x = rand_tensor({B, l, h * dh}, rng);
      auto proj = rand_tensor({B * h, l, dh}, rng);
      rep.absorb(fd_check<D>("split_heads " + tag, {x}, [=]() {
        return project(split_heads(x, h), proj);
      }));
      auto y = rand_tensor({B * h, l, dh}, rng);
      auto proj2 = rand_tensor({B, l, h * dh}, rng);
      rep.absorb(fd_check<D>("merge_heads " + tag, {y}, [=]() {
        return project(merge_heads(y, h), proj2);
      }));
      auto t = rand_tensor({h, l, dh}, rng);
      auto proj3 = rand_tensor({B * h, l, dh}, rng);
      rep.absorb(fd_check<D>("tile_batch " + tag, {t}, [=]() {
        return project(tile_batch(t, B), proj3);
      }));
      auto r = rand_tensor({B, l, h * dh}, rng);
      auto proj4 = rand_tensor({B * l * h * dh}, rng);
      rep.absorb(fd_check<D>("reshape " + tag, {r}, [=]() {
        return project(reshape(r, {B * l * h * dh}), proj4);
      }));
    }
    {  // reductions and the training loss
      const std::size_t B = dim(1, 3), l = dim(1, 4), d = dim(1, 3);
      auto x = rand_tensor({B, l, d}, rng);
      rep.absorb(fd_check<D>("sum_all " + tag, {x}, [=]() { return sum_all(x); }));
      rep.absorb(fd_check<D>("mean_all " + tag, {x}, [=]() { return mean_all(x); }));
      auto t = rand_tensor({B, l, d}, rng);
      rep.absorb(fd_check<D>("sq_err " + tag, {x, t}, [=]() {
        return sq_err(x, t);
      }));
    }
    {  // scale_coeff
      const std::size_t m = dim(1, 4), n = dim(1, 4), k = dim(1, 4);
      auto x = rand_tensor({m, n}, rng);
      auto c = rand_tensor({k}, rng);
      auto proj = rand_tensor({m, n}, rng);
      const std::size_t pick = rng.next_index(k);
      rep.absorb(fd_check<D>("scale_coeff " + tag, {x, c}, [=]() {
        return project(scale_coeff(x, c, pick), proj);
      }));
      auto acc = rand_tensor({m, n}, rng);
      rep.absorb(fd_check<D>("add_scaled " + tag, {acc, x, c}, [=]() {
        return project(add_scaled(acc, x, c, pick), proj);
      }));
    }
  }
  return rep;
}

// Random tree helper local to the suite.
inline SkeletonGraph fd_random_tree(int n, Rng& rng) {
  SkeletonGraph g;
  g.num_nodes = n;
  for (int i = 1; i < n; ++i) {
    int p = static_cast<int>(rng.next_index(static_cast<std::uint64_t>(i)));
    g.edges.emplace_back(p, i);
  }
  return g;
}

inline FdSuiteReport run_fd_attention_suite(std::uint64_t seed, int instances = 20) {
  using namespace fddetail;
  FdSuiteReport rep;
  Rng rng(seed);
  for (int it = 0; it < instances; ++it) {
    const std::string tag = "#" + std::to_string(it);
    const int l = 3 + static_cast<int>(rng.next_index(6));     // <= 8 nodes
    const std::size_t heads = 1 + rng.next_index(2);           // 1 or 2
    const std::size_t d = heads * (2 + rng.next_index(3));     // <= 16 total
    auto graph = fd_random_tree(l, rng);

    {  // GR-MSA: all parameters and the input
      const int delta = 1 + static_cast<int>(rng.next_index(2));
      const bool directed = rng.bernoulli(0.5);
      auto map = build_relative_index_map(build_signed_distance(graph), delta,
                                          directed);
      ParamList<D> params;
      Rng init(rng.next_u64());
      GrMsa<D> gr(d, heads, map, 0.0, init, params, "gr");
      auto f = rand_tensor({2, static_cast<std::size_t>(l), d}, rng);
      auto proj = rand_tensor({2, static_cast<std::size_t>(l), d}, rng);
      std::vector<Tensor<D>> leaves{f};
      for (auto& p : params) leaves.push_back(p.tensor);
      rep.absorb(fd_check<D>("gr_msa " + tag, leaves, [=]() {
        return project(gr.forward(f, false, nullptr), proj);
      }));
    }
    {  // KOG-MSA: all parameters and the input
      const int order = 1 + static_cast<int>(rng.next_index(3));
      auto masks = build_order_masks(graph, order);
      ParamList<D> params;
      Rng init(rng.next_u64());
      KogMsa<D> kmsa(d, heads, masks, 0.0, init, params, "kog");
      auto f = rand_tensor({2, static_cast<std::size_t>(l), d}, rng);
      auto proj = rand_tensor({2, static_cast<std::size_t>(l), d}, rng);
      std::vector<Tensor<D>> leaves{f};
      for (auto& p : params) leaves.push_back(p.tensor);
      rep.absorb(fd_check<D>("kog_msa " + tag, leaves, [=]() {
        return project(kmsa.forward(f, false, nullptr), proj);
      }));
    }
  }
  return rep;
}

inline FdSuiteReport run_fd_model_suite(std::uint64_t seed) {
  using namespace fddetail;
  FdSuiteReport rep;
  Rng rng(seed);

  {  // tiny KOG-Transformer end to end: 1 layer, d = 8, 5-node chain
    SkeletonGraph chain;
    chain.num_nodes = 5;
    for (int i = 0; i + 1 < 5; ++i) chain.edges.emplace_back(i, i + 1);
    KogConfig cfg;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.order = 2;
    cfg.delta = 2;
    cfg.joints = 5;
    cfg.dropout = 0.0;
    Rng init(seed);
    KogTransformer<D> model(cfg, chain, init);
    auto x = rand_tensor({2, 5, 2}, rng);
    auto target = rand_tensor({2, 5, 3}, rng);
    std::vector<Tensor<D>> leaves{x};
    for (auto& p : model.params()) leaves.push_back(p.tensor);
    rep.absorb(fd_check<D>("kog_transformer end-to-end", leaves, [&model, x,
                                                                  target]() {
      return sq_err(model.forward(x, false, nullptr), target);
    }));
  }

  {  // tiny GASE-Net end to end
    SkeletonGraph star;
    star.num_nodes = 4;
    star.edges = {{0, 1}, {0, 2}, {0, 3}};
    GaseConfig cfg;
    cfg.dim = 4;
    cfg.dropout = 0.0;
    cfg.joints = 4;
    cfg.schedule = {5, 6, 7, 8, 9};
    cfg.cheb_order = 2;
    Rng init(seed + 1);
    GaseNet<D> model(cfg, star, init);
    auto x = rand_tensor({2, 4, 3}, rng);
    auto target = rand_tensor({2, 9, 3}, rng);
    std::vector<Tensor<D>> leaves{x};
    for (auto& p : model.params()) leaves.push_back(p.tensor);
    rep.absorb(fd_check<D>("gase_net end-to-end", leaves, [&model, x, target]() {
      return sq_err(model.forward(x, false, nullptr), target);
    }));
  }
  return rep;
}

inline FdSuiteReport run_fd_suite_all(std::uint64_t seed, int instances = 20) {
  FdSuiteReport all;
  for (auto& r : run_fd_suite(seed, instances).results) all.absorb(std::move(r));
  for (auto& r : run_fd_attention_suite(seed + 1, instances).results)
    all.absorb(std::move(r));
  for (auto& r : run_fd_model_suite(seed + 2).results) all.absorb(std::move(r));
  return all;
}

}  // namespace kog
