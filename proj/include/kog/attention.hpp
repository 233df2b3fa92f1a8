#pragma once

#include <cmath>
#include <string>

#include "kog/graph.hpp"
#include "kog/nn.hpp"
#include "kog/tensor.hpp"

namespace kog {

// Graph-relative positional-encoding multi-head self-attention. Keys and
// values receive learnable vectors indexed by the clamped signed tree
// distance between the query and key nodes:
//
//   s[m,n] = q_m . (k_n + pk[idx(m,n)]) / sqrt(d_head)
//   out_m  = sum_n softmax(S)[m,n] * (v_n + pv[idx(m,n)])
//
// The pairwise lookup is evaluated without materializing per-pair vectors:
// the score contribution is gathered from Q * PK^T and the value contribution
// is bucketed attention mass times PV. Tables are per head; the index map is
// shared across heads.
template <typename T>
class GrMsa {
 public:
  GrMsa() = default;
  GrMsa(std::size_t dim, std::size_t heads, const RelativeIndexMap& map,
        double dropout_rate, Rng& rng, ParamList<T>& params,
        const std::string& prefix)
      : dim_(dim),
        heads_(heads),
        nodes_(map.num_nodes),
        table_(map.table_size()),
        dropout_(dropout_rate),
        index_(map.indices) {
    if (dim % heads != 0)
      throw ConfigError("model dim " + std::to_string(dim) +
                        " not divisible by head count " + std::to_string(heads));
    const std::size_t dh = dim / heads;
    wq_ = glorot_init<T>({dim, dim}, dim, dim, rng);
    wk_ = glorot_init<T>({dim, dim}, dim, dim, rng);
    wv_ = glorot_init<T>({dim, dim}, dim, dim, rng);
    pk_ = glorot_init<T>({heads, table_, dh}, table_, dh, rng);
    pv_ = glorot_init<T>({heads, table_, dh}, table_, dh, rng);
    register_param(params, prefix + ".wq", wq_);
    register_param(params, prefix + ".wk", wk_);
    register_param(params, prefix + ".wv", wv_);
    register_param(params, prefix + ".pk", pk_);
    register_param(params, prefix + ".pv", pv_);
  }

  Tensor<T> forward(Tensor<T> f, bool train, Rng* rng) const {
    if (f.rank() != 3 || f.dim(1) != nodes_ || f.dim(2) != dim_)
      throw ShapeError("gr-msa expects [B, " + std::to_string(nodes_) + ", " +
                       std::to_string(dim_) + "], got " + shape_str(f.shape()));
    const std::size_t batch = f.dim(0);
    const std::size_t dh = dim_ / heads_;
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));

    auto q = split_heads(bmm(f, wq_), heads_);
    auto k = split_heads(bmm(f, wk_), heads_);
    auto v = split_heads(bmm(f, wv_), heads_);

    auto scores = bmm_t(q, k);
    auto qp = bmm_t(q, tile_batch(pk_, batch));
    auto attn = dropout(
        scaled_softmax(add(scores, index_expand(qp, index_, nodes_)), inv_sqrt),
        dropout_, train, rng);

    auto ctx = bmm(attn, v);
    auto mass = index_reduce(attn, index_, table_);
    ctx = add(ctx, bmm(mass, tile_batch(pv_, batch)));
    return merge_heads(ctx, heads_);
  }

  std::size_t table_size() const { return table_; }

  Tensor<T> pk() { return pk_; }
  Tensor<T> pv() { return pv_; }

 private:
  std::size_t dim_ = 0, heads_ = 1, nodes_ = 0, table_ = 0;
  double dropout_ = 0.0;
  std::vector<int> index_;
  Tensor<T> wq_, wk_, wv_, pk_, pv_;
};

// K-order graph-oriented multi-head self-attention. One score matrix
// S = Q K^T and one V are shared across orders; each order i applies its
// additive neighbor mask, softmaxes, aggregates, re-projects with W_i, and
// the per-order results are fused by the trainable weight vector c:
//
//   F_i   = softmax((S + U^i) / sqrt(d_head)) V
//   F_new = sum_i c_i * (F_i W_i)
//
// Masks are shared across heads; W_i and c act on the concatenated heads.
// Rows with no order-i neighbor softmax to zero and contribute nothing.
template <typename T>
class KogMsa {
 public:
  KogMsa() = default;
  KogMsa(std::size_t dim, std::size_t heads, const OrderMaskSet& masks,
         double dropout_rate, Rng& rng, ParamList<T>& params,
         const std::string& prefix)
      : dim_(dim),
        heads_(heads),
        nodes_(masks.num_nodes),
        order_(masks.order),
        dropout_(dropout_rate) {
    if (dim % heads != 0)
      throw ConfigError("model dim " + std::to_string(dim) +
                        " not divisible by head count " + std::to_string(heads));
    wq_ = glorot_init<T>({dim, dim}, dim, dim, rng);
    wk_ = glorot_init<T>({dim, dim}, dim, dim, rng);
    wv_ = glorot_init<T>({dim, dim}, dim, dim, rng);
    register_param(params, prefix + ".wq", wq_);
    register_param(params, prefix + ".wk", wk_);
    register_param(params, prefix + ".wv", wv_);
    const std::size_t l = static_cast<std::size_t>(masks.num_nodes);
    for (int i = 0; i <= order_; ++i) {
      auto w = glorot_init<T>({dim, dim}, dim, dim, rng);
      register_param(params, prefix + ".w" + std::to_string(i), w);
      w_order_.push_back(w);
      masks_.emplace_back(Shape{l, l}, masks.additive_matrix<T>(i));
    }
    fusion_ = Tensor<T>({static_cast<std::size_t>(order_ + 1)},
                        T(1) / T(order_ + 1));
    register_param(params, prefix + ".c", fusion_);
  }

  Tensor<T> forward(Tensor<T> f, bool train, Rng* rng) const {
    if (f.rank() != 3 || f.dim(1) != nodes_ || f.dim(2) != dim_)
      throw ShapeError("kog-msa expects [B, " + std::to_string(nodes_) + ", " +
                       std::to_string(dim_) + "], got " + shape_str(f.shape()));
    const std::size_t dh = dim_ / heads_;
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));

    auto q = split_heads(bmm(f, wq_), heads_);
    auto k = split_heads(bmm(f, wk_), heads_);
    auto v = split_heads(bmm(f, wv_), heads_);
    auto scores = bmm_t(q, k);

    Tensor<T> fused;
    for (int i = 0; i <= order_; ++i) {
      auto attn = dropout(masked_scaled_softmax(scores, masks_[i], inv_sqrt),
                          dropout_, train, rng);
      auto fi = merge_heads(bmm(attn, v), heads_);
      auto proj = bmm(fi, w_order_[i]);
      fused = fused.defined()
                  ? add_scaled(fused, proj, fusion_, static_cast<std::size_t>(i))
                  : scale_coeff(proj, fusion_, static_cast<std::size_t>(i));
    }
    return fused;
  }

  int order() const { return order_; }
  Tensor<T> fusion_weights() { return fusion_; }
  Tensor<T> order_weight(int i) { return w_order_[i]; }

 private:
  std::size_t dim_ = 0, heads_ = 1, nodes_ = 0;
  int order_ = 0;
  double dropout_ = 0.0;
  Tensor<T> wq_, wk_, wv_, fusion_;
  std::vector<Tensor<T>> w_order_;
  std::vector<Tensor<T>> masks_;  // constant additive order masks
};

}  // namespace kog
