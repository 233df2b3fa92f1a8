#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "kog/attention.hpp"
#include "kog/config.hpp"
#include "kog/graph.hpp"
#include "kog/nn.hpp"
#include "kog/tensor.hpp"

namespace kog {

// ------------------------------------------------------------ cheb conv

// y = sum_k T_k(L_hat) x Theta_k + bias with the Chebyshev recurrence
// T_0 = I, T_1 = L_hat, T_k = 2 L_hat T_{k-1} - T_{k-2}. Order 1 degenerates
// to a plain linear layer.
template <typename T>
Tensor<T> chebyshev_apply(Tensor<T> x, Tensor<T> l_hat,
                          const std::vector<Tensor<T>>& thetas, Tensor<T> bias) {
  if (thetas.empty()) throw ConfigError("chebyshev conv needs order >= 1");
  if (x.rank() != 3 || l_hat.rank() != 2 || x.dim(1) != l_hat.dim(0))
    throw ShapeError("chebyshev conv expects [B, l, d] with an l x l laplacian, "
                     "got " + shape_str(x.shape()) + " and " +
                     shape_str(l_hat.shape()));
  Tensor<T> prev2, prev1;
  Tensor<T> acc;
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    Tensor<T> tk;
    if (k == 0) {
      tk = x;
    } else if (k == 1) {
      tk = lmm(l_hat, x);
    } else {
      tk = sub(scalar_mul(lmm(l_hat, prev1), T(2)), prev2);
    }
    auto term = bmm(tk, thetas[k]);
    acc = acc.defined() ? add(acc, term) : term;
    prev2 = prev1;
    prev1 = tk;
  }
  return add_rowvec(acc, bias);
}

template <typename T>
struct ChebConv {
  Tensor<T> l_hat;  // constant rescaled laplacian
  std::vector<Tensor<T>> thetas;
  Tensor<T> bias;

  ChebConv() = default;
  ChebConv(const ScaledLaplacian& lap, std::size_t in_dim, std::size_t out_dim,
           int order, Rng& rng, ParamList<T>& params, const std::string& prefix) {
    const std::size_t l = static_cast<std::size_t>(lap.num_nodes);
    std::vector<T> entries(lap.entries.begin(), lap.entries.end());
    l_hat = Tensor<T>(Shape{l, l}, std::move(entries));
    for (int k = 0; k < order; ++k) {
      auto th = glorot_init<T>({in_dim, out_dim}, in_dim, out_dim, rng);
      register_param(params, prefix + ".theta" + std::to_string(k), th);
      thetas.push_back(th);
    }
    bias = Tensor<T>({out_dim});
    register_param(params, prefix + ".bias", bias);
  }

  Tensor<T> forward(Tensor<T> x) const {
    return chebyshev_apply(x, l_hat, thetas, bias);
  }
};

// ------------------------------------------------------------ upsample

// Learned linear map on the node axis; every output node mixes all input
// nodes. Strictly node-increasing by contract.
template <typename T>
Tensor<T> upsample_nodes(Tensor<T> x, Tensor<T> weights) {
  if (weights.rank() != 2 || x.rank() != 3 || x.dim(1) != weights.dim(1))
    throw ShapeError("upsample expects [B, l_in, d] with [l_out, l_in] weights, "
                     "got " + shape_str(x.shape()) + " and " +
                     shape_str(weights.shape()));
  if (weights.dim(0) <= weights.dim(1))
    throw ConfigError("upsample must increase the node count, got " +
                      std::to_string(weights.dim(1)) + " -> " +
                      std::to_string(weights.dim(0)));
  return lmm(weights, x);
}

// ------------------------------------------------------------ gra attention

// Self-attention with a learnable square additive score bias (the "learnable
// adjacency"), wrapped pre-norm with a residual path:
//   y = x + Dropout(Attn(LayerNorm(x)))
//   Attn scores = Q K^T / sqrt(d) + bias
// With a zero bias the core reduces exactly to plain single-head attention.
template <typename T>
struct GraAttentionBlock {
  std::size_t nodes = 0, dim = 0;
  double dropout_rate = 0.0;
  LayerNormParams<T> ln;
  Tensor<T> wq, wk, wv;
  Tensor<T> score_bias;  // [nodes, nodes], zero-initialized

  GraAttentionBlock() = default;
  GraAttentionBlock(std::size_t nodes_in, std::size_t d, double rate, Rng& rng,
                    ParamList<T>& params, const std::string& prefix)
      : nodes(nodes_in), dim(d), dropout_rate(rate),
        ln(d, params, prefix + ".ln") {
    wq = glorot_init<T>({d, d}, d, d, rng);
    wk = glorot_init<T>({d, d}, d, d, rng);
    wv = glorot_init<T>({d, d}, d, d, rng);
    score_bias = Tensor<T>({nodes, nodes});
    register_param(params, prefix + ".wq", wq);
    register_param(params, prefix + ".wk", wk);
    register_param(params, prefix + ".wv", wv);
    register_param(params, prefix + ".score_bias", score_bias);
  }

  Tensor<T> core(Tensor<T> x, bool train, Rng* rng) const {
    if (x.rank() != 3 || x.dim(1) != nodes || x.dim(2) != dim)
      throw ShapeError("gra-attention expects [B, " + std::to_string(nodes) +
                       ", " + std::to_string(dim) + "], got " +
                       shape_str(x.shape()));
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dim)));
    auto q = bmm(x, wq);
    auto k = bmm(x, wk);
    auto v = bmm(x, wv);
    auto scores = masked_add(scalar_mul(bmm_t(q, k), inv_sqrt), score_bias);
    auto attn = dropout(row_softmax(scores), dropout_rate, train, rng);
    return bmm(attn, v);
  }

  Tensor<T> forward(Tensor<T> x, bool train, Rng* rng) const {
    return add(x, dropout(core(ln.forward(x), train, rng), dropout_rate, train, rng));
  }
};

// ------------------------------------------------------------ KOG-Transformer

// Input linear (2 -> d), N layers of [KOG-MSA, KOG-MSA, GR-MSA, MLP] each as
// a pre-norm residual sublayer with output dropout, then a final layer norm
// and the output linear (d -> 3).
template <typename T>
class KogTransformer {
 public:
  struct Census {
    int kog_msa = 0;
    int gr_msa = 0;
    int mlp = 0;
  };

  KogTransformer(const KogConfig& cfg, const SkeletonGraph& graph, Rng& rng)
      : cfg_(cfg) {
    cfg.validate();
    graph.validate();
    if (graph.num_nodes != cfg.joints)
      throw ConfigError("skeleton has " + std::to_string(graph.num_nodes) +
                        " nodes but the model expects " +
                        std::to_string(cfg.joints) + " joints");
    const auto dist = build_signed_distance(graph);
    const auto index_map = build_relative_index_map(dist, cfg.delta, cfg.directed);
    const auto masks = build_order_masks(graph, cfg.order);

    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    input_ = Linear<T>(2, d, rng, params_, "input");
    layers_.reserve(cfg.layers);
    for (int i = 0; i < cfg.layers; ++i) {
      const std::string p = "layers." + std::to_string(i);
      Layer layer;
      layer.ln1 = LayerNormParams<T>(d, params_, p + ".ln1");
      layer.kog1 = KogMsa<T>(d, cfg.heads, masks, cfg.dropout, rng, params_,
                             p + ".kog1");
      layer.ln2 = LayerNormParams<T>(d, params_, p + ".ln2");
      layer.kog2 = KogMsa<T>(d, cfg.heads, masks, cfg.dropout, rng, params_,
                             p + ".kog2");
      layer.ln3 = LayerNormParams<T>(d, params_, p + ".ln3");
      layer.gr = GrMsa<T>(d, cfg.heads, index_map, cfg.dropout, rng, params_,
                          p + ".gr");
      layer.ln4 = LayerNormParams<T>(d, params_, p + ".ln4");
      layer.mlp = MlpBlock<T>(d, 2 * d, cfg.dropout, rng, params_, p + ".mlp");
      layers_.push_back(std::move(layer));
    }
    final_ln_ = LayerNormParams<T>(d, params_, "final_ln");
    output_ = Linear<T>(d, 3, rng, params_, "output");
  }

  // pose2d [B, joints, 2] -> [B, joints, 3]
  Tensor<T> forward(Tensor<T> pose2d, bool train, Rng* rng) const {
    if (pose2d.rank() != 3 || pose2d.dim(1) != static_cast<std::size_t>(cfg_.joints) ||
        pose2d.dim(2) != 2)
      throw ShapeError("kog-transformer expects [B, " +
                       std::to_string(cfg_.joints) + ", 2], got " +
                       shape_str(pose2d.shape()));
    auto x = input_.forward(pose2d);
    for (const auto& layer : layers_) {
      x = residual(x, layer.kog1.forward(layer.ln1.forward(x), train, rng), train, rng);
      x = residual(x, layer.kog2.forward(layer.ln2.forward(x), train, rng), train, rng);
      x = residual(x, layer.gr.forward(layer.ln3.forward(x), train, rng), train, rng);
      x = residual(x, layer.mlp.forward(layer.ln4.forward(x), train, rng), train, rng);
    }
    return output_.forward(final_ln_.forward(x));
  }

  ParamList<T>& params() { return params_; }
  const ParamList<T>& params() const { return params_; }
  const KogConfig& config() const { return cfg_; }

  Census census() const {
    Census c;
    c.kog_msa = 2 * static_cast<int>(layers_.size());
    c.gr_msa = static_cast<int>(layers_.size());
    c.mlp = static_cast<int>(layers_.size());
    return c;
  }

  // Fusion weight rows in figure order: "1-1", "1-2", "2-1", ...
  std::vector<std::pair<std::string, std::vector<double>>> fusion_rows() {
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (int sub = 0; sub < 2; ++sub) {
        auto c = sub == 0 ? layers_[i].kog1.fusion_weights()
                          : layers_[i].kog2.fusion_weights();
        std::vector<double> vals(c.values().begin(), c.values().end());
        rows.emplace_back(std::to_string(i + 1) + "-" + std::to_string(sub + 1),
                          std::move(vals));
      }
    }
    return rows;
  }

 private:
  struct Layer {
    LayerNormParams<T> ln1, ln2, ln3, ln4;
    KogMsa<T> kog1, kog2;
    GrMsa<T> gr;
    MlpBlock<T> mlp;
  };

  Tensor<T> residual(Tensor<T> x, Tensor<T> sub, bool train, Rng* rng) const {
    return add(x, dropout(sub, cfg_.dropout, train, rng));
  }

  KogConfig cfg_;
  ParamList<T> params_;
  Linear<T> input_;
  std::vector<Layer> layers_;
  LayerNormParams<T> final_ln_;
  Linear<T> output_;
};

// Closed-form parameter count of KogTransformer; kept next to the model so a
// structural change cannot silently diverge from it (tests assert equality
// with the constructed model).
inline std::size_t kog_parameter_count(const KogConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.dim);
  const std::size_t korders = static_cast<std::size_t>(cfg.order) + 1;
  const std::size_t table =
      cfg.directed ? 2 * static_cast<std::size_t>(cfg.delta) + 1
                   : static_cast<std::size_t>(cfg.delta) + 1;
  const std::size_t kog = 3 * d * d + korders * d * d + korders;
  const std::size_t gr = 3 * d * d + 2 * table * d;
  const std::size_t mlp = d * 2 * d + 2 * d + 2 * d * d + d;
  const std::size_t per_layer = 2 * kog + gr + mlp + 4 * 2 * d;
  return static_cast<std::size_t>(cfg.layers) * per_layer + (2 * d + d) +
         (3 * d + 3) + 2 * d;
}

// ------------------------------------------------------------ GASE-Net

// Chebyshev conv (3 -> dim) on the joint graph, five mesh-attention blocks
// (GraAttention then node upsampling along the schedule), and a linear map
// back to 3D.
template <typename T>
class GaseNet {
 public:
  GaseNet(const GaseConfig& cfg, const SkeletonGraph& graph, Rng& rng)
      : cfg_(cfg) {
    cfg.validate();
    graph.validate();
    if (graph.num_nodes != cfg.joints)
      throw ConfigError("skeleton has " + std::to_string(graph.num_nodes) +
                        " nodes but the model expects " +
                        std::to_string(cfg.joints) + " joints");
    const auto lap = build_scaled_laplacian(graph);
    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    cheb_ = ChebConv<T>(lap, 3, d, cfg.cheb_order, rng, params_, "cheb");
    int nodes = cfg.joints;
    for (std::size_t b = 0; b < cfg.schedule.size(); ++b) {
      const std::string p = "blocks." + std::to_string(b);
      attn_.emplace_back(static_cast<std::size_t>(nodes), d, cfg.dropout, rng,
                         params_, p + ".att");
      const int target = cfg.schedule[b];
      auto w = glorot_init<T>({static_cast<std::size_t>(target),
                               static_cast<std::size_t>(nodes)},
                              nodes, target, rng);
      register_param(params_, p + ".up.weight", w);
      upsample_.push_back(w);
      nodes = target;
    }
    output_ = Linear<T>(d, 3, rng, params_, "output");
  }

  // pose3d [B, joints, 3] -> [B, vertices, 3]
  Tensor<T> forward(Tensor<T> pose3d, bool train, Rng* rng) const {
    if (pose3d.rank() != 3 ||
        pose3d.dim(1) != static_cast<std::size_t>(cfg_.joints) ||
        pose3d.dim(2) != 3)
      throw ShapeError("gase-net expects [B, " + std::to_string(cfg_.joints) +
                       ", 3], got " + shape_str(pose3d.shape()));
    node_trace_.clear();
    auto x = cheb_.forward(pose3d);
    node_trace_.push_back(x.dim(1));
    for (std::size_t b = 0; b < attn_.size(); ++b) {
      x = attn_[b].forward(x, train, rng);
      x = upsample_nodes(x, upsample_[b]);
      node_trace_.push_back(x.dim(1));
    }
    return output_.forward(x);
  }

  ParamList<T>& params() { return params_; }
  const ParamList<T>& params() const { return params_; }
  const GaseConfig& config() const { return cfg_; }
  // Node counts seen by the last forward pass, starting at the joint count.
  const std::vector<std::size_t>& node_trace() const { return node_trace_; }

 private:
  GaseConfig cfg_;
  ParamList<T> params_;
  ChebConv<T> cheb_;
  std::vector<GraAttentionBlock<T>> attn_;
  std::vector<Tensor<T>> upsample_;
  Linear<T> output_;
  mutable std::vector<std::size_t> node_trace_;
};

}  // namespace kog
