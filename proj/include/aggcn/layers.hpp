// Attention-guided GCN building blocks.
//
// A block turns node states h (n x d) into new states of the same shape:
// per head, an n x n attention adjacency (or the shared hard adjacency in
// the first block) drives a pair of densely connected GCN groups, and a
// linear combination merges the N head branches back to width d.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "aggcn/common.hpp"
#include "aggcn/depgraph.hpp"
#include "aggcn/rng.hpp"
#include "aggcn/tensor.hpp"

namespace aggcn {

namespace init {

// Uniform(-sqrt(2/fan_in), +sqrt(2/fan_in)) weights, zero biases. The gain
// balances the convolution's unnormalized neighbor sum (mean tree degree
// plus self-loop, about 3) against ReLU's variance halving, keeping
// activations O(1) through the deep sub-layer stack.
inline Tensor weight(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  const double bound = std::sqrt(2.0 / static_cast<double>(in_dim));
  return Tensor::random_uniform(out_dim, in_dim, -bound, bound, rng, true);
}

inline Tensor bias(std::size_t dim) { return Tensor::zeros(1, dim, true); }

}  // namespace init

struct AttentionHeadParams {
  Tensor w_q;  // d x d, applied as h * w_q
  Tensor w_k;  // d x d

  static AttentionHeadParams init(std::size_t d, Rng& rng) {
    return {init::weight(d, d, rng), init::weight(d, d, rng)};
  }
};

// One densely connected group of L sub-layers. Sub-layer l consumes the
// concatenation of the group input and all previous outputs, so its weight
// is d_hidden x (d + d_hidden*(l-1)); the concatenated outputs restore
// width d = d_hidden * L.
struct DenseLayerParams {
  struct SubLayer {
    Tensor w;  // d_hidden x d_in
    Tensor b;  // 1 x d_hidden
  };
  std::size_t d = 0;
  std::size_t d_hidden = 0;
  std::vector<SubLayer> sublayers;

  static DenseLayerParams init(std::size_t d, std::size_t num_sublayers,
                               Rng& rng) {
    if (num_sublayers == 0 || d % num_sublayers != 0) {
      throw shape_error("dense layer: d = " + std::to_string(d) +
                        " is not divisible by L = " +
                        std::to_string(num_sublayers));
    }
    DenseLayerParams p;
    p.d = d;
    p.d_hidden = d / num_sublayers;
    for (std::size_t l = 1; l <= num_sublayers; ++l) {
      const std::size_t d_in = d + p.d_hidden * (l - 1);
      p.sublayers.push_back({init::weight(p.d_hidden, d_in, rng),
                             init::bias(p.d_hidden)});
    }
    return p;
  }

  // Input widths of the sub-layers: d, d + d_hidden, d + 2*d_hidden, ...
  std::vector<std::size_t> input_widths() const {
    std::vector<std::size_t> w;
    for (std::size_t l = 0; l < sublayers.size(); ++l) {
      w.push_back(d + d_hidden * l);
    }
    return w;
  }
};

struct BlockParams {
  std::vector<AttentionHeadParams> heads;             // N
  std::vector<std::vector<DenseLayerParams>> dense_groups;  // [head][group]
  Tensor w_comb;  // (d*N) x d
  Tensor b_comb;  // 1 x d

  static BlockParams init(std::size_t d, std::size_t num_heads,
                          const std::vector<std::size_t>& group_sublayers,
                          Rng& rng) {
    if (num_heads == 0) throw contract_error("block: N must be >= 1");
    BlockParams p;
    for (std::size_t t = 0; t < num_heads; ++t) {
      p.heads.push_back(AttentionHeadParams::init(d, rng));
      std::vector<DenseLayerParams> groups;
      for (std::size_t ls : group_sublayers) {
        groups.push_back(DenseLayerParams::init(d, ls, rng));
      }
      p.dense_groups.push_back(std::move(groups));
    }
    p.w_comb = init::weight(d * num_heads, d, rng);
    p.b_comb = init::bias(d);
    return p;
  }
};

// One graph convolution: relu(A * h * w^T + b), with w as d_out x d_in.
inline Tensor gcn_layer(const Tensor& h, const Tensor& a, const Tensor& w,
                        const Tensor& b) {
  if (a.rows() != a.cols() || a.rows() != h.rows()) {
    throw shape_error("gcn_layer: adjacency " + a.shape().str() +
                      " does not match states " + h.shape().str());
  }
  return relu(add_rowvec(matmul_nt(matmul(a, h), w), b));
}

// Attention-guided adjacency: softmax_rows((h w_q)(h w_k)^T / sqrt(d)).
// Rows sum to 1; shape is n x n regardless of d.
inline Tensor attention_adjacency(const Tensor& h,
                                  const AttentionHeadParams& head) {
  if (h.cols() != head.w_q.rows()) {
    throw shape_error("attention: states " + h.shape().str() +
                      " do not match projections " + head.w_q.shape().str());
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(h.cols()));
  const Tensor scores =
      scale(matmul_nt(matmul(h, head.w_q), matmul(h, head.w_k)), inv_sqrt_d);
  return softmax_rows(scores);
}

// Densely connected group: each sub-layer convolves the concatenation of the
// group input and all preceding sub-layer outputs; outputs concatenate back
// to width d.
inline Tensor dense_layer(const Tensor& h0, const Tensor& a,
                          const DenseLayerParams& params) {
  if (h0.cols() != params.d) {
    throw shape_error("dense_layer: input " + h0.shape().str() +
                      " does not match configured width " +
                      std::to_string(params.d));
  }
  std::vector<Tensor> stacked{h0};
  std::vector<Tensor> outputs;
  for (const auto& sub : params.sublayers) {
    const Tensor g = concat_cols(stacked);
    const Tensor out = gcn_layer(g, a, sub.w, sub.b);
    outputs.push_back(out);
    stacked.push_back(out);
  }
  return concat_cols(outputs);
}

// Affine merge of the N branch outputs: concat to n x (d*N), then map to
// n x d. No activation.
inline Tensor linear_combination(const std::vector<Tensor>& branches,
                                 const Tensor& w_comb, const Tensor& b_comb) {
  if (branches.empty()) {
    throw contract_error("linear_combination: no branch outputs");
  }
  const Tensor merged = concat_cols(branches);
  if (merged.cols() != w_comb.rows()) {
    throw contract_error("linear_combination: got " +
                         std::to_string(branches.size()) + " branches of " +
                         branches[0].shape().str() + ", expected total width " +
                         std::to_string(w_comb.rows()));
  }
  return add_rowvec(matmul(merged, w_comb), b_comb);
}

// Attention matrices recorded during a forward pass, keyed by (block, head),
// both 1-based.
struct AttentionTrace {
  struct Entry {
    int block = 0;
    int head = 0;
    std::size_t n = 0;
    std::vector<double> weights;  // n*n row-major, rows sum to 1
  };
  std::vector<Entry> entries;
};

// One block: per head, soft or hard adjacency feeds the head's dense groups
// in sequence; branches merge through the linear combination.
inline Tensor block_forward(const Tensor& h, const Tensor& hard_adj,
                            const BlockParams& params, bool use_attention,
                            AttentionTrace* trace = nullptr,
                            int block_index = 0) {
  std::vector<Tensor> branches;
  for (std::size_t t = 0; t < params.heads.size(); ++t) {
    Tensor adj = hard_adj;
    if (use_attention) {
      adj = attention_adjacency(h, params.heads[t]);
      if (trace != nullptr) {
        trace->entries.push_back({block_index, static_cast<int>(t) + 1,
                                  adj.rows(), adj.data()});
      }
    }
    Tensor branch = h;
    for (const DenseLayerParams& group : params.dense_groups[t]) {
      branch = dense_layer(branch, adj, group);
    }
    branches.push_back(branch);
  }
  return linear_combination(branches, params.w_comb, params.b_comb);
}

struct EncodeOptions {
  bool use_attention = true;  // gates soft pruning globally (GCN baseline: off)
  double dropout_p = 0.0;     // applied to each block's input while training
  Rng* dropout_rng = nullptr;
  AttentionTrace* trace = nullptr;
};

// Stacks M blocks. The attention guided layer kicks in from the second
// block; the first always consumes the hard adjacency.
inline Tensor encode(const Tensor& x, const Tensor& hard_adj,
                     const std::vector<BlockParams>& blocks,
                     const EncodeOptions& opts = {}) {
  if (blocks.empty()) {
    throw contract_error("encode: at least one block required");
  }
  Tensor h = x;
  for (std::size_t m = 0; m < blocks.size(); ++m) {
    if (opts.dropout_p > 0.0) {
      if (opts.dropout_rng == nullptr) {
        throw contract_error("encode: dropout requires an rng");
      }
      h = dropout(h, opts.dropout_p, *opts.dropout_rng);
    }
    const bool attend = opts.use_attention && m >= 1;
    h = block_forward(h, hard_adj, blocks[m], attend, opts.trace,
                      static_cast<int>(m) + 1);
  }
  return h;
}

}  // namespace aggcn
