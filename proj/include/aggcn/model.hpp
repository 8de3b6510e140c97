// The relation-extraction model: embedding lookup, encoder, masked and
// entity max-pooling, FFNN, and classifier.
#pragma once

#include <algorithm>
#include <atomic>
#include <iostream>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aggcn/common.hpp"
#include "aggcn/depgraph.hpp"
#include "aggcn/layers.hpp"
#include "aggcn/rng.hpp"
#include "aggcn/tensor.hpp"

namespace aggcn {

// Reserved vocabulary rows.
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;

struct Instance {
  std::string id;
  DependencyGraph graph;
  std::vector<Span> entity_spans;  // 2 or 3 entities
  int label = -1;                  // index into the corpus label vocabulary

  bool operator==(const Instance& o) const {
    return id == o.id && graph == o.graph && entity_spans == o.entity_spans &&
           label == o.label;
  }
};

struct ModelConfig {
  int n_heads = 3;       // N
  int n_blocks = 2;      // M
  int l1 = 2;            // sub-layers in the first dense group
  int l2 = 4;            // sub-layers in the second dense group
  int d = 300;           // block width
  int d_word = 300;      // embedding width
  int entities = 2;      // E
  bool use_attention = true;
  PruneK pruning;        // empty = FULL
  std::vector<std::string> labels;

  int num_labels() const { return static_cast<int>(labels.size()); }

  void validate() const {
    if (n_heads < 1) throw contract_error("config: N must be >= 1");
    if (n_blocks < 1) throw contract_error("config: M must be >= 1");
    if (l1 < 1 || l2 < 1) throw contract_error("config: L1/L2 must be >= 1");
    if (d < 1 || d_word < 1) throw contract_error("config: dims must be >= 1");
    if (d % l1 != 0) {
      throw contract_error("config: d = " + std::to_string(d) +
                           " not divisible by L1 = " + std::to_string(l1));
    }
    if (d % l2 != 0) {
      throw contract_error("config: d = " + std::to_string(d) +
                           " not divisible by L2 = " + std::to_string(l2));
    }
    if (entities != 2 && entities != 3) {
      throw contract_error("config: entity count must be 2 or 3, got " +
                           std::to_string(entities));
    }
    if (labels.size() < 2) {
      throw contract_error("config: need at least 2 labels");
    }
    if (pruning.has_value() && *pruning < 0) {
      throw contract_error("config: pruning K must be >= 0");
    }
  }
};

class AggcnModel {
 public:
  ModelConfig config;
  std::vector<std::string> token_vocab;  // [0]=PAD, [1]=UNK

  Tensor embeddings;   // V x d_word
  Tensor input_proj_w; // d x d_word
  Tensor input_proj_b; // 1 x d
  std::vector<BlockParams> blocks;
  Tensor ffnn_w1;      // d x (1+E)*d
  Tensor ffnn_b1;      // 1 x d
  Tensor ffnn_w2;      // d x d
  Tensor ffnn_b2;      // 1 x d
  Tensor classifier_w; // C x d
  Tensor classifier_b; // 1 x C

  static AggcnModel init(ModelConfig config,
                         std::vector<std::string> token_vocab, Rng& rng,
                         const Tensor* pretrained_embeddings = nullptr) {
    config.validate();
    if (token_vocab.size() < 2 || token_vocab[0] != "<PAD>" ||
        token_vocab[1] != "<UNK>") {
      throw contract_error("model: vocab must start with <PAD>, <UNK>");
    }
    AggcnModel m;
    m.config = config;
    m.token_vocab = std::move(token_vocab);
    const auto d = static_cast<std::size_t>(config.d);
    const auto dw = static_cast<std::size_t>(config.d_word);
    const auto v = m.token_vocab.size();

    if (pretrained_embeddings != nullptr) {
      if (pretrained_embeddings->rows() != v ||
          pretrained_embeddings->cols() != dw) {
        throw shape_error("model: embedding table " +
                          pretrained_embeddings->shape().str() +
                          " does not match vocab " + std::to_string(v) +
                          " x d_word " + std::to_string(dw));
      }
      m.embeddings = Tensor::from(v, dw, pretrained_embeddings->data(), true);
    } else {
      m.embeddings = Tensor::random_uniform(v, dw, -0.1, 0.1, rng, true);
      for (std::size_t j = 0; j < dw; ++j) {
        m.embeddings.at(kPadId, j) = 0.0;
        m.embeddings.at(kUnkId, j) = 0.0;
      }
    }
    m.input_proj_w = init::weight(d, dw, rng);
    m.input_proj_b = init::bias(d);
    const std::vector<std::size_t> groups{static_cast<std::size_t>(config.l1),
                                          static_cast<std::size_t>(config.l2)};
    for (int b = 0; b < config.n_blocks; ++b) {
      m.blocks.push_back(BlockParams::init(
          d, static_cast<std::size_t>(config.n_heads), groups, rng));
    }
    const std::size_t concat_width = (1 + static_cast<std::size_t>(config.entities)) * d;
    m.ffnn_w1 = init::weight(d, concat_width, rng);
    m.ffnn_b1 = init::bias(d);
    m.ffnn_w2 = init::weight(d, d, rng);
    m.ffnn_b2 = init::bias(d);
    const auto c = static_cast<std::size_t>(config.num_labels());
    m.classifier_w = init::weight(c, d, rng);
    m.classifier_b = init::bias(c);
    return m;
  }

  int token_id(const std::string& token) const {
    ensure_index();
    auto it = token_index_.find(token);
    return it == token_index_.end() ? kUnkId : it->second;
  }

  int label_id(const std::string& label) const {
    for (std::size_t i = 0; i < config.labels.size(); ++i) {
      if (config.labels[i] == label) return static_cast<int>(i);
    }
    return -1;
  }

  // Every learnable tensor, in the fixed order used by the optimizer, the
  // gradient checker, and the checkpoint format.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embeddings", embeddings);
    out.emplace_back("input_proj.w", input_proj_w);
    out.emplace_back("input_proj.b", input_proj_b);
    for (std::size_t m = 0; m < blocks.size(); ++m) {
      const std::string bp = "block" + std::to_string(m + 1) + ".";
      const BlockParams& blk = blocks[m];
      for (std::size_t t = 0; t < blk.heads.size(); ++t) {
        const std::string hp = bp + "head" + std::to_string(t + 1) + ".";
        out.emplace_back(hp + "wq", blk.heads[t].w_q);
        out.emplace_back(hp + "wk", blk.heads[t].w_k);
        for (std::size_t g = 0; g < blk.dense_groups[t].size(); ++g) {
          const DenseLayerParams& group = blk.dense_groups[t][g];
          for (std::size_t l = 0; l < group.sublayers.size(); ++l) {
            const std::string lp = hp + "group" + std::to_string(g + 1) +
                                   ".sub" + std::to_string(l + 1) + ".";
            out.emplace_back(lp + "w", group.sublayers[l].w);
            out.emplace_back(lp + "b", group.sublayers[l].b);
          }
        }
      }
      out.emplace_back(bp + "wcomb", blk.w_comb);
      out.emplace_back(bp + "bcomb", blk.b_comb);
    }
    out.emplace_back("ffnn.w1", ffnn_w1);
    out.emplace_back("ffnn.b1", ffnn_b1);
    out.emplace_back("ffnn.w2", ffnn_w2);
    out.emplace_back("ffnn.b2", ffnn_b2);
    out.emplace_back("classifier.w", classifier_w);
    out.emplace_back("classifier.b", classifier_b);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

 private:
  mutable std::unordered_map<std::string, int> token_index_;

  void ensure_index() const {
    if (token_index_.size() == token_vocab.size()) return;
    token_index_.clear();
    for (std::size_t i = 0; i < token_vocab.size(); ++i) {
      token_index_.emplace(token_vocab[i], static_cast<int>(i));
    }
  }
};

// Embedding rows projected to the block width: rows = proj(embedding[id]).
// Unknown tokens map to the UNK row.
inline Tensor lookup_embed(const std::vector<std::string>& tokens,
                           const AggcnModel& model) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(model.token_id(t));
  const Tensor rows = select_rows(model.embeddings, ids);
  return add_rowvec(matmul_nt(rows, model.input_proj_w), model.input_proj_b);
}

// Masked max-pooling over non-entity tokens (Eq. 6 style). Degenerate
// all-entity instances fall back to pooling over every token, with a
// diagnostic on stderr.
inline Tensor sentence_repr(const Tensor& h,
                            const std::vector<Span>& entity_spans) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    const int token = static_cast<int>(i) + 1;
    bool inside = false;
    for (const Span& s : entity_spans) inside = inside || s.contains(token);
    if (!inside) rows.push_back(i);
  }
  if (rows.empty()) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      std::cerr << "aggcn: all tokens are entity tokens; pooling over all "
                   "(repeated occurrences suppressed)\n";
    }
    for (std::size_t i = 0; i < h.rows(); ++i) rows.push_back(i);
  }
  return max_over_rows(h, rows);
}

// Max-pooling over one entity span's rows (Eq. 7 style).
inline Tensor entity_repr(const Tensor& h, const Span& span) {
  if (span.start < 1 || span.end > static_cast<int>(h.rows()) ||
      span.start > span.end) {
    throw contract_error("entity_repr: span [" + std::to_string(span.start) +
                         "," + std::to_string(span.end) + "] outside 1.." +
                         std::to_string(h.rows()));
  }
  std::vector<std::size_t> rows;
  for (int i = span.start; i <= span.end; ++i) {
    rows.push_back(static_cast<std::size_t>(i) - 1);
  }
  return max_over_rows(h, rows);
}

struct ForwardExtras {
  double dropout_p = 0.0;
  Rng* dropout_rng = nullptr;
  AttentionTrace* trace = nullptr;
};

// The graph the encoder actually consumes: sentence roots linked, entity
// spans ordered by position, and (for hard pruning modes) the restriction
// applied with spans remapped.
struct PreparedGraph {
  DependencyGraph graph;
  std::vector<Span> spans;
};

inline PreparedGraph prepare_graph(const Instance& instance, PruneK pruning) {
  PreparedGraph out;
  out.graph = link_sentence_roots(instance.graph);
  out.spans = instance.entity_spans;
  std::sort(out.spans.begin(), out.spans.end(),
            [](const Span& a, const Span& b) { return a.start < b.start; });
  if (pruning.has_value()) {
    const std::vector<int> keep = prune_tree(out.graph, out.spans, pruning);
    RestrictedGraph restricted = restrict_graph(out.graph, keep);
    for (Span& s : out.spans) {
      const int ns = restricted.old_to_new[static_cast<std::size_t>(s.start)];
      const int ne = restricted.old_to_new[static_cast<std::size_t>(s.end)];
      if (ns == 0 || ne == 0) {
        throw contract_error("pruning dropped an entity token of " +
                             instance.id);
      }
      s = {ns, ne};
    }
    out.graph = std::move(restricted.graph);
  }
  return out;
}

// Full forward pass: optional hard pruning, adjacency, encoder, pooling,
// FFNN, classifier. Returns 1 x C logits with the backward graph attached.
inline Tensor classify(const AggcnModel& model, const Instance& instance,
                       PruneK pruning, const ForwardExtras& extras = {}) {
  if (static_cast<int>(instance.entity_spans.size()) !=
      model.config.entities) {
    throw contract_error("classify: instance " + instance.id + " has " +
                         std::to_string(instance.entity_spans.size()) +
                         " entities, model expects " +
                         std::to_string(model.config.entities));
  }

  const PreparedGraph prepared = prepare_graph(instance, pruning);
  const DependencyGraph& graph = prepared.graph;
  const std::vector<Span>& spans = prepared.spans;

  const Tensor hard_adj = build_adjacency(graph).to_tensor();
  const Tensor x = lookup_embed(graph.tokens, model);

  EncodeOptions opts;
  opts.use_attention = model.config.use_attention;
  opts.dropout_p = extras.dropout_p;
  opts.dropout_rng = extras.dropout_rng;
  opts.trace = extras.trace;
  const Tensor h = encode(x, hard_adj, model.blocks, opts);

  std::vector<Tensor> pooled{sentence_repr(h, spans)};
  for (const Span& s : spans) pooled.push_back(entity_repr(h, s));
  const Tensor concat = concat_cols(pooled);

  const Tensor hidden =
      relu(add_rowvec(matmul_nt(concat, model.ffnn_w1), model.ffnn_b1));
  const Tensor final_repr =
      add_rowvec(matmul_nt(hidden, model.ffnn_w2), model.ffnn_b2);
  return add_rowvec(matmul_nt(final_repr, model.classifier_w),
                    model.classifier_b);
}

inline Tensor classify(const AggcnModel& model, const Instance& instance) {
  return classify(model, instance, model.config.pruning);
}

// The attention-guided adjacency matrices computed during a forward pass,
// keyed by (block >= 2, head). Empty for single-block models.
inline std::vector<AttentionTrace::Entry> attention_maps(
    const AggcnModel& model, const Instance& instance) {
  AttentionTrace trace;
  ForwardExtras extras;
  extras.trace = &trace;
  classify(model, instance, model.config.pruning, extras);
  return std::move(trace.entries);
}

}  // namespace aggcn
