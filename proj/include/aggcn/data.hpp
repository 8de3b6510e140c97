// Corpus ingestion (JSONL), embedding files, train/dev/test splitting, and
// the seeded synthetic task generator.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aggcn/common.hpp"
#include "aggcn/depgraph.hpp"
#include "aggcn/model.hpp"
#include "aggcn/rng.hpp"
#include "aggcn/tensor.hpp"

namespace aggcn {

struct Corpus {
  std::vector<Instance> instances;
  std::vector<std::string> label_vocab;
  std::vector<std::string> token_vocab{"<PAD>", "<UNK>"};
  std::optional<int> negative_label;

  int label_id(const std::string& name) const {
    for (std::size_t i = 0; i < label_vocab.size(); ++i) {
      if (label_vocab[i] == name) return static_cast<int>(i);
    }
    return -1;
  }

  bool operator==(const Corpus& o) const {
    return instances == o.instances && label_vocab == o.label_vocab &&
           token_vocab == o.token_vocab;
  }
};

namespace detail {

// Registers tokens/labels in first-seen order.
struct VocabBuilder {
  std::unordered_map<std::string, int> index;
  std::vector<std::string>* vocab;

  explicit VocabBuilder(std::vector<std::string>* v) : vocab(v) {
    for (std::size_t i = 0; i < v->size(); ++i) index[(*v)[i]] = static_cast<int>(i);
  }
  int intern(const std::string& s) {
    auto it = index.find(s);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(vocab->size());
    vocab->push_back(s);
    index[s] = id;
    return id;
  }
};

inline parse_error at_line(const std::string& path, int line,
                           const std::string& what) {
  return parse_error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace detail

// Reads one instance per line:
//   {"id": ..., "tokens": [...], "heads": [...], "deprels": [...]?,
//    "sent_bounds": [[s,e]...], "entities": [[s,e]...], "label": ...}
// Heads are 1-based with 0 = root; spans are 1-based inclusive.
inline Corpus read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open corpus file: " + path);

  Corpus corpus;
  detail::VocabBuilder tokens(&corpus.token_vocab);
  detail::VocabBuilder labels(&corpus.label_vocab);

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw detail::at_line(path, line_no,
                            std::string("malformed record: ") + e.what());
    }

    Instance inst;
    try {
      inst.id = rec.at("id").get<std::string>();
      inst.graph.tokens = rec.at("tokens").get<std::vector<std::string>>();
      inst.graph.heads = rec.at("heads").get<std::vector<int>>();
      if (rec.contains("deprels") && !rec["deprels"].is_null()) {
        inst.graph.deprels = rec["deprels"].get<std::vector<std::string>>();
      }
      for (const auto& b : rec.at("sent_bounds")) {
        inst.graph.sentence_bounds.push_back(
            {b.at(0).get<int>(), b.at(1).get<int>()});
      }
      for (const auto& s : rec.at("entities")) {
        inst.entity_spans.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
      }
      inst.label = labels.intern(rec.at("label").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw detail::at_line(path, line_no,
                            std::string("malformed record: ") + e.what());
    }

    try {
      inst.graph.validate();
    } catch (const structure_error& e) {
      throw structure_error(path + ":" + std::to_string(line_no) + ": " +
                            e.what());
    }
    const int n = inst.graph.size();
    if (inst.entity_spans.size() < 2 || inst.entity_spans.size() > 3) {
      throw detail::at_line(path, line_no,
                            "expected 2 or 3 entities, got " +
                                std::to_string(inst.entity_spans.size()));
    }
    for (const Span& s : inst.entity_spans) {
      if (s.start < 1 || s.end > n || s.start > s.end) {
        throw detail::at_line(path, line_no, "entity span out of range");
      }
    }
    for (std::size_t i = 0; i < inst.entity_spans.size(); ++i) {
      for (std::size_t j = i + 1; j < inst.entity_spans.size(); ++j) {
        const Span& a = inst.entity_spans[i];
        const Span& b = inst.entity_spans[j];
        if (a.start <= b.end && b.start <= a.end) {
          throw detail::at_line(path, line_no, "entity spans overlap");
        }
      }
    }
    for (const std::string& t : inst.graph.tokens) tokens.intern(t);
    corpus.instances.push_back(std::move(inst));
  }
  return corpus;
}

inline void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw parse_error("cannot open for writing: " + path);
  for (const Instance& inst : corpus.instances) {
    nlohmann::ordered_json rec;
    rec["id"] = inst.id;
    rec["tokens"] = inst.graph.tokens;
    rec["heads"] = inst.graph.heads;
    if (!inst.graph.deprels.empty()) rec["deprels"] = inst.graph.deprels;
    auto bounds = nlohmann::ordered_json::array();
    for (const Span& s : inst.graph.sentence_bounds) {
      bounds.push_back({s.start, s.end});
    }
    rec["sent_bounds"] = std::move(bounds);
    auto ents = nlohmann::ordered_json::array();
    for (const Span& s : inst.entity_spans) ents.push_back({s.start, s.end});
    rec["entities"] = std::move(ents);
    rec["label"] = corpus.label_vocab.at(static_cast<std::size_t>(inst.label));
    out << rec.dump() << "\n";
  }
}

// Plain-text embeddings, one "token v1 ... vk" per line. Vocab tokens found
// in the file are copied; missing ones get seeded uniform(-0.1, 0.1) rows;
// PAD and UNK stay zero.
inline Tensor load_embeddings(const std::string& path,
                              const std::vector<std::string>& vocab,
                              Rng& rng) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open embedding file: " + path);

  std::unordered_map<std::string, std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  int dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (token.empty() || values.empty()) {
      throw detail::at_line(path, line_no, "malformed embedding line");
    }
    if (dim == -1) {
      dim = static_cast<int>(values.size());
    } else if (static_cast<int>(values.size()) != dim) {
      throw detail::at_line(
          path, line_no,
          "dimension mismatch: got " + std::to_string(values.size()) +
              " values, expected " + std::to_string(dim));
    }
    rows[token] = std::move(values);
  }
  if (dim == -1) throw parse_error(path + ": empty embedding file");

  const std::size_t d = static_cast<std::size_t>(dim);
  Tensor table = Tensor::zeros(vocab.size(), d, true);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (static_cast<int>(i) == kPadId || static_cast<int>(i) == kUnkId) {
      continue;  // reserved rows stay zero
    }
    auto it = rows.find(vocab[i]);
    if (it != rows.end()) {
      for (std::size_t j = 0; j < d; ++j) table.at(i, j) = it->second[j];
    } else {
      for (std::size_t j = 0; j < d; ++j) table.at(i, j) = rng.uniform(-0.1, 0.1);
    }
  }
  return table;
}

// Parameters of the generated cue task: each instance carries two entity
// tokens and exactly one cue token placed at a fixed tree distance from the
// entity path; the label is determined by the cue alone.
struct SyntheticSpec {
  int n_instances = 200;
  int n_labels = 5;
  int len_min = 8;
  int len_max = 12;
  int off_path_distance = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Prufer sequence -> undirected edge list over nodes 1..n (n >= 2).
inline std::vector<std::pair<int, int>> decode_prufer(
    const std::vector<int>& seq, int n) {
  std::vector<std::pair<int, int>> edges;
  if (n == 2) {
    edges.emplace_back(1, 2);
    return edges;
  }
  std::vector<int> degree(static_cast<std::size_t>(n) + 1, 1);
  for (int x : seq) degree[static_cast<std::size_t>(x)] += 1;
  std::set<int> leaves;
  for (int i = 1; i <= n; ++i) {
    if (degree[static_cast<std::size_t>(i)] == 1) leaves.insert(i);
  }
  for (int x : seq) {
    const int leaf = *leaves.begin();
    leaves.erase(leaves.begin());
    edges.emplace_back(leaf, x);
    if (--degree[static_cast<std::size_t>(x)] == 1) leaves.insert(x);
  }
  const int a = *leaves.begin();
  const int b = *std::next(leaves.begin());
  edges.emplace_back(a, b);
  return edges;
}

// Heads array (1-based, 0 = root) from undirected edges rooted at `root`.
inline std::vector<int> orient_edges(
    const std::vector<std::pair<int, int>>& edges, int n, int root) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n) + 1);
  for (const auto& [a, b] : edges) {
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  std::vector<int> heads(static_cast<std::size_t>(n), -1);
  std::vector<int> stack{root};
  heads[static_cast<std::size_t>(root) - 1] = 0;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (heads[static_cast<std::size_t>(v) - 1] == -1) {
        heads[static_cast<std::size_t>(v) - 1] = u;
        stack.push_back(v);
      }
    }
  }
  return heads;
}

}  // namespace detail

// Seeded generator for the cue-distance task. Trees are uniform random
// (Prufer) and re-drawn until the cue placement is realizable, so the label
// cue sits at exactly off_path_distance from the entity path.
inline Corpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_instances < 1 || spec.n_labels < 2) {
    throw contract_error("synthetic: need >= 1 instances and >= 2 labels");
  }
  if (spec.off_path_distance < 0) {
    throw contract_error("synthetic: off_path_distance must be >= 0");
  }
  const int min_len =
      spec.off_path_distance == 0 ? 3 : spec.off_path_distance + 2;
  if (spec.len_min < 2 || spec.len_min > spec.len_max) {
    throw contract_error("synthetic: bad sentence_length range");
  }
  if (spec.len_max < min_len) {
    throw contract_error(
        "synthetic: sentence_length too small to realize off_path_distance " +
        std::to_string(spec.off_path_distance));
  }

  constexpr int kFillerVocab = 20;
  Rng rng = Rng(spec.seed).derive("synthetic");

  Corpus corpus;
  for (int i = 0; i < spec.n_labels; ++i) {
    corpus.label_vocab.push_back("rel" + std::to_string(i));
  }

  for (int idx = 0; idx < spec.n_instances; ++idx) {
    int n = 0;
    int cue = 0;
    int u = 0, v = 0;
    std::vector<int> heads;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      n = rng.uniform_int(spec.len_min, spec.len_max);
      if (n < min_len) continue;
      std::vector<int> seq(static_cast<std::size_t>(std::max(0, n - 2)));
      for (int& x : seq) x = rng.uniform_int(1, n);
      const auto edges = detail::decode_prufer(seq, n);
      const int root = rng.uniform_int(1, n);
      heads = detail::orient_edges(edges, n, root);

      u = rng.uniform_int(1, n);
      const int shifted = rng.uniform_int(1, n - 1);
      v = shifted >= u ? shifted + 1 : shifted;

      DependencyGraph g;
      g.tokens.assign(static_cast<std::size_t>(n), "w");
      g.heads = heads;
      g.sentence_bounds = {{1, n}};
      const std::vector<int> path = dependency_path(g, u, v);

      std::vector<int> candidates;
      if (spec.off_path_distance == 0) {
        for (std::size_t k = 1; k + 1 < path.size(); ++k) {
          candidates.push_back(path[k]);
        }
      } else {
        std::vector<int> dist(static_cast<std::size_t>(n) + 1, -1);
        std::vector<int> frontier = path;
        for (int x : path) dist[static_cast<std::size_t>(x)] = 0;
        const auto adj = g.adjacency_lists();
        std::size_t qi = 0;
        while (qi < frontier.size()) {
          const int x = frontier[qi++];
          for (int y : adj[static_cast<std::size_t>(x)]) {
            if (dist[static_cast<std::size_t>(y)] == -1) {
              dist[static_cast<std::size_t>(y)] =
                  dist[static_cast<std::size_t>(x)] + 1;
              frontier.push_back(y);
            }
          }
        }
        for (int x = 1; x <= n; ++x) {
          if (dist[static_cast<std::size_t>(x)] == spec.off_path_distance) {
            candidates.push_back(x);
          }
        }
      }
      if (candidates.empty()) continue;
      cue = candidates[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(candidates.size()) - 1))];
      placed = true;
    }
    if (!placed) {
      throw contract_error(
          "synthetic: could not realize off_path_distance = " +
          std::to_string(spec.off_path_distance) + " within the length range");
    }

    const int cue_type = rng.uniform_int(0, spec.n_labels - 1);
    Instance inst;
    inst.id = "syn-" + std::to_string(idx);
    inst.graph.heads = heads;
    inst.graph.sentence_bounds = {{1, n}};
    char buf[8];
    for (int t = 1; t <= n; ++t) {
      std::snprintf(buf, sizeof buf, "w%02d", rng.uniform_int(0, kFillerVocab - 1));
      inst.graph.tokens.emplace_back(buf);
    }
    inst.graph.tokens[static_cast<std::size_t>(cue) - 1] =
        "cue" + std::to_string(cue_type);
    const int e1 = std::min(u, v), e2 = std::max(u, v);
    inst.entity_spans = {{e1, e1}, {e2, e2}};
    inst.label = cue_type;
    corpus.instances.push_back(std::move(inst));
  }

  detail::VocabBuilder tokens(&corpus.token_vocab);
  for (const Instance& inst : corpus.instances) {
    for (const std::string& t : inst.graph.tokens) tokens.intern(t);
  }
  return corpus;
}

// Seeded shuffle, then contiguous split. Fractions must sum to 1.
inline std::tuple<Corpus, Corpus, Corpus> split(const Corpus& corpus,
                                                double train_frac,
                                                double dev_frac,
                                                double test_frac,
                                                std::uint64_t seed) {
  if (corpus.instances.empty()) {
    throw contract_error("split: empty corpus");
  }
  if (std::abs(train_frac + dev_frac + test_frac - 1.0) > 1e-9) {
    throw contract_error("split: fractions must sum to 1");
  }
  const std::size_t n = corpus.instances.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed).derive("split");
  shuffle(order, rng);

  const auto n_train = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * train_frac));
  const auto n_dev = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * dev_frac));

  auto make_part = [&](std::size_t lo, std::size_t hi) {
    Corpus part;
    part.label_vocab = corpus.label_vocab;
    part.token_vocab = corpus.token_vocab;
    part.negative_label = corpus.negative_label;
    for (std::size_t i = lo; i < hi && i < n; ++i) {
      part.instances.push_back(corpus.instances[order[i]]);
    }
    return part;
  };
  return {make_part(0, n_train), make_part(n_train, n_train + n_dev),
          make_part(n_train + n_dev, n)};
}

}  // namespace aggcn
