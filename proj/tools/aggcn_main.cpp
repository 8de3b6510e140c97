// Command-line surface: train, eval, prune, attention, synth.
//
// Exit codes: 0 success, 2 usage/config errors, 3 runtime failures
// (training divergence and similar).

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aggcn/aggcn.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// "full" or "kN" (case-insensitive); bare integers also accepted.
aggcn::PruneK parse_pruning(const std::string& text) {
  std::string s = text;
  for (char& c : s) c = static_cast<char>(std::tolower(c));
  if (s == "full") return {};
  if (!s.empty() && s[0] == 'k') s = s.substr(1);
  try {
    std::size_t used = 0;
    const int k = std::stoi(s, &used);
    if (used != s.size() || k < 0) throw std::invalid_argument(s);
    return k;
  } catch (const std::exception&) {
    throw aggcn::contract_error("invalid pruning mode '" + text +
                                "' (expected full, k0, k1, ...)");
  }
}

std::string pruning_name(aggcn::PruneK k) {
  return k.has_value() ? "k" + std::to_string(*k) : "full";
}

// "default" or "n=200,labels=5,len=8..12,off=0".
aggcn::SyntheticSpec parse_synthetic_spec(const std::string& text,
                                          std::uint64_t seed) {
  aggcn::SyntheticSpec spec;
  spec.seed = seed;
  if (text == "default") return spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw aggcn::contract_error("bad synthetic spec item '" + item + "'");
    }
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "n") {
        spec.n_instances = std::stoi(value);
      } else if (key == "labels") {
        spec.n_labels = std::stoi(value);
      } else if (key == "len") {
        const auto dots = value.find("..");
        if (dots == std::string::npos) {
          spec.len_min = spec.len_max = std::stoi(value);
        } else {
          spec.len_min = std::stoi(value.substr(0, dots));
          spec.len_max = std::stoi(value.substr(dots + 2));
        }
      } else if (key == "off") {
        spec.off_path_distance = std::stoi(value);
      } else {
        throw aggcn::contract_error("unknown synthetic spec key '" + key +
                                    "'");
      }
    } catch (const aggcn::contract_error&) {
      throw;
    } catch (const std::exception&) {
      throw aggcn::contract_error("bad synthetic spec value '" + item + "'");
    }
  }
  return spec;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string sanitize_for_filename(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  }
  return out;
}

ordered_json eval_to_json(const aggcn::EvalResult& r) {
  ordered_json j;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["micro_f1"] = r.micro_f1;
  j["macro_f1"] = r.macro_f1;
  j["total"] = r.total;
  return j;
}

void print_eval(std::ostream& os, const aggcn::EvalResult& r) {
  os << "accuracy  " << format_double(r.accuracy) << "\n"
     << "precision " << format_double(r.precision) << "\n"
     << "recall    " << format_double(r.recall) << "\n"
     << "micro_f1  " << format_double(r.micro_f1) << "\n"
     << "macro_f1  " << format_double(r.macro_f1) << "\n";
}

void write_confusion_csv(const std::string& path,
                         const aggcn::EvalResult& r,
                         const std::vector<std::string>& labels) {
  std::ofstream out(path);
  if (!out) throw aggcn::parse_error("cannot write " + path);
  out << "gold\\pred";
  for (const auto& l : labels) out << "," << csv_field(l);
  out << "\n";
  for (std::size_t g = 0; g < labels.size(); ++g) {
    out << csv_field(labels[g]);
    for (std::size_t p = 0; p < labels.size(); ++p) {
      out << "," << r.confusion[g][p];
    }
    out << "\n";
  }
}

std::optional<int> resolve_negative_label(
    const std::string& name, const std::vector<std::string>& labels) {
  if (name.empty()) return {};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == name) return static_cast<int>(i);
  }
  throw aggcn::contract_error("negative label '" + name +
                              "' not in the label vocabulary");
}

// A flag backed by a config-file key. File values apply only when the flag
// was not given on the command line.
struct ConfigBinding {
  std::string key;
  CLI::Option* option = nullptr;
  std::function<void(const std::string&)> apply;
};

template <typename T>
void bind_config(std::vector<ConfigBinding>& bindings, CLI::Option* option,
                 const std::string& key, T& target) {
  bindings.push_back(
      {key, option, [&target, key](const std::string& value) {
         try {
           if constexpr (std::is_same_v<T, std::string>) {
             target = value;
           } else if constexpr (std::is_same_v<T, bool>) {
             target = value == "1" || value == "true" || value == "yes";
           } else if constexpr (std::is_integral_v<T>) {
             target = static_cast<T>(std::stoll(value));
           } else {
             target = static_cast<T>(std::stod(value));
           }
         } catch (const std::exception&) {
           throw aggcn::contract_error("config: bad value for '" + key +
                                       "': " + value);
         }
       }});
}

// Plain-text "key = value" lines; '#' starts a comment.
void apply_config_file(const std::string& path,
                       const std::vector<ConfigBinding>& bindings) {
  std::ifstream in(path);
  if (!in) throw aggcn::contract_error("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto strip = [](std::string s) {
      const auto first = s.find_first_not_of(" \t\r");
      if (first == std::string::npos) return std::string();
      const auto last = s.find_last_not_of(" \t\r");
      return s.substr(first, last - first + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw aggcn::contract_error("config: " + path + ":" +
                                  std::to_string(line_no) +
                                  ": expected key=value");
    }
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    bool found = false;
    for (const auto& binding : bindings) {
      if (binding.key != key) continue;
      found = true;
      if (binding.option->count() == 0) binding.apply(value);
      break;
    }
    if (!found) {
      throw aggcn::contract_error("config: " + path + ":" +
                                  std::to_string(line_no) + ": unknown key '" +
                                  key + "'");
    }
  }
}

// Flag bundle shared by commands that build a model.
struct TrainFlags {
  std::string train_path, dev_path, test_path;
  std::string synthetic_spec;
  std::string embeddings_path;
  std::string out_dir = ".";
  std::string pruning = "full";
  std::string negative_label;
  std::uint64_t seed = 0;

  int n_heads = 3;
  int blocks = 2;
  int l1 = 2;
  int l2 = 4;
  int d = 300;
  int d_word = 300;
  bool no_attention = false;

  int epochs = 100;
  double lr = 0.1;
  std::string optimizer = "sgd";
  double momentum = 0.9;
  double clip = 5.0;
  int batch_size = 1;
  double dropout = 0.0;
  int eval_every = 1;
};

int cmd_train(const TrainFlags& f) {
  if (f.train_path.empty() == f.synthetic_spec.empty()) {
    throw aggcn::contract_error(
        "train needs exactly one of --train or --synthetic");
  }
  const aggcn::PruneK pruning = parse_pruning(f.pruning);

  aggcn::TrainConfig tcfg;
  tcfg.epochs = f.epochs;
  tcfg.learning_rate = f.lr;
  if (f.optimizer == "sgd_momentum") {
    tcfg.momentum_enabled = true;
  } else if (f.optimizer != "sgd") {
    throw aggcn::contract_error("unknown optimizer '" + f.optimizer + "'");
  }
  tcfg.momentum = f.momentum;
  if (f.clip > 0) {
    tcfg.grad_clip_norm = f.clip;
  } else {
    tcfg.grad_clip_norm.reset();
  }
  tcfg.batch_size = f.batch_size;
  tcfg.seed = f.seed;
  tcfg.dropout_p = f.dropout;
  tcfg.eval_every = f.eval_every;
  tcfg.validate();

  aggcn::Corpus train_corpus, dev_corpus, test_corpus;
  if (!f.synthetic_spec.empty()) {
    const auto spec = parse_synthetic_spec(f.synthetic_spec, f.seed);
    const aggcn::Corpus all = aggcn::generate_synthetic(spec);
    std::tie(train_corpus, dev_corpus, test_corpus) =
        aggcn::split(all, 0.8, 0.1, 0.1, f.seed);
  } else {
    train_corpus = aggcn::read_corpus(f.train_path);
    if (!f.dev_path.empty()) dev_corpus = aggcn::read_corpus(f.dev_path);
    if (!f.test_path.empty()) test_corpus = aggcn::read_corpus(f.test_path);
  }
  if (train_corpus.instances.empty()) {
    throw aggcn::contract_error("training corpus is empty");
  }

  aggcn::ModelConfig mcfg;
  mcfg.n_heads = f.n_heads;
  mcfg.n_blocks = f.blocks;
  mcfg.l1 = f.l1;
  mcfg.l2 = f.l2;
  mcfg.d = f.d;
  mcfg.d_word = f.d_word;
  mcfg.entities =
      static_cast<int>(train_corpus.instances[0].entity_spans.size());
  mcfg.use_attention = !f.no_attention;
  mcfg.pruning = pruning;
  mcfg.labels = train_corpus.label_vocab;
  mcfg.validate();

  const std::optional<int> negative =
      resolve_negative_label(f.negative_label, mcfg.labels);
  train_corpus.negative_label = negative;
  dev_corpus.negative_label = negative;
  test_corpus.negative_label = negative;

  aggcn::Rng init_rng = aggcn::Rng(f.seed).derive("init");
  aggcn::AggcnModel model = [&]() {
    if (!f.embeddings_path.empty()) {
      aggcn::Rng embed_rng = aggcn::Rng(f.seed).derive("embed");
      const aggcn::Tensor table = aggcn::load_embeddings(
          f.embeddings_path, train_corpus.token_vocab, embed_rng);
      mcfg.d_word = static_cast<int>(table.cols());
      return aggcn::AggcnModel::init(mcfg, train_corpus.token_vocab, init_rng,
                                     &table);
    }
    return aggcn::AggcnModel::init(mcfg, train_corpus.token_vocab, init_rng);
  }();

  fs::create_directories(f.out_dir);
  const aggcn::Corpus* dev =
      dev_corpus.instances.empty() ? nullptr : &dev_corpus;

  aggcn::TrainResult result;
  try {
    result = aggcn::train(model, train_corpus, dev, tcfg, pruning);
  } catch (const aggcn::numeric_error& e) {
    std::cerr << "aggcn: " << e.what() << "\n";
    return kExitRuntime;
  }

  // best-dev parameters go into the checkpoint
  aggcn::load_parameter_values(model, result.best_params);

  const fs::path out(f.out_dir);
  {
    std::ofstream hist(out / "history.jsonl");
    for (const auto& rec : result.history) {
      ordered_json j;
      j["epoch"] = rec.epoch;
      j["train_loss"] = rec.train_loss;
      j["train_accuracy"] = rec.train_accuracy;
      if (rec.dev.has_value()) j["dev"] = eval_to_json(*rec.dev);
      hist << j.dump() << "\n";
    }
  }
  aggcn::save_checkpoint((out / "checkpoint.aggcn").string(), model);

  ordered_json metrics;
  metrics["seed"] = f.seed;
  metrics["epochs"] = tcfg.epochs;
  metrics["pruning"] = pruning_name(pruning);
  metrics["best_epoch"] = result.best_epoch;
  if (!result.history.empty()) {
    metrics["final_train_loss"] = result.history.back().train_loss;
    metrics["final_train_accuracy"] = result.history.back().train_accuracy;
  }
  if (dev != nullptr) {
    metrics["dev"] = eval_to_json(aggcn::evaluate(model, dev_corpus, negative,
                                                  pruning));
  }
  if (!test_corpus.instances.empty()) {
    metrics["test"] = eval_to_json(aggcn::evaluate(model, test_corpus,
                                                   negative, pruning));
  }
  {
    std::ofstream mf(out / "metrics.json");
    mf << metrics.dump(2) << "\n";
  }
  std::cout << metrics.dump(2) << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& negative_name, const std::string& pruning_flag,
             const std::string& out_dir) {
  const aggcn::AggcnModel model = aggcn::load_checkpoint(checkpoint_path);
  const aggcn::Corpus corpus = aggcn::read_corpus(data_path);
  const std::optional<int> negative =
      resolve_negative_label(negative_name, model.config.labels);
  const aggcn::PruneK pruning = pruning_flag.empty()
                                    ? model.config.pruning
                                    : parse_pruning(pruning_flag);

  const aggcn::EvalResult r = aggcn::evaluate(model, corpus, negative, pruning);
  print_eval(std::cout, r);

  fs::create_directories(out_dir);
  write_confusion_csv((fs::path(out_dir) / "confusion.csv").string(), r,
                      model.config.labels);
  return kExitOk;
}

int cmd_prune(const std::string& data_path, const std::string& pruning_flag,
              const std::vector<int>& diff) {
  const aggcn::Corpus corpus = aggcn::read_corpus(data_path);
  if (corpus.instances.empty()) {
    throw aggcn::contract_error("corpus is empty");
  }

  if (!diff.empty()) {
    if (diff.size() != 2) {
      throw aggcn::contract_error("--diff takes exactly two K values");
    }
    for (const auto& inst : corpus.instances) {
      const auto g = aggcn::link_sentence_roots(inst.graph);
      const auto kept1 = aggcn::prune_tree(g, inst.entity_spans, diff[0]);
      const auto kept2 = aggcn::prune_tree(g, inst.entity_spans, diff[1]);
      std::cout << inst.id << " k" << diff[0] << "->k" << diff[1] << " adds";
      bool any = false;
      for (int tok : kept2) {
        if (std::find(kept1.begin(), kept1.end(), tok) == kept1.end()) {
          std::cout << " " << tok << ":"
                    << g.tokens[static_cast<std::size_t>(tok) - 1];
          any = true;
        }
      }
      if (!any) std::cout << " nothing";
      std::cout << "\n";
    }
    return kExitOk;
  }

  const aggcn::PruneK pruning = parse_pruning(pruning_flag);
  double fraction_sum = 0.0;
  for (const auto& inst : corpus.instances) {
    const auto g = aggcn::link_sentence_roots(inst.graph);
    const auto kept = aggcn::prune_tree(g, inst.entity_spans, pruning);
    const double fraction =
        static_cast<double>(kept.size()) / static_cast<double>(g.size());
    fraction_sum += fraction;
    std::cout << inst.id << " kept=";
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (i > 0) std::cout << ",";
      std::cout << kept[i];
    }
    std::cout << " fraction=" << format_double(fraction) << "\n";
  }
  std::cout << "mean_kept_fraction="
            << format_double(fraction_sum /
                             static_cast<double>(corpus.instances.size()))
            << "\n";
  return kExitOk;
}

int cmd_attention(const std::string& checkpoint_path,
                  const std::string& data_path, const std::string& instance_id,
                  const std::string& out_dir) {
  const aggcn::AggcnModel model = aggcn::load_checkpoint(checkpoint_path);
  const aggcn::Corpus corpus = aggcn::read_corpus(data_path);
  const aggcn::Instance* instance = nullptr;
  for (const auto& inst : corpus.instances) {
    if (inst.id == instance_id) {
      instance = &inst;
      break;
    }
  }
  if (instance == nullptr) {
    throw aggcn::contract_error("unknown instance id '" + instance_id + "'");
  }

  const auto maps = aggcn::attention_maps(model, *instance);
  const auto prepared =
      aggcn::prepare_graph(*instance, model.config.pruning);
  const auto& tokens = prepared.graph.tokens;

  fs::create_directories(out_dir);
  const std::string stem = sanitize_for_filename(instance_id);
  for (const auto& entry : maps) {
    const fs::path path =
        fs::path(out_dir) / ("attention_" + stem + "_block" +
                             std::to_string(entry.block) + "_head" +
                             std::to_string(entry.head) + ".csv");
    std::ofstream out(path);
    if (!out) throw aggcn::parse_error("cannot write " + path.string());
    out << "token";
    for (const auto& t : tokens) out << "," << csv_field(t);
    out << "\n";
    for (std::size_t i = 0; i < entry.n; ++i) {
      out << csv_field(tokens[i]);
      for (std::size_t j = 0; j < entry.n; ++j) {
        out << "," << format_double(entry.weights[i * entry.n + j]);
      }
      out << "\n";
    }
    std::cout << path.string() << "\n";
  }
  std::cout << "wrote " << maps.size() << " attention matrices\n";
  return kExitOk;
}

int cmd_synth(const std::string& spec_text, std::uint64_t seed,
              const std::string& out_file) {
  const auto spec = parse_synthetic_spec(spec_text, seed);
  const aggcn::Corpus corpus = aggcn::generate_synthetic(spec);
  aggcn::write_corpus(corpus, out_file);
  std::cout << "wrote " << corpus.instances.size() << " instances to "
            << out_file << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-guided graph convolutional relation extraction"};
  app.require_subcommand(1);

  TrainFlags tf;
  std::string train_config_path;
  std::vector<ConfigBinding> bindings;
  CLI::App* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", train_config_path,
                    "key=value file; command-line flags take precedence");
  const auto opt = [&](const std::string& name, auto& target,
                       const std::string& help) {
    CLI::Option* o = train->add_option(name, target, help);
    bind_config(bindings, o, name.substr(2), target);
    return o;
  };
  opt("--train", tf.train_path, "Training corpus (JSONL)");
  opt("--dev", tf.dev_path, "Dev corpus (JSONL)");
  opt("--test", tf.test_path, "Test corpus (JSONL)");
  opt("--synthetic", tf.synthetic_spec,
      "Synthetic corpus spec ('default' or n=..,labels=..,len=a..b,off=..); "
      "auto-split 80/10/10");
  opt("--embeddings", tf.embeddings_path, "Pretrained embedding text file");
  opt("--out", tf.out_dir, "Output directory");
  opt("--seed", tf.seed, "Root random seed");
  opt("--n-heads", tf.n_heads, "Attention heads N");
  opt("--blocks", tf.blocks, "Block count M");
  opt("--L1", tf.l1, "Sub-layers in the first dense group");
  opt("--L2", tf.l2, "Sub-layers in the second dense group");
  opt("--d", tf.d, "Block width d");
  opt("--d-word", tf.d_word, "Embedding width (overridden by --embeddings)");
  bind_config(bindings,
              train->add_flag("--no-attention", tf.no_attention,
                              "Disable the attention guided layer "
                              "(GCN baseline)"),
              "no-attention", tf.no_attention);
  opt("--pruning", tf.pruning, "full, k0, k1, ...");
  opt("--negative-label", tf.negative_label,
      "Label excluded from micro/macro F1");
  opt("--epochs", tf.epochs, "Training epochs");
  opt("--lr", tf.lr, "Learning rate");
  opt("--optimizer", tf.optimizer, "sgd or sgd_momentum");
  opt("--momentum", tf.momentum, "Momentum coefficient");
  opt("--clip", tf.clip, "Global grad-norm clip (0 disables)");
  opt("--batch-size", tf.batch_size, "Gradient accumulation count");
  opt("--dropout", tf.dropout, "Dropout on block inputs");
  opt("--eval-every", tf.eval_every, "Dev-eval period (epochs)");

  std::string eval_checkpoint, eval_data, eval_negative, eval_pruning,
      eval_out = ".";
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")
      ->required();
  eval->add_option("--data", eval_data, "Corpus (JSONL)")->required();
  eval->add_option("--negative-label", eval_negative,
                   "Label excluded from micro/macro F1");
  eval->add_option("--pruning", eval_pruning,
                   "Override the checkpoint's pruning mode");
  eval->add_option("--out", eval_out, "Directory for confusion.csv");

  std::string prune_data, prune_mode = "full";
  std::vector<int> prune_diff;
  CLI::App* prune = app.add_subcommand("prune", "Inspect hard pruning");
  prune->add_option("--data", prune_data, "Corpus (JSONL)")->required();
  prune->add_option("--pruning", prune_mode, "full, k0, k1, ...");
  prune->add_option("--diff", prune_diff,
                    "Two K values; prints tokens added by the second")
      ->expected(2);

  std::string attn_checkpoint, attn_data, attn_id, attn_out = ".";
  CLI::App* attention =
      app.add_subcommand("attention", "Export attention matrices as CSV");
  attention->add_option("--checkpoint", attn_checkpoint, "Checkpoint file")
      ->required();
  attention->add_option("--data", attn_data, "Corpus (JSONL)")->required();
  attention->add_option("--id", attn_id, "Instance id")->required();
  attention->add_option("--out", attn_out, "Output directory");

  std::string synth_spec = "default", synth_out;
  std::uint64_t synth_seed = 0;
  CLI::App* synth =
      app.add_subcommand("synth", "Generate a synthetic corpus (JSONL)");
  synth->add_option("--synthetic", synth_spec, "Spec; see train --synthetic");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) {
      if (!train_config_path.empty()) {
        apply_config_file(train_config_path, bindings);
      }
      return cmd_train(tf);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_checkpoint, eval_data, eval_negative, eval_pruning,
                      eval_out);
    }
    if (prune->parsed()) return cmd_prune(prune_data, prune_mode, prune_diff);
    if (attention->parsed()) {
      return cmd_attention(attn_checkpoint, attn_data, attn_id, attn_out);
    }
    if (synth->parsed()) return cmd_synth(synth_spec, synth_seed, synth_out);
  } catch (const aggcn::numeric_error& e) {
    std::cerr << "aggcn: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const aggcn::contract_error& e) {
    std::cerr << "aggcn: " << e.what() << "\n";
    return kExitUsage;
  } catch (const aggcn::shape_error& e) {
    std::cerr << "aggcn: " << e.what() << "\n";
    return kExitUsage;
  } catch (const aggcn::structure_error& e) {
    std::cerr << "aggcn: " << e.what() << "\n";
    return kExitUsage;
  } catch (const aggcn::parse_error& e) {
    std::cerr << "aggcn: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "aggcn: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
