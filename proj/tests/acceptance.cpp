// Acceptance suite. Each test case checks one criterion end to end and
// prints a PASS/FAIL line so the run reads as a checklist.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "aggcn/aggcn.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using aggcn::AggcnModel;
using aggcn::BlockParams;
using aggcn::Corpus;
using aggcn::Instance;
using aggcn::ModelConfig;
using aggcn::Rng;
using aggcn::Tensor;
using aggcn::TrainConfig;

namespace {

void report(const std::string& criterion, bool ok, const std::string& detail) {
  std::cout << "[" << criterion << "] " << (ok ? "PASS" : "FAIL") << " - "
            << detail << "\n";
}

double seconds_since(
    const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string command =
      std::string(AGGCN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> small_vocab(int n_tokens) {
  std::vector<std::string> v{"<PAD>", "<UNK>"};
  for (int i = 0; i < n_tokens; ++i) v.push_back("w" + std::to_string(i));
  return v;
}

// Training run used by AC-5 and AC-6: seeded 25-epoch rounds up to a fixed
// epoch budget, stopping once the tracked accuracy clears `target`. Returns
// the best train/dev accuracy seen.
struct RunOutcome {
  double best_train_accuracy = 0.0;
  double best_dev_accuracy = 0.0;
  int epochs_run = 0;
};

RunOutcome run_experiment(const Corpus& train_corpus, const Corpus* dev,
                          ModelConfig mcfg, int epoch_budget,
                          std::uint64_t seed, double target) {
  mcfg.labels = train_corpus.label_vocab;
  Rng init_rng = Rng(seed).derive("init");
  AggcnModel model =
      AggcnModel::init(mcfg, train_corpus.token_vocab, init_rng);

  RunOutcome outcome;
  const int round_epochs = 25;
  for (int round = 0; round * round_epochs < epoch_budget; ++round) {
    TrainConfig tcfg;
    tcfg.epochs = std::min(round_epochs, epoch_budget - outcome.epochs_run);
    tcfg.learning_rate = 0.1;
    tcfg.seed = seed + static_cast<std::uint64_t>(round);
    tcfg.eval_every = 5;
    const auto result =
        aggcn::train(model, train_corpus, dev, tcfg, mcfg.pruning);
    outcome.epochs_run += tcfg.epochs;
    for (const auto& rec : result.history) {
      outcome.best_train_accuracy =
          std::max(outcome.best_train_accuracy, rec.train_accuracy);
      if (rec.dev.has_value()) {
        outcome.best_dev_accuracy =
            std::max(outcome.best_dev_accuracy, rec.dev->accuracy);
      }
    }
    const double tracked = dev != nullptr ? outcome.best_dev_accuracy
                                          : outcome.best_train_accuracy;
    if (tracked >= target) break;
  }
  return outcome;
}

}  // namespace

TEST_CASE("AC-1 gradient soundness of the full model") {
  const auto start = std::chrono::steady_clock::now();

  ModelConfig config;
  config.n_heads = 2;
  config.n_blocks = 2;
  config.l1 = 2;
  config.l2 = 4;
  config.d = 8;
  config.d_word = 6;
  config.entities = 2;
  config.labels = {"a", "b", "c"};

  Rng rng(20240601);
  AggcnModel model = AggcnModel::init(config, small_vocab(10), rng);

  // random n=6 instance over a random tree
  Instance inst;
  inst.id = "ac1";
  inst.graph = oracle::graph_from_heads(oracle::random_tree_heads(6, rng));
  for (auto& tok : inst.graph.tokens) {
    tok = "w" + std::to_string(rng.uniform_int(0, 9));
  }
  inst.entity_spans = {{2, 2}, {5, 5}};
  inst.label = 1;

  auto f = [&]() {
    return aggcn::cross_entropy_logits(aggcn::classify(model, inst), 1);
  };
  const auto report_fd =
      aggcn::finite_diff_check(f, model.named_parameters(), 1e-5, 1e-4);

  const double elapsed = seconds_since(start);
  const bool ok = report_fd.all_ok && report_fd.max_error < 1e-4 &&
                  elapsed < 30.0;
  std::size_t n_params = 0;
  for (const auto& p : model.parameters()) n_params += p.numel();
  report("AC-1", ok,
         "max relative error " + std::to_string(report_fd.max_error) +
             " over " + std::to_string(n_params) + " parameters in " +
             std::to_string(elapsed) + "s");
  for (const auto& entry : report_fd.params) {
    INFO(entry.name << " err " << entry.max_error);
    CHECK(entry.ok);
  }
  REQUIRE(ok);
}

TEST_CASE("AC-2 attention matrices are row-stochastic and gated by block") {
  Rng rng(777);
  bool shapes_ok = true;
  double worst_row_gap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const std::size_t d = static_cast<std::size_t>(rng.uniform_int(2, 10));
    const Tensor h = Tensor::random_uniform(n, d, -2, 2, rng);
    const auto head = aggcn::AttentionHeadParams::init(d, rng);
    const Tensor a = aggcn::attention_adjacency(h, head);
    shapes_ok = shapes_ok && a.rows() == n && a.cols() == n;
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += a.at(i, j);
      worst_row_gap = std::max(worst_row_gap, std::abs(sum - 1.0));
    }
  }

  // M=1 model: no attention maps at all
  ModelConfig config;
  config.n_heads = 2;
  config.n_blocks = 1;
  config.l1 = 2;
  config.l2 = 4;
  config.d = 8;
  config.d_word = 4;
  config.labels = {"a", "b"};
  AggcnModel single = AggcnModel::init(config, small_vocab(6), rng);
  Instance inst;
  inst.id = "ac2";
  inst.graph = oracle::graph_from_heads(oracle::random_tree_heads(5, rng));
  for (auto& tok : inst.graph.tokens) tok = "w0";
  inst.entity_spans = {{1, 1}, {3, 3}};
  inst.label = 0;
  const bool single_block_empty =
      aggcn::attention_maps(single, inst).empty();

  const bool ok =
      shapes_ok && worst_row_gap < 1e-9 && single_block_empty;
  report("AC-2", ok,
         "100 seeded inputs; worst |row sum - 1| = " +
             std::to_string(worst_row_gap) +
             (single_block_empty ? "; M=1 exports no maps"
                                 : "; M=1 unexpectedly exported maps"));
  REQUIRE(ok);
}

TEST_CASE("AC-3 dense sub-layer dimension schedule at d=300, L=3") {
  Rng rng(3);
  const auto params = aggcn::DenseLayerParams::init(300, 3, rng);
  const bool widths_ok =
      params.d_hidden == 100 &&
      params.input_widths() == std::vector<std::size_t>{300, 400, 500};

  const Tensor h = Tensor::random_uniform(3, 300, -1, 1, rng);
  const Tensor out = aggcn::dense_layer(h, Tensor::identity(3), params);
  const bool output_ok = out.rows() == 3 && out.cols() == 300;

  const bool ok = widths_ok && output_ok;
  report("AC-3", ok,
         "sub-layer input widths 300/400/500, output width " +
             std::to_string(out.cols()));
  REQUIRE(ok);
}

TEST_CASE("AC-4 pruning equals the BFS oracle on 1000 random trees") {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(4444);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(2, 12);
    const aggcn::DependencyGraph g =
        oracle::graph_from_heads(oracle::random_tree_heads(n, rng));

    // 2 or 3 distinct single-token entities
    const int wanted = n >= 3 && rng.uniform_int(0, 1) == 1 ? 3 : 2;
    std::vector<int> picks;
    for (int i = 1; i <= n; ++i) picks.push_back(i);
    aggcn::shuffle(picks, rng);
    std::vector<aggcn::Span> entities;
    for (int e = 0; e < wanted; ++e) {
      entities.push_back({picks[static_cast<std::size_t>(e)],
                          picks[static_cast<std::size_t>(e)]});
    }

    std::vector<int> previous;
    for (int k = 0; k <= 3; ++k) {
      const auto kept = aggcn::prune_tree(g, entities, k);
      if (kept != oracle::brute_force_prune(g, entities, k)) ++mismatches;
      if (k > 0 && !std::includes(kept.begin(), kept.end(), previous.begin(),
                                  previous.end())) {
        ++mismatches;
      }
      previous = kept;
    }
    const auto full = aggcn::prune_tree(g, entities, aggcn::PruneK{});
    if (static_cast<int>(full.size()) != n) ++mismatches;
  }
  const double elapsed = seconds_since(start);
  const bool ok = mismatches == 0 && elapsed < 10.0;
  report("AC-4", ok,
         std::to_string(mismatches) + " mismatches over 1000 trees, K in "
         "{0,1,2,3}, in " + std::to_string(elapsed) + "s");
  REQUIRE(ok);
}

TEST_CASE("AC-5 default model overfits the synthetic cue task") {
  const auto start = std::chrono::steady_clock::now();

  aggcn::SyntheticSpec spec;
  spec.n_instances = 200;
  spec.n_labels = 5;
  spec.len_min = 8;
  spec.len_max = 12;
  spec.off_path_distance = 0;
  spec.seed = 5;
  const Corpus corpus = aggcn::generate_synthetic(spec);

  // default architecture (N=3, M=2, L1=2, L2=4) at the desk-scale width
  ModelConfig mcfg;
  mcfg.n_heads = 3;
  mcfg.n_blocks = 2;
  mcfg.l1 = 2;
  mcfg.l2 = 4;
  mcfg.d = 24;
  mcfg.d_word = 24;
  const RunOutcome outcome = run_experiment(corpus, nullptr, mcfg, 200, 5,
                                            0.95);

  const double elapsed = seconds_since(start);
  const bool ok = outcome.best_train_accuracy >= 0.95 && elapsed < 120.0;
  report("AC-5", ok,
         "train accuracy " + std::to_string(outcome.best_train_accuracy) +
             " after " + std::to_string(outcome.epochs_run) +
             " of 200 epochs in " + std::to_string(elapsed) + "s");
  REQUIRE(ok);
}

TEST_CASE("AC-6 soft pruning beats hard pruning when the cue is off-path") {
  const auto start = std::chrono::steady_clock::now();

  double aggcn_sum = 0.0, gcn_sum = 0.0, majority_sum = 0.0;
  const std::vector<std::uint64_t> seeds{101, 202, 303};
  for (const auto seed : seeds) {
    aggcn::SyntheticSpec spec;
    spec.n_instances = 250;
    spec.n_labels = 5;
    spec.len_min = 8;
    spec.len_max = 12;
    spec.off_path_distance = 2;  // invisible after K<=1 pruning
    spec.seed = seed;
    const Corpus all = aggcn::generate_synthetic(spec);
    const auto [train_part, dev_part, test_part] =
        aggcn::split(all, 0.8, 0.2, 0.0, seed);

    // measured majority baseline on the dev split
    std::vector<int> counts(static_cast<std::size_t>(spec.n_labels), 0);
    for (const auto& inst : dev_part.instances) {
      counts[static_cast<std::size_t>(inst.label)]++;
    }
    const double majority =
        static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
        static_cast<double>(dev_part.instances.size());

    ModelConfig full_cfg;
    full_cfg.n_heads = 3;
    full_cfg.n_blocks = 2;
    full_cfg.l1 = 2;
    full_cfg.l2 = 4;
    full_cfg.d = 24;
    full_cfg.d_word = 24;
    full_cfg.pruning = {};  // FULL trees
    const RunOutcome soft =
        run_experiment(train_part, &dev_part, full_cfg, 200, seed, 0.95);

    ModelConfig gcn_cfg;
    gcn_cfg.n_heads = 1;
    gcn_cfg.n_blocks = 2;
    gcn_cfg.l1 = 1;
    gcn_cfg.l2 = 1;
    gcn_cfg.d = 24;
    gcn_cfg.d_word = 24;
    gcn_cfg.use_attention = false;
    gcn_cfg.pruning = 0;  // K=0 hard pruning hides the cue by construction
    const RunOutcome hard =
        run_experiment(train_part, &dev_part, gcn_cfg, 200, seed, 0.95);

    aggcn_sum += soft.best_dev_accuracy;
    gcn_sum += hard.best_dev_accuracy;
    majority_sum += majority;
  }
  const double n_seeds = static_cast<double>(seeds.size());
  const double aggcn_mean = aggcn_sum / n_seeds;
  const double gcn_mean = gcn_sum / n_seeds;
  const double majority_mean = majority_sum / n_seeds;

  const double elapsed = seconds_since(start);
  const bool ok = aggcn_mean >= 0.90 &&
                  std::abs(gcn_mean - majority_mean) <= 0.10 &&
                  aggcn_mean - gcn_mean >= 0.20;
  report("AC-6", ok,
         "mean dev accuracy: full-tree model " + std::to_string(aggcn_mean) +
             ", pruned baseline " + std::to_string(gcn_mean) +
             ", majority " + std::to_string(majority_mean) + " (3 seeds, " +
             std::to_string(elapsed) + "s)");
  REQUIRE(ok);
}

TEST_CASE("AC-7 reduced model equals an independent convolution stack") {
  Rng rng(7007);
  const std::size_t d = 6;
  std::vector<BlockParams> blocks;
  for (int m = 0; m < 2; ++m) {
    BlockParams b = BlockParams::init(d, 1, {1, 1}, rng);
    b.w_comb = Tensor::identity(d);
    b.b_comb = Tensor::zeros(1, d);
    blocks.push_back(std::move(b));
  }

  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(2, 9);
    const aggcn::DependencyGraph g =
        oracle::graph_from_heads(oracle::random_tree_heads(n, rng));
    const aggcn::AdjMatrix adj = aggcn::build_adjacency(g);
    const oracle::Mat x =
        oracle::random_mat(static_cast<std::size_t>(n), d, rng);

    aggcn::EncodeOptions opts;
    opts.use_attention = false;
    const Tensor got = aggcn::encode(
        Tensor::from(static_cast<std::size_t>(n), d, x.v), adj.to_tensor(),
        blocks, opts);

    oracle::Mat a(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    a.v = adj.entries;
    oracle::Mat h = x;
    for (const BlockParams& b : blocks) {
      for (const auto& group : b.dense_groups[0]) {
        const auto& sub = group.sublayers[0];
        oracle::Mat w(sub.w.rows(), sub.w.cols());
        w.v = sub.w.data();
        h = oracle::gcn_layer(h, a, w, sub.b.data());
      }
    }
    for (std::size_t i = 0; i < h.v.size(); ++i) {
      worst = std::max(worst, std::abs(h.v[i] - got.data()[i]));
    }
  }
  const bool ok = worst < 1e-8;
  report("AC-7", ok,
         "max |model - reference| = " + std::to_string(worst) +
             " over 50 random instances");
  REQUIRE(ok);
}

TEST_CASE("AC-8 metrics reproduce the hand-computed confusion example") {
  // gold [A, A, B, None], pred [A, B, B, A]; None negative
  const aggcn::EvalResult r =
      aggcn::score_predictions({0, 0, 1, 2}, {0, 1, 1, 0}, 3, 2);
  const bool hand_ok = std::abs(r.precision - 0.5) < 1e-12 &&
                       std::abs(r.recall - 2.0 / 3.0) < 1e-12 &&
                       std::abs(r.micro_f1 - 0.5714) < 1e-4;

  const aggcn::EvalResult perfect =
      aggcn::score_predictions({0, 1, 2, 1}, {0, 1, 2, 1}, 3, 2);
  const bool perfect_ok = perfect.micro_f1 == 1.0 && perfect.accuracy == 1.0;

  const bool ok = hand_ok && perfect_ok;
  report("AC-8", ok,
         "P=" + std::to_string(r.precision) + " R=" + std::to_string(r.recall) +
             " micro-F1=" + std::to_string(r.micro_f1) +
             "; perfect run scores 1");
  REQUIRE(ok);
}

TEST_CASE("AC-9 byte-identical reruns and permutation equivariance") {
  // two identical cmd_train invocations
  const fs::path base = fs::temp_directory_path() /
                        ("aggcn-ac9-" + std::to_string(::getpid()));
  fs::create_directories(base);
  const std::string flags =
      "train --synthetic n=40,labels=3,len=6..9,off=0 --epochs 3 --d 8 "
      "--d-word 8 --seed 17 --out ";
  const int rc1 = run_cli(flags + (base / "a").string());
  const int rc2 = run_cli(flags + (base / "b").string());
  const bool files_ok =
      rc1 == 0 && rc2 == 0 &&
      slurp(base / "a" / "history.jsonl") ==
          slurp(base / "b" / "history.jsonl") &&
      slurp(base / "a" / "checkpoint.aggcn") ==
          slurp(base / "b" / "checkpoint.aggcn") &&
      !slurp(base / "a" / "checkpoint.aggcn").empty();
  fs::remove_all(base);

  // permutation equivariance of encode on 20 random permutations
  Rng rng(909);
  const std::size_t n = 6, d = 8;
  const std::vector<BlockParams> blocks{
      BlockParams::init(d, 2, {2, 4}, rng),
      BlockParams::init(d, 2, {2, 4}, rng)};
  const Tensor x = Tensor::random_uniform(n, d, -1, 1, rng);
  const aggcn::DependencyGraph g = oracle::graph_from_heads(
      oracle::random_tree_heads(static_cast<int>(n), rng));
  const Tensor a = aggcn::build_adjacency(g).to_tensor();

  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    aggcn::shuffle(perm, rng);
    Tensor p = Tensor::zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) p.at(i, perm[i]) = 1.0;

    const Tensor lhs = aggcn::encode(
        aggcn::matmul(p, x),
        aggcn::matmul(aggcn::matmul(p, a), aggcn::transpose(p)), blocks);
    const Tensor rhs = aggcn::matmul(p, aggcn::encode(x, a, blocks));
    for (std::size_t i = 0; i < lhs.numel(); ++i) {
      worst = std::max(worst, std::abs(lhs.data()[i] - rhs.data()[i]));
    }
  }
  const bool perm_ok = worst < 1e-8;

  const bool ok = files_ok && perm_ok;
  report("AC-9", ok,
         std::string(files_ok ? "reruns byte-identical" : "rerun outputs differ") +
             "; max equivariance gap " + std::to_string(worst));
  REQUIRE(ok);
}
