// End-to-end checks of the command-line surface: exit codes, file outputs,
// and byte-level determinism.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("aggcn-cli-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunResult run_cli(const std::string& args, const TempDir& dir) {
  const fs::path out_file = dir.path / "stdout.txt";
  const fs::path err_file = dir.path / "stderr.txt";
  const std::string command = std::string(AGGCN_CLI_PATH) + " " + args + " > " +
                              out_file.string() + " 2> " + err_file.string();
  const int status = std::system(command.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

const std::string kTinyTrain =
    "--synthetic n=40,labels=3,len=5..8,off=0 --epochs 3 --d 8 --d-word 8";

}  // namespace

TEST_CASE("cli train writes checkpoint, history, and metrics") {
  TempDir dir;
  const fs::path out = dir.path / "run";
  const RunResult r =
      run_cli("train " + kTinyTrain + " --seed 3 --out " + out.string(), dir);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(out / "checkpoint.aggcn"));
  REQUIRE(fs::exists(out / "history.jsonl"));
  REQUIRE(fs::exists(out / "metrics.json"));

  // history: one record per epoch
  std::ifstream hist(out / "history.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(hist, line)) ++lines;
  REQUIRE(lines == 3);
}

TEST_CASE("cli train is byte-deterministic for a fixed seed") {
  TempDir dir;
  const fs::path a = dir.path / "a";
  const fs::path b = dir.path / "b";
  REQUIRE(run_cli("train " + kTinyTrain + " --seed 11 --out " + a.string(),
                  dir)
              .exit_code == 0);
  REQUIRE(run_cli("train " + kTinyTrain + " --seed 11 --out " + b.string(),
                  dir)
              .exit_code == 0);
  REQUIRE(slurp(a / "history.jsonl") == slurp(b / "history.jsonl"));
  REQUIRE(slurp(a / "checkpoint.aggcn") == slurp(b / "checkpoint.aggcn"));
  REQUIRE(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
}

TEST_CASE("cli config validation") {
  TempDir dir;
  SECTION("indivisible width is rejected before training") {
    const RunResult r = run_cli(
        "train --synthetic default --d 301 --L2 4 --out " +
            (dir.path / "x").string(),
        dir);
    REQUIRE(r.exit_code == 2);
  }
  SECTION("defaults with no shape flags are N=3, M=2, L1=2, L2=4, d=300") {
    // epochs 0 skips the training loop but still writes the checkpoint
    const fs::path out = dir.path / "y";
    const RunResult r = run_cli(
        "train --synthetic n=10,labels=3,len=5..6,off=0 --epochs 0 --out " +
            out.string(),
        dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);

    const std::string bytes = slurp(out / "checkpoint.aggcn");
    REQUIRE(bytes.size() > 10);
    REQUIRE(bytes.substr(0, 6) == "AGGCN1");
    std::uint32_t json_len = 0;
    std::memcpy(&json_len, bytes.data() + 6, sizeof json_len);
    const auto cfg = nlohmann::json::parse(bytes.substr(10, json_len));
    REQUIRE(cfg.at("n_heads") == 3);
    REQUIRE(cfg.at("n_blocks") == 2);
    REQUIRE(cfg.at("l1") == 2);
    REQUIRE(cfg.at("l2") == 4);
    REQUIRE(cfg.at("d") == 300);
    REQUIRE(cfg.at("pruning") == "full");
  }
  SECTION("unknown flags are usage errors") {
    REQUIRE(run_cli("train --definitely-not-a-flag 1", dir).exit_code == 2);
  }
  SECTION("train needs a corpus source") {
    REQUIRE(run_cli("train --epochs 1", dir).exit_code == 2);
  }
}

TEST_CASE("cli eval") {
  TempDir dir;
  const fs::path run = dir.path / "run";
  const fs::path corpus = dir.path / "c.jsonl";
  REQUIRE(run_cli("train " + kTinyTrain + " --seed 5 --out " + run.string(),
                  dir)
              .exit_code == 0);
  REQUIRE(run_cli("synth --synthetic n=12,labels=3,len=5..8,off=0 --seed 6 "
                  "--out " +
                      corpus.string(),
                  dir)
              .exit_code == 0);

  SECTION("missing checkpoint exits 2") {
    const RunResult r = run_cli(
        "eval --checkpoint /nonexistent.aggcn --data " + corpus.string(), dir);
    REQUIRE(r.exit_code == 2);
  }
  SECTION("repeated evaluation is byte-identical") {
    const std::string cmd = "eval --checkpoint " +
                            (run / "checkpoint.aggcn").string() + " --data " +
                            corpus.string() + " --out " +
                            (dir.path / "e").string();
    const RunResult r1 = run_cli(cmd, dir);
    const std::string confusion1 = slurp(dir.path / "e" / "confusion.csv");
    const RunResult r2 = run_cli(cmd, dir);
    const std::string confusion2 = slurp(dir.path / "e" / "confusion.csv");
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);
    REQUIRE(r1.out == r2.out);
    REQUIRE(confusion1 == confusion2);
    REQUIRE(r1.out.find("accuracy") != std::string::npos);
  }
}

TEST_CASE("cli prune") {
  TempDir dir;
  const fs::path corpus = dir.path / "c.jsonl";
  REQUIRE(run_cli("synth --synthetic n=15,labels=3,len=5..8,off=1 --seed 8 "
                  "--out " +
                      corpus.string(),
                  dir)
              .exit_code == 0);

  SECTION("FULL keeps every token in every instance") {
    const RunResult r =
        run_cli("prune --data " + corpus.string() + " --pruning full", dir);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("mean_kept_fraction=1\n") != std::string::npos);
  }
  SECTION("k-pruning reports a smaller kept fraction") {
    const RunResult r =
        run_cli("prune --data " + corpus.string() + " --pruning k0", dir);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("mean_kept_fraction=1\n") == std::string::npos);
  }
  SECTION("diff lists the tokens added between two K values") {
    const RunResult r =
        run_cli("prune --data " + corpus.string() + " --diff 0 1", dir);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("k0->k1 adds") != std::string::npos);
  }
  SECTION("bad pruning mode exits 2") {
    REQUIRE(run_cli("prune --data " + corpus.string() + " --pruning qq", dir)
                .exit_code == 2);
  }
}

TEST_CASE("cli attention export") {
  TempDir dir;
  const fs::path run = dir.path / "run";
  const fs::path corpus = dir.path / "c.jsonl";
  REQUIRE(run_cli("synth --synthetic n=10,labels=3,len=6..8,off=0 --seed 9 "
                  "--out " +
                      corpus.string(),
                  dir)
              .exit_code == 0);
  REQUIRE(run_cli("train --train " + corpus.string() +
                      " --epochs 1 --d 8 --d-word 8 --n-heads 2 --blocks 2 "
                      "--seed 9 --out " +
                      run.string(),
                  dir)
              .exit_code == 0);

  SECTION("unknown instance id exits 2") {
    const RunResult r = run_cli(
        "attention --checkpoint " + (run / "checkpoint.aggcn").string() +
            " --data " + corpus.string() + " --id nope --out " +
            (dir.path / "a").string(),
        dir);
    REQUIRE(r.exit_code == 2);
  }
  SECTION("writes one matrix per (block >= 2, head); rows sum to 1") {
    const fs::path out = dir.path / "attn";
    const RunResult r = run_cli(
        "attention --checkpoint " + (run / "checkpoint.aggcn").string() +
            " --data " + corpus.string() + " --id syn-0 --out " + out.string(),
        dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(out)) {
      files.push_back(entry.path());
    }
    REQUIRE(files.size() == 2);  // N=2 heads, block 2 only

    for (const auto& file : files) {
      std::ifstream in(file);
      std::string header;
      REQUIRE(std::getline(in, header));
      const std::size_t n_cols =
          static_cast<std::size_t>(
              std::count(header.begin(), header.end(), ',')) +
          1;
      std::string line;
      std::size_t n_rows = 0;
      while (std::getline(in, line)) {
        ++n_rows;
        std::stringstream ss(line);
        std::string cell;
        REQUIRE(std::getline(ss, cell, ','));  // token label
        double sum = 0.0;
        while (std::getline(ss, cell, ',')) sum += std::stod(cell);
        REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
      }
      REQUIRE(n_rows + 1 == n_cols);  // corner cell
    }
  }
}

TEST_CASE("cli synth determinism") {
  TempDir dir;
  const fs::path a = dir.path / "a.jsonl";
  const fs::path b = dir.path / "b.jsonl";
  REQUIRE(run_cli("synth --synthetic default --seed 4 --out " + a.string(),
                  dir)
              .exit_code == 0);
  REQUIRE(run_cli("synth --synthetic default --seed 4 --out " + b.string(),
                  dir)
              .exit_code == 0);
  REQUIRE(slurp(a) == slurp(b));
  REQUIRE(!slurp(a).empty());
}

TEST_CASE("cli config file with flag overrides") {
  TempDir dir;
  const fs::path cfg = dir.path / "run.cfg";
  {
    std::ofstream out(cfg);
    out << "d=8\nd-word=8\nepochs=2\nseed=21\n";
  }
  const fs::path out1 = dir.path / "r1";
  const fs::path out2 = dir.path / "r2";
  // config file alone
  REQUIRE(run_cli("train --synthetic n=20,labels=3,len=5..7,off=0 --config " +
                      cfg.string() + " --out " + out1.string(),
                  dir)
              .exit_code == 0);
  // flag overrides the config's epoch count
  REQUIRE(run_cli("train --synthetic n=20,labels=3,len=5..7,off=0 --config " +
                      cfg.string() + " --epochs 4 --out " + out2.string(),
                  dir)
              .exit_code == 0);

  auto count_lines = [](const fs::path& p) {
    std::ifstream in(p);
    int n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
  };
  REQUIRE(count_lines(out1 / "history.jsonl") == 2);
  REQUIRE(count_lines(out2 / "history.jsonl") == 4);
}
