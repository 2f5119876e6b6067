#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

#include "cw/pipeline.hpp"

using namespace cw;
namespace fs = std::filesystem;

namespace {

const char* cli() { return CWDET_CLI_PATH; }

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "cwdet_cli_out.txt";
  const std::string cmd = std::string(cli()) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(raw);
  std::ifstream is(log);
  std::string line;
  while (std::getline(is, line)) {
    r.output += line;
    r.output += '\n';
  }
  return r;
}

struct CliWorld {
  fs::path root;
  std::string data_dir;
  std::string backbone_dir;

  CliWorld() {
    root = fs::temp_directory_path() / "cwdet_cli_world";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string common = " --out-root " + root.string() + " --seed 3";
    RunResult gen = run("gen-synth --name data" + common +
                        " --train-per-wl 45 --dev-per-wl 15 --test-per-lang 24 --mlm-per-lang 24");
    REQUIRE(gen.exit_code == 0);
    data_dir = (root / "data").string();
    RunResult pb = run("pretrain-backbone --name bb" + common + " --data " + data_dir +
                       " --max-len 16 --epochs 1 --lr 2e-3");
    REQUIRE(pb.exit_code == 0);
    backbone_dir = (root / "bb").string();
  }
};

CliWorld& cli_world() {
  static CliWorld w;
  return w;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("no-such-command").exit_code == 2);
  CHECK(run("").exit_code == 2);
  CHECK(run("evaluate --bogus-flag 1").exit_code == 2);
  CHECK(run("--help").exit_code == 0);
  CHECK(run("gen-synth --help").exit_code == 0);
}

TEST_CASE("validation failures exit 1 with a machine-parsable category") {
  CliWorld& w = cli_world();
  // duplicate run directory
  RunResult dup = run("gen-synth --name data --out-root " + w.root.string());
  CHECK(dup.exit_code == 1);
  CHECK(dup.output.find("error validation:") != std::string::npos);
  // impossible generator configuration
  RunResult bad = run("gen-synth --name bad-rate --out-root " + w.root.string() + " --cw-rate 0.95");
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("error config:") != std::string::npos);
  // missing input directory
  RunResult missing = run("pretrain-backbone --name nope --out-root " + w.root.string() +
                          " --data /definitely/not/here");
  CHECK(missing.exit_code == 1);
  CHECK(missing.output.rfind("error ", 0) == 0);
}

TEST_CASE("training and evaluation pipeline runs end to end") {
  CliWorld& w = cli_world();
  const std::string common = " --out-root " + w.root.string() + " --seed 3";

  RunResult ta = run("train-ta --name ta-ar" + common + " --backbone " + w.backbone_dir + " --data " +
                     w.data_dir + " --lang ar --epochs 2 --lr 2e-2 --max-len 16");
  REQUIRE(ta.exit_code == 0);
  CHECK(fs::exists(w.root / "ta-ar" / "ta.artifact"));
  CHECK(fs::exists(w.root / "ta-ar" / "metrics.tsv"));
  CHECK(fs::exists(w.root / "ta-ar" / "manifest.json"));

  RunResult ta2 = run("train-ta --name ta-en" + common + " --backbone " + w.backbone_dir + " --data " +
                      w.data_dir + " --lang en --epochs 2 --lr 2e-2 --max-len 16");
  REQUIRE(ta2.exit_code == 0);

  RunResult fus = run("train-fusion --name fus" + common + " --backbone " + w.backbone_dir + " --data " +
                      w.data_dir + " --langs ar en --member " + (w.root / "ta-ar" / "ta.artifact").string() +
                      " --member " + (w.root / "ta-en" / "ta.artifact").string() +
                      " --epochs 2 --lr 1e-2 --max-len 16");
  REQUIRE(fus.exit_code == 0);

  // evaluate on a model trained by train-fusion emits per-language tsv rows
  RunResult ev = run("evaluate --name ev" + common + " --backbone " + w.backbone_dir + " --artifact " +
                     (w.root / "fus" / "fusion.artifact").string() + " --kind wl-af --data " + w.data_dir +
                     " --langs tr bg --scope zero-shot --metric f1 --max-len 16");
  REQUIRE(ev.exit_code == 0);
  std::ifstream report(w.root / "ev" / "report.tsv");
  std::string content((std::istreambuf_iterator<char>(report)), std::istreambuf_iterator<char>());
  CHECK(content.find("\ttr\t") != std::string::npos);
  CHECK(content.find("\tbg\t") != std::string::npos);
  CHECK(content.find("\tf1\t") != std::string::npos);
  CHECK(fs::exists(w.root / "ev" / "predictions.tr.tsv"));

  RunResult in = run("interpret --name int" + common + " --backbone " + w.backbone_dir + " --artifact " +
                     (w.root / "fus" / "fusion.artifact").string() + " --kind wl-af --data " + w.data_dir +
                     " --langs tr --max-len 16");
  REQUIRE(in.exit_code == 0);
  CHECK(fs::exists(w.root / "int" / "fusion_weights.csv"));

  RunResult at = run("attribute --name attr" + common + " --backbone " + w.backbone_dir + " --artifact " +
                     (w.root / "ta-ar" / "ta.artifact").string() + " --kind wl-ta --corpus " +
                     (fs::path(w.data_dir) / "synth.tr.test.jsonl").string() +
                     " --steps 16 --limit 2 --max-len 16");
  REQUIRE(at.exit_code == 0);
  CHECK(fs::exists(w.root / "attr" / "attributions.jsonl"));

  RunResult ts = run("topical-split --name topics" + common + " --backbone " + w.backbone_dir + " --data " +
                     w.data_dir + " --wl-langs en ar es --k 9 --k-local 6 --tau-percentile 99 --max-len 16");
  REQUIRE(ts.exit_code == 0);
  CHECK(fs::exists(w.root / "topics" / "eval_sets.tsv"));
  CHECK(fs::exists(w.root / "topics" / "graph.dot"));
  CHECK(fs::exists(w.root / "topics" / "graph.json"));

  RunResult rp = run("report --name report" + common + " --model ta-ar=wl-ta=" + w.backbone_dir + "=" +
                     (w.root / "ta-ar" / "ta.artifact").string() + " --corpus " +
                     (fs::path(w.data_dir) / "synth.ar.train.tsv").string());
  REQUIRE(rp.exit_code == 0);
  CHECK(fs::exists(w.root / "report" / "param_sizes.tsv"));
  CHECK(fs::exists(w.root / "report" / "corpus_stats.tsv"));
}

TEST_CASE("re-running a stage with the same seed reproduces artifact hashes") {
  CliWorld& w = cli_world();
  const std::string common = " --out-root " + w.root.string() + " --seed 11";
  RunResult a = run("train-ta --name rep-a" + common + " --backbone " + w.backbone_dir + " --data " +
                    w.data_dir + " --lang es --epochs 2 --lr 2e-2 --max-len 16");
  RunResult b = run("train-ta --name rep-b" + common + " --backbone " + w.backbone_dir + " --data " +
                    w.data_dir + " --lang es --epochs 2 --lr 2e-2 --max-len 16");
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  CHECK(pipeline::manifest_output_hashes((w.root / "rep-a").string()) ==
        pipeline::manifest_output_hashes((w.root / "rep-b").string()));

  RunResult c = run("train-ta --name rep-c --out-root " + w.root.string() + " --seed 12 --backbone " +
                    w.backbone_dir + " --data " + w.data_dir + " --lang es --epochs 2 --lr 2e-2 --max-len 16");
  REQUIRE(c.exit_code == 0);
  CHECK(pipeline::manifest_output_hashes((w.root / "rep-a").string()) !=
        pipeline::manifest_output_hashes((w.root / "rep-c").string()));
}

TEST_CASE("config file values are overridden by flags and logged") {
  CliWorld& w = cli_world();
  const fs::path cfg_path = w.root / "train.json";
  {
    std::ofstream os(cfg_path);
    os << "{\"epochs\": 2, \"lr\": 0.02, \"max_len\": 16}\n";
  }
  RunResult r = run("train-ta --name cfg-run --out-root " + w.root.string() + " --seed 3 --backbone " +
                    w.backbone_dir + " --data " + w.data_dir + " --lang ar --config " + cfg_path.string() +
                    " --epochs 1");
  REQUIRE(r.exit_code == 0);
  std::ifstream is(w.root / "cfg-run" / "manifest.json");
  std::string manifest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  CHECK(manifest.find("\"epochs\": \"flag\"") != std::string::npos);
  CHECK(manifest.find("\"lr\": \"config\"") != std::string::npos);
  CHECK(manifest.find("\"batch_size\": \"default\"") != std::string::npos);
  // flag beat the config file: exactly one training epoch ran
  std::ifstream metrics(w.root / "cfg-run" / "metrics.tsv");
  std::string mline;
  int epoch_rows = 0;
  while (std::getline(metrics, mline)) {
    if (!mline.empty() && mline[0] >= '1' && mline[0] <= '9') ++epoch_rows;
  }
  CHECK(epoch_rows == 1);
}
