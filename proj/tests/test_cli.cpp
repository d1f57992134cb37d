#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "nasb/io_util.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRunner {
  fs::path dir;

  CliRunner() {
    dir = fs::temp_directory_path() / ("nasb_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~CliRunner() { fs::remove_all(dir); }

  std::string file(const std::string& name) const { return (dir / name).string(); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(NASB_CLI_PATH) + " " + args + " > " +
                            file("stdout.txt") + " 2> " + file("stderr.txt");
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
  }
  std::string out() const { return nasb::io::read_file(file("stdout.txt")); }
  std::string err() const { return nasb::io::read_file(file("stderr.txt")); }
};

}  // namespace

TEST_CASE("cli pipeline: gen-data, search, derive, pretrain, finetune, eval, cost") {
  CliRunner cli;

  // gen-data is deterministic per seed
  REQUIRE(cli.run("gen-data --out-images " + cli.file("d.ntsr") + " --out-labels " +
                  cli.file("d.nlbl") +
                  " --classes 2 --samples 96 --size 10 --difficulty medium --seed 11") == 0);
  REQUIRE(cli.run("gen-data --out-images " + cli.file("d2.ntsr") + " --out-labels " +
                  cli.file("d2.nlbl") +
                  " --classes 2 --samples 96 --size 10 --difficulty medium --seed 11") == 0);
  CHECK(nasb::io::read_file(cli.file("d.ntsr")) == nasb::io::read_file(cli.file("d2.ntsr")));
  CHECK(nasb::io::read_file(cli.file("d.nlbl")) == nasb::io::read_file(cli.file("d2.nlbl")));

  const std::string d_before = nasb::io::read_file(cli.file("d.ntsr"));

  // search twice: identical checkpoints, logs present
  const std::string search_args =
      " --images " + cli.file("d.ntsr") + " --labels " + cli.file("d.nlbl") +
      " --epochs 4 --batch 16 --cells 1 --nodes 2 --channels 6 --seed 3"
      " --op-set zero,identity,conv_3x3";
  REQUIRE(cli.run("search --out " + cli.file("s1.ckpt") + search_args) == 0);
  REQUIRE(cli.run("search --out " + cli.file("s2.ckpt") + search_args) == 0);
  CHECK(nasb::io::read_file(cli.file("s1.ckpt")) == nasb::io::read_file(cli.file("s2.ckpt")));
  CHECK(fs::exists(cli.file("s1.ckpt.log.csv")));
  CHECK(fs::exists(cli.file("s1.ckpt.summary.json")));
  CHECK(nasb::io::read_file(cli.file("s1.ckpt.log.csv")) ==
        nasb::io::read_file(cli.file("s2.ckpt.log.csv")));

  // derive twice: identical genotype bytes
  REQUIRE(cli.run("derive --in " + cli.file("s1.ckpt") + " --variant nasb --out " +
                  cli.file("g1.json")) == 0);
  REQUIRE(cli.run("derive --in " + cli.file("s1.ckpt") + " --variant nasb --out " +
                  cli.file("g2.json")) == 0);
  CHECK(nasb::io::read_file(cli.file("g1.json")) == nasb::io::read_file(cli.file("g2.json")));

  // pretrain and evaluate
  REQUIRE(cli.run("pretrain --genotype " + cli.file("g1.json") + " --images " +
                  cli.file("d.ntsr") + " --labels " + cli.file("d.nlbl") + " --out " +
                  cli.file("mp.ckpt") + " --epochs 4 --batch 16 --seed 5") == 0);
  REQUIRE(cli.run("eval --in " + cli.file("mp.ckpt") + " --images " + cli.file("d.ntsr") +
                  " --labels " + cli.file("d.nlbl") + " --json " + cli.file("eval.json")) == 0);
  CHECK(cli.out().find("top1") != std::string::npos);
  CHECK(fs::exists(cli.file("eval.json")));

  // finetune validates the genotype: a mismatching file must fail cleanly
  // (v3 derives the same retain counts but serializes a different variant)
  REQUIRE(cli.run("derive --in " + cli.file("s1.ckpt") + " --variant v3 --out " +
                  cli.file("gv3.json")) == 0);
  CHECK(cli.run("finetune --in " + cli.file("mp.ckpt") + " --genotype " +
                cli.file("gv3.json") + " --images " + cli.file("d.ntsr") + " --labels " +
                cli.file("d.nlbl") + " --out " + cli.file("bad.ckpt") +
                " --epochs 1") == 1);
  CHECK(cli.err().find("genotype") != std::string::npos);

  // retain spec wider than the searched op set must error cleanly
  CHECK(cli.run("derive --in " + cli.file("s1.ckpt") + " --variant v2 --out " +
                cli.file("gv2.json")) == 1);

  REQUIRE(cli.run("finetune --in " + cli.file("mp.ckpt") + " --genotype " +
                  cli.file("g1.json") + " --images " + cli.file("d.ntsr") + " --labels " +
                  cli.file("d.nlbl") + " --out " + cli.file("mf.ckpt") +
                  " --epochs 4 --batch 16 --seed 6") == 0);
  REQUIRE(cli.run("eval --in " + cli.file("mf.ckpt") + " --images " + cli.file("d.ntsr") +
                  " --labels " + cli.file("d.nlbl")) == 0);

  // cost: on the derived genotype and on a reference preset
  REQUIRE(cli.run("cost --genotype " + cli.file("g1.json") +
                  " --input-size 10 --input-channels 1 --classes 2 --json " +
                  cli.file("cost.json")) == 0);
  CHECK(cli.out().find("memory usage") != std::string::npos);
  REQUIRE(cli.run("cost --arch resnet18 --policy full") == 0);
  CHECK(cli.out().find("374.0") != std::string::npos);

  // no subcommand mutated its inputs
  CHECK(nasb::io::read_file(cli.file("d.ntsr")) == d_before);
}

TEST_CASE("cli: usage errors exit 2, runtime errors exit 1") {
  CliRunner cli;
  CHECK(cli.run("frobnicate") == 2);
  CHECK(cli.run("cost --arch resnet18 --bogus-flag 3") == 2);
  CHECK(cli.run("cost --arch not-a-net") == 1);
  CHECK(cli.err().find("error:") != std::string::npos);
  CHECK(cli.run("cost") == 1);  // neither --arch nor --genotype
  CHECK(cli.run("eval --in missing.ckpt --images a --labels b") == 1);
  CHECK(cli.run("--help") == 0);
}

TEST_CASE("cli: config file provides defaults, flags override") {
  CliRunner cli;
  nasb::io::atomic_write(cli.file("cfg.json"),
                         "{\"gen-data\": {\"samples\": 48, \"size\": 10, \"seed\": 2}}\n");
  REQUIRE(cli.run("--config " + cli.file("cfg.json") + " gen-data --out-images " +
                  cli.file("a.ntsr") + " --out-labels " + cli.file("a.nlbl")) == 0);
  CHECK(cli.out().find("wrote 48 images") != std::string::npos);

  // explicit flag beats the config value
  REQUIRE(cli.run("--config " + cli.file("cfg.json") + " gen-data --samples 24" +
                  " --out-images " + cli.file("b.ntsr") + " --out-labels " +
                  cli.file("b.nlbl")) == 0);
  CHECK(cli.out().find("wrote 24 images") != std::string::npos);
}
