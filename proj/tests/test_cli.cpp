#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "mmssl_cli_test";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the CLI with `args`; stdout and stderr land in kDir/last.log.
int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MMSSL_CLI_PATH + "\" " + args + " > \"" + (kDir / "last.log").string() +
                          "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string log() { return slurp(kDir / "last.log"); }

std::string p(const std::string& name) { return "\"" + (kDir / name).string() + "\""; }

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += line.rfind(prefix, 0) == 0;
  return n;
}

const std::string kSmallArch = " --embed-dim 16 --heads 4 --image-hidden 16 --enc-dim 8 --token-dim 8 --proj-hidden 16";

struct Fixture {
  Fixture() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "gen-data writes the requested records reproducibly") {
  REQUIRE(cli("gen-data --n 120 --eta 0.0 --seed 7 --out " + p("d.txt")) == 0);
  const std::string first = slurp(kDir / "d.txt");
  CHECK(count_lines_starting(first, "sample ") == 120);
  CHECK(fs::exists(kDir / "d.txt.manifest.json"));

  REQUIRE(cli("gen-data --n 120 --eta 0.0 --seed 7 --out " + p("d2.txt")) == 0);
  CHECK(slurp(kDir / "d2.txt") == first);

  CHECK(cli("gen-data --n 10 --eta 1.5 --out " + p("bad.txt")) == 2);
  CHECK_FALSE(fs::exists(kDir / "bad.txt"));
  CHECK(cli("gen-data --n 10") == 2);
  CHECK(cli("no-such-command") == 2);
}

TEST_CASE_FIXTURE(Fixture, "pretrain, probe and sweep") {
  REQUIRE(cli("gen-data --n 200 --seed 3 --out " + p("d.txt")) == 0);

  CHECK(cli("pretrain --method unknown --data " + p("d.txt") + " --out " + p("m.ckpt")) == 2);
  CHECK(cli("pretrain --method mm-simclr --batch-size 1 --data " + p("d.txt") + " --out " + p("m.ckpt")) == 2);
  CHECK(cli("pretrain --method mm-simclr --data " + p("missing.txt") + " --out " + p("m.ckpt")) == 3);

  REQUIRE(cli("pretrain --method ext-pie-net --lambda-f2f 0.6 --lambda-f2i 0.2 --lambda-f2t 0.2 --epochs 2 --seed 7 "
              "--data " + p("d.txt") + " --out " + p("m.ckpt") + kSmallArch) == 0);
  CHECK(fs::exists(kDir / "m.ckpt"));
  const std::string pre_csv = slurp(kDir / "m.ckpt.csv");
  CHECK(pre_csv.rfind("method,fraction,epoch,split,loss,accuracy,macro_f1\n", 0) == 0);
  CHECK(count_lines_starting(pre_csv, "ext-pie-net,-,") == 2);

  REQUIRE(cli("probe --epochs 3 --data " + p("d.txt") + " --checkpoint " + p("m.ckpt") + " --metrics " +
              p("probe.csv")) == 0);
  CHECK(count_lines_starting(slurp(kDir / "probe.csv"), "ext-pie-net,1,") == 6);

  REQUIRE(cli("probe --epochs 2 --random-init --data " + p("d.txt") + " --metrics " + p("rand.csv") + kSmallArch) ==
          0);
  CHECK(count_lines_starting(slurp(kDir / "rand.csv"), "random,1,") == 4);

  REQUIRE(cli("sweep --epochs 2 --common-dim 8 --data " + p("d.txt") + " --checkpoint " + p("m.ckpt") +
              " --metrics " + p("sweep.csv")) == 0);
  const std::string sweep = slurp(kDir / "sweep.csv");
  for (const char* f : {"0.01", "0.1", "0.2", "0.5"}) {
    CHECK(count_lines_starting(sweep, std::string("ext-pie-net,") + f + ",") == 4);
  }

  REQUIRE(cli("sweep --fractions 0.01,0.5 --epochs 1 --common-dim 8 --data " + p("d.txt") + " --checkpoint " +
              p("m.ckpt") + " --metrics " + p("two.csv")) == 0);
  const std::string two = slurp(kDir / "two.csv");
  CHECK(count_lines_starting(two, "ext-pie-net,0.01,") == 2);
  CHECK(count_lines_starting(two, "ext-pie-net,0.5,") == 2);
  CHECK(count_lines_starting(two, "ext-pie-net,0.1,") == 0);

  // Corrupted and missing checkpoints.
  std::string bytes = slurp(kDir / "m.ckpt");
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(kDir / "bad.ckpt", std::ios::binary) << bytes;
  CHECK(cli("probe --data " + p("d.txt") + " --checkpoint " + p("bad.ckpt") + " --metrics " + p("x.csv")) == 3);
  CHECK(log().find("format error") != std::string::npos);
  CHECK(cli("probe --data " + p("d.txt") + " --checkpoint " + p("none.ckpt") + " --metrics " + p("x.csv")) == 3);
  CHECK(cli("probe --data " + p("d.txt") + " --metrics " + p("x.csv")) == 2);
}

TEST_CASE_FIXTURE(Fixture, "gradcheck") {
  REQUIRE(cli("gradcheck --report " + p("gc.csv")) == 0);
  const std::string out = log();
  for (const char* op : {"nt_xent", "weighted_hinge_sum", "weighted_hinge_hardest", "mm_infonce", "mm_simclr_loss",
                         "ext_pie_loss", "cross_entropy", "coattend"}) {
    CHECK(out.find(std::string("ok   ") + op + " ") != std::string::npos);
  }

  CHECK(cli("gradcheck --tolerance 1e-12 --seeds 2 --report " + p("tight.csv")) == 4);
  CHECK(log().find("FAIL ") != std::string::npos);
  CHECK(log().find("exceed tolerance") != std::string::npos);
  CHECK(fs::exists(kDir / "tight.csv"));
}

TEST_CASE_FIXTURE(Fixture, "config files merge under explicit flags") {
  REQUIRE(cli("gen-data --n 64 --seed 2 --out " + p("d.txt")) == 0);
  std::ofstream(kDir / "run.toml") << "# pre-training settings\nmethod = \"vse\"\nepochs = 3\nseed = 11\n"
                                      "embed-dim = 16\nheads = 4\nbatch-size = 16\n";
  REQUIRE(cli("pretrain --config " + p("run.toml") + " --epochs 2 --data " + p("d.txt") + " --out " + p("c.ckpt")) ==
          0);
  const std::string csv = slurp(kDir / "c.ckpt.csv");
  CHECK(count_lines_starting(csv, "vse,-,") == 2);

  const auto manifest = nlohmann::json::parse(slurp(kDir / "c.ckpt.manifest.json"));
  CHECK(manifest["command"] == "pretrain");
  CHECK(manifest["config"]["epochs"] == "2");
  CHECK(manifest["config"]["embed-dim"] == "16");
  CHECK(manifest["seed"] == 11);

  std::ofstream(kDir / "bad.toml") << "no-such-key = 1\n";
  CHECK(cli("pretrain --config " + p("bad.toml") + " --data " + p("d.txt") + " --out " + p("e.ckpt")) == 2);
  CHECK(cli("pretrain --config " + p("absent.toml") + " --data " + p("d.txt") + " --out " + p("e.ckpt")) == 3);
}

TEST_CASE_FIXTURE(Fixture, "rerun from a manifest reproduces outputs byte for byte") {
  REQUIRE(cli("gen-data --n 96 --seed 4 --out " + p("d.txt")) == 0);
  REQUIRE(cli("pretrain --method mm-simclr --epochs 2 --batch-size 16 --data " + p("d.txt") + " --out " +
              p("m.ckpt") + kSmallArch) == 0);
  REQUIRE(cli("sweep --epochs 2 --runs 2 --common-dim 8 --fractions 0.2,0.5 --data " + p("d.txt") +
              " --checkpoint " + p("m.ckpt") + " --metrics " + p("s.csv")) == 0);

  fs::create_directories(kDir / "again");
  REQUIRE(cli("rerun --manifest " + p("m.ckpt.manifest.json") + " --output-dir " + p("again")) == 0);
  CHECK(slurp(kDir / "again" / "m.ckpt.csv") == slurp(kDir / "m.ckpt.csv"));
  CHECK(slurp(kDir / "again" / "m.ckpt") == slurp(kDir / "m.ckpt"));

  REQUIRE(cli("rerun --manifest " + p("s.csv.manifest.json") + " --output-dir " + p("again")) == 0);
  CHECK(slurp(kDir / "again" / "s.csv") == slurp(kDir / "s.csv"));

  REQUIRE(cli("rerun --manifest " + p("d.txt.manifest.json") + " --output-dir " + p("again")) == 0);
  CHECK(slurp(kDir / "again" / "d.txt") == slurp(kDir / "d.txt"));

  std::ofstream(kDir / "broken.json") << "{ not json";
  CHECK(cli("rerun --manifest " + p("broken.json")) == 3);
  CHECK(cli("rerun --manifest " + p("absent.json")) == 3);
}
