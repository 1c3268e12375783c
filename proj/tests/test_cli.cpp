#include "doctest_torch.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "hvsmark_cli";

int run(const std::string& args) {
  const std::string cmd = std::string(HVSMARK_CLI_PATH) + " " + args + " >>" + (kWork / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(read(p)); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

struct Setup {
  Setup() {
    static bool once = false;
    if (once) return;
    once = true;
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    std::ofstream(kWork / "tiny.json") << json{{"schema_version", 1},
                                               {"image_size", 16},
                                               {"generator_depth", 2},
                                               {"generator_base_width", 4},
                                               {"extractor_widths", {4, 4}},
                                               {"phase1_epochs", 1},
                                               {"phase2_epochs", 1},
                                               {"lr", 1e-3},
                                               {"seed", 3}}
                                              .dump();
    REQUIRE(run("gen-data --n 8 --size 16 --seed 1 --out " + q(kWork / "train")) == 0);
    REQUIRE(run("gen-data --n 4 --size 16 --seed 2 --out " + q(kWork / "test")) == 0);
  }
};

std::string train_args(const std::string& out) {
  return "train --config " + q(kWork / "tiny.json") + " --data " + q(kWork / "train") + " --test-data " +
         q(kWork / "test") + " --out " + q(kWork / out) + " --threads 1";
}

}  // namespace

TEST_CASE("help and usage errors") {
  Setup s;
  CHECK(run("--help") == 0);
  CHECK(run("--version") == 0);
  for (auto sub : {"gen-data", "train", "extract", "evaluate", "sweep", "channel-study", "ablate"}) {
    INFO(sub);
    CHECK(run(std::string(sub) + " --help") == 0);
  }
  CHECK(run("train --no-such-flag") == 2);
  CHECK(run("") == 2);
  CHECK(run("gen-data --n 0 --out " + q(kWork / "zero")) == 2);
  CHECK(run("gen-data --n 2 --size 16 --out " + q(kWork / "train")) == 2);  // non-empty, no --force
}

TEST_CASE("gen-data is idempotent") {
  Setup s;
  REQUIRE(run("gen-data --n 8 --size 16 --seed 1 --out " + q(kWork / "train_again")) == 0);
  CHECK(read_json(kWork / "train" / "dataset.json")["hash"] == read_json(kWork / "train_again" / "dataset.json")["hash"]);
  CHECK(read(kWork / "train" / "input" / "0003.png") == read(kWork / "train_again" / "input" / "0003.png"));
}

TEST_CASE("config validation") {
  Setup s;
  std::ofstream(kWork / "bad_key.json") << R"({"schema_version": 1, "learning_rate": 0.1})";
  std::ofstream(kWork / "bad_version.json") << R"({"schema_version": 9})";
  std::ofstream(kWork / "bad_value.json") << R"({"schema_version": 1, "framework": "lab"})";
  for (auto name : {"bad_key.json", "bad_version.json", "bad_value.json"}) {
    INFO(name);
    CHECK(run("train --config " + q(kWork / name) + " --data " + q(kWork / "train") + " --out " +
              q(kWork / "never")) == 2);
  }
  CHECK(run("train --data " + q(kWork / "nowhere") + " --out " + q(kWork / "never2")) == 3);
}

TEST_CASE("train, interrupt, resume and inspect") {
  Setup s;
  REQUIRE(run(train_args("full")) == 0);
  const auto full = kWork / "full";
  for (auto f : {"manifest.json", "steps.csv", "phase1.ckpt", "final.ckpt", "fidelity.csv", "fidelity.json"}) {
    INFO(f);
    CHECK(fs::exists(full / f));
  }
  auto manifest = read_json(full / "manifest.json");
  CHECK(manifest["status"] == "complete");
  CHECK(manifest["outputs"].size() >= 4);

  REQUIRE(run(train_args("part") + " --stop-after-steps 3") == 0);
  CHECK(fs::exists(kWork / "part" / "checkpoint.ckpt"));
  CHECK_FALSE(fs::exists(kWork / "part" / "final.ckpt"));
  REQUIRE(run("train --data " + q(kWork / "train") + " --test-data " + q(kWork / "test") + " --out " +
              q(kWork / "part") + " --force --threads 1 --resume " + q(kWork / "part" / "checkpoint.ckpt")) == 0);
  CHECK(read(kWork / "part" / "steps.csv") == read(full / "steps.csv"));
  CHECK(read(kWork / "part" / "final.ckpt") == read(full / "final.ckpt"));
  CHECK(run("train --data " + q(kWork / "train") + " --out " + q(kWork / "wrongfw") + " --framework hvs-yuv --resume " +
            q(kWork / "part" / "checkpoint.ckpt")) == 2);

  const auto ckpt = q(full / "final.ckpt");
  CHECK(run("extract --checkpoint " + ckpt + " --image " + q(kWork / "test" / "input" / "0000.png") + " --out " +
            q(kWork / "ex")) == 0);
  auto v = read_json(kWork / "ex" / "verification.json");
  CHECK(v.contains("decision"));
  CHECK(v["ber_w1"].get<double>() >= 0.0);
  CHECK(fs::exists(kWork / "ex" / "extracted_first.png"));

  CHECK(run("evaluate --checkpoint " + ckpt + " --data " + q(kWork / "test") + " --out " + q(kWork / "ev")) == 0);
  CHECK(fs::exists(kWork / "ev" / "fidelity.csv"));
  CHECK(fs::exists(kWork / "ev" / "gallery.png"));
  CHECK(read(kWork / "ev" / "fidelity.csv") == read(full / "fidelity.csv"));

  CHECK(run("sweep --checkpoint " + ckpt + " --data " + q(kWork / "test") + " --out " + q(kWork / "sw")) == 0);
  CHECK(run("sweep --checkpoint " + ckpt + " --data " + q(kWork / "test") + " --out " + q(kWork / "sw2")) == 0);
  CHECK(read(kWork / "sw" / "sweep.csv") == read(kWork / "sw2" / "sweep.csv"));
  CHECK(run("sweep --checkpoint " + ckpt + " --data " + q(kWork / "test") + " --sigmas 0.3,0.1 --out " +
            q(kWork / "sw3")) == 3);

  std::string bytes = read(full / "final.ckpt");
  bytes[bytes.size() / 2] ^= 0x20;
  std::ofstream(kWork / "corrupt.ckpt", std::ios::binary) << bytes;
  CHECK(run("evaluate --checkpoint " + q(kWork / "corrupt.ckpt") + " --data " + q(kWork / "test") + " --out " +
            q(kWork / "ev_bad")) == 3);
  CHECK(run("evaluate --checkpoint " + q(kWork / "missing.ckpt") + " --data " + q(kWork / "test") + " --out " +
            q(kWork / "ev_bad2")) == 2);
}

TEST_CASE("study commands") {
  Setup s;
  const auto common = " --config " + q(kWork / "tiny.json") + " --data " + q(kWork / "train") + " --test-data " +
                      q(kWork / "test") + " --threads 1";
  REQUIRE(run("channel-study" + common + " --channels R,DCT_U --out " + q(kWork / "cs")) == 0);
  CHECK(read(kWork / "cs" / "channel_study.csv").find("DCT_U") != std::string::npos);
  CHECK(run("channel-study" + common + " --channels R,Q --out " + q(kWork / "cs_bad")) != 0);
  REQUIRE(run("ablate" + common + " --framework hvs-yuv --out " + q(kWork / "ab")) == 0);
  auto rows = read_json(kWork / "ab" / "ablation.json")["rows"];
  CHECK(rows.size() == 4);
}
