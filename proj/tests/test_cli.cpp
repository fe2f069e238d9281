#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "hydroode_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(HYDROODE_BIN) + " " + args + " > " + (kWork / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string last_log() { return slurp(kWork / "last.log"); }

std::string w(const std::string& rel) { return (kWork / rel).string(); }

bool same_tree(const fs::path& a, const fs::path& b) {
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (rel.filename() == "resolved_config.json") continue;  // records the output path
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) return false;
  }
  return true;
}

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
  ~Workspace() { fs::remove_all(kWork); }
};

}  // namespace

TEST_CASE("command line contract") {
  Workspace ws;

  SUBCASE("usage errors exit 2") {
    CHECK(run("") == 2);
    CHECK(run("gen-data --task 9") == 2);
    CHECK(last_log().find("Usage: gen-data") != std::string::npos);
    CHECK(run("gen-data") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("gradcheck --model lstm --solver rk4") == 2);
  }

  SUBCASE("data, train, predict, eval") {
    REQUIRE(run("gen-data --task 1.1 --seed 7 --trajectories 20 --length 30 --out " + w("d1")) == 0);
    const auto manifest = nlohmann::json::parse(slurp(kWork / "d1" / "manifest.json"));
    CHECK(manifest["n"] == 4);
    CHECK(manifest["f"] == 2);
    CHECK(manifest["L"] == 30);
    CHECK(fs::exists(kWork / "d1" / "resolved_config.json"));

    REQUIRE(run("gen-data --task 1.1 --seed 7 --trajectories 20 --length 30 --out " + w("d2")) == 0);
    CHECK(same_tree(kWork / "d1", kWork / "d2"));

    CHECK(run("train --data " + w("d1") + " --model lstm --solver rk4 --out " + w("bad")) == 2);
    CHECK(run("train --data " + w("d1") + " --n-in 35 --out " + w("bad")) == 2);
    CHECK(last_log().find("n=4") != std::string::npos);
    CHECK(last_log().find("n_in=35") != std::string::npos);

    const std::string small = " --d-model 8 --heads 2 --latent 8 --hidden 8,8 --batch-size 8 --seed 3";
    REQUIRE(run("train --data " + w("d1") + small + " --max-epochs 2 --out " + w("t1")) == 0);
    REQUIRE(run("train --data " + w("d1") + small + " --max-epochs 2 --out " + w("t2")) == 0);
    CHECK(fs::exists(kWork / "t1" / "model.ckpt"));
    CHECK(fs::exists(kWork / "t1" / "resolved_config.json"));
    CHECK(slurp(kWork / "t1" / "model.ckpt") == slurp(kWork / "t2" / "model.ckpt"));
    std::ifstream log(kWork / "t1" / "train_log.jsonl");
    std::string line;
    std::size_t epochs = 0;
    while (std::getline(log, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("val_loss"));
      ++epochs;
    }
    CHECK(epochs == 2);

    const std::string ckpt = w("t1/model.ckpt");
    REQUIRE(run("predict --checkpoint " + ckpt + " --data " + w("d1") + " --out " + w("p1")) == 0);
    std::size_t rows = 0;
    std::ifstream pred(kWork / "p1" / "predictions" / "pred_00000.csv");
    while (std::getline(pred, line)) ++rows;
    CHECK(rows == 31);  // header plus L rows

    REQUIRE(run("eval --checkpoint " + ckpt + " --data " + w("d1") + " --out " + w("e1")) == 0);
    REQUIRE(run("eval --checkpoint " + ckpt + " --data " + w("d1") + " --out " + w("e2")) == 0);
    CHECK(slurp(kWork / "e1" / "metrics.json") == slurp(kWork / "e2" / "metrics.json"));
    const auto metrics = nlohmann::json::parse(slurp(kWork / "e1" / "metrics.json"));
    CHECK(metrics["metrics"]["rmse"].get<double>() >= metrics["metrics"]["mae"].get<double>());
    CHECK(!fs::is_empty(kWork / "e1" / "plots"));

    // Corrupt and missing artifacts.
    const std::string bytes = slurp(kWork / "t1" / "model.ckpt");
    std::ofstream(kWork / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK(run("eval --checkpoint " + w("cut.ckpt") + " --data " + w("d1") + " --out " + w("e3")) == 5);
    CHECK(run("eval --checkpoint " + w("missing.ckpt") + " --data " + w("d1") + " --out " + w("e3")) == 3);

    // Test split removed from the manifest.
    fs::copy(kWork / "d1", kWork / "d3", fs::copy_options::recursive);
    auto m = nlohmann::json::parse(slurp(kWork / "d3" / "manifest.json"));
    m["split"]["test"] = nlohmann::json::array();
    std::ofstream(kWork / "d3" / "manifest.json") << m.dump(2);
    CHECK(run("eval --checkpoint " + ckpt + " --data " + w("d3") + " --out " + w("e4")) == 2);
    CHECK(last_log().find("split.test") != std::string::npos);
  }

  SUBCASE("config file, flags win") {
    REQUIRE(run("gen-data --task 1.1 --trajectories 12 --length 20 --out " + w("d")) == 0);
    std::ofstream(kWork / "cfg.json") << R"({"max-epochs": 3, "lr": 0.002, "hidden": [8, 8], "d-model": 8,
                                            "latent": 8, "heads": 2, "layer-norm": true})";
    REQUIRE(run("train --config " + w("cfg.json") + " --data " + w("d") + " --max-epochs 1 --out " + w("t")) == 0);
    const auto r = nlohmann::json::parse(slurp(kWork / "t" / "resolved_config.json"));
    CHECK(r["options"]["max-epochs"] == 1);
    CHECK(r["options"]["lr"] == 0.002);
    CHECK(r["derived"]["model_config"]["kernel_hidden"] == nlohmann::json::array({8, 8}));
    CHECK(r["derived"]["model_config"]["layer_norm"] == true);

    std::ofstream(kWork / "bad.json") << R"({"bogus": 1})";
    CHECK(run("train --config " + w("bad.json") + " --data " + w("d")) == 2);
    CHECK(last_log().find("bogus") != std::string::npos);
  }

  SUBCASE("gradcheck") {
    CHECK(run("gradcheck") == 0);
    CHECK(last_log().find("PASS") != std::string::npos);
    CHECK(run("gradcheck --steps 5") == 0);
    CHECK(run("gradcheck --steps 20 --solver euler") == 0);
    CHECK(run("gradcheck --corrupt-backward") == 1);
    CHECK(last_log().find("worst parameter") != std::string::npos);
  }

  SUBCASE("output root from the environment") {
    const std::string root = w("envroot");
    const int rc = std::system(("HYDROODE_OUT=" + root + " " + HYDROODE_BIN +
                                " gen-data --task 1.1 --trajectories 10 --length 10 > /dev/null 2>&1")
                                   .c_str());
    CHECK(WEXITSTATUS(rc) == 0);
    CHECK(fs::exists(fs::path(root) / "data" / "task1.1" / "manifest.json"));
  }
}
