#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "petseg/metrics.hpp"
#include "petseg/util.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = PETSEG_CLI_PATH;
const std::string kTiny = std::string(PETSEG_SOURCE_DIR) + "/configs/tiny.json";

int run(const std::string& args, const fs::path& stdout_file = {}) {
  const std::string redirect = stdout_file.empty() ? " > /dev/null" : " > '" + stdout_file.string() + "'";
  const int status = std::system((kCli + " " + args + redirect + " 2> /dev/null").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

bool same_tree(const fs::path& a, const fs::path& b) {
  std::set<std::string> na, nb;
  for (const auto& e : fs::directory_iterator(a)) na.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) nb.insert(e.path().filename().string());
  if (na != nb) return false;
  for (const auto& n : na) {
    if (petseg::read_text(a / n) != petseg::read_text(b / n)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("cli: phantom is deterministic for a fixed seed") {
  const auto dir = testing::temp_dir("cli_phantom");
  const std::string base = "--config " + q(kTiny) + " phantom --n 12 --seed 1 --out ";
  REQUIRE(run(base + q(dir / "a")) == 0);
  REQUIRE(run(base + q(dir / "b")) == 0);
  CHECK(petseg::read_text(dir / "a" / "manifest.json") == petseg::read_text(dir / "b" / "manifest.json"));
  CHECK(same_tree(dir / "a", dir / "b"));
  const auto m = nlohmann::json::parse(petseg::read_text(dir / "a" / "manifest.json"));
  CHECK(m.size() == 12);

  REQUIRE(run("--config " + q(kTiny) + " phantom --n 12 --seed 2 --out " + q(dir / "c")) == 0);
  CHECK_FALSE(same_tree(dir / "a", dir / "c"));
}

TEST_CASE("cli: evaluate with predictions equal to ground truth") {
  const auto dir = testing::temp_dir("cli_eval");
  REQUIRE(run("--config " + q(kTiny) + " phantom --n 4 --seed 9 --out " + q(dir / "data")) == 0);
  REQUIRE(run("evaluate --pred " + q(dir / "data") + " --gt " + q(dir / "data") + " --out " + q(dir / "ev")) == 0);
  const auto report = nlohmann::json::parse(petseg::read_text(dir / "ev" / "report.json"));
  const auto& agg = report["aggregate"];
  CHECK(agg["dice"].get<double>() == doctest::Approx(1.0));
  CHECK(agg["fn_ml"].get<double>() == 0.0);
  CHECK(agg["fp_ml"].get<double>() == 0.0);
  CHECK(report["cases"].size() == 4);
  CHECK(fs::exists(dir / "ev" / "mtv_scatter.csv"));
}

TEST_CASE("cli: report prints the summary columns") {
  const auto dir = testing::temp_dir("cli_report");
  REQUIRE(run("--config " + q(kTiny) + " phantom --n 3 --seed 4 --out " + q(dir / "data")) == 0);
  REQUIRE(run("evaluate --pred " + q(dir / "data") + " --gt " + q(dir / "data") + " --out " + q(dir / "ev")) == 0);
  REQUIRE(run("report " + q(dir / "ev" / "report.json") + " --name mine --out " + q(dir / "table.txt"),
              dir / "stdout.txt") == 0);
  const std::string table = petseg::read_text(dir / "stdout.txt");
  CHECK(table == petseg::read_text(dir / "table.txt"));

  std::istringstream is(table);
  std::string header;
  std::getline(is, header);
  std::vector<std::string> cells;
  std::stringstream hs(header);
  for (std::string cell; std::getline(hs, cell, '|');) {
    const auto b = cell.find_first_not_of(' ');
    const auto e = cell.find_last_not_of(' ');
    cells.push_back(cell.substr(b, e - b + 1));
  }
  const std::vector<std::string> expected = {"Config", "Dice", "Dice Foreground", "FN", "FP",
                                             "Sensitivity", "MTV found", "MTV", "time (s)"};
  CHECK(cells == expected);
  CHECK(table.find("mine") != std::string::npos);
}

TEST_CASE("cli: exit codes") {
  const auto dir = testing::temp_dir("cli_exit");
  CHECK(run("") == 1);
  CHECK(run("phantom --bogus") == 1);
  CHECK(run("--help") == 0);
  CHECK(run("--device gpu phantom --n 2 --out " + q(dir / "x")) == 2);
  CHECK(run("--workers 0 phantom --n 2 --out " + q(dir / "x")) == 2);
  petseg::write_text_atomic(dir / "bad.json", R"({"coarse": {"encoder_channel": [1, 2]}})");
  CHECK(run("--config " + q(dir / "bad.json") + " phantom --n 2 --out " + q(dir / "x")) == 2);
  petseg::write_text_atomic(dir / "broken.json", "{ not json");
  CHECK(run("--config " + q(dir / "broken.json") + " phantom --n 2 --out " + q(dir / "x")) == 2);
  CHECK(run("split --manifest " + q(dir / "missing.json") + " --out " + q(dir / "s.json")) == 2);
  CHECK(run("infer --bundle " + q(dir) + " --manifest " + q(dir / "missing.json") + " --out " + q(dir / "p")) == 2);
  CHECK_FALSE(fs::exists(dir / "x"));

  // A manifest pointing at a file that does not exist fails at load time.
  petseg::write_text_atomic(dir / "m" / "manifest.json",
                            R"({"a": {"suv": "a_suv.nii.gz", "ct": "a_ct.nii.gz"}})");
  const int code = run("split --manifest " + q(dir / "m" / "manifest.json") + " --out " + q(dir / "s.json"));
  CHECK((code == 2 || code == 3));
  CHECK_FALSE(fs::exists(dir / "s.json"));
}

TEST_CASE("cli: dry run has no side effects") {
  const auto dir = testing::temp_dir("cli_dry");
  CHECK(run("--dry-run --config " + q(kTiny) + " phantom --n 3 --out " + q(dir / "data")) == 0);
  CHECK_FALSE(fs::exists(dir / "data"));
  REQUIRE(run("--config " + q(kTiny) + " phantom --n 8 --out " + q(dir / "data")) == 0);
  const std::string manifest = q(dir / "data" / "manifest.json");
  CHECK(run("--dry-run --config " + q(kTiny) + " split --manifest " + manifest + " --out " + q(dir / "s.json")) == 0);
  CHECK_FALSE(fs::exists(dir / "s.json"));
  CHECK(run("--dry-run --config " + q(kTiny) + " train-coarse --member 0 --manifest " + manifest + " --split " +
            q(dir / "s.json")) == 2);
  CHECK(run("--dry-run evaluate --pred " + q(dir / "data") + " --gt " + q(dir / "data") + " --out " +
            q(dir / "ev")) == 0);
  CHECK_FALSE(fs::exists(dir / "ev"));
}

TEST_CASE("cli: flags override the config file") {
  const auto dir = testing::temp_dir("cli_override");
  REQUIRE(run("--config " + q(kTiny) + " phantom --n 8 --out " + q(dir / "data")) == 0);
  const std::string manifest = q(dir / "data" / "manifest.json");
  REQUIRE(run("--config " + q(kTiny) + " split --manifest " + manifest + " --out " + q(dir / "a.json")) == 0);
  REQUIRE(run("--config " + q(kTiny) + " --seed 77 split --manifest " + manifest + " --out " + q(dir / "b.json")) ==
          0);
  const auto a = nlohmann::json::parse(petseg::read_text(dir / "a.json"));
  const auto b = nlohmann::json::parse(petseg::read_text(dir / "b.json"));
  CHECK(a["seed"].get<std::uint64_t>() == 3);
  CHECK(b["seed"].get<std::uint64_t>() == 77);
}

TEST_CASE("cli: tiny end-to-end cascade with deterministic inference") {
  const auto dir = testing::temp_dir("cli_e2e");
  const std::string c = "--deterministic --config " + q(kTiny) + " ";
  const std::string data = " --manifest " + q(dir / "data" / "manifest.json");
  const std::string run_args = data + " --split " + q(dir / "run" / "split.json") + " --run " + q(dir / "run");
  REQUIRE(run(c + "phantom --out " + q(dir / "data")) == 0);
  REQUIRE(run(c + "split" + data + " --out " + q(dir / "run" / "split.json")) == 0);
  CHECK(run(c + "fit-ensemble" + run_args) == 2);
  REQUIRE(run(c + "train-coarse --member 0" + run_args) == 0);
  REQUIRE(run(c + "train-coarse --member 1" + run_args) == 0);
  CHECK(run(c + "train-coarse --member 2" + run_args) == 2);
  REQUIRE(run(c + "fit-ensemble" + run_args) == 0);
  REQUIRE(run(c + "train-refiner" + run_args) == 0);
  for (const char* f : {"member0.ckpt", "member1.ckpt", "stacking.json", "refiner.ckpt", "bundle.json"}) {
    CHECK(fs::exists(dir / "run" / f));
  }
  REQUIRE(run(c + "infer --bundle " + q(dir / "run") + data + " --out " + q(dir / "p1")) == 0);
  REQUIRE(run(c + "infer --bundle " + q(dir / "run") + data + " --out " + q(dir / "p2")) == 0);
  CHECK(same_tree(dir / "p1", dir / "p2"));
  const auto info = nlohmann::json::parse(petseg::read_text(dir / "p1" / "case_000.json"));
  CHECK(info["runtime_seconds"].get<double>() == 0.0);

  REQUIRE(run("evaluate --pred " + q(dir / "p1") + " --gt " + q(dir / "data") + " --out " + q(dir / "ev")) == 0);
  const auto report = nlohmann::json::parse(petseg::read_text(dir / "ev" / "report.json"));
  CHECK(report["cases"].size() == 8);
}
