#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cli.hpp"
#include "clustat/core.hpp"

using namespace clustat;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / "clustat_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d.parent_path());
  return d;
}

std::string write_config(const std::string& name, const std::string& text) {
  const auto p = fs::temp_directory_path() / "clustat_cli" / name;
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Every regular file under dir, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return files;
}

const char* kSmallSurvey = R"({
  "survey": {"regions": [{"ra_min": 160, "ra_max": 200, "dec_min": -10, "dec_max": 10, "d_min": 150, "d_max": 350}],
             "cell_radius": 22, "randoms": 60000, "min_box": 300},
  "kl": {"sigma8": [0.7, 0.9, 1.1], "gamma": [0.15, 0.2, 0.3]},
  "sys": {"mocks": 2, "realizations": 20}
})";

}  // namespace

TEST_CASE("config resolution rejects unknown keys and keeps defaults") {
  const auto def = cli::default_config();
  CHECK(def["survey"]["threshold"] == 0.75);
  CHECK(def["sys"]["zp_std"] == 0.015);
  CHECK(def["sys"]["realizations"] == 100);
  const auto merged = cli::resolve_config(nlohmann::json::parse(R"({"survey": {"threshold": 0.8}})"));
  CHECK(merged["survey"]["threshold"] == 0.8);
  CHECK(merged["survey"]["cell_radius"] == 14.5);
  CHECK_THROWS_AS(cli::resolve_config(nlohmann::json::parse(R"({"survey": {"treshold": 0.8}})")), clustat::ConfigError);
  CHECK_THROWS_AS(cli::resolve_config(nlohmann::json::parse(R"({"bogus": 1})")), clustat::ConfigError);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"frobnicate"}).code == cli::kUsage);
  CHECK(run({"mock", "--threads", "0"}).code == cli::kUsage);
  CHECK(run({"mock", "--config", "/nonexistent/cfg.json"}).code == cli::kIoError);
  CHECK(run({"mock", "--config", write_config("bad.json", "{not json")}).code == cli::kConfigError);
  CHECK(run({"mock", "--config", write_config("unknown.json", R"({"mock": {"kind": "volume", "typo": 1}})")}).code ==
        cli::kConfigError);
  CHECK(run({"mock", "--config", write_config("kind.json", R"({"mock": {"kind": "spiral"}})"), "--dry-run"}).code ==
        cli::kConfigError);
  CHECK(run({"kl", "--dry-run"}).code == cli::kConfigError);  // no catalog
  const auto out = fresh_dir("missing_catalog");
  const auto r = run({"angcorr", "--config", write_config("ac.json", R"({"angcorr": {"catalog": "/nonexistent.csv"}})"),
                      "--out", out.string()});
  CHECK(r.code == cli::kIoError);
  CHECK(r.err.find("error:") == 0);
}

TEST_CASE("dry run prints the plan and writes nothing") {
  const auto out = fresh_dir("dry");
  const auto r = run({"mock", "--dry-run", "--out", out.string(), "--seed", "5"});
  CHECK(r.code == 0);
  CHECK(r.out.find("galaxies.csv") != std::string::npos);
  CHECK(r.out.find("seed 5") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("mock -> angcorr -> kl -> sys produce every artifact, identically across thread counts") {
  const auto cfg = write_config("survey.json", kSmallSurvey);
  const auto mock1 = fresh_dir("mock1"), mock2 = fresh_dir("mock2");
  REQUIRE(run({"mock", "--config", cfg, "--seed", "4", "--out", mock1.string(), "--threads", "1"}).code == 0);
  REQUIRE(run({"mock", "--config", cfg, "--seed", "4", "--out", mock2.string(), "--threads", "3"}).code == 0);
  CHECK(tree(mock1) == tree(mock2));
  CHECK(fs::exists(mock1 / "galaxies.csv"));
  CHECK(fs::exists(mock1 / "selection.csv"));
  CHECK(fs::exists(mock1 / "config.json"));

  const auto cat = (mock1 / "galaxies.csv").string();
  const auto ac_cfg = write_config("ac2.json", R"({"angcorr": {"catalog": ")" + cat +
                                                   R"(", "stripes": [12, 13], "cell_arcmin": 2,
      "subsamples": [{"name": "all"}, {"name": "bright", "mag_max": 16.5}]}})");
  const auto ac1 = fresh_dir("ac1"), ac2 = fresh_dir("ac2");
  REQUIRE(run({"angcorr", "--config", ac_cfg, "--out", ac1.string(), "--threads", "1"}).code == 0);
  REQUIRE(run({"angcorr", "--config", ac_cfg, "--out", ac2.string(), "--threads", "2"}).code == 0);
  CHECK(tree(ac1) == tree(ac2));
  for (const char* f : {"w_theta/all_stripe12.csv", "w_theta/all_combined.csv", "w_theta/bright_stripe13.csv", "all.svg",
                        "bright.svg"})
    CHECK(fs::exists(ac1 / f));

  auto survey = nlohmann::json::parse(kSmallSurvey);
  survey["kl"]["catalog"] = cat;
  const auto kl_cfg = write_config("kl.json", survey.dump());
  const auto kl1 = fresh_dir("kl1"), kl2 = fresh_dir("kl2");
  REQUIRE(run({"kl", "--config", kl_cfg, "--seed", "4", "--out", kl1.string(), "--threads", "1"}).code == 0);
  REQUIRE(run({"kl", "--config", kl_cfg, "--seed", "4", "--out", kl2.string(), "--threads", "2"}).code == 0);
  CHECK(tree(kl1) == tree(kl2));
  const auto surface = slurp(kl1 / "surface.csv");
  CHECK(surface.rfind("sigma8,gamma,lnL\n", 0) == 0);
  CHECK(std::count(surface.begin(), surface.end(), '\n') == 10);
  CHECK(slurp(kl1 / "summary.txt").find("peak") != std::string::npos);
  CHECK(fs::exists(kl1 / "surface.svg"));

  const auto sys1 = fresh_dir("sys1");
  REQUIRE(run({"sys", "--config", cfg, "--seed", "4", "--out", sys1.string()}).code == 0);
  CHECK(slurp(sys1 / "bias_report.txt").find("reduction") != std::string::npos);
  CHECK(fs::exists(sys1 / "csys_region0.arr"));
  CHECK(fs::exists(sys1 / "bias.svg"));
}
