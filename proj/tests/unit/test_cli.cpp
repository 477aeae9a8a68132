#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "../support/random_grid.hpp"
#include "l2d/cli.hpp"
#include "l2d/datagen.hpp"

using namespace l2d;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  int status = 0;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int status = cli::run(args, out, err);
  return {status, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("l2d_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& path) { return json::parse(slurp(path)); }

/// The error report is one line of the form `error category=<name> ...`.
void check_error_line(const std::string& err, const std::string& category) {
  const auto pos = err.find("error category=" + category + " ");
  REQUIRE(pos != std::string::npos);
  CHECK(err.find('\n', pos) == err.size() - 1);
}

}  // namespace

TEST_CASE("cli: grid validate") {
  const fs::path dir = scratch("validate");
  auto r = invoke({"grid", "validate", "--grid", testing::fixture("small14.json"), "-o", dir.string()});
  CHECK(r.status == cli::kOk);
  CHECK(read_json(dir / "validation.json") == json{{"ok", true}, {"violations", json::array()}});
  CHECK(fs::exists(dir / "manifest_grid_validate.json"));

  json doc = read_json(testing::fixture("small14.json"));
  doc["lines"][0]["to"] = 99;
  doc["buses"][1]["v_min_pu"] = 1.5;
  std::ofstream(dir / "bad.json") << doc.dump();
  r = invoke({"grid", "validate", "--grid", (dir / "bad.json").string(), "-o", dir.string()});
  CHECK(r.status == cli::kDataError);
  check_error_line(r.err, "data");
  const json report = read_json(dir / "validation.json");
  CHECK_FALSE(report["ok"].get<bool>());
  CHECK(report["violations"].size() >= 2);
}

TEST_CASE("cli: pf run on a zero-load grid gives flat voltages") {
  const fs::path dir = scratch("pf");
  const auto r = invoke({"pf", "run", "--grid", testing::fixture("two_bus.json"), "-o", dir.string(), "--print"});
  REQUIRE(r.status == cli::kOk);
  const json sol = json::parse(r.out);
  CHECK(sol == read_json(dir / "pf_solution.json"));
  const auto& inst = sol["instances"][0];
  CHECK(inst["converged"].get<bool>());
  for (const auto& bus : inst["buses"]) {
    CHECK(bus["vm_pu"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(bus["va_rad"].get<double>()) < 1e-12);
  }
}

TEST_CASE("cli: data synth with 10000 rows at spread 0.3") {
  const fs::path dir = scratch("synth");
  const std::vector<std::string> args{"data",      "synth", "--grid",  testing::fixture("small14.json"),
                                      "--nominal", testing::fixture("small14_nominal.csv"),
                                      "--count",   "10000", "--spread", "0.3", "--seed", "5", "-o", dir.string()};
  REQUIRE(invoke(args).status == cli::kOk);
  const Grid g = load_grid(testing::fixture("small14.json"));
  const auto nominal = read_inputs(testing::fixture("small14_nominal.csv"), g).at(0);
  const auto rows = read_inputs(dir / "synthetic.csv", g);
  REQUIRE(rows.size() == 10000);
  int outside = 0;
  for (const auto& x : rows)
    for (Eigen::Index k = 0; k < x.values.size(); ++k) {
      const double v = nominal.values(k), a = v * 0.7, b = v * 1.3;
      outside += x.values(k) < std::min(a, b) - 1e-12 || x.values(k) > std::max(a, b) + 1e-12;
    }
  CHECK(outside == 0);

  const std::string first = slurp(dir / "synthetic.csv");
  json manifest = read_json(dir / "manifest_data_synth.json");
  REQUIRE(invoke(args).status == cli::kOk);
  CHECK(slurp(dir / "synthetic.csv") == first);
  json again = read_json(dir / "manifest_data_synth.json");
  manifest.erase("timing");
  again.erase("timing");
  CHECK(manifest == again);
}

TEST_CASE("cli: labelling output does not depend on the worker count") {
  const fs::path dir = scratch("label");
  const std::string grid = testing::fixture("small14.json");
  REQUIRE(invoke({"data", "synth", "--grid", grid, "--nominal", testing::fixture("small14_nominal.csv"), "--count", "12",
               "-o", dir.string()})
              .status == cli::kOk);
  REQUIRE(invoke({"data", "label", "--grid", grid, "--workers", "1", "-o", dir.string()}).status == cli::kOk);
  const std::string serial = slurp(dir / "labeled.csv");
  REQUIRE(invoke({"data", "label", "--grid", grid, "--workers", "3", "-o", dir.string()}).status == cli::kOk);
  CHECK(slurp(dir / "labeled.csv") == serial);
  CHECK(fs::exists(dir / "labeled.stats.json"));
  CHECK(fs::exists(dir / "dropped.csv"));
}

TEST_CASE("cli: config file, flag precedence and errors") {
  const fs::path dir = scratch("config");
  json config = {{"grid", testing::fixture("small14.json")},
                 {"output_dir", "out"},
                 {"seed", 2},
                 {"data", {{"nominal", testing::fixture("small14_nominal.csv")}, {"count", 7}}}};
  std::ofstream(dir / "run.json") << config.dump();
  const std::string cfg = (dir / "run.json").string();

  REQUIRE(invoke({"data", "synth", "-c", cfg}).status == cli::kOk);
  CHECK(read_inputs(dir / "out" / "synthetic.csv", load_grid(testing::fixture("small14.json"))).size() == 7);
  REQUIRE(invoke({"data", "synth", "-c", cfg, "--count", "9"}).status == cli::kOk);
  CHECK(read_json(dir / "out" / "manifest_data_synth.json")["config"]["data"]["count"] == 9);
  REQUIRE(invoke({"data", "synth", "-c", cfg, "--set", "data.count=4"}).status == cli::kOk);
  CHECK(read_json(dir / "out" / "manifest_data_synth.json")["config"]["data"]["count"] == 4);

  auto r = invoke({"data", "synth", "-c", cfg, "--set", "data.cuont=4"});
  CHECK(r.status == cli::kConfigError);
  check_error_line(r.err, "config");

  config["extra"] = 1;
  std::ofstream(dir / "bad.json") << config.dump();
  CHECK(invoke({"data", "synth", "-c", (dir / "bad.json").string()}).status == cli::kConfigError);

  r = invoke({"data", "label", "--grid", testing::fixture("small14.json"), "--inputs", (dir / "missing.csv").string(),
           "-o", dir.string()});
  CHECK(r.status == cli::kConfigError);
  check_error_line(r.err, "config");

  r = invoke({"frobnicate"});
  CHECK(r.status == cli::kConfigError);
  CHECK(r.out.empty());

  r = invoke({"train", "--help"});
  CHECK(r.status == cli::kOk);
  CHECK(r.out.find("--family") != std::string::npos);
}

TEST_CASE("cli: non-convergence is a numerical error") {
  const fs::path dir = scratch("numerical");
  const Grid g = load_grid(testing::fixture("two_bus.json"));
  InputVector x = InputVector::zeros(g);
  x.values(1, kLoadP) = 50.0;  // far beyond the transfer capability of the line
  write_inputs(dir / "heavy.csv", g, {x});
  const auto r = invoke({"pf", "run", "--grid", testing::fixture("two_bus.json"), "--inputs",
                      (dir / "heavy.csv").string(), "-o", dir.string()});
  CHECK(r.status == cli::kNumericalError);
  check_error_line(r.err, "numerical");
  CHECK(fs::exists(dir / "pf_solution.json"));
  CHECK(read_json(dir / "manifest_pf_run.json")["status"] == "numerical");
}
