#include "qbdecon/config.hpp"
#include "qbdecon/error.hpp"
#include "qbdecon/io.hpp"
#include "qbdecon/pipeline.hpp"
#include "test_util.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace qbd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qbd_test_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json small_deconv() {
  return {{"model", {{"kind", "deconv"}, {"scenario", {{"preset", "bimodal_deconv"}, {"n", 100}, {"seed", 3}}}}},
          {"prior", {{"truncation", 5}}},
          {"sampler", {{"warmup", 150}, {"draws", 100}, {"chains", 2}}}};
}

std::string field_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_CASE("csv round trip and errors") {
  Matrix m(3, 2);
  m << 1.5, -2, 0.1, 1e-300, 3, 4;
  std::ostringstream out;
  write_csv(out, m, {"a", "b"});
  CHECK(out.str() == "a,b\n1.5,-2\n0.1,1e-300\n3,4\n");
  std::istringstream in(out.str());
  CHECK(parse_csv(in, true) == m);

  std::istringstream crlf("1, 2\r\n\r\n3,4\r\n");
  const Matrix c = parse_csv(crlf);
  CHECK(c.rows() == 2);
  CHECK(c(1, 1) == 4.0);

  std::istringstream ragged("1,2\n3\n");
  CHECK_THROWS_AS(parse_csv(ragged), IoError);
  std::istringstream text("x,y\n1,2\n");
  CHECK_THROWS_AS(parse_csv(text), IoError);
  std::istringstream empty("h\n");
  CHECK_THROWS_AS(parse_csv(empty, true), IoError);
  CHECK_THROWS_AS(read_csv("/nonexistent/qbd.csv"), IoError);
}

TEST_CASE("artifacts never replace different content") {
  const fs::path dir = scratch("artifacts");
  const auto a = write_artifact(dir, "r.csv", "one\n");
  CHECK(a.path == dir / "r.csv");
  CHECK(!a.renamed);
  CHECK(write_artifact(dir, "r.csv", "one\n").path == dir / "r.csv");
  const auto b = write_artifact(dir, "r.csv", "two\n");
  CHECK(b.renamed);
  CHECK(b.path == dir / "r.1.csv");
  CHECK(read_text(dir / "r.csv") == "one\n");
  CHECK(write_artifact(dir, "r.csv", "two\n").path == dir / "r.1.csv");
  CHECK(write_artifact(dir, "r.csv", "three\n").path == dir / "r.2.csv");
}

TEST_CASE("config defaults and round trip") {
  const RunConfig c = parse_config(small_deconv());
  CHECK(c.prior.truncation == 5);
  CHECK(c.prior.concentration == 1.0);
  CHECK(c.likelihood.radius == 2.0);
  CHECK(c.sampler.hmc.draws == 100);
  CHECK(c.sampler.hmc.target_accept == 0.8);
  CHECK(c.sampler.rhat_threshold == 1.05);
  CHECK(!c.sampler.rhat_gate);
  CHECK(c.output.bands == std::vector<double>{0.9});

  const json j = to_json(c);
  CHECK(j["schema_version"] == kSchemaVersion);
  CHECK(j["sampler"]["max_depth"] == 10);
  CHECK(j["prior"]["empirical_bayes"] == false);
  const RunConfig back = parse_config(j);
  CHECK(to_json(back) == j);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c).size() == 16);

  RunConfig other = c;
  other.sampler.hmc.seed = 2;
  CHECK(config_hash(other) != config_hash(c));
  other = c;
  other.output.dir = "/elsewhere";
  CHECK(config_hash(other) == config_hash(c));

  json factor = {{"model", {{"kind", "factor"}, {"scenario", {{"preset", "bimodal_factor"}}}}},
                 {"likelihood", {{"target", "joint"}}}};
  CHECK(parse_config(factor).likelihood.target == kJointTarget);
  factor["likelihood"]["target"] = 2;
  CHECK(parse_config(factor).likelihood.target == 1);
  CHECK(parse_config(factor).loadings().rows() == 2);
}

TEST_CASE("config errors carry field paths") {
  json j = small_deconv();
  j["prior"]["truncation"] = "many";
  CHECK(field_of(j) == "prior.truncation");
  j = small_deconv();
  j["sampler"]["warmup"] = -1;
  CHECK(field_of(j) == "sampler.warmup");
  j = small_deconv();
  j["sampler"]["bogus"] = 1;
  CHECK(field_of(j) == "sampler.bogus");
  j = small_deconv();
  j["model"]["kind"] = "probit";
  CHECK(field_of(j) == "model.kind");
  j = small_deconv();
  j["model"]["scenario"]["n"] = 5;
  CHECK(field_of(j) == "model.scenario.n");
  j = small_deconv();
  j["model"]["data"] = {{"y", "/nonexistent/y.csv"}, {"eps", "/nonexistent/e.csv"}};
  CHECK(field_of(j) == "model");
  j["model"].erase("scenario");
  CHECK(field_of(j) == "model.data.y");
  j = small_deconv();
  j["schema_version"] = 99;
  CHECK(field_of(j) == "schema_version");
  j = small_deconv();
  j["likelihood"] = {{"target", 1}};
  CHECK(field_of(j) == "likelihood.target");
  json factor = {{"model", {{"kind", "factor"}, {"scenario", {{"preset", "bimodal_factor"}}}}},
                 {"prior", {{"empirical_bayes", true}}}};
  CHECK(field_of(factor) == "prior.empirical_bayes");
  CHECK(field_of(json::array()) == "");
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("data files resolve against the config directory") {
  const fs::path dir = scratch("datafiles");
  std::ofstream(dir / "y.csv") << "v\n1\n2\n3\n4\n5\n6\n7\n8\n9\n10\n";
  std::ofstream(dir / "e.csv") << "v\n0.1\n-0.2\n0.3\n-0.1\n0.05\n";
  std::ofstream(dir / "c.json") << json{{"model", {{"kind", "deconv"}, {"header", true}, {"data", {{"y", "y.csv"}, {"eps", "e.csv"}}}}}}.dump();
  const RunConfig c = load_config(dir / "c.json");
  CHECK(c.model.data.at("y") == dir / "y.csv");
  const FitInput in = load_input(c);
  REQUIRE(in.data.size() == 2);
  CHECK(in.data[0].size() == 10);
  CHECK(in.data[1].size() == 5);
  CHECK(in.truth.empty());

  std::ofstream(dir / "y.csv") << "v\n1\nabc\n";
  CHECK_THROWS_AS(load_input(c), IoError);
}

TEST_CASE("small fit end to end") {
  const RunConfig c = parse_config(small_deconv());
  const FitResult r = run_fit(c);
  REQUIRE(r.chains.size() == 2);
  CHECK(r.chains[0].draws.rows() == 100);
  REQUIRE(r.blocks.size() == 1);
  const BlockSummary& b = r.blocks[0];
  CHECK(b.density.draws == 200);
  CHECK(b.density.grid.size() == 512);
  REQUIRE(b.error.has_value());
  CHECK(b.error->l2 >= 0.0);
  CHECK(b.density.mean.sum() * b.density.grid.cell == doctest::Approx(1.0).epsilon(0.02));
  REQUIRE(b.density.bands.size() == 1);
  CHECK((b.density.bands[0].lower.array() <= b.density.bands[0].upper.array()).all());

  const fs::path dir = scratch("fit");
  const ArtifactSet a = write_fit_artifacts(r, dir);
  CHECK(a.paths.size() == 4);
  for (const auto& p : a.paths) CHECK(fs::file_size(p) > 0);
  const Matrix chains = read_csv(a.paths[0], true);
  CHECK(chains.rows() == 200);
  // chain, iteration, lp, 10 unconstrained, 5 weights, 5 atoms, sigma2
  CHECK(chains.cols() == 3 + 10 + 11);
  CHECK(chains.block(0, 13, chains.rows(), 5).rowwise().sum().isApproxToConstant(1.0, 1e-12));

  const json report = json::parse(read_text(a.paths.back()));
  CHECK(report["config_hash"] == r.hash);
  CHECK(report["config"]["sampler"]["max_depth"] == 10);
  CHECK(report["artifacts"].size() == 3);

  // Same config, same bytes.
  const FitResult again = run_fit(c);
  const ArtifactSet a2 = write_fit_artifacts(again, dir);
  CHECK(a2.paths == a.paths);
  CHECK(a2.warnings.empty());
}

TEST_CASE("factor fit demeans draws and reports both errors") {
  json j = {{"model", {{"kind", "factor"}, {"scenario", {{"preset", "bimodal_factor"}, {"n", 300}}}}},
            {"prior", {{"truncation", 4}}},
            {"likelihood", {{"per_dim", 16}}},
            {"sampler", {{"warmup", 100}, {"draws", 50}, {"chains", 1}, {"max_depth", 6}}}};
  const FitResult r = run_fit(parse_config(j));
  REQUIRE(r.blocks.size() == 1);
  CHECK(r.blocks[0].label == "factor1");
  CHECK(r.blocks[0].max_abs_mean < 1e-10);
  CHECK(r.blocks[0].raw.has_value());
  CHECK(r.blocks[0].raw_error.has_value());
  CHECK(r.blocks[0].error.has_value());
}

TEST_CASE("gradcheck passes and catches a corrupted gradient") {
  const RunConfig c = parse_config(small_deconv());
  const GradcheckReport ok = gradcheck(c, 5);
  CHECK(ok.worst.size() == 5);
  CHECK(ok.passed());
  const GradcheckReport bad = gradcheck(c, 5, true);
  CHECK(!bad.passed());
  CHECK(bad.worst[0].coordinate == 0);
}

TEST_CASE("sweep cells reproduce direct fits") {
  json j = small_deconv();
  j["model"]["scenario"]["n"] = json::array({60, 120});
  j["model"]["scenario"].erase("seed");
  j["model"]["scenario"]["seeds"] = json::array({1, 2});
  const RunConfig c = parse_config(j);
  const SweepReport s = run_experiment(c);
  REQUIRE(s.cells.size() == 4);
  for (const SweepCell& cell : s.cells) {
    CHECK(cell.failure.empty());
    REQUIRE(cell.error.has_value());
    CHECK(cell.error->l2 >= 0.0);
    CHECK(cell.error->linf >= 0.0);
  }
  const FitResult direct = run_fit(cell_config(c, 120, 2));
  CHECK(s.cells[3].n == 120);
  CHECK(s.cells[3].seed == 2);
  CHECK(s.cells[3].error->l2 == direct.blocks[0].error->l2);

  const std::string csv = sweep_csv(s);
  CHECK(csv.rfind("model,n,seed,l2,linf,rhat_max,divergences,wall_time\ndeconv,60,1,", 0) == 0);
  const json summary = sweep_json(s);
  CHECK(summary["trend"].size() == 2);
  CHECK(summary["trend"][0]["n"] == 60);
  CHECK(summary.contains("decreasing"));
}

TEST_CASE("a failing cell does not stop the sweep") {
  json j = small_deconv();
  j["model"]["scenario"]["n"] = json::array({60});
  j["model"]["scenario"]["seeds"] = json::array({1, 2});
  j["model"]["scenario"].erase("seed");
  j["sampler"]["max_energy_error"] = 1e-300;
  j["sampler"]["max_consecutive_divergences"] = 1;
  const SweepReport s = run_experiment(parse_config(j));
  REQUIRE(s.cells.size() == 2);
  for (const SweepCell& cell : s.cells) {
    CHECK(!cell.failure.empty());
    CHECK(!cell.error.has_value());
  }
  CHECK(sweep_csv(s).find("deconv,60,2,,,,0,") != std::string::npos);
}
