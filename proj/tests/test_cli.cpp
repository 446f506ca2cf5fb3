#include <doctest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "lesioncal/cli.hpp"
#include "lesioncal/csv.hpp"
#include "lesioncal/nifti.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
  const char* p = std::getenv("LESIONCAL_CLI");
  return p ? fs::absolute(p).string() : std::string("lesioncal");
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

struct Run {
  int code = -1;
  std::string err;
};

Run run_cli(const fs::path& dir, const std::string& args) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && '" + cli_path() + "' " + args + " 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

void write_config(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

json base_config() {
  return json::parse(R"({
    "data": {"manifest": "ds/manifest.json", "foldplan": "folds/foldplan.json", "metric_rows": "score/metric_rows.csv"},
    "synth": {"n_lesion": 24, "n_control": 9, "dims": [24, 24, 24], "seed": 5},
    "folds": {"k": 3, "n_perm": 100, "seed": 1},
    "harness": {"seed": 6, "n_boot": 300, "size": 9, "workers": 2,
                "models": {"ref": {"builtin": {"theta": 0.5, "tau": 0.2}},
                           "labels": {"predictions": "ds/labels"},
                           "nothing": {"builtin": {"theta": 5.0, "tau": 0.2}}}}
  })");
}

std::map<std::string, std::size_t> column_index(const lesioncal::csv::Row& header) {
  std::map<std::string, std::size_t> m;
  for (std::size_t i = 0; i < header.size(); ++i) m[header[i]] = i;
  return m;
}

// Kruskal-Wallis by direct rank counting, chi-square p from Boost.
double kw_p(const std::vector<std::vector<double>>& groups) {
  std::vector<double> all;
  for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
  const double n = static_cast<double>(all.size());
  auto rank = [&](double x) {
    double below = 0, equal = 0;
    for (double y : all) {
      below += y < x;
      equal += y == x;
    }
    return below + (equal + 1) / 2;
  };
  double h = 0;
  for (const auto& g : groups) {
    double r = 0;
    for (double x : g) r += rank(x);
    h += r * r / static_cast<double>(g.size());
  }
  h = 12 / (n * (n + 1)) * h - 3 * (n + 1);
  std::map<double, double> ties;
  for (double x : all) ties[x] += 1;
  double t = 0;
  for (const auto& [v, c] : ties) t += c * c * c - c;
  h /= 1 - t / (n * n * n - n);
  boost::math::chi_squared chi(static_cast<double>(groups.size() - 1));
  return boost::math::cdf(boost::math::complement(chi, h));
}

}  // namespace

TEST_CASE("cli end to end") {
  testing_support::TempDir tmp("cli");
  const fs::path dir = tmp.path();
  write_config(dir / "cfg.json", base_config());

  REQUIRE(run_cli(dir, "synth --config cfg.json --out ds").code == 0);
  REQUIRE(fs::exists(dir / "ds/manifest.json"));
  const json manifest = json::parse(slurp(dir / "ds/manifest.json"));
  CHECK(manifest.size() == 33);

  SUBCASE("synth rerun is identical") {
    REQUIRE(run_cli(dir, "synth --config cfg.json --out ds2").code == 0);
    CHECK(slurp(dir / "ds/manifest.json") == slurp(dir / "ds2/manifest.json"));
    for (const auto& e : manifest) CHECK(slurp(dir / "ds" / e["image_path"]) == slurp(dir / "ds2" / e["image_path"]));
    const json meta = json::parse(slurp(dir / "ds/run_metadata_synth.json"));
    CHECK(meta["seeds"]["synth.seed"] == 5);
    CHECK(meta["config_hash"].get<std::string>().size() == 16);
  }

  SUBCASE("configuration errors exit 2 and name the key") {
    json bad = base_config();
    bad["folds"]["colour"] = "red";
    write_config(dir / "bad.json", bad);
    Run r = run_cli(dir, "folds --config bad.json --out x");
    CHECK(r.code == 2);
    CHECK(r.err.find("folds.colour") != std::string::npos);

    json noseed = base_config();
    noseed["folds"].erase("seed");
    write_config(dir / "noseed.json", noseed);
    r = run_cli(dir, "folds --config noseed.json --out x");
    CHECK(r.code == 2);
    CHECK(r.err.find("folds.seed") != std::string::npos);

    CHECK(run_cli(dir, "folds --config missing.json --out x").code == 2);
    CHECK(run_cli(dir, "folds --out x").code == 2);
    CHECK(run_cli(dir, "folds --config cfg.json --out x --set folds.k=1").code == 2);
  }

  REQUIRE(run_cli(dir, "folds --config cfg.json --out folds").code == 0);
  const json plan = json::parse(slurp(dir / "folds/foldplan.json"));

  SUBCASE("fold plan diagnostics") {
    std::map<std::string, double> volume;
    for (const auto& e : manifest) volume[e["id"]] = e["volume"].get<double>();
    std::vector<std::vector<double>> groups(3);
    std::vector<std::size_t> controls(3, 0);
    for (const auto& a : plan["assignments"]) {
      if (a["is_control"].get<bool>())
        ++controls[a["fold"].get<std::size_t>()];
      else
        groups[a["fold"].get<std::size_t>()].push_back(volume[a["id"]]);
    }
    CHECK(plan["diagnostics"]["kw_p"].get<double>() == doctest::Approx(kw_p(groups)).epsilon(1e-9));
    CHECK(*std::max_element(controls.begin(), controls.end()) - *std::min_element(controls.begin(), controls.end()) <= 1);
    CHECK(controls[0] + controls[1] + controls[2] == 9);
    const auto summary = lesioncal::csv::read_file(dir / "folds/fold_summary.csv");
    CHECK(summary.size() == 4);
  }

  REQUIRE(run_cli(dir, "score --config cfg.json --out score").code == 0);
  const auto rows = lesioncal::csv::read_file(dir / "score/metric_rows.csv");
  const auto col = column_index(rows.front());

  SUBCASE("score") {
    std::map<std::string, std::pair<double, std::size_t>> brute;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      const double dice = std::stod(r[col.at("dice")]);
      if (r[col.at("model_id")] == "labels") {
        CHECK(dice == 1.0);
        CHECK(r[col.at("hd95")] == "0");
      }
      if (r[col.at("model_id")] == "nothing") {
        CHECK(dice == 0.0);
        CHECK(r[col.at("hd95")].empty());
      }
      brute[r[col.at("model_id")]].first += dice;
      brute[r[col.at("model_id")]].second += 1;
    }
    CHECK(rows.size() == 1 + 3 * 24);
    const auto pooled = lesioncal::csv::read_file(dir / "score/pooled_summary.csv");
    const auto pc = column_index(pooled.front());
    for (std::size_t i = 1; i < pooled.size(); ++i) {
      if (pooled[i][pc.at("fold")] != "all") continue;
      const auto& b = brute[pooled[i][pc.at("model_id")]];
      CHECK(std::stod(pooled[i][pc.at("mean_dice")]) == doctest::Approx(b.first / b.second).epsilon(1e-12));
    }
  }

  SUBCASE("anatomy") {
    json cfg = base_config();
    cfg["anatomy"] = json::parse(R"({"n_perm": 100, "seed": 2, "model": "ref", "fwhm": 6})");
    write_config(dir / "anat.json", cfg);
    const Run constant = run_cli(dir, "anatomy --config anat.json --out anat");
    CHECK(constant.code == 1);
    CHECK(constant.err.find("constant") != std::string::npos);

    // Null scores: random Dice values unrelated to lesion location.
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> u(0.5, 1.0);
    std::size_t clean_runs = 0;
    const int runs = 10;
    for (int run = 0; run < runs; ++run) {
      std::vector<lesioncal::csv::Row> out;
      for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i][col.at("model_id")] == "ref") {
          auto r = rows[i];
          r[col.at("dice")] = lesioncal::csv::format_number(u(gen));
          out.push_back(r);
        }
      lesioncal::csv::write_file(dir / "null_rows.csv", rows.front(), out);
      cfg["data"]["metric_rows"] = "null_rows.csv";
      cfg["anatomy"]["seed"] = 100 + run;
      write_config(dir / "null.json", cfg);
      REQUIRE(run_cli(dir, "anatomy --config null.json --out null").code == 0);
      const json s = json::parse(slurp(dir / "null/anatomy.json"));
      clean_runs += s["significant_voxels"].get<std::size_t>() == 0;
      if (run == 0) {
        REQUIRE(run_cli(dir, "anatomy --config null.json --out null_again").code == 0);
        for (const char* f : {"tmap.nii", "fwe_p.nii", "clusters.csv", "overlap.nii", "anatomy.json"})
          CHECK(slurp(dir / "null" / f) == slurp(dir / "null_again" / f));
      }
    }
    CHECK(clean_runs >= 9);
  }

  SUBCASE("morphology") {
    json cfg = base_config();
    cfg["morphology"] = json::parse(R"({"k": 5, "epochs": 100, "seed": 3})");
    cfg["harness"]["models"].erase("nothing");
    cfg["harness"]["models"]["partial"] = json::parse(R"({"builtin": {"theta": 0.985, "tau": 0.001}})");
    write_config(dir / "morph.json", cfg);
    REQUIRE(run_cli(dir, "morphology --config morph.json --out morph").code == 0);

    const auto emb = lesioncal::csv::read_file(dir / "morph/embedding.csv");
    for (std::size_t i = 1; i < emb.size(); ++i)
      if (emb[i][1] == "ground_truth")
        for (int c : {2, 3}) {
          CHECK(std::stod(emb[i][c]) >= -1e-12);
          CHECK(std::stod(emb[i][c]) <= 1.0 + 1e-12);
        }

    std::map<std::string, std::vector<double>> dist;
    for (const auto& r : lesioncal::csv::read_file(dir / "morph/distances.csv"))
      if (r[0] != "model") dist[r[0]].push_back(std::stod(r[2]));
    for (double d : dist["labels"]) CHECK(d < 1e-9);

    // Paired t oracle on the distance differences via Boost's Student t.
    const auto tests = lesioncal::csv::read_file(dir / "morph/model_tests.csv");
    const auto tc = column_index(tests.front());
    bool found = false;
    for (std::size_t i = 1; i < tests.size(); ++i) {
      const std::string a = tests[i][tc.at("model_a")], b = tests[i][tc.at("model_b")];
      if (tests[i][tc.at("status")] != "tested") continue;
      std::vector<double> d;
      for (std::size_t k = 0; k < dist[a].size(); ++k) d.push_back(dist[a][k] - dist[b][k]);
      double m = 0, v = 0;
      for (double x : d) m += x;
      m /= d.size();
      for (double x : d) v += (x - m) * (x - m);
      v /= d.size() - 1;
      const double t = m / std::sqrt(v / d.size());
      boost::math::students_t st(d.size() - 1.0);
      CHECK(std::stod(tests[i][tc.at("t")]) == doctest::Approx(t).epsilon(1e-9));
      CHECK(std::stod(tests[i][tc.at("p")]) ==
            doctest::Approx(2 * boost::math::cdf(boost::math::complement(st, std::fabs(t)))).epsilon(1e-6));
      found = true;
    }
    CHECK(found);
  }

  SUBCASE("noise sweep") {
    json cfg = base_config();
    cfg["harness"]["models"].erase("labels");
    cfg["harness"]["models"]["ref_copy"] = cfg["harness"]["models"]["ref"];
    cfg["noise"] = json::parse(R"({"seed": 4, "schedules": [{"kind": "rician", "max": 0.0, "steps": 3},
                                                           {"kind": "gibbs", "max": 0.5, "steps": 3}]})");
    write_config(dir / "sweep.json", cfg);
    REQUIRE(run_cli(dir, "noise-sweep --config sweep.json --out sweep").code == 0);
    REQUIRE(run_cli(dir, "noise-sweep --config sweep.json --out sweep2").code == 0);
    CHECK(slurp(dir / "sweep/sweep_report.csv") == slurp(dir / "sweep2/sweep_report.csv"));
    CHECK(slurp(dir / "sweep/sweep_tests.csv") == slurp(dir / "sweep2/sweep_tests.csv"));

    std::map<std::string, std::string> clean;
    const auto pooled = lesioncal::csv::read_file(dir / "score/pooled_summary.csv");
    for (const auto& r : pooled)
      if (r[1] == "all") clean[r[0]] = r[3];
    const auto cells = lesioncal::csv::read_file(dir / "sweep/sweep_report.csv");
    const auto cc = column_index(cells.front());
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (cells[i][cc.at("noise")] != "rician") continue;
      const std::string model = cells[i][cc.at("model")] == "ref_copy" ? "ref" : cells[i][cc.at("model")];
      CHECK(cells[i][cc.at("mean_dice")] == clean[model]);
    }
    const auto tests = lesioncal::csv::read_file(dir / "sweep/sweep_tests.csv");
    const auto tc = column_index(tests.front());
    for (std::size_t i = 1; i < tests.size(); ++i)
      if (tests[i][tc.at("model_a")] == "ref" && tests[i][tc.at("model_b")] == "ref_copy")
        CHECK(tests[i][tc.at("status")] == "indistinguishable");
  }

  SUBCASE("fp report") {
    json cfg = base_config();
    cfg["harness"]["models"].erase("labels");
    write_config(dir / "fp.json", cfg);
    REQUIRE(run_cli(dir, "fp-report --config fp.json --out fp").code == 0);
    REQUIRE(run_cli(dir, "fp-report --config fp.json --out fp2").code == 0);
    CHECK(slurp(dir / "fp/bootstrap.csv") == slurp(dir / "fp2/bootstrap.csv"));
    const auto table = lesioncal::csv::read_file(dir / "fp/fp_report.csv");
    CHECK(table.front() == lesioncal::csv::Row{"model", "n", "Mean", "Mean (non-zero)", "SD", "SD (non-zero)",
                                               "count \xE2\x89\xA5" "1", "Max"});
    bool zero_row = false;
    for (const auto& r : table)
      if (r[0] == "nothing") {
        zero_row = true;
        CHECK(r == lesioncal::csv::Row{"nothing", "9", "0", "", "0", "", "0", "0"});
      }
    CHECK(zero_row);
    const json meta = json::parse(slurp(dir / "fp/run_metadata_fp-report.json"));
    CHECK(meta["seeds"]["harness.seed"] == 6);
  }
}

TEST_CASE("config parsing") {
  using namespace lesioncal::cli;
  SUBCASE("overrides") {
    json j = base_config();
    apply_overrides(j, {"folds.k=4", "harness.models.ref.builtin.theta=0.6", "output=out"});
    const RunConfig cfg = parse_config(j, "/base");
    CHECK(cfg.folds->k == 4);
    CHECK(*cfg.output == fs::path("/base/out"));
    CHECK(std::get<lesioncal::BuiltinSegmenter>(cfg.harness->models[2].impl).theta == 0.6);
    CHECK_THROWS_AS(apply_overrides(j, {"folds=3"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(j, {"novalue"}), ConfigError);
  }
  SUBCASE("model definitions") {
    json j = base_config();
    j["harness"]["models"]["two"] = json::parse(R"({"builtin": {}, "command": "cp {input} {output}"})");
    CHECK_THROWS_AS(parse_config(j, "/"), ConfigError);
    j["harness"]["models"]["two"] = json::parse(R"({"command": "cp {input} out"})");
    CHECK_THROWS_AS(parse_config(j, "/"), ConfigError);
  }
  SUBCASE("noise schedules") {
    json j = base_config();
    j["noise"] = json::parse(R"({"seed": 1, "schedules": [
        {"name": "mixed", "components": [{"kind": "bias", "max": 0.5, "steps": 4}, {"kind": "spike", "steps": 4}]}]})");
    const RunConfig cfg = parse_config(j, "/");
    REQUIRE(cfg.noise->arms.size() == 1);
    CHECK(cfg.noise->arms[0].components.size() == 2);
    j["noise"]["schedules"][0]["components"][1]["kind"] = "static";
    CHECK_THROWS_AS(parse_config(j, "/"), ConfigError);
  }
}
