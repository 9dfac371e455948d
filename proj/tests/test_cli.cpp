#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "spinelab/cli.hpp"

using namespace spinelab;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "spinelab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() : path_(std::filesystem::temp_directory_path() / ("spinelab_cli_" + std::to_string(::getpid()))) {
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }

  std::string write(const std::string& name, const std::string& text) const {
    const auto file = path_ / name;
    std::ofstream(file) << text;
    return file.string();
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream s(line);
  for (std::string cell; std::getline(s, cell, sep);) out.push_back(cell);
  return out;
}

// Data lines of a CSV with '#' comment lines dropped; the first is the header.
std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream s(text);
  for (std::string line; std::getline(s, line);)
    if (!line.empty() && line[0] != '#') rows.push_back(split(line, ','));
  return rows;
}

const std::string kBbm = "model = bbm\n[bbm]\nr = 1\noffspring = finite(0, 1)\n";

const std::string kDegenerate =
    "model = typed\nlambda_grid = -2, -0.1, 7\n[typed]\ntheta = 0.7\nq = -2, 1, 1; 1, -2, 1; 1, 1, -2\n"
    "a = 2, 2, 2\nr = 0.5, 0.5, 0.5\noffspring = finite(0, 1); finite(0, 1); finite(0, 1)\n";

}  // namespace

TEST(Cli, ClassifyBelowLambdaTilde) {
  TempDir dir;
  const Result r = run({"classify", dir.write("c.cfg", "lambda = -2\n" + kBbm)});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["verdict"], "AS_ZERO");
  EXPECT_NE(j["reason"].get<std::string>().find("λ ≤ λ̃"), std::string::npos);
  EXPECT_EQ(j["spinelab"]["version"], std::string(kVersion));
  EXPECT_EQ(j["spinelab"]["subcommand"], "classify");
}

TEST(Cli, EigenDegenerateHasFlatEigenvector) {
  TempDir dir;
  const Result r = run({"eigen", dir.write("e.cfg", kDegenerate)});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv_rows(r.out);
  ASSERT_EQ(rows.size(), 8u);
  const auto& head = rows[0];
  std::vector<std::size_t> v_cols;
  for (std::size_t c = 0; c < head.size(); ++c)
    if (head[c].rfind("v_", 0) == 0) v_cols.push_back(c);
  ASSERT_EQ(v_cols.size(), 3u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double l = std::stod(rows[i][0]);
    EXPECT_NEAR(std::stod(rows[i][1]), l * l + 0.5, 1e-12);
    for (std::size_t c : v_cols) EXPECT_NEAR(std::stod(rows[i][c]), 1.0, 1e-12);
  }
}

TEST(Cli, InvalidConfigsExitTwo) {
  TempDir dir;
  const Result bad_q = run({"eigen", dir.write("q.cfg", [] {
                              std::string s = kDegenerate;
                              s.replace(s.find("q = -2"), 6, "q = -3");
                              return s;
                            }())});
  EXPECT_EQ(bad_q.code, 2);
  EXPECT_NE(bad_q.err.find("rows of Q sum to 0"), std::string::npos);

  const Result unknown = run({"classify", dir.write("u.cfg", "lambda = -1\nlamda = 2\n" + kBbm)});
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("lamda"), std::string::npos);

  const Result missing = run({"classify", dir.write("m.cfg", kBbm)});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("lambda"), std::string::npos);

  const Result ou_lmp = run({"lmp", dir.write("o.cfg", "model = ou\nt = 1\n")});
  EXPECT_EQ(ou_lmp.code, 2);
}

TEST(Cli, ErrorCodesMapToExitStatus) {
  TempDir dir;
  const Result out_of_domain = run({"classify", dir.write("d.cfg", "lambda = 0.5\n" + kBbm)});
  EXPECT_EQ(out_of_domain.code, 6);
  const Result explosion = run({"simulate", dir.write("x.cfg", "t = 30\ncap = 100\n" + kBbm)});
  EXPECT_EQ(explosion.code, 3);
  EXPECT_NE(explosion.err.find("POPULATION_EXPLOSION"), std::string::npos);
}

TEST(Cli, HeaderRecordsResolvedConfig) {
  TempDir dir;
  const Result r = run({"simulate", dir.write("s.cfg", "t = 1\nseed = 4\n" + kBbm), "--seed", "11"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("# spinelab " + std::string(kVersion) + "\n", 0), 0u);
  EXPECT_NE(r.out.find("# subcommand = simulate\n"), std::string::npos);
  EXPECT_NE(r.out.find("# seed = 11\n"), std::string::npos);
  EXPECT_NE(r.out.find("# bbm.offspring = finite(0, 1)\n"), std::string::npos);
}

TEST(Cli, RerunsAreIdentical) {
  TempDir dir;
  const std::string cfg = dir.write("r.cfg", "t = 2\nlambda = -0.5\nreps = 50\ntime_grid = 0.5, 1\n" + kBbm);
  for (const char* sub : {"simulate", "martingale", "lmp"}) {
    const Result a = run({sub, cfg});
    const Result b = run({sub, cfg});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out) << sub;
  }
  EXPECT_NE(run({"simulate", cfg, "--seed", "2"}).out, run({"simulate", cfg}).out);
}

TEST(Cli, OutputFilesAndSpineTrace) {
  TempDir dir;
  const std::string cfg = dir.write("q.cfg", "t = 1.5\nlambda = -1\nmeasure = q\nreps = 20\n" + kBbm);
  const std::string out = dir.file("snap.csv");
  ASSERT_EQ(run({"simulate", cfg, "--out", out}).code, 0);
  const auto snap = csv_rows(slurp(out));
  ASSERT_GE(snap.size(), 2u);
  int on_spine = 0;
  for (std::size_t i = 1; i < snap.size(); ++i) on_spine += snap[i][4] == "1";
  EXPECT_EQ(on_spine, 1);
  const auto trace = csv_rows(slurp(out + ".spine.csv"));
  ASSERT_GE(trace.size(), 2u);
  EXPECT_EQ(trace.back()[0], "terminal");

  const std::string curve = dir.file("curve.csv");
  ASSERT_EQ(run({"martingale", cfg, "--out", curve}).code, 0);
  const auto rows = csv_rows(slurp(curve));
  EXPECT_EQ(rows[0], (std::vector<std::string>{"time", "mean", "se", "n", "flag"}));
  const auto summary = nlohmann::json::parse(slurp(curve + ".summary.json"));
  EXPECT_EQ(summary["verdict"], "L1_CONVERGENT");
}

TEST(Cli, RegionCoversGrid) {
  TempDir dir;
  const Result r = run({"region", dir.write("g.cfg", "lambda_grid = -2, -0.2, 4\np_grid = 1.5, 2, 2\n" + kBbm)});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv_rows(r.out);
  ASSERT_EQ(rows.size(), 1u + 4u * 3u);
  EXPECT_EQ(rows[1][1], "1");
  EXPECT_EQ(rows[1][2], "AS_ZERO");
}

TEST(Cli, SpineCheckReport) {
  TempDir dir;
  const Result r =
      run({"spine-check", dir.write("k.cfg", "t = 1\nlambda = -0.5\nreps = 400\nsubtree_reps = 100\n" + kBbm)});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j.contains("spine_statistics"));
  EXPECT_TRUE(j.contains("rn_consistency"));
  EXPECT_TRUE(j.contains("spine_decomp_check"));
}

TEST(Cli, SampleConfigsLoad) {
  for (const char* name : {"bbm.cfg", "typed.cfg", "ou.cfg", "lmp.cfg"}) {
    std::ifstream in(std::string(SPINELAB_CONFIG_DIR) + "/" + name);
    std::stringstream s;
    s << in.rdbuf();
    EXPECT_NO_THROW(load_run_config(Config::parse(s.str()))) << name;
  }
  const Result r = run({"classify", std::string(SPINELAB_CONFIG_DIR) + "/ou.cfg"});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, UsageErrors) {
  EXPECT_NE(run({}).code, 0);
  EXPECT_NE(run({"classify", "/nonexistent/file.cfg"}).code, 0);
  EXPECT_EQ(run({"--version"}).code, 0);
}
