#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cvh/harness.hpp"

using namespace cvh;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cvh_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

RunOutcome run(const std::string& cmd, const std::string& cfg, const fs::path& root, bool snapshots = false) {
  RunRequest r;
  r.command = cmd;
  r.config_text = cfg;
  r.output_root = root.string();
  r.snapshots = snapshots;
  return run_scenario(r);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(Harness, NumberFormatAndQuoting) {
  EXPECT_EQ(format_real(0.1), "0.10000000000000001");
  EXPECT_EQ(format_real(1.0), "1");
  EXPECT_EQ(format_real(1.0 / 3.0), "0.33333333333333331");
  for (double x : {-2.5e-300, 6.02214076e23, 1.0 / 7.0}) EXPECT_EQ(std::stod(format_real(x)), x);
  EXPECT_EQ(csv_quote("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_quote("say \"x\""), "\"say \"\"x\"\"\"");
  Table t{{"eta", "residual", "value", "rate"}, {{0.25, std::string("s"), 1.0, Cell{}}}};
  EXPECT_EQ(table_csv(t), "eta,residual,value,rate\n0.25,s,1,\n");
}

TEST(Harness, Sha256) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Harness, EmptyScenarioWritesOnlyTheManifest) {
  const fs::path root = fresh_dir("empty");
  for (const auto& cmd : subcommands()) {
    const auto out = run(cmd, "[run]\noutput = " + cmd + "\n[checks]\n", root);
    EXPECT_EQ(out.exit_code, 0) << cmd << ": " << out.message;
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(out.dir)) names.push_back(e.path().filename().string());
    ASSERT_EQ(names.size(), 1u) << cmd;
    EXPECT_EQ(names[0], "manifest.csv");
    EXPECT_EQ(slurp(out.dir / "manifest.csv"), "file,bytes,sha256\n");
  }
}

TEST(Harness, EtaOneThirdOnSixteenCellsNamesTheDivisibilityRule) {
  const fs::path root = fresh_dir("eta");
  const auto out = run("micro-run", "[grid]\nn = 16\n[eta]\nvalues = 1/2, 1/3\n[checks]\ninvariants = true\n", root);
  EXPECT_EQ(out.exit_code, 2);
  EXPECT_NE(out.message.find("[eta] values"), std::string::npos) << out.message;
  EXPECT_NE(out.message.find("divisibility rule"), std::string::npos) << out.message;
  EXPECT_NE(out.message.find("1/3"), std::string::npos) << out.message;
  EXPECT_FALSE(fs::exists(root));
  // Decimal form, and the same rule for a study that names its grid.
  EXPECT_EQ(run("converge-study", "[grid]\nn = 16\n[eta]\nvalues = 0.3333333333333333\n", root).exit_code, 2);
  EXPECT_EQ(run("unfold-check", "[grid]\nn = 16\n[eta]\nvalues = 0.25, 0.125\n", root).exit_code, 0);
}

TEST(Harness, FieldLevelErrors) {
  const fs::path root = fresh_dir("errors");
  struct Case {
    std::string cmd, cfg, needle;
  };
  const std::vector<Case> cases{
      {"micro-run", "[material]\nmu0 = abc\n", "[material] mu0"},
      {"micro-run", "[grid]\nsize = 3\n", "[grid] size: unknown key"},
      {"micro-run", "[gird]\nn = 3\n", "[gird]: unknown section"},
      {"mono-check", "[checks]\nstructure = true\n", "not a check of mono-check"},
      {"micro-run", "[checks]\ninvariants = maybe\n", "[checks] invariants"},
      {"micro-run", "[flow]\nphase0 = bingham\n", "[flow] phase0"},
      {"micro-run", "[flow]\nphase0 = norton_hoff\nphase0_r = -1\n", "[flow] phase0"},
      {"micro-run", "[material]\nlambda0 = -5\n", "[material] lambda0"},
      {"micro-run", "[eta]\nvalues = 1/4, 1/2\n", "strictly decreasing"},
      {"micro-run", "[time]\nfreeze = 2\n", "[time] freeze"},
      {"micro-run", "[run]\noutput = ../x\n", "[run] output"},
      {"homog-run", "[material]\nC2 = 0.1\n[checks]\ndegeneracy = true\n", "[material] C2"},
      {"converge-study", "[eta]\nvalues = 1/2, 1/4\n[checks]\nlimit = true\n", "at least 3"},
      {"cell-elasticity", "[material]\npattern = checkerboard\n[checks]\noracle = true\n", "[material] pattern"},
      {"micro-run", "[material\n", "config line"},
  };
  for (const auto& c : cases) {
    const auto out = run(c.cmd, c.cfg, root);
    EXPECT_EQ(out.exit_code, 2) << c.cfg;
    EXPECT_NE(out.message.find(c.needle), std::string::npos) << c.cfg << " -> " << out.message;
  }
}

TEST(Harness, OutputRootFromEnvironment) {
  const fs::path root = fresh_dir("env");
  ::setenv("CVH_OUTPUT_ROOT", root.c_str(), 1);
  RunRequest r;
  r.command = "mono-check";
  r.config_text = "[run]\noutput = sub/dir\n";
  const auto out = run_scenario(r);
  ::unsetenv("CVH_OUTPUT_ROOT");
  EXPECT_EQ(out.exit_code, 0);
  EXPECT_TRUE(fs::exists(root / "sub" / "dir" / "manifest.csv"));
  EXPECT_EQ(output_root(""), fs::path("cvh_output"));
}

TEST(Harness, ConvergeStudyOnTheLaminate) {
  const fs::path root = fresh_dir("converge");
  const std::string cfg =
      "[material]\npattern = laminate\nfraction = 0.5\nlambda0 = 1\nmu0 = 1\nlambda1 = 2\nmu1 = 3\n"
      "[load]\nshape = mixed\ncoef0 = 1, 1, 1\n"
      "[eta]\nvalues = 1/2, 1/4, 1/8\n[cell]\ncells_per_eta = 4\n[checks]\nelastic = true\n";
  const auto out = run("converge-study", cfg, root);
  ASSERT_EQ(out.exit_code, 0) << out.message;
  const auto rows = read_csv(out.dir / "report.csv");
  ASSERT_GE(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"eta", "residual", "value", "rate"}));
  std::vector<double> sigma;
  for (const auto& r : rows)
    if (r.size() == 4 && r[1] == "sigma_error") sigma.push_back(std::stod(r[2]));
  ASSERT_EQ(sigma.size(), 3u);
  EXPECT_LT(sigma[1], sigma[0]);
  EXPECT_LT(sigma[2], sigma[1]);
  const auto C = read_csv(out.dir / "effective_tensor.csv");
  ASSERT_EQ(C.size(), 7u);
  EXPECT_EQ(C[0].size(), 7u);
  // Manifest hashes match the files.
  const auto man = read_csv(out.dir / "manifest.csv");
  ASSERT_EQ(man.size(), out.files.size() + 1);
  for (std::size_t i = 1; i < man.size(); ++i) {
    const std::string bytes = slurp(out.dir / man[i][0]);
    EXPECT_EQ(man[i][1], std::to_string(bytes.size()));
    EXPECT_EQ(man[i][2], sha256_hex(bytes));
  }
}

TEST(Harness, DeterministicOutputs) {
  const std::string cfg =
      "[run]\nseed = 3\n[grid]\nn = 8\n[eta]\nvalues = 1/2\n[material]\npattern = checkerboard\nlambda1 = 1.5\nmu1 = 2\n"
      "C1_0 = 0.5\nC1_1 = 0.8\nC2 = 0.05\n[flow]\nphase0 = norton_hoff\nphase0_sigma_y = 0.05\nphase1 = linear\n"
      "phase1_a = 2\n[load]\nshape = bump\ncoef1 = 2, 1, -2\n[time]\nm = 2\n"
      "[checks]\ntrajectory = true\ninvariants = true\n";
  const auto a = run("micro-run", cfg, fresh_dir("det_a"), true);
  const auto b = run("micro-run", cfg, fresh_dir("det_b"), true);
  ASSERT_EQ(a.exit_code, 0) << a.message;
  ASSERT_EQ(b.exit_code, 0);
  EXPECT_EQ(slurp(a.dir / "manifest.csv"), slurp(b.dir / "manifest.csv"));
  EXPECT_TRUE(fs::exists(a.dir / "p_K2.cvhf"));
  const auto m1 = run("mono-check", "[checks]\nmonotone = true\n[mono]\npairs = 500\nclass_m_samples = 500\n",
                      fresh_dir("det_c"));
  const auto m2 = run("mono-check", "[checks]\nmonotone = true\n[mono]\npairs = 500\nclass_m_samples = 500\n",
                      fresh_dir("det_d"));
  EXPECT_EQ(m1.exit_code, 0) << m1.message;
  EXPECT_EQ(slurp(m1.dir / "manifest.csv"), slurp(m2.dir / "manifest.csv"));
}

TEST(Harness, FailingCheckExitsOne) {
  const fs::path root = fresh_dir("fail");
  const std::string cfg =
      "[material]\npattern = laminate\nlambda1 = 2\nmu1 = 3\n[cell]\nn = 4\noracle_tol = 1e-300\n"
      "[checks]\ncell = true\noracle = true\n";
  const auto out = run("cell-elasticity", cfg, root);
  EXPECT_EQ(out.exit_code, 1);
  const auto rows = read_csv(out.dir / "checks.csv");
  bool saw = false;
  for (const auto& r : rows)
    if (r[0] == "laminate_oracle") {
      saw = true;
      EXPECT_EQ(r[4], "false");
    }
  EXPECT_TRUE(saw);
}
