#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "varexp/cli.hpp"

using namespace varexp;
namespace fs = std::filesystem;

namespace {

class Workspace {
 public:
  explicit Workspace(const std::string& name) : dir_(fs::temp_directory_path() / ("varexp_cli_" + name)) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Workspace() { fs::remove_all(dir_); }

  fs::path write(const std::string& file, const std::string& text) const {
    std::ofstream(dir_ / file, std::ios::binary) << text;
    return dir_ / file;
  }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run(const std::string& command, const fs::path& config, const fs::path& out, std::optional<int> threads = {},
        std::optional<std::uint64_t> seed = {}) {
  std::ostringstream log;
  return cli::run(command, {config, out, seed, threads}, log);
}

const std::string kSmallSolve =
    "[grid]\ndim = 2\ncells = 12\n"
    "[exponent]\nkind = bump\nbase = 2.2\namplitude = 0.3\nwidth = 0.25\n"
    "[instance]\nkind = matched\n";

const std::string kBumpVerify =
    "[grid]\ndim = 2\norigin = -1\nextent = 2\ncells = 32\n"
    "[exponent]\nkind = bump\nbase = 2.1\namplitude = 0.2\nwidth = 0.5\n"
    "[instance]\nkind = bump\namplitude = 4\nwidth = 0.15\n"
    "[estimates]\nroot_side = 1\nstructure_samples = 2000\n";

}  // namespace

TEST(Cli, SolveWritesFieldsThatReloadBitExact) {
  Workspace ws("solve");
  const auto cfg = ws.write("c.ini", kSmallSolve);
  ASSERT_EQ(run("solve", cfg, ws.dir() / "out"), cli::kSuccess);
  for (const char* f : {"u.vxf", "p.vxf", "G.vxf", "solve.csv", "report.txt"})
    EXPECT_TRUE(fs::exists(ws.dir() / "out" / f)) << f;

  cli::Context ctx;
  ctx.cfg = Config::load(cfg);
  const cli::Problem pr = cli::build_problem(ctx);
  const SolverResult r = solve_pxlaplace(pr.instance.G, pr.p, pr.instance.boundary, pr.grid, pr.solver);
  const GridFunction u = nodal_field(load_vxf(ws.dir() / "out" / "u.vxf"));
  EXPECT_TRUE(u.grid == pr.grid);
  EXPECT_EQ(u.values, r.u.values);
  EXPECT_EQ(nodal_field(load_vxf(ws.dir() / "out" / "p.vxf")).values, pr.p.field().values);

  const std::string report = slurp(ws.dir() / "out" / "report.txt");
  EXPECT_NE(report.find("version: 0.1.0"), std::string::npos);
  EXPECT_NE(report.find("config_fnv1a: "), std::string::npos);
  EXPECT_NE(report.find("status: ok"), std::string::npos);
  EXPECT_NE(report.find("csv solve.csv: step,stage,gamma,energy,residual"), std::string::npos);
}

TEST(Cli, TableExponentFromWrittenFile) {
  Workspace ws("table");
  ASSERT_EQ(run("solve", ws.write("a.ini", kSmallSolve), ws.dir() / "a"), cli::kSuccess);
  const std::string table =
      "[grid]\ndim = 2\ncells = 12\n[exponent]\nkind = table\nfile = a/p.vxf\n[instance]\nkind = matched\n";
  ASSERT_EQ(run("solve", ws.write("b.ini", table), ws.dir() / "b"), cli::kSuccess);
  EXPECT_EQ(slurp(ws.dir() / "a" / "u.vxf"), slurp(ws.dir() / "b" / "u.vxf"));
}

TEST(Cli, ConfigErrorsExitWithOne) {
  Workspace ws("errors");
  EXPECT_EQ(run("solve", ws.dir() / "missing.ini", ws.dir() / "o"), cli::kConfigError);
  EXPECT_EQ(run("solve", ws.write("u.ini", kSmallSolve + "[solver]\nbogus = 1\n"), ws.dir() / "o"), cli::kConfigError);
  EXPECT_EQ(run("solve", ws.write("d.ini", "[grid]\ncells = 8\ncells = 9\n"), ws.dir() / "o"), cli::kConfigError);
  EXPECT_EQ(run("solve", ws.write("p.ini", "[exponent]\nkind = constant\nvalue = 1\n"), ws.dir() / "o"),
            cli::kConfigError);
  EXPECT_EQ(run("solve", ws.write("t.ini", "[exponent]\nkind = table\nfile = nowhere.vxf\n"), ws.dir() / "o"),
            cli::kConfigError);
  EXPECT_EQ(run("sweep", ws.write("s.ini", kSmallSolve), ws.dir() / "o"), cli::kConfigError);
  EXPECT_EQ(run("frobnicate", ws.write("f.ini", kSmallSolve), ws.dir() / "o"), cli::kConfigError);
  EXPECT_EQ(run("solve", ws.write("z.ini", kSmallSolve), ws.dir() / "o", 0), cli::kConfigError);
}

TEST(Cli, NonConvergenceExitsWithTwo) {
  Workspace ws("nonconv");
  const auto cfg = ws.write(
      "c.ini",
      "[grid]\ncells = 16\n[exponent]\nkind = bump\nbase = 1.4\namplitude = 0.8\nwidth = 0.2\n"
      "[instance]\nkind = matched\nfrequency = 3\n[solver]\ngamma_schedule = 0\nmax_iterations = 1\n");
  EXPECT_EQ(run("solve", cfg, ws.dir() / "out"), cli::kNotConverged);
  EXPECT_NE(slurp(ws.dir() / "out" / "report.txt").find("status: not_converged"), std::string::npos);
}

TEST(Cli, VerifyWithUnitQReportsTrivialBound) {
  Workspace ws("verify");
  const auto cfg = ws.write("c.ini", kBumpVerify + "q = 1\n");
  ASSERT_EQ(run("verify", cfg, ws.dir() / "out"), cli::kSuccess);
  const std::string csv = slurp(ws.dir() / "out" / "verify.csv");
  EXPECT_EQ(csv.rfind("record,cube,resolution,lhs,rhs,constant,flags,details\n", 0), 0u);
  for (const char* name : {"caccioppoli", "reverse_holder", "higher_integrability", "trivial_constant"})
    EXPECT_NE(csv.find(std::string("\n") + name + ","), std::string::npos) << name;
  EXPECT_NE(slurp(ws.dir() / "out" / "report.txt").find("[record trivial_constant]"), std::string::npos);
}

TEST(Cli, GehringOnLinearInstanceFindsGain) {
  Workspace ws("gehring");
  const auto cfg = ws.write("c.ini",
                            "[grid]\ncells = 32\n[exponent]\nkind = constant\nvalue = 2\n[instance]\nkind = linear\n");
  ASSERT_EQ(run("gehring", cfg, ws.dir() / "out"), cli::kSuccess);
  const std::string report = slurp(ws.dir() / "out" / "report.txt");
  const auto at = report.find("\nm0: ");
  ASSERT_NE(at, std::string::npos);
  EXPECT_GT(std::stod(report.substr(at + 5)), 1.0);
  EXPECT_EQ(slurp(ws.dir() / "out" / "gehring.csv").rfind("mu,lhs,rhs,constant,cube\n", 0), 0u);
}

TEST(Cli, GoodLambdaAndSweepProduceTables) {
  Workspace ws("tables");
  const auto cfg = ws.write("c.ini", kBumpVerify + "m0 = 2\nlambda_count = 4\n[sweep]\nkind = size\nvalues = 0.5 1\n");
  ASSERT_EQ(run("goodlambda", cfg, ws.dir() / "gl"), cli::kSuccess);
  const std::string gl = slurp(ws.dir() / "gl" / "goodlambda.csv");
  EXPECT_EQ(gl.rfind("epsilon,lambda,measure_U,measure_O,ratio\n", 0), 0u);
  EXPECT_EQ(std::count(gl.begin(), gl.end(), '\n'), 1 + 4 * 4);
  EXPECT_TRUE(fs::exists(ws.dir() / "gl" / "goodlambda_cubes.csv"));
  ASSERT_EQ(run("sweep", cfg, ws.dir() / "sw"), cli::kSuccess);
  const std::string sw = slurp(ws.dir() / "sw" / "sweep.csv");
  EXPECT_EQ(std::count(sw.begin(), sw.end(), '\n'), 3);
}

TEST(Cli, OutputsAreDeterministicAcrossRunsAndThreads) {
  Workspace ws("determinism");
  const auto cfg = ws.write("c.ini", kBumpVerify + "m0 = 2\nlambda_count = 4\n");
  for (const std::string cmd : {"solve", "verify", "goodlambda"}) {
    ASSERT_EQ(run(cmd, cfg, ws.dir() / (cmd + "1"), 1, 5), cli::kSuccess);
    ASSERT_EQ(run(cmd, cfg, ws.dir() / (cmd + "2"), 1, 5), cli::kSuccess);
    ASSERT_EQ(run(cmd, cfg, ws.dir() / (cmd + "4"), 4, 5), cli::kSuccess);
    for (const auto& entry : fs::directory_iterator(ws.dir() / (cmd + "1"))) {
      const auto name = entry.path().filename();
      if (name == "report.txt") continue;
      const std::string a = slurp(entry.path());
      EXPECT_EQ(a, slurp(ws.dir() / (cmd + "2") / name)) << cmd << " " << name;
      EXPECT_EQ(a, slurp(ws.dir() / (cmd + "4") / name)) << cmd << " threads " << name;
    }
  }
}

TEST(Cli, DenoiseZeroStrengthReturnsInput) {
  Workspace ws("denoise0");
  const auto cfg = ws.write("c.ini", "[denoise]\nstrength = 0\nsynthetic_width = 24\nsynthetic_height = 16\n");
  ASSERT_EQ(run("denoise", cfg, ws.dir() / "out"), cli::kSuccess);
  EXPECT_EQ(load_pgm(ws.dir() / "out" / "denoised.pgm").pixels, load_pgm(ws.dir() / "out" / "input.pgm").pixels);
}

TEST(Cli, DenoiseKeepsConstantImageAndHonorsFormat) {
  Workspace ws("denoisec");
  Image img{20, 12, std::vector<std::uint8_t>(240, 77)};
  save_pgm(ws.dir() / "flat.pgm", img, false);
  const auto cfg = ws.write("c.ini", "[denoise]\ninput = flat.pgm\noutput = clean.pgm\nformat = P2\n");
  ASSERT_EQ(run("denoise", cfg, ws.dir() / "out"), cli::kSuccess);
  EXPECT_EQ(slurp(ws.dir() / "out" / "clean.pgm").rfind("P2\n20 12\n255\n", 0), 0u);
  EXPECT_EQ(load_pgm(ws.dir() / "out" / "clean.pgm").pixels, img.pixels);
  EXPECT_TRUE(fs::exists(ws.dir() / "out" / "p.pgm"));
  EXPECT_TRUE(fs::exists(ws.dir() / "out" / "denoise.csv"));
}

TEST(Cli, BinaryHonorsExitCodesAndOverrides) {
  Workspace ws("binary");
  const auto cfg = ws.write("c.ini", kSmallSolve);
  const std::string bin = VAREXP_BINARY;
  const auto status = [&](const std::string& args) {
    const int s = std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("solve --config " + cfg.string() + " --out " + (ws.dir() / "o").string() +
                   " --seed 9 --threads 2"),
            0);
  const std::string report = slurp(ws.dir() / "o" / "report.txt");
  EXPECT_NE(report.find("seed: 9"), std::string::npos);
  EXPECT_NE(report.find("threads: 2"), std::string::npos);
  EXPECT_EQ(status("solve"), 1);
  EXPECT_EQ(status("unknown --config " + cfg.string()), 1);
  EXPECT_EQ(status("solve --config " + (ws.dir() / "none.ini").string()), 1);
}
