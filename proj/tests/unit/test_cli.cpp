#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "revmap/dataset.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = REVMAP_CLI;

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + kCli + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("revmap_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string p(const std::string& name) const { return (dir / name).string(); }
  fs::path dir;
};

}  // namespace

TEST_F(Cli, GenDataIsDeterministic) {
  ASSERT_EQ(run("gen-data --count 2 --steps 60 --seed 3 --out " + p("a.csv")), 0);
  ASSERT_EQ(run("gen-data --count 2 --steps 60 --seed 3 --out " + p("b.csv")), 0);
  ASSERT_EQ(run("gen-data --count 2 --steps 60 --seed 4 --out " + p("c.csv")), 0);
  EXPECT_EQ(slurp(p("a.csv")), slurp(p("b.csv")));
  EXPECT_NE(slurp(p("a.csv")), slurp(p("c.csv")));
  EXPECT_TRUE(fs::exists(p("a.csv.manifest.json")));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("train bogus --data x --out y"), 2);
  EXPECT_EQ(run("gen-data --no-such-flag"), 2);
  EXPECT_EQ(run("gen-data --count 0 --out " + p("z.csv")), 3);
  EXPECT_EQ(run("train scn --data " + p("missing.csv") + " --out " + p("m.json")), 3);
  ASSERT_EQ(run("gen-data --count 2 --steps 60 --out " + p("d.csv")), 0);
  EXPECT_EQ(run("eval recon --checkpoint " + p("missing.json") + " --data " + p("d.csv") + " --out " + p("r.txt")), 3);
}

TEST_F(Cli, ConfigAndEnvironmentPrecedence) {
  std::ofstream(p("run.cfg")) << "# generator\ncount = 3\nsteps=60\nseed=5\n";
  ASSERT_EQ(run("gen-data --config " + p("run.cfg") + " --out " + p("cfg.csv")), 0);
  EXPECT_EQ(revmap::load_dataset(p("cfg.csv")).header["trajectories"], 3);
  ASSERT_EQ(run("gen-data --config " + p("run.cfg") + " --out " + p("env.csv"), "REVMAP_COUNT=2"), 0);
  EXPECT_EQ(revmap::load_dataset(p("env.csv")).header["trajectories"], 2);
  ASSERT_EQ(run("gen-data --count 1 --config " + p("run.cfg") + " --out " + p("cli.csv"), "REVMAP_COUNT=2"), 0);
  EXPECT_EQ(revmap::load_dataset(p("cli.csv")).header["trajectories"], 1);

  std::ofstream(p("bad.cfg")) << "colour = red\n";
  EXPECT_EQ(run("gen-data --config " + p("bad.cfg") + " --out " + p("bad.csv")), 2);
  EXPECT_EQ(run("gen-data --config " + p("absent.cfg") + " --out " + p("bad.csv")), 3);
}

TEST_F(Cli, ManifestRerunReproducesOutputs) {
  ASSERT_EQ(run("gen-data --count 2 --steps 90 --seed 1 --out " + p("d.csv")), 0);
  ASSERT_EQ(run("train scn --data " + p("d.csv") + " --out " + p("m.json") +
                " --epochs 3 --batch 16 --encoder-hidden 8 --feature-width 6 --tensor-hidden 6 --seed 2"),
            0);
  ASSERT_TRUE(fs::exists(p("m.json.manifest.json")));
  fs::create_directories(p("again"));
  ASSERT_EQ(run("rerun " + p("m.json.manifest.json") + " --out-dir " + p("again")), 0);
  EXPECT_EQ(slurp(p("m.json")), slurp(dir / "again" / "m.json"));
  EXPECT_EQ(slurp(p("m.json.report")), slurp(dir / "again" / "m.json.report"));
  EXPECT_EQ(run("rerun " + p("nothing.json")), 3);
  EXPECT_EQ(run("eval simteleop --checkpoint " + p("m.json") + " --data " + p("d.csv") + " --tasks 1 --budget 5 --bound-scale 0 --out " +
                p("s.csv")),
            3);
  EXPECT_EQ(run("eval simteleop --checkpoint " + p("m.json") + " --data " + p("d.csv") + " --tasks 1 --budget 5 --bound-scale 2 --out " +
                p("s.csv")),
            0);
}
