#include <cstdio>
#include <regex>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vinedmp/service.hpp"

using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

/// Runs the CLI with `args` (already shell-quoted), capturing both streams.
Run cli(const std::string& args, const testutil::TempDir& scratch) {
  const auto err_path = scratch / "stderr.txt";
  const std::string cmd = std::string(VINEDMP_CLI) + " " + args + " 2>" + err_path.string();
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(err_path);
  r.err.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  testutil::TempDir t("cli_usage");
  EXPECT_EQ(cli("", t).code, 1);
  EXPECT_EQ(cli("frobnicate", t).code, 1);
  EXPECT_EQ(cli("gen-dataset --count 3", t).code, 1);
  EXPECT_EQ(cli("gen-dataset --count 3 --seed 1 --out " + q(t / "d") + " --split 1/2", t).code, 1);
  EXPECT_EQ(cli("gen-dataset --count 3 --seed 1 --out " + q(t / "d") + " --image-size big", t).code, 1);
  EXPECT_EQ(cli("--help", t).code, 0);
}

TEST(Cli, GenDatasetIsDeterministic) {
  testutil::TempDir t("cli_gen");
  const std::string common = "gen-dataset --count 10 --seed 7 --image-size 96x128 --augment-factor 1 --quiet --out ";
  const auto a = cli(common + q(t / "a"), t);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_TRUE(std::regex_search(a.out, std::regex(R"(wrote \d+ samples to .* \(train \d+, dev 1, test 1\))"))) << a.out;
  ASSERT_EQ(cli(common + q(t / "b"), t).code, 0);
  EXPECT_EQ(testutil::read_tree(t / "a"), testutil::read_tree(t / "b"));
  // Refuses to write over an existing dataset.
  const auto again = cli(common + q(t / "a"), t);
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.err.find("already exists"), std::string::npos);
}

TEST(Cli, TrainEvalRoundTrip) {
  testutil::TempDir t("cli_train");
  ASSERT_EQ(cli("gen-dataset --count 12 --seed 2 --image-size 96x128 --quiet --out " + q(t / "ds"), t).code, 0);
  const std::string train = "train --data " + q(t / "ds") + " --epochs 2 --batch 4 --input-size 32 --seed 3 --quiet --out ";
  const auto r1 = cli(train + q(t / "m1.ckpt"), t);
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(cli(train + q(t / "m2.ckpt"), t).code, 0);
  EXPECT_EQ(testutil::read_tree(t.path()).at("m1.ckpt"), testutil::read_tree(t.path()).at("m2.ckpt"));
  const auto report = json::parse(std::ifstream(t / "m1.report.json"));
  EXPECT_EQ(report["checkpoint"], "m1.ckpt");
  EXPECT_EQ(report["dev_loss"].size(), 2u);

  const auto ev = cli("eval --data " + q(t / "ds") + " --model " + q(t / "m1.ckpt") + " --split dev test --success-sim", t);
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_TRUE(std::regex_search(ev.out, std::regex(R"(dev: \d+\.\d\d ± \d+\.\d\d px)"))) << ev.out;
  EXPECT_TRUE(std::regex_search(ev.out, std::regex(R"(test: \d+\.\d\d ± \d+\.\d\d px)"))) << ev.out;
  EXPECT_TRUE(std::regex_search(ev.out, std::regex(R"(test success: \d+/\d+ \(\d+\.\d%\))"))) << ev.out;

  const auto replay = cli("eval --data " + q(t / "ds") + " --split test --replay-demos --success-sim", t);
  ASSERT_EQ(replay.code, 0) << replay.err;
  EXPECT_NE(replay.out.find("test: 0.00 ± 0.00 px"), std::string::npos) << replay.out;
  EXPECT_TRUE(std::regex_search(replay.out, std::regex(R"(test success: (\d+)/\1 \(100\.0%\))"))) << replay.out;

  EXPECT_EQ(cli("eval --data " + q(t / "ds") + " --model " + q(t / "none.ckpt"), t).code, 1);
  EXPECT_EQ(cli("eval --data " + q(t / "nowhere") + " --model " + q(t / "m1.ckpt"), t).code, 1);
}

TEST(Cli, TrainWithoutDevSplit) {
  testutil::TempDir t("cli_nodev");
  ASSERT_EQ(cli("gen-dataset --count 4 --seed 2 --split 100/0/0 --image-size 64x64 --quiet --out " + q(t / "ds"), t).code, 0);
  const auto r = cli("train --data " + q(t / "ds") + " --epochs 1 --quiet --out " + q(t / "m.ckpt"), t);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("dev split required for model selection"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(t / "m.ckpt"));
}

TEST(Cli, PredictGoldenAndStdout) {
  testutil::TempDir t("cli_predict");
  const std::string base = "predict --model " + q(testutil::data_path("predict_model.ckpt")) + " --image " +
                           q(testutil::data_path("predict_image.png")) + " --rig ";
  const auto r = cli(base + q(testutil::data_path("rig_fronto.json")) + " --out " + q(t / "p.json"), t);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto got = json::parse(std::ifstream(t / "p.json"));
  const auto golden = testutil::load_json("predict_golden.json");
  const auto& gp = golden["plane_trajectory"]["points"];
  ASSERT_EQ(got["plane_trajectory"]["points"].size(), gp.size());
  for (std::size_t i = 0; i < gp.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k)
      EXPECT_NEAR(got["plane_trajectory"]["points"][i][k].get<double>(), gp[i][k].get<double>(), 1e-6);

  const auto s = cli(base + q(testutil::data_path("rig_fronto.json")), t);
  ASSERT_EQ(s.code, 0);
  EXPECT_EQ(json::parse(s.out)["yaw"], got["yaw"]);
}

TEST(Cli, PredictReportsProjectionFailure) {
  testutil::TempDir t("cli_behind");
  const auto r = cli("predict --model " + q(testutil::data_path("predict_model.ckpt")) + " --image " +
                         q(testutil::data_path("predict_image.png")) + " --rig " + q(testutil::data_path("rig_behind.json")),
                     t);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("PointBehindCamera"), std::string::npos) << r.err;
  EXPECT_TRUE(std::regex_search(r.err, std::regex(R"(point \d+)"))) << r.err;
  EXPECT_EQ(cli("predict --model " + q(testutil::data_path("predict_model.ckpt")) + " --image " + q(t / "none.png") +
                    " --rig " + q(testutil::data_path("rig_fronto.json")),
                t)
                .code,
            1);
}

TEST(Cli, ServeBindFailure) {
  testutil::TempDir t("cli_serve");
  httplib::Server blocker;
  const int port = blocker.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  const auto r = cli("serve --port " + std::to_string(port) + " --data " + q(t / "data"), t);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cannot bind"), std::string::npos) << r.err;
}
