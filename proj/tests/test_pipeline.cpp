#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>

#include <gtest/gtest.h>

#include "lsre/pipeline.hpp"

using namespace lsre;

namespace {

const char* kSmallConfig = R"({
  "seed": 11,
  "dataset": {"in_dist_clips": 6, "held_out_clips": 2, "few_shot_train_clips": 2,
              "few_shot_test_clips": 3, "normal_frames": 200},
  "world_model": {"dh": 8, "dz": 4, "hidden": 8, "embed": 6, "epochs": 2, "segment_len": 20},
  "classifier": {"hidden": 8, "epochs": 3},
  "monitor": {"horizon": 5}
})";

RunConfig small_config() { return config_from_text(kSmallConfig); }

// One shared gen -> train -> eval run; individual tests inspect or extend it.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("lsre_pipeline_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    const RunConfig cfg = small_config();
    cmd_gen(cfg, root_ / "data");
    first_train_ = new TrainResult(cmd_train(cfg, root_ / "data", root_ / "model"));
  }
  static void TearDownTestSuite() {
    delete first_train_;
    fs::remove_all(root_);
  }

  static fs::path root_;
  static TrainResult* first_train_;
};

fs::path Pipeline::root_;
TrainResult* Pipeline::first_train_ = nullptr;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LSRE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_F(Pipeline, GenWritesExpectedLayoutDeterministically) {
  for (const auto& f : expected_episode_files(root_ / "data")) EXPECT_TRUE(fs::exists(f)) << f;
  const Manifest a = read_manifest(root_ / "data");
  EXPECT_EQ(a.stage, "gen");
  EXPECT_EQ(a.config_hash, config_hash(small_config()));
  EXPECT_EQ(a.tool_version, kToolVersion);
  const Manifest b = cmd_gen(small_config(), root_ / "data2");
  EXPECT_EQ(a.artifacts, b.artifacts);
  EXPECT_EQ(read_episodes(episode_file(root_ / "data", "few_shot_test", Category::SchoolBus)).size(), 3u);
}

TEST_F(Pipeline, NormalDrivingTotalsConfiguredFrames) {
  std::size_t frames = 0;
  for (const auto& ep : read_episodes(normal_file(root_ / "data"))) {
    EXPECT_TRUE(ep.events.empty());
    frames += ep.frames.size();
  }
  EXPECT_EQ(frames, 200u);
}

TEST_F(Pipeline, TrainProducesLoadableBundle) {
  EXPECT_FALSE(first_train_->world_model_reused);
  const ModelBundle b = load_bundle(root_ / "model" / "lsre.ckpt");
  EXPECT_EQ(b.config_hash, config_hash(small_config()));
  EXPECT_EQ(b.wm.dims().dh, 8u);
  EXPECT_TRUE(b.clf.initialized());
  EXPECT_TRUE(b.clf_fewshot.initialized());
  for (const char* f : {"lsre.ckpt", "lsre.ckpt.json", "world_model.ckpt", "train_log.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(root_ / "model" / f)) << f;
}

TEST_F(Pipeline, TrainResumesWorldModelWhenHashMatches) {
  RunConfig cfg = small_config();
  cfg.classifier.train.epochs = 4;  // stage-2 change only
  fs::copy(root_ / "model", root_ / "model_resume", fs::copy_options::recursive);
  const auto r = cmd_train(cfg, root_ / "data", root_ / "model_resume");
  EXPECT_TRUE(r.world_model_reused);
  EXPECT_EQ(read_text(root_ / "model_resume" / "world_model.ckpt"), read_text(root_ / "model" / "world_model.ckpt"));
  cfg.world_model_train.epochs = 1;
  EXPECT_FALSE(cmd_train(cfg, root_ / "data", root_ / "model_resume").world_model_reused);
}

TEST_F(Pipeline, EvalReportHasAllRows) {
  const auto r = cmd_eval(small_config(), root_ / "model" / "lsre.ckpt", root_ / "data", root_ / "report", false);
  EXPECT_TRUE(r.warnings.empty());
  const Json j = Json::parse(read_text(root_ / "report" / "metrics.json"));
  EXPECT_EQ(j.at("tool_version"), kToolVersion);
  EXPECT_EQ(j.at("event_lookback_frames"), 50);
  std::set<std::string> names;
  for (const auto& row : j.at("reports")) {
    names.insert(row.at("name").get<std::string>());
    for (const char* k : {"acc", "rec", "far", "event_recall", "mean_lead_ms", "counts"}) EXPECT_TRUE(row.contains(k));
  }
  for (const auto& m : eval_methods()) {
    EXPECT_TRUE(names.count("in_distribution/micro/" + m)) << m;
    EXPECT_TRUE(names.count("few_shot/macro/" + m)) << m;
    EXPECT_TRUE(names.count("few_shot/school_bus/" + m)) << m;
  }
  EXPECT_TRUE(names.count("normal/threshold"));
  EXPECT_TRUE(names.count("normal/lsre_gated"));
  EXPECT_NE(r.table.find("lead_ms"), std::string::npos);
  // Always-safe never raises a flag.
  for (const auto& row : j.at("reports"))
    if (row.at("name") == "in_distribution/micro/always_safe") {
      EXPECT_EQ(row.at("counts").at("tp"), 0);
      EXPECT_EQ(row.at("rec"), 0.0);
    }
}

TEST_F(Pipeline, ReportKeysMatchSchema) {
  const Json schema = Json::parse(read_text(LSRE_SCHEMA_PATH));
  const auto r = cmd_eval(small_config(), root_ / "model" / "lsre.ckpt", root_ / "data", root_ / "report_s", false);
  auto keys = [](const Json& obj) {
    std::set<std::string> out;
    for (const auto& [k, v] : obj.items()) out.insert(k);
    return out;
  };
  EXPECT_EQ(keys(r.report), schema.at("required").get<std::set<std::string>>());
  const Json& row_schema = schema.at("$defs").at("report");
  for (const auto& row : r.report.at("reports")) {
    ASSERT_EQ(keys(row), row_schema.at("required").get<std::set<std::string>>());
    EXPECT_EQ(keys(row.at("counts")), row_schema.at("properties").at("counts").at("required").get<std::set<std::string>>());
  }
}

TEST_F(Pipeline, EvalRefusesHashMismatchUnlessForced) {
  RunConfig other = small_config();
  other.monitor.theta_high = 0.3;
  EXPECT_THROW(cmd_eval(other, root_ / "model" / "lsre.ckpt", root_ / "data", root_ / "report_x", false),
               ValidationError);
  const auto r = cmd_eval(other, root_ / "model" / "lsre.ckpt", root_ / "data", root_ / "report_x", true);
  EXPECT_EQ(r.warnings.size(), 3u);
}

TEST_F(Pipeline, MissingDataListsExpectedFiles) {
  try {
    cmd_train(small_config(), root_ / "nowhere", root_ / "model_none");
    FAIL();
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("normal.jsonl"), std::string::npos) << msg;
    EXPECT_NE(msg.find("few_shot_train"), std::string::npos) << msg;
  }
}

TEST_F(Pipeline, MonitorWritesOneRowPerFrame) {
  const ModelBundle b = load_bundle(root_ / "model" / "lsre.ckpt");
  const fs::path eps = episode_file(root_ / "data", "few_shot_test", Category::ConstructionZone);
  const std::size_t n = cmd_monitor(b, b.monitor, root_ / "model" / "lsre.ckpt", eps, root_ / "traces", true, "few_shot");
  const auto episodes = read_episodes(eps);
  ASSERT_EQ(n, episodes.size());
  for (const auto& ep : episodes) {
    const std::string csv = read_text(root_ / "traces" / (safe_file_stem(ep.id) + ".csv"));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), std::ptrdiff_t(ep.frames.size() + 1));
    EXPECT_TRUE(fs::exists(root_ / "traces" / (safe_file_stem(ep.id) + ".svg")));
  }
  EXPECT_THROW(cmd_monitor(b, b.monitor, root_ / "model" / "lsre.ckpt", eps, root_ / "t2", false, "nope"),
               ValidationError);
}

TEST_F(Pipeline, BenchReport) {
  const auto r = cmd_bench(small_config(), root_ / "model" / "lsre.ckpt", root_ / "bench", 30, 2);
  const Json j = Json::parse(read_text(root_ / "bench" / "bench.json"));
  EXPECT_EQ(j.at("n"), 30);
  EXPECT_LE(j.at("median_ms").get<double>(), j.at("p95_ms").get<double>());
  EXPECT_TRUE(j.at("outputs_finite").get<bool>());
  EXPECT_TRUE(j.at("host").contains("hardware_threads"));
  EXPECT_EQ(j.at("dims").at("horizon"), 5);
  EXPECT_GT(r.stats.median_ms, 0.0);
}

TEST_F(Pipeline, UncreatableOutputDirectory) {
  write_text(root_ / "plain_file", "x");
  EXPECT_THROW(cmd_gen(small_config(), root_ / "plain_file" / "data"), IoError);
}

TEST_F(Pipeline, ReadOnlyOutputDirectory) {
  const fs::path ro = root_ / "readonly";
  fs::create_directories(ro);
  fs::permissions(ro, fs::perms::owner_read | fs::perms::owner_exec, fs::perm_options::replace);
  if (::access(ro.c_str(), W_OK) == 0) {
    fs::permissions(ro, fs::perms::owner_all, fs::perm_options::replace);
    GTEST_SKIP() << "running with privileges that ignore directory permissions";
  }
  EXPECT_THROW(cmd_gen(small_config(), ro / "data"), IoError);
  EXPECT_THROW(cmd_gen(small_config(), ro), IoError);
  fs::permissions(ro, fs::perms::owner_all, fs::perm_options::replace);
}

TEST_F(Pipeline, CliExitCodes) {
  const fs::path cfg = root_ / "small.json";
  write_text(cfg, kSmallConfig);
  const fs::path bad = root_ / "bad.json";
  write_text(bad, R"({"monitor": {"gamma": 5}})");
  const std::string r = root_.string();
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("--config " + bad.string() + " gen --out " + r + "/cli_bad"), 2);
  EXPECT_EQ(run_cli("--config " + r + "/absent.json gen"), 2);
  EXPECT_EQ(run_cli("--config " + cfg.string() + " bench --ckpt " + r + "/absent.ckpt --out " + r + "/cli_b"), 1);
  EXPECT_EQ(run_cli("--config " + cfg.string() + " eval --ckpt " + r + "/model/lsre.ckpt --data " + r +
                    "/data --out " + r + "/cli_report"),
            0);
  EXPECT_EQ(run_cli("--config " + cfg.string() + " --seed 12 eval --ckpt " + r + "/model/lsre.ckpt --data " + r +
                    "/data --out " + r + "/cli_report2"),
            2);
  cmd_eval(small_config(), root_ / "model" / "lsre.ckpt", root_ / "data", root_ / "lib_report", false);
  EXPECT_EQ(read_text(root_ / "cli_report" / "metrics.json"), read_text(root_ / "lib_report" / "metrics.json"));
}
