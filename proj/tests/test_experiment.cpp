#include "snbv/experiment.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace snbv {
namespace {

RunConfig tiny_config() {
    RunConfig rc;
    rc.intrinsics = Intrinsics{16, 16, 50.0};
    rc.n_spiral = 12;
    rc.n_random = 4;
    rc.n_test = 2;
    rc.nbv.init_views = 2;
    rc.nbv.add_views = 1;
    rc.train.iters_per_view = 10;
    rc.train.final_iters = 30;
    rc.train.init_count = 300;
    return rc;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

ObjectRow row(const std::string& scene, std::optional<int> target, std::array<double, 4> corners) {
    ObjectRow r;
    r.scene = scene;
    r.target = target;
    r.corner = corners;
    r.center = 0.5;
    r.total = 0.5;
    return r;
}

TEST(Experiment, JobResultsKeepJobOrderAcrossThreadCounts) {
    std::vector<SceneSource> scenes{{"a", generate_scene(3, 3, 0.2), 3}};
    const RunConfig rc = tiny_config();
    std::vector<Job> jobs{{0, Policy::Random, 2, {}}, {0, Policy::Ours, 1, {}}, {0, Policy::Fps, 5, {}}};
    const auto serial = run_jobs(scenes, jobs, rc, 1);
    const auto parallel = run_jobs(scenes, jobs, rc, 3);
    ASSERT_EQ(serial.size(), 3u);
    std::ostringstream a;
    std::ostringstream b;
    write_metrics_rows(a, scenes, serial);
    write_metrics_rows(b, scenes, parallel);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(results_json(scenes, serial).dump(), results_json(scenes, parallel).dump());
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        EXPECT_EQ(serial[i].job.policy, jobs[i].policy);
        EXPECT_EQ(serial[i].job.seed, jobs[i].seed);
    }
}

TEST(Experiment, BaselineRowsLeaveGainEmpty) {
    std::vector<SceneSource> scenes{{"a", generate_scene(4, 3, 0.2), 4}};
    const auto results =
        run_jobs(scenes, {{0, Policy::Spiral, 1, {}}, {0, Policy::Ours, 1, {}}}, tiny_config(), 1);
    std::ostringstream os;
    write_metrics_rows(os, scenes, results);
    std::istringstream lines(os.str());
    std::string spiral;
    std::string ours;
    std::getline(lines, spiral);
    std::getline(lines, ours);
    EXPECT_EQ(spiral.back(), ',');
    EXPECT_NE(ours.back(), ',');
    const auto commas = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
    EXPECT_EQ(commas(spiral), commas(ours));
    EXPECT_EQ(commas(spiral), commas(std::string(kMetricsHeader)));
}

TEST(Experiment, ThreadBudgetFromEnvironment) {
    ::setenv("SNBV_THREADS", "3", 1);
    EXPECT_EQ(thread_budget(), 3);
    ::setenv("SNBV_THREADS", "zero", 1);
    EXPECT_THROW(thread_budget(), std::invalid_argument);
    ::unsetenv("SNBV_THREADS");
    EXPECT_EQ(thread_budget(), 1);
}

TEST(ObjectStudy, JobLayout) {
    const auto jobs = object_study_jobs(2, {1, 2, 3}, Policy::Ours);
    ASSERT_EQ(jobs.size(), 2u * 3u * 5u);
    EXPECT_FALSE(jobs[0].target);
    EXPECT_EQ(*jobs[1].target, 1);
    EXPECT_EQ(*jobs[4].target, 4);
    EXPECT_FALSE(jobs[5].target);
    EXPECT_EQ(jobs[5].seed, 2u);
}

TEST(ObjectStudy, CornerComparisonCountsOwnTargetOnly) {
    std::vector<ObjectRow> rows{
        row("s", std::nullopt, {1.0, 1.0, 1.0, 1.0}),
        row("s", 1, {0.5, 9.0, 9.0, 9.0}), // wins on corner 1 only
        row("s", 2, {0.1, 2.0, 0.1, 0.1}), // loses on corner 2
        row("s", 3, {9.0, 9.0, 0.75, 9.0}),
        row("s", 4, {9.0, 9.0, 9.0, std::numeric_limits<double>::quiet_NaN()}),
    };
    const CornerComparison c = compare_corners(rows);
    EXPECT_EQ(c.cells, 3);
    EXPECT_EQ(c.wins, 2);
    EXPECT_NEAR(c.mean_reduction, (0.5 - 1.0 + 0.25) / 3.0, 1e-12);
}

TEST(ObjectStudy, MeanRowsAverageOverSeeds) {
    std::vector<ObjectRow> rows{row("a", std::nullopt, {1.0, 2.0, 3.0, 4.0}),
                                row("b", std::nullopt, {3.0, 2.0, 1.0, 0.0}), row("a", 2, {1, 1, 1, 1})};
    const auto mean = mean_object_rows(rows);
    ASSERT_EQ(mean.size(), 5u);
    EXPECT_FALSE(mean[0].target);
    for (int k = 0; k < 4; ++k) {
        EXPECT_DOUBLE_EQ(mean[0].corner[k], 2.0);
    }
    EXPECT_DOUBLE_EQ(mean[2].corner[0], 1.0);
    EXPECT_TRUE(std::isnan(mean[1].corner[0]));
}

TEST(ObjectStudy, RowPoolsCenterObjects) {
    SceneSource s{"x", generate_scene(1, 6, 0.0, true), 1};
    JobResult r;
    Evaluation ev;
    ev.objects.assign(7, ObjectError{});
    for (int k = 1; k <= 6; ++k) {
        ev.objects[k] = {static_cast<double>(k), 2};
    }
    r.record.evaluations.push_back(ev);
    const ObjectRow o = object_row(s, r);
    EXPECT_DOUBLE_EQ(o.corner[2], 1.5);
    EXPECT_DOUBLE_EQ(o.center, (5.0 + 6.0) / 4.0);
    EXPECT_DOUBLE_EQ(o.total, 21.0 / 12.0);
}

// ---- command-line tool ----

const std::string kTiny = " --image-size 16 --candidates-spiral 12 --candidates-random 4 --init-views 2"
                          " --add-views 1 --final-iters 20 --iters-per-view 5 --test-views 2";

struct CliTest : ::testing::Test {
    fs::path root;
    void SetUp() override {
        root = fs::temp_directory_path() /
               ("snbv_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    void TearDown() override { fs::remove_all(root); }
    int cli(const std::string& args, const std::string& env = "") const {
        const std::string cmd = env + " \"" SNBV_CLI_PATH "\" " + args + " > \"" + (root / "stdout.txt").string() +
                                "\" 2> \"" + (root / "stderr.txt").string() + "\"";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
};

TEST_F(CliTest, RunSweepWritesOneRowPerPolicyAndSeed) {
    const fs::path out = root / "a";
    ASSERT_EQ(cli("run --scene-seed 7 --policy ours,random --seeds 1,2,3" + kTiny + " --out " + out.string()), 0);
    const std::string csv = read_file(out / "metrics.csv");
    EXPECT_EQ(count_lines(csv), 1 + 6);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "scene,policy,seed,target,views,psnr,ssim,depth_mae,gaussians,"
                                              "selected_ids,mean_selected_gain");
    EXPECT_TRUE(fs::exists(out / "gains.json"));
    EXPECT_TRUE(fs::exists(out / "config.txt"));
    EXPECT_TRUE(fs::exists(out / "scene.json"));
    const auto gains = nlohmann::json::parse(read_file(out / "gains.json"));
    ASSERT_EQ(gains.size(), 6u);
    EXPECT_EQ(gains[0]["rounds"].size(), 1u);
    EXPECT_EQ(gains[3]["rounds"].size(), 0u);
}

TEST_F(CliTest, RerunIsByteIdentical) {
    const std::string args = "run --scene-seed 5 --policy ours,fps --seeds 1,2" + kTiny;
    ASSERT_EQ(cli(args + " --out " + (root / "a").string()), 0);
    ASSERT_EQ(cli(args + " --out " + (root / "b").string(), "SNBV_THREADS=2"), 0);
    EXPECT_EQ(read_file(root / "a" / "metrics.csv"), read_file(root / "b" / "metrics.csv"));
    EXPECT_EQ(read_file(root / "a" / "gains.json"), read_file(root / "b" / "gains.json"));
}

TEST_F(CliTest, MissingSceneFileIsConfigErrorWithoutOutputs) {
    const fs::path out = root / "none";
    EXPECT_EQ(cli("run --scene-file " + (root / "missing.json").string() + " --out " + out.string()), 1);
    EXPECT_FALSE(fs::exists(out));
    EXPECT_EQ(cli("run --policy bogus --out " + out.string()), 1);
    EXPECT_EQ(cli("run --add-views 100 --out " + out.string()), 1);
    EXPECT_EQ(cli("run --target-object 30 --out " + out.string()), 1);
    EXPECT_EQ(cli("run --no-such-flag"), 1);
    EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, ConfigFileWithFlagOverride) {
    const fs::path out = root / "a";
    ASSERT_EQ(cli("run --policy spiral --seeds 4" + kTiny + " --out " + out.string()), 0);
    // the echoed config reproduces the run; a flag overrides the file
    std::string cfg = read_file(out / "config.txt");
    cfg.replace(cfg.find(out.string()), out.string().size(), (root / "b").string());
    std::ofstream(root / "cfg.txt") << cfg;
    ASSERT_EQ(cli("run --config " + (root / "cfg.txt").string()), 0);
    EXPECT_EQ(read_file(out / "metrics.csv"), read_file(root / "b" / "metrics.csv"));
    ASSERT_EQ(cli("run --config " + (root / "cfg.txt").string() + " --seeds 9"), 0);
    EXPECT_NE(read_file(root / "b" / "metrics.csv").find(",spiral,9,"), std::string::npos);
}

TEST_F(CliTest, SceneFileAndMapCheckpointRoundTrip) {
    std::ofstream(root / "s.json") << scene_to_json(generate_scene(2, 3, 0.3)).dump();
    const fs::path out = root / "a";
    ASSERT_EQ(cli("run --scene-file " + (root / "s.json").string() + " --policy random --seeds 1" + kTiny +
                  " --save-map --save-images --out " + out.string()),
              0);
    const fs::path map = out / "maps" / "s_random_s1_v3.snbv";
    ASSERT_TRUE(fs::exists(map));
    EXPECT_TRUE(fs::exists(out / "images" / "s_random_s1_v3" / "view10000_rgb.ppm"));
    EXPECT_TRUE(fs::exists(out / "images" / "s_gt" / "view10000_depth.pfm"));
    const fs::path eval = root / "eval";
    ASSERT_EQ(cli("run --scene-file " + (root / "s.json").string() + kTiny + " --load-map " + map.string() +
                  " --out " + eval.string()),
              0);
    // evaluating the stored map reproduces the run's metrics
    const auto fields = [](const std::string& csv) {
        const std::string line = csv.substr(csv.find('\n') + 1);
        std::vector<std::string> f;
        std::stringstream ss(line.substr(0, line.find('\n')));
        for (std::string x; std::getline(ss, x, ',');) {
            f.push_back(x);
        }
        return f;
    };
    const auto a = fields(read_file(out / "metrics.csv"));
    const auto b = fields(read_file(eval / "metrics.csv"));
    ASSERT_GE(a.size(), 9u);
    ASSERT_GE(b.size(), 9u);
    for (int k : {5, 6, 7, 8}) {
        EXPECT_EQ(a[k], b[k]);
    }
}

TEST_F(CliTest, ObjectStudyTableShape) {
    const fs::path out = root / "a";
    ASSERT_EQ(cli("object-study --scene-seed 1,2 --seeds 1" + kTiny + " --out " + out.string()), 0);
    const std::string table = read_file(out / "objects.csv");
    EXPECT_EQ(table.substr(0, table.find('\n')), "scene,seed,target,corner1,corner2,corner3,corner4,center,total");
    EXPECT_EQ(count_lines(table), 1 + 2 * 5);
    EXPECT_EQ(count_lines(read_file(out / "objects_mean.csv")), 1 + 5);
}

TEST_F(CliTest, ConvergenceRowsPerPolicyCountSeed) {
    const fs::path out = root / "a";
    ASSERT_EQ(cli("convergence --policy ours,spiral --seeds 1,2 --min-views 2 --max-views 4" + kTiny + " --out " +
                  out.string()),
              0);
    const std::string csv = read_file(out / "curve.csv");
    EXPECT_EQ(count_lines(csv), 1 + 2 * 3 * 2);
    EXPECT_EQ(cli("convergence --min-views 1 --init-views 2 --out " + (root / "bad").string()), 1);
    EXPECT_FALSE(fs::exists(root / "bad"));
}

} // namespace
} // namespace snbv
