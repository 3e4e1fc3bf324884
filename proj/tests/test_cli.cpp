#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "tsot/cli.hpp"

using namespace tsot;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("tsot_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir_);
        write("mu.json", R"({"dim":1,"atoms":[[0.0],[0.5],[1.0]],"weights":[0.25,0.5,0.25]})");
        write("nu.json", R"({"dim":1,"atoms":[[0.2],[0.9]],"weights":[0.5,0.5]})");
        write("bad.json", R"({"dim":1,"atoms":[[0.2],[0.9]],"weights":[0.5,0.4]})");
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    void write(const std::string& name, const std::string& body) const { io::write_atomic(path(name), body); }
    std::string read(const std::string& name) const { return io::read_file(path(name)); }

    int run(std::vector<std::string> args) {
        args.insert(args.begin(), "tsot");
        std::vector<const char*> argv;
        for (const auto& a : args)
            argv.push_back(a.c_str());
        out_.str("");
        err_.str("");
        return cli::run(static_cast<int>(argv.size()), argv.data(), out_, err_);
    }

    fs::path dir_;
    std::ostringstream out_, err_;
};

std::string strip_timestamp(const std::string& body) {
    auto j = nlohmann::json::parse(body);
    j["manifest"].erase("timestamp");
    return j.dump();
}

}  // namespace

TEST_F(Cli, SolveExactWhenEpsilonIsZero) {
    ASSERT_EQ(run({"solve", "--epsilon", "0", "--mu", path("mu.json"), "--nu", path("nu.json"), "--out", path("r.json")}),
              0);
    const auto j = nlohmann::json::parse(read("r.json"));
    EXPECT_EQ(j["method"], "exact");
    EXPECT_DOUBLE_EQ(j["primal_value"].get<double>(), 0.25);
    EXPECT_NEAR(j["dual_value"].get<double>(), 0.25, 1e-15);
    EXPECT_TRUE(j["converged"].get<bool>());
    EXPECT_EQ(j["manifest"]["subcommand"], "solve");
    EXPECT_EQ(j["manifest"]["input_digests"].size(), 2u);
    const auto m = io::matrix_from_csv(read("r.json.coupling.csv"));
    EXPECT_NEAR(m.sum(), 1.0, 1e-15);
}

TEST_F(Cli, SolveRegularizedIsDeterministic) {
    const std::vector<std::string> base{"solve", "--epsilon", "0.1",          "--q",  "1.5", "--cost",
                                        "l2sq",  "--mu",      path("mu.json"), "--nu", path("nu.json")};
    auto a = base, b = base;
    a.insert(a.end(), {"--out", path("a.json")});
    b.insert(b.end(), {"--out", path("b.json"), "--coupling-out", path("a.json.coupling.csv.2")});
    ASSERT_EQ(run(a), 0);
    ASSERT_EQ(run(b), 0);
    auto ja = nlohmann::json::parse(read("a.json")), jb = nlohmann::json::parse(read("b.json"));
    EXPECT_EQ(ja["primal_value"], jb["primal_value"]);
    EXPECT_EQ(read("a.json.coupling.csv"), read("a.json.coupling.csv.2"));
    EXPECT_LE(ja["relative_gap"].get<double>(), 1e-6);
}

TEST_F(Cli, MalformedMeasureIsUsageError) {
    EXPECT_EQ(run({"solve", "--epsilon", "0.1", "--mu", path("mu.json"), "--nu", path("bad.json"), "--out", path("r.json")}),
              1);
    EXPECT_NE(err_.str().find("total mass"), std::string::npos);
    EXPECT_FALSE(fs::exists(path("r.json")));
}

TEST_F(Cli, UnknownFlagPrintsHelp) {
    EXPECT_EQ(run({"solve", "--bogus", "1"}), 1);
    EXPECT_NE(err_.str().find("Usage"), std::string::npos);
    EXPECT_EQ(run({}), 1);
    EXPECT_EQ(run({"solve", "--epsilon", "0.1", "--q", "0.5", "--mu", path("mu.json"), "--nu", path("nu.json"), "--out",
                   path("r.json")}),
              1);
}

TEST_F(Cli, NonConvergenceExitCode) {
    EXPECT_EQ(run({"solve", "--epsilon", "0.001", "--max-iter", "1", "--tol-gap", "1e-14", "--mu", path("mu.json"),
                   "--nu", path("nu.json"), "--out", path("r.json")}),
              3);
    EXPECT_FALSE(nlohmann::json::parse(read("r.json"))["converged"].get<bool>());
}

TEST_F(Cli, SweepWritesCsvSummaryAndManifest) {
    ASSERT_EQ(run({"sweep", "--uniform", "32", "--grid", "0.1:0.5:5", "--out", path("s1.csv"), "--threads", "1"}), 0);
    ASSERT_EQ(run({"sweep", "--uniform", "32", "--grid", "0.1:0.5:5", "--out", path("s2.csv"), "--threads", "3"}), 0);
    EXPECT_EQ(read("s1.csv"), read("s2.csv"));
    const std::string csv = read("s1.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epsilon,gap,upper_env,kl_env,lower_env,solver_gap,converged");
    EXPECT_EQ(strip_timestamp(read("s1.csv.summary.json")), strip_timestamp(read("s2.csv.summary.json")));
    const auto s = nlohmann::json::parse(read("s1.csv.summary.json"));
    EXPECT_EQ(s["points"], 5);
    EXPECT_TRUE(s["slope"].is_number());
    EXPECT_TRUE(fs::exists(path("s1.csv.manifest.json")));
    EXPECT_EQ(run({"sweep", "--uniform", "32", "--grid", "0.1:2:5", "--out", path("s3.csv")}), 1);
    EXPECT_EQ(run({"sweep", "--out", path("s3.csv")}), 1);
}

TEST_F(Cli, CompareEmitsPairedColumns) {
    ASSERT_EQ(run({"compare", "--uniform", "16", "--q", "2", "--q", "1", "--grid", "0.1:0.5:3", "--out", path("c.csv")}),
              0);
    const std::string body = read("c.csv");
    EXPECT_EQ(body.substr(0, body.find('\n')),
              "epsilon,gap_q2,solver_gap_q2,converged_q2,gap_q1,solver_gap_q1,converged_q1,ratio_q1_over_q2");
}

TEST_F(Cli, QuantizeAndShadowCheck) {
    ASSERT_EQ(run({"quantize", "--in", path("mu.json"), "--n", "2", "--out", path("q.json")}), 0);
    const auto q = nlohmann::json::parse(read("q.json"));
    EXPECT_DOUBLE_EQ(q["achieved_wp"].get<double>(), 0.25);
    EXPECT_EQ(io::measure_from_json(q).size(), 2);

    ASSERT_EQ(run({"shadow-check", "--mu", path("mu.json"), "--nu", path("mu.json"), "--n", "2", "--out", path("h.json")}),
              0);
    const auto h = nlohmann::json::parse(read("h.json"));
    for (const auto& [name, ok] : h["checks"].items())
        EXPECT_TRUE(ok.get<bool>()) << name;
    EXPECT_LE(h["wp_identity_residual"].get<double>(), 1e-6);
}
