#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("midx_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult run(const std::string& args) {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" MIDX_CLI_PATH "' " + args + " > '" +
                            out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  void write(const std::string& name, const std::string& text) { std::ofstream(dir_ / name) << text; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path dir_;
};

const std::string kFixture = MIDX_TEST_DATA "/ml10m_fixture.dat";

}  // namespace

TEST_F(Cli, MissingDatasetKeyIsUsageError) {
  write("cfg.txt", "epochs = 2\n");
  const auto r = run("train -c cfg.txt");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dataset"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingDatasetFileIsUsageError) {
  write("cfg.txt", "dataset = does_not_exist.dat\n");
  const auto r = run("train -c cfg.txt");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dataset"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownFlagAndUnknownKeyAreRejected) {
  EXPECT_EQ(run("ingest -i '" + kFixture + "' --frobnicate").code, 2);
  write("cfg.txt", "dataset = x\nlatent_dimm = 4\n");
  EXPECT_EQ(run("train -c cfg.txt").code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, HelpListsFlags) {
  const auto r = run("train --help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--config"), std::string::npos);
  EXPECT_NE(r.out.find("--output-trace"), std::string::npos);
}

TEST_F(Cli, TinyPipelineWritesArtifacts) {
  write("cfg.txt",
        "dataset = " + kFixture +
            "\nlatent_dim = 8\ncodebook_size = 2\nsample_count = 10\nepochs = 3\n"
            "batch_size = 16\noutput_model = model.bin\noutput_trace = trace.csv\n");
  const auto r = run("train -c cfg.txt");
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(path("model.bin")));
  const auto trace = slurp(path("trace.csv"));
  EXPECT_EQ(trace.rfind("epoch,loss,ndcg@10,recall@10,sample_time_ms,train_time_ms\n", 0), 0u);
  EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 4);

  ASSERT_EQ(run("build-index -e model.bin -o idx.bin -K 2").code, 0);
  write("q.csv", "0.1 0.2 0.3 0.4 0 0 0 1\n1,1,1,1,1,1,1,1\n");
  const auto s1 = run("sample --index idx.bin -q q.csv -k uni -T 5 --seed 3");
  const auto s2 = run("sample --index idx.bin -q q.csv -k uni -T 5 --seed 3");
  ASSERT_EQ(s1.code, 0) << s1.err;
  EXPECT_EQ(s1.out, s2.out);
  EXPECT_EQ(s1.out.rfind("query_id,item,log_q\n", 0), 0u);
  EXPECT_EQ(std::count(s1.out.begin(), s1.out.end(), '\n'), 11);
  EXPECT_EQ(run("sample --index idx.bin -q q.csv -k pop").code, 2);  // needs --dataset
}

TEST_F(Cli, IngestIsIdempotent) {
  ASSERT_EQ(run("ingest -i '" + kFixture + "' -o a.bin").code, 0);
  const auto r = run("ingest -i '" + kFixture + "' -o b.bin");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(slurp(path("a.bin")), slurp(path("b.bin")));
  EXPECT_NE(r.out.find("\"users\":50"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\"items\":18"), std::string::npos) << r.out;
}

TEST_F(Cli, MalformedInteractionFileIsInputError) {
  write("bad.dat", "1 2\n3\n");
  const auto r = run("ingest -i bad.dat --min-interactions 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST_F(Cli, VerifyReportsEveryTrial) {
  const auto r = run("verify --trials 4 --items 40 -K 4 --curves curves.csv --curve-samples 1000");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"violations\": 0"), std::string::npos);
  const auto curves = slurp(path("curves.csv"));
  EXPECT_EQ(std::count(curves.begin(), curves.end(), '\n'), 41);
}
