// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tcnf/cli.hpp"
#include "tcnf/config.hpp"
#include "tcnf/data.hpp"
#include "tcnf/error.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

using namespace tcnf;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("tcnf_cli_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& p) const { return (path / p).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// metric -> value for one metrics.csv
std::map<std::string, double> read_metrics(const fs::path& p) {
  std::ifstream in(p);
  std::map<std::string, double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line == "dataset,model,metric,value") continue;
    std::stringstream ss(line);
    std::string d, m, metric, v;
    std::getline(ss, d, ',');
    std::getline(ss, m, ',');
    std::getline(ss, metric, ',');
    std::getline(ss, v);
    out[metric] = std::stod(v);
  }
  return out;
}

}  // namespace

TEST_CASE("generate writes the three documented files") {
  TempDir dir("gen");
  const auto r = run({"generate", "--family", "sine", "--anomaly", "spike", "--steps", "300", "--out-dir", dir.path});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* name : {"train_clean.csv", "train_anomalous.csv", "test.csv", "resolved.ini", "anomalies.csv"}) {
    CHECK_MESSAGE(fs::exists(dir.path / name), name);
  }
  const auto clean = data::load_csv(dir / "train_clean.csv", false);
  const auto test = data::load_csv(dir / "test.csv", true);
  CHECK(clean.steps == 300);
  CHECK(clean.dims == 2);
  CHECK(test.steps == 300);

  // labels are set exactly at the logged spike positions
  std::ifstream log(dir / "anomalies.csv");
  std::string line;
  std::getline(log, line);
  data::Labels expected(300, 0);
  std::size_t spikes = 0;
  while (std::getline(log, line)) {
    if (line.rfind("test.csv,", 0) != 0) continue;
    std::stringstream ss(line);
    std::string file, kind, start, length;
    std::getline(ss, file, ',');
    std::getline(ss, kind, ',');
    std::getline(ss, start, ',');
    std::getline(ss, length, ',');
    CHECK(kind == "spike");
    for (std::size_t t = 0; t < std::stoul(length); ++t) expected[std::stoul(start) - 1 + t] = 1;
    ++spikes;
  }
  CHECK(spikes == 3);
  CHECK(*test.labels == expected);
}

TEST_CASE("generate is byte-reproducible per seed") {
  TempDir a("gen_a"), b("gen_b");
  REQUIRE(run({"generate", "--seed", "5", "--noise", "0.1", "--out-dir", a.path}).code == 0);
  REQUIRE(run({"generate", "--seed", "5", "--noise", "0.1", "--out-dir", b.path}).code == 0);
  CHECK(slurp(a.path / "test.csv") == slurp(b.path / "test.csv"));
  CHECK(slurp(a.path / "train_anomalous.csv") == slurp(b.path / "train_anomalous.csv"));
}

TEST_CASE("evaluate on scores equal to the labels gives AUC 1") {
  TempDir dir("eval");
  {
    std::ofstream f(dir / "scores.csv");
    f << "t,score,label\n";
    for (int t = 1; t <= 100; ++t) {
      const int label = (t >= 40 && t < 45) || t == 80 ? 1 : 0;
      f << t << ',' << label << ',' << label << '\n';
    }
  }
  const auto r = run({"evaluate", "--scores", dir / "scores.csv", "--out-dir", dir.path});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto m = read_metrics(dir.path / "metrics.csv");
  CHECK(m.at("auc") == 1.0);
  CHECK(m.at("f1") == 1.0);
  CHECK(m.at("auc_pr") == doctest::Approx(1.0));
  // the header flags the VUS variant
  CHECK(slurp(dir.path / "metrics.csv").rfind("# vus:", 0) == 0);
}

TEST_CASE("report gives mean and sample standard deviation per group") {
  TempDir dir("report");
  const std::vector<double> auc = {0.70, 0.80, 0.85, 0.90, 1.00};
  std::vector<std::string> args = {"report", "--out-dir", dir.path.string()};
  for (std::size_t s = 0; s < auc.size(); ++s) {
    const std::string path = dir / ("m" + std::to_string(s) + ".csv");
    std::ofstream f(path);
    f << "# header\ndataset,model,metric,value\n";
    f << "sine,tcnf-base,auc," << auc[s] << '\n';
    f << "wave,realnvp,auc,0.5\n";
    args.push_back(path);
  }
  const auto r = run(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("±") != std::string::npos);
  CHECK(!fs::exists(dir.path / "report.svg"));
  args.push_back("--svg");
  REQUIRE(run(args).code == 0);
  CHECK(slurp(dir.path / "report.svg").find("<svg") == 0);

  // hand arithmetic: mean 4.25/5, squared deviations sum to 0.05
  const double mean = 0.85;
  const double sd = std::sqrt(0.05 / 4.0);
  std::ifstream in(dir / "report.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "dataset,model,metric,n,mean,std");
  std::getline(in, line);
  std::stringstream ss(line);
  std::vector<std::string> cells;
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  REQUIRE(cells.size() == 6);
  CHECK(cells[0] == "sine");
  CHECK(cells[3] == "5");
  CHECK(std::stod(cells[4]) == doctest::Approx(mean).epsilon(1e-14));
  CHECK(std::stod(cells[5]) == doctest::Approx(sd).epsilon(1e-12));
  std::getline(in, line);
  CHECK(line == "wave,realnvp,auc,5,0.5,0");
}

TEST_CASE("unknown config keys are rejected with a one-line error") {
  TempDir dir("badkey");
  {
    std::ofstream f(dir / "bad.ini");
    f << "[flow]\ncouplings = 4\nbogus = 1\n";
  }
  const auto r = run({"generate", "--config", dir / "bad.ini", "--out-dir", dir / "out"});
  CHECK(r.code != 0);
  CHECK(r.err.rfind("error: ConfigError: ", 0) == 0);
  CHECK(r.err.find("flow.bogus") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);

  {
    std::ofstream f(dir / "section.ini");
    f << "[nosuch]\nkey = 1\n";
  }
  CHECK(run({"generate", "--config", dir / "section.ini", "--out-dir", dir / "out"}).code != 0);
  CHECK(run({"train", "--set", "train.epochs=many", "--data", "x.csv"}).err.rfind("error: ConfigError:", 0) == 0);
}

TEST_CASE("usage and runtime errors exit nonzero") {
  const auto usage = run({"frobnicate"});
  CHECK(usage.code == 2);
  CHECK(usage.err.rfind("error: UsageError: ", 0) == 0);
  const auto missing = run({"score", "--model", "/nonexistent/model.bin", "--data", "/nonexistent/x.csv",
                            "--out-dir", (fs::temp_directory_path() / "tcnf_cli_missing").string()});
  CHECK(missing.code == 1);
  CHECK(missing.err.rfind("error: ", 0) == 0);
  fs::remove_all(fs::temp_directory_path() / "tcnf_cli_missing");
}

TEST_CASE("resolved config reloads to the same values") {
  TempDir dir("resolved");
  REQUIRE(run({"generate", "--method", "tcnf-lstm", "--out-dir", dir.path}).code != 0);
  REQUIRE(run({"generate", "--method", "tcnf-stateful", "--lookback", "7", "--set", "train.learning_rate=0.003",
               "--out-dir", dir.path})
              .code == 0);
  const auto cfg = config::load_config(dir.path / "resolved.ini");
  CHECK(cfg.model.method == flow::Method::TcnfStateful);
  CHECK(cfg.model.encoder.kind == cond::EncoderKind::LstmStateful);
  CHECK(cfg.model.encoder.lookback == 7);
  CHECK(cfg.train.learning_rate == 0.003);
  config::write_config(cfg, dir.path / "again.ini");
  CHECK(slurp(dir.path / "again.ini") == slurp(dir.path / "resolved.ini"));
}

TEST_CASE("train, score and evaluate chained match the search evaluation path") {
  TempDir dir("chain");
  REQUIRE(run({"generate", "--steps", "400", "--noise", "0.05", "--anomaly", "spike", "--anomaly", "platform",
               "--set", "generate.anomaly_length=10", "--out-dir", dir.path})
              .code == 0);
  const std::vector<std::string> common = {"--set", "train.epochs=4", "--set", "search.candidate_epochs=2",
                                           "--budget", "12", "--lookback", "5"};
  auto search = [&](const std::string& out) {
    std::vector<std::string> a = {"search", "--data", dir / "train_clean.csv", "--eval", dir / "train_anomalous.csv",
                                  "--test", dir / "test.csv", "--seed", "3", "--out-dir", dir / out};
    a.insert(a.end(), common.begin(), common.end());
    return run(a);
  };
  const auto s1 = search("s1");
  REQUIRE_MESSAGE(s1.code == 0, s1.err);
  REQUIRE(search("s2").code == 0);
  for (const char* f : {"trials.csv", "best_model.bin", "scores.csv", "metrics.csv"}) {
    CHECK_MESSAGE(slurp(dir.path / "s1" / f) == slurp(dir.path / "s2" / f), f);
  }

  const auto t = run({"train", "--config", dir / "s1/best_config.ini", "--data", dir / "train_clean.csv",
                      "--out-dir", dir / "chain"});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(slurp(dir.path / "chain/model.bin") == slurp(dir.path / "s1/best_model.bin"));
  REQUIRE(run({"score", "--model", dir / "chain/model.bin", "--data", dir / "test.csv", "--svg", "--out-dir",
               dir / "chain"})
              .code == 0);
  CHECK(slurp(dir.path / "chain/scores.csv") == slurp(dir.path / "s1/scores.csv"));
  CHECK(fs::exists(dir.path / "chain/scores.svg"));
  REQUIRE(run({"evaluate", "--scores", dir / "chain/scores.csv", "--config", dir / "s1/best_config.ini",
               "--out-dir", dir / "chain"})
              .code == 0);
  CHECK(read_metrics(dir.path / "chain/metrics.csv") == read_metrics(dir.path / "s1/metrics.csv"));

  REQUIRE(run({"export-latent", "--model", dir / "chain/model.bin", "--data", dir / "test.csv", "--out-dir",
               dir / "chain"})
              .code == 0);
  std::ifstream latent(dir / "chain/latent.csv");
  std::string header;
  std::getline(latent, header);
  CHECK(header == "t,u1,u2,logdet,score,label");
}
