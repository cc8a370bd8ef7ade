// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tcnf/error.hpp"
#include "tcnf/model_io.hpp"

#include <cstring>
#include <filesystem>
#include <random>

using namespace tcnf;
using namespace tcnf::flow;

namespace {

FlowModel random_model(Method method, std::uint64_t seed) {
  ModelConfig cfg = default_config(method);
  cfg.couplings = 3;
  cfg.encoder.lookback = 4;
  FlowModel m(cfg, 4, seed);
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& p : m.params())
    for (double& v : p.value.values()) v = n(rng);
  data::NormStats stats;
  stats.channels = {{-1.5, 2.0, false}, {0.0, 0.0, true}, {3.0, 3.0, false}};
  m.norm_stats = stats;
  return m;
}

std::string expect_format_error(const std::string& bytes) {
  try {
    io::deserialize_model(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  FAIL("expected FormatError");
  return {};
}

}  // namespace

TEST_CASE("round trip is bit-exact for every method") {
  for (Method method : {Method::RealNvp, Method::TcnfBase, Method::TcnfFixed, Method::TcnfMlp, Method::TcnfCnn,
                        Method::TcnfStateless, Method::TcnfStateful}) {
    const FlowModel m = random_model(method, 5);
    const std::string bytes = io::serialize_model(m);
    const FlowModel back = io::deserialize_model(bytes);
    CHECK(back.id == m.id);
    CHECK(back.seed() == m.seed());
    CHECK(back.config().method == method);
    REQUIRE(back.params().size() == m.params().size());
    auto it = back.params().begin();
    for (const auto& p : m.params()) {
      CHECK(it->name == p.name);
      CHECK(std::memcmp(it->value.data(), p.value.data(), p.value.size() * sizeof(double)) == 0);
      ++it;
    }
    REQUIRE(back.norm_stats);
    CHECK(back.norm_stats->channels[1].zero_replaced);
    CHECK(back.norm_stats->channels[0].min == -1.5);
    CHECK(io::serialize_model(back) == bytes);
  }
}

TEST_CASE("save and load through a file") {
  const auto path = std::filesystem::temp_directory_path() / "tcnf_test_model.bin";
  const FlowModel m = random_model(Method::TcnfMlp, 9);
  io::save_model(m, path);
  const FlowModel back = io::load_model(path);
  CHECK(io::serialize_model(back) == io::serialize_model(m));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(io::load_model(path), FormatError);
}

TEST_CASE("truncated files are refused at every length") {
  const std::string bytes = io::serialize_model(random_model(Method::TcnfBase, 3));
  for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{7}, std::size_t{15}, std::size_t{40},
                          bytes.size() / 2, bytes.size() - 9, bytes.size() - 1}) {
    const std::string msg = expect_format_error(bytes.substr(0, len));
    CHECK(!msg.empty());
  }
  CHECK(expect_format_error(bytes.substr(0, bytes.size() - 1)).find("truncated") != std::string::npos);
}

TEST_CASE("version mismatch names both versions") {
  std::string bytes = io::serialize_model(random_model(Method::TcnfBase, 3));
  const std::uint32_t other = 7;
  std::memcpy(bytes.data() + 4, &other, sizeof(other));
  const std::string msg = expect_format_error(bytes);
  CHECK(msg.find("version 7") != std::string::npos);
  CHECK(msg.find("version " + std::to_string(io::kModelFormatVersion)) != std::string::npos);
}

TEST_CASE("corruption is detected") {
  const std::string bytes = io::serialize_model(random_model(Method::TcnfCnn, 4));
  std::string flipped = bytes;
  flipped[flipped.size() - 20] ^= 0x01;  // inside the parameter block
  CHECK(expect_format_error(flipped).find("checksum") != std::string::npos);
  CHECK(!expect_format_error("XXXX" + bytes.substr(4)).empty());
  CHECK(expect_format_error(bytes + "z").find("trailing") != std::string::npos);
}
