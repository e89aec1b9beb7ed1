#include <gtest/gtest.h>

#include <filesystem>

#include "mvlov/experiment.hpp"

using namespace mvlov;
using nlohmann::json;

namespace {

json base() {
  return json::parse(R"({
    "experiment": "simulate",
    "seed": 7,
    "particles": {"N": 64, "d": 2, "dt": 0.01, "T": 0.1, "snapshot_times": [0.0, 0.1]},
    "kernel": {"form": "power_law", "kappa": 0.5, "alpha": 1.5, "truncation": 10},
    "initial": {"type": "gaussian", "var": 0.5}
  })");
}

std::string what_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, ParsesBase) {
  const auto c = parse_config(base());
  EXPECT_EQ(c.experiment, "simulate");
  EXPECT_EQ(c.particles.N, 64u);
  EXPECT_EQ(*c.kernel.spec.truncation(), 10.0);
  EXPECT_EQ(c.config_hash.size(), 64u);
}

TEST(Config, UnknownKeyIsNamed) {
  auto j = base();
  j["kernell"] = j["kernel"];
  EXPECT_NE(what_of(j).find("kernell"), std::string::npos);
  auto k = base();
  k["kernel"]["kapa"] = 1.0;
  EXPECT_NE(what_of(k).find("kapa"), std::string::npos);
}

TEST(Config, Rejections) {
  auto j = base();
  j["experiment"] = "nope";
  EXPECT_FALSE(what_of(j).empty());
  j = base();
  j["particles"]["snapshot_times"] = {0.055};
  EXPECT_FALSE(what_of(j).empty());
  j = base();
  j["kernel"]["alpha"] = 2.5;
  EXPECT_FALSE(what_of(j).empty());
  j = base();
  j["experiment"] = "chaos";
  j["chaos"] = {{"replicas", 50}};
  EXPECT_NE(what_of(j).find("too few marginal samples"), std::string::npos);
  j = base();
  j["diffusion"] = {{"type", "diagonal"}, {"c0", 1.34}};
  EXPECT_NE(what_of(j).find("ellipticity"), std::string::npos);
}

TEST(Config, HashIgnoresOutputPlacement) {
  auto a = base(), b = base();
  b["output_dir"] = "elsewhere";
  b["workers"] = 3;
  EXPECT_EQ(parse_config(a).config_hash, parse_config(b).config_hash);
  b["seed"] = 8;
  EXPECT_NE(parse_config(a).config_hash, parse_config(b).config_hash);
}

TEST(Run, ArtifactsAreBitIdenticalAcrossWorkers) {
  const auto tmp = std::filesystem::temp_directory_path() / "mvlov_test_run";
  std::filesystem::remove_all(tmp);
  std::vector<std::string> digests;
  for (unsigned w : {1u, 4u}) {
    auto j = base();
    j["workers"] = w;
    j["output_dir"] = (tmp / std::to_string(w)).string();
    const auto st = run(parse_config(j));
    ASSERT_EQ(st.exit_code, kExitOk) << st.message;
    const auto manifest = json::parse(io::read_file(tmp / std::to_string(w) / "manifest.json"));
    std::string all;
    for (const auto& a : manifest["artifacts"]) all += a["path"].get<std::string>() + a["sha256"].get<std::string>();
    digests.push_back(all);
    EXPECT_EQ(manifest["status"], "ok");
  }
  EXPECT_EQ(digests[0], digests[1]);
  const auto csv = io::read_file(tmp / "1" / "particles.csv");
  EXPECT_EQ(csv.rfind("# config_hash=", 0), 0u);
  const auto snap = io::decode_mvl1(io::read_file(tmp / "1" / "snapshot_001.mvl1"));
  EXPECT_EQ(snap.N, 64u);
  EXPECT_DOUBLE_EQ(snap.time, 0.1);
  std::filesystem::remove_all(tmp);
}

TEST(Run, BlowUpReportsPartialRun) {
  auto j = base();
  j["kernel"] = {{"form", "constant"}, {"value", {1.5e308, 0.0}}};
  j["particles"]["T"] = 3.0;
  j["particles"]["snapshot_times"] = {0.0, 1.0};
  const auto tmp = std::filesystem::temp_directory_path() / "mvlov_test_blowup";
  std::filesystem::remove_all(tmp);
  j["output_dir"] = tmp.string();
  const auto st = run(parse_config(j));
  EXPECT_EQ(st.exit_code, kExitNumerical);
  const auto manifest = json::parse(io::read_file(tmp / "manifest.json"));
  EXPECT_EQ(manifest["status"], "numerical_abort");
  EXPECT_TRUE(manifest["artifacts"][0]["partial"].get<bool>());
  std::filesystem::remove_all(tmp);
}

TEST(Run, FpeExperimentConservesMass) {
  auto j = base();
  j["experiment"] = "fpe";
  j["grid"] = {{"lo", -4.0}, {"hi", 4.0}, {"cells", 32}};
  j["output_dir"] = (std::filesystem::temp_directory_path() / "mvlov_test_fpe").string();
  ArtifactSink sink("h");
  const auto summary = run_experiment(parse_config(j), sink);
  EXPECT_LE(summary["max_mass_drift"].get<double>(), 1e-10);
  EXPECT_NE(sink.find("fpe.csv"), nullptr);
}

TEST(Schema, MentionsEverySection) {
  const auto s = config_schema();
  for (const char* key : {"experiment", "particles", "kernel", "grid", "chaos", "zvonkin", "fit", "krylov"})
    EXPECT_TRUE(s.contains(key)) << key;
}
