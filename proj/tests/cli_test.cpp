#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>

#include "autolabs/fixtures.hpp"
#include "autolabs/hardware.hpp"
#include "autolabs/tags.hpp"

using namespace autolabs;

namespace {

struct Output {
  int code = -1;
  std::string out;  // stdout and stderr
};

Output cli(const std::string& args, const std::string& input = "") {
  std::string cmd = std::string(AUTOLABS_CLI) + " " + args + " 2>&1";
  if (!input.empty()) cmd = "printf '" + input + "' | " + cmd;
  else cmd += " </dev/null";
  Output o;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return o;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) o.out.append(buf.data(), n);
  int status = ::pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string tmp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("autolabs_cli_" + std::to_string(::getpid()) + "_" + name)).string();
}

std::string fixture_file(const std::string& id, const std::string& file) { return (fixture_root() / id / file).string(); }

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST(Cli, RunStubExperimentReportsMetrics) {
  auto steps = tmp("run_steps.txt"), xml = tmp("run.xml");
  auto o = cli("run --experiment exp1 --config MA-TU-GSC --cognition FR --client stub --steps-out " + steps +
               " --hardware-out " + xml);
  EXPECT_EQ(o.code, 0) << o.out;
  EXPECT_TRUE(contains(o.out, "status done")) << o.out;
  EXPECT_TRUE(contains(o.out, "path U-C-V-P-F-SC")) << o.out;
  EXPECT_TRUE(contains(o.out, "F1 1.0000")) << o.out;
  EXPECT_TRUE(contains(o.out, "nRMSE 0.0000")) << o.out;
  auto e = cli("eval --generated " + steps + " --ground-truth exp1");
  EXPECT_EQ(e.code, 0);
  auto report = nlohmann::json::parse(e.out);
  EXPECT_EQ(report["f1"], 1.0);
  EXPECT_EQ(report["nrmse"], 0.0);
  EXPECT_TRUE(hw::validate_document(detail::read_file(xml)).empty());
}

TEST(Cli, RunJsonAndRepeat) {
  auto o = cli("run --experiment exp4 --config SA-TU-UGSC --cognition NR --repeat 3 --format json");
  ASSERT_EQ(o.code, 0) << o.out;
  auto j = nlohmann::json::parse(o.out);
  EXPECT_EQ(j["runs"].size(), 3u);
  EXPECT_EQ(j["aggregate"]["runs"], 3);
  EXPECT_EQ(j["aggregate"]["mean_f1"], 1.0);
  EXPECT_EQ(j["config"], "SA-TU-UGSC/NR");
}

TEST(Cli, InteractiveReadsRepliesFromStdin) {
  auto o = cli("run --experiment exp2 --mode interactive", "a\\nb\\nc\\nd\\ne\\nf\\n");
  EXPECT_EQ(o.code, 0) << o.out;
  EXPECT_TRUE(contains(o.out, "status done"));
  auto closed = cli("run --experiment exp2 --mode interactive");
  EXPECT_EQ(closed.code, 1);
  EXPECT_TRUE(contains(closed.out, "input closed"));
}

TEST(Cli, EvalSelfComparisonAndAltOrder) {
  for (const auto& id : experiment_ids()) {
    auto o = cli("eval --generated " + fixture_file(id, "steps.txt") + " --ground-truth " + id);
    ASSERT_EQ(o.code, 0) << o.out;
    auto j = nlohmann::json::parse(o.out);
    EXPECT_EQ(j["f1"], 1.0) << id;
    EXPECT_EQ(j["spearman"], 1.0) << id;
    EXPECT_EQ(j["nrmse"], 0.0) << id;
  }
  auto alt = nlohmann::json::parse(cli("eval --generated " + fixture_file("exp3-alt", "steps.txt") + " --ground-truth exp3").out);
  EXPECT_EQ(alt["f1"], 1.0);
  EXPECT_LT(alt["spearman"].get<double>(), 1.0);
  auto self = nlohmann::json::parse(
      cli("eval --generated " + fixture_file("exp3-alt", "steps.txt") + " --ground-truth exp3 --alt-order").out);
  EXPECT_EQ(self["spearman"], 1.0);
  auto table = cli("eval --generated " + fixture_file("exp1", "steps.txt") + " --ground-truth exp1 --format table");
  EXPECT_TRUE(contains(table.out, "f1         1.0000"));
}

TEST(Cli, CalcWorkedExamples) {
  EXPECT_EQ(cli("calc n-percent \"28% ammonia\"").out, "14.73 M\n");
  EXPECT_NEAR(std::stod(cli("calc moles-volume benzaldehyde 0.0005").out), 50.8, 0.1);
  EXPECT_EQ(cli("calc dilution 14.73 3 0.001").out, "203.67 uL\n");
  EXPECT_EQ(cli("calc split 500 0.4 1").out, "stock 200.00 uL, neat solvent 300.00 uL\n");
  auto amounts = cli("calc amounts 4 0.5 \"acetic acid\" methanol 0.002").out;
  EXPECT_TRUE(contains(amounts, "acetic acid: 305.3")) << amounts;
  EXPECT_TRUE(contains(amounts, "methanol: 108.0")) << amounts;
  auto missing = cli("calc n-percent ammonia");
  EXPECT_EQ(missing.code, 1);
  auto impossible = cli("calc dilution 3 12 0.001");
  EXPECT_EQ(impossible.code, 1);
}

TEST(Cli, UsageErrorsExit2AndNameTheFlag) {
  auto mode = cli("run --experiment exp1 --mode sometimes");
  EXPECT_EQ(mode.code, 2);
  EXPECT_TRUE(contains(mode.out, "--mode"));
  auto config = cli("run --experiment exp1 --config SA --cognition PR");
  EXPECT_EQ(config.code, 2);
  EXPECT_TRUE(contains(config.out, "--config"));
  auto unknown = cli("run --experiment exp1 --bogus");
  EXPECT_EQ(unknown.code, 2);
  EXPECT_TRUE(contains(unknown.out, "--bogus"));
  auto exp = cli("run --experiment exp42");
  EXPECT_EQ(exp.code, 2);
  EXPECT_TRUE(contains(exp.out, "--experiment"));
  auto gen = cli("eval --generated /no/such/file --ground-truth exp1");
  EXPECT_EQ(gen.code, 2);
  EXPECT_TRUE(contains(gen.out, "--generated"));
  auto alt = cli("eval --generated " + fixture_file("exp1", "steps.txt") + " --ground-truth exp1 --alt-order");
  EXPECT_EQ(alt.code, 2);
  EXPECT_TRUE(contains(alt.out, "--alt-order"));
  EXPECT_EQ(cli("check " + fixture_file("exp1", "steps.txt")).code, 2);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, EmitMatchesGoldenAndRejectsInvalidInput) {
  auto out = tmp("emit.xml");
  ASSERT_EQ(cli("emit --steps " + fixture_file("exp1", "steps.txt") + " -o " + out).code, 0);
  EXPECT_EQ(detail::read_file(out), detail::read_file(std::filesystem::path(AUTOLABS_TEST_DATA_DIR) / "golden" / "exp1.xml"));

  auto f = load_fixture("exp1");
  auto tags = default_tags(f.procedure, StaticTable::bundled());
  tags[1].core = CoreTag::Powder;
  auto tags_file = tmp("bad_tags.json");
  std::ofstream(tags_file) << autolabs::to_json(tags).dump();
  auto bad = cli("emit --steps " + fixture_file("exp1", "steps.txt") + " --tags " + tags_file + " -o " + tmp("bad.xml"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_TRUE(contains(bad.out, "Powder")) << bad.out;

  auto hot = tmp("hot.txt");
  std::ofstream(hot) << "Add water (ul) to vials in Plate 1. {A1: 500}\nSet HeatingTemp to 400 degC in Plate 1. {A1: 400}\n";
  auto rejected = cli("emit --steps " + hot);
  EXPECT_EQ(rejected.code, 1);
  EXPECT_TRUE(contains(rejected.out, "rejected")) << rejected.out;

  EXPECT_EQ(cli("validate " + out).code, 0);
  auto broken = tmp("broken.xml");
  std::ofstream(broken) << "<autolabs-hardware/>";
  EXPECT_EQ(cli("validate " + broken).code, 1);
}

TEST(Cli, CheckGuidedOnGroundTruthAndMutation) {
  for (const auto& id : experiment_ids()) EXPECT_EQ(cli("check --guided " + fixture_file(id, "steps.txt")).code, 0) << id;
  auto unequal = tmp("unequal.txt");
  std::ofstream(unequal)
      << "Add water (ul) to vials in Plate 1. {A1: 500, A2: 500}\n"
         "Add water (ul) to vials in Plate 2. {A1: 100, A2: 100}\n"
         "Uniform transfer from plate 1 to plate 2. (MoveVial) {A1:[a1, 5ul], A2:[a2, 7ul]}\n";
  auto o = cli("check --guided " + unequal);
  auto j = nlohmann::json::parse(o.out.substr(0, o.out.rfind('}') + 1));
  bool transfer = false;
  for (const auto& f : j["applied_fixes"]) transfer |= f["check"] == "transfer";
  for (const auto& f : j["findings"]) transfer |= f["check"] == "transfer";
  EXPECT_TRUE(transfer) << o.out;
}

TEST(Cli, CheckUnguidedWithStub) {
  auto stub = tmp("review_stub.json");
  std::ofstream(stub) << R"({"self_check": ["NO_CHANGES"]})";
  auto o = cli("check --unguided " + fixture_file("exp1", "steps.txt") + " --stub " + stub);
  EXPECT_EQ(o.code, 0) << o.out;
  EXPECT_EQ(nlohmann::json::parse(o.out)["iterations"], 1);
}

TEST(Cli, TagsAndConfigs) {
  auto o = cli("tags");
  ASSERT_EQ(o.code, 0);
  EXPECT_EQ(nlohmann::json::parse(o.out), tag_rules());
  auto c = cli("configs");
  EXPECT_EQ(std::count(c.out.begin(), c.out.end(), '\n'), 20);
}
