#include <gtest/gtest.h>

#include "autolabs/eval.hpp"
#include "autolabs/fixtures.hpp"
#include "autolabs/self_checks.hpp"

using namespace autolabs;
using namespace autolabs::checks;

namespace {

CheckContext context_for(const Fixture& f) {
  CheckContext ctx;
  ctx.props = &StaticTable::bundled();
  ctx.target_volume_uL = f.target_volumes();
  ctx.tags = default_tags(f.procedure, StaticTable::bundled());
  return ctx;
}

Procedure steps(std::string_view body) {
  return *extract_final_steps("<final-steps>" + std::string(body) + "</final-steps>");
}

std::vector<CheckFinding> errors(const std::vector<CheckFinding>& fs) {
  std::vector<CheckFinding> out;
  for (const auto& f : fs)
    if (f.severity == Severity::Error) out.push_back(f);
  return out;
}

bool has_rule(const std::vector<CheckFinding>& fs, std::string_view rule) {
  return std::any_of(fs.begin(), fs.end(), [&](const auto& f) { return f.rule == rule; });
}

std::string dump(const std::vector<CheckFinding>& fs) {
  std::string s;
  for (const auto& f : fs) s += f.rule + ": " + f.message + "\n";
  return s;
}

}  // namespace

class GroundTruthClean : public ::testing::TestWithParam<std::string> {};

TEST_P(GroundTruthClean, AllSevenChecksPass) {
  auto f = load_fixture(GetParam());
  auto ctx = context_for(f);
  for (auto id : kGuidedOrder) {
    auto fs = errors(run_check(id, f.procedure, ctx));
    EXPECT_TRUE(fs.empty()) << to_string(id) << "\n" << dump(fs);
  }
  auto out = run_guided(f.procedure, ctx);
  EXPECT_TRUE(out.converged);
  EXPECT_TRUE(out.applied.empty());
  EXPECT_EQ(render_procedure(out.revised), render_procedure(f.procedure));
}

INSTANTIATE_TEST_SUITE_P(Experiments, GroundTruthClean,
                         ::testing::Values("exp1", "exp2", "exp3", "exp3-alt", "exp4", "exp5"));

TEST(Efficiency, DuplicateAdditionsMerged) {
  auto p = steps(
      "<step>Add water (ul) to vials in Plate 1. {A1: 100}</step>"
      "<step>Add methanol (ul) to vials in Plate 1. {A1: 5}</step>"
      "<step>Add Water (ul) to vials in Plate 1. {A1: 50, A2: 10}</step>");
  auto fs = refine_efficiency(p);
  ASSERT_EQ(fs.size(), 1u);
  ASSERT_TRUE(fs[0].suggested_fix);
  auto fixed = apply_fix(p, *fs[0].suggested_fix);
  ASSERT_EQ(fixed.steps.size(), 2u);
  EXPECT_EQ(std::get<AddStep>(fixed.steps[0]).values.at(VialIndex::parse("A1")), 150);
  EXPECT_TRUE(refine_efficiency(fixed).empty());
  EXPECT_EQ(eval::amount_matrix(fixed).values, eval::amount_matrix(p).values);
}

TEST(Efficiency, DifferentPlatesOrProcessingBetweenAreFine) {
  EXPECT_TRUE(refine_efficiency(steps("<step>Add water (ul) to vials in Plate 1. {A1: 1}</step>"
                                      "<step>Add water (ul) to vials in Plate 2. {A1: 1}</step>"))
                  .empty());
  EXPECT_TRUE(refine_efficiency(steps("<step>Add water (ul) to vials in Plate 1. {A1: 1}</step>"
                                      "<step>Set Delay in Plate 1. {A1: 5}</step>"
                                      "<step>Add water (ul) to vials in Plate 1. {A1: 1}</step>"))
                  .empty());
}

TEST(Units, SolidsAndLiquids) {
  CheckContext ctx;
  ctx.props = &StaticTable::bundled();
  auto fs = refine_units(steps("<step>Add naphthalene (ul) to vials in Plate 1. {A1: 1}</step>"
                               "<step>Add methanol (ul) to vials in Plate 1. {A1: 1}</step>"
                               "<step>Add methanol (mg) to vials in Plate 1. {A1: 1}</step>"
                               "<step>Add unobtainium (mg) to vials in Plate 1. {A1: 1}</step>"),
                         ctx);
  ASSERT_EQ(fs.size(), 3u);
  EXPECT_EQ(fs[0].rule, "units.solid_in_mg");
  EXPECT_EQ(fs[0].step_index, 0u);
  EXPECT_EQ(fs[1].rule, "units.liquid_in_ul");
  EXPECT_EQ(fs[2].severity, Severity::Warning);
}

TEST(Delays, Cases) {
  EXPECT_TRUE(errors(refine_delays(steps("<step>Set VortexRate to 500 rpm in Plate 1. {A1: 500}</step>"
                                         "<step>Set Delay to 10 min in Plate 1. {A1: 10}</step>"
                                         "<step>Set VortexRate to 0 rpm in Plate 1. {A1: 0}</step>")))
                  .empty());
  auto fs = refine_delays(steps("<step>Set StirRate to 700 rpm in Plate 1. {A1: 700}</step>"));
  EXPECT_TRUE(has_rule(fs, "delays.missing_delay"));
  EXPECT_TRUE(has_rule(fs, "delays.reset_rate"));
  EXPECT_TRUE(has_rule(fs, "delays.prefer_vortex"));
  EXPECT_TRUE(errors(refine_delays(steps("<step>Set HeatingTemp to 60 C in Plate 1. {A1: 60}</step>"
                                         "<step>Set Delay to 480 min in Plate 1. {A1: 480}</step>"
                                         "<step>Set HeatingTemp to 25 C in Plate 1. {A1: 25}</step>")))
                  .empty());
  // A delay on another plate does not count.
  fs = refine_delays(steps("<step>Set HeatingTemp to 60 C in Plate 1. {A1: 60}</step>"
                           "<step>Set Delay to 10 min in Plate 2. {A1: 10}</step>"));
  EXPECT_TRUE(has_rule(fs, "delays.missing_delay"));
}

TEST(Plates, Cases) {
  auto p = steps("<step>Add water (ul) to vials in Plate 1. {E5: 1}</step>");
  p.arrays[PlateId{1}] = array_for_vial_volume(4);
  EXPECT_TRUE(has_rule(refine_plates(p), "plates.vial_in_array"));

  auto cap = steps("<step>Set Cap in Plate 1. {A1: 1}</step>");
  cap.arrays[PlateId{1}] = array_for_vial_volume(1.2);
  EXPECT_TRUE(has_rule(refine_plates(cap), "plates.cappable_array"));

  auto odd = steps("<step>Add water (ul) to vials in Plate 3. {A1: 1}</step>");
  EXPECT_TRUE(has_rule(refine_plates(odd), "plates.naming"));
}

TEST(Solvents, Cases) {
  auto f = load_fixture("exp1");
  auto ctx = context_for(f);
  EXPECT_TRUE(errors(refine_solvents(f.procedure, ctx)).empty());

  auto short_fill = steps("<step>Add water (ul) to vials in Plate 1. {A1: 9500}</step>");
  EXPECT_TRUE(has_rule(refine_solvents(short_fill, ctx), "solvents.total_volume"));

  auto generic = steps("<step>Add solvent (ul) to vials in Plate 1. {A1: 10000}</step>");
  EXPECT_TRUE(has_rule(refine_solvents(generic, ctx), "solvents.named_solvent"));

  CheckContext none;
  auto fs = refine_solvents(short_fill, none);
  ASSERT_EQ(fs.size(), 1u);
  EXPECT_EQ(fs[0].rule, "solvents.missing_target");
  EXPECT_EQ(fs[0].severity, Severity::Warning);
}

TEST(Transfer, Cases) {
  auto uneven = steps("<step>Uniform transfer from Plate 1 to Plate 2. {A1: [A1, 5ul], A2: [A2, 5ul], A3: [A3, 10ul]}</step>");
  auto fs = refine_transfer(uneven);
  ASSERT_TRUE(has_rule(fs, "transfer.uniform_amounts"));
  auto fixed = apply_fix(uneven, *fs[0].suggested_fix);
  EXPECT_EQ(std::get<TransferStep>(fixed.steps[0]).mode, TransferMode::Discrete);
  EXPECT_TRUE(refine_transfer(fixed).empty());

  EXPECT_TRUE(refine_transfer(steps("<step>Set VialTimers in Plate 1 {A1: 10, A2: 15, A3: 20}</step>"
                                    "<step>Uniform transfer from Plate 1 to Plate 2. (MoveVial, StartVialTimer) "
                                    "{A1: [A1, 1ul], A2: [A2, 1ul], A3: [A3, 1ul]}</step>"
                                    "<step>Uniform transfer from Plate 2 to Plate 1. (MoveVial, WaitVialTimer) "
                                    "{A1: [A1, 1ul], A2: [A2, 1ul], A3: [A3, 1ul]}</step>"))
                  .empty());
  EXPECT_TRUE(has_rule(refine_transfer(steps("<step>Uniform transfer from Plate 2 to Plate 1. (WaitVialTimer) "
                                             "{A1: [A1, 1ul]}</step>")),
                       "transfer.wait_after_start"));
  EXPECT_TRUE(has_rule(refine_transfer(steps("<step>Uniform transfer from Plate 1 to Plate 2. (StartVialTimer) "
                                             "{A1: [A1, 1ul]}</step>")),
                       "transfer.timer_before_start"));
}

TEST(Additions, Cases) {
  CheckContext ctx;
  ctx.props = &StaticTable::bundled();
  auto p = steps("<step>Add methanol (ul) to vials in Plate 1. {A1: 1}</step>");
  ctx.tags = StepTags{{0, TagSet{CoreTag::Powder, {}, {}}}};
  EXPECT_TRUE(has_rule(refine_additions(p, ctx), "additions.liquid_dispense"));

  auto water_first = steps("<step>Add water (ul) to vials in Plate 1. {A1: 1}</step>"
                           "<step>Add naphthalene (mg) to vials in Plate 1. {A1: 1}</step>");
  ctx.tags = default_tags(water_first, StaticTable::bundled());
  EXPECT_TRUE(errors(refine_additions(water_first, ctx)).empty());

  auto methanol_first = steps("<step>Add methanol (ul) to vials in Plate 1. {A1: 1}</step>"
                              "<step>Add naphthalene (mg) to vials in Plate 1. {A1: 1}</step>");
  ctx.tags = default_tags(methanol_first, StaticTable::bundled());
  auto fs = refine_additions(methanol_first, ctx);
  ASSERT_TRUE(has_rule(fs, "additions.solid_first"));

  auto mixed = steps("<step>Add methanol and water (ul) to vials in Plate 1. {A1: 1}</step>");
  EXPECT_TRUE(has_rule(refine_additions(mixed, CheckContext{}), "additions.one_chemical"));
}

TEST(Guided, EmptyProcedureConverges) {
  auto out = run_guided(Procedure{}, CheckContext{});
  EXPECT_TRUE(out.converged);
  EXPECT_EQ(out.iterations, 1);
}

TEST(Guided, FindingsOnlyWithoutAutoFix) {
  auto p = steps("<step>Add water (ul) to vials in Plate 1. {A1: 1}</step>"
                 "<step>Add water (ul) to vials in Plate 1. {A1: 1}</step>");
  CheckContext ctx;
  ctx.auto_fix = false;
  auto out = run_guided(p, ctx);
  EXPECT_FALSE(out.converged);
  EXPECT_EQ(out.revised.steps.size(), 2u);
}

TEST(Guided, RepairHookCalledForUnfixableErrors) {
  auto p = steps("<step>Set HeatingTemp to 60 C in Plate 1. {A1: 60}</step>");
  CheckContext ctx;
  int calls = 0;
  ctx.repair = [&](CheckId id, const Procedure& cur, const std::vector<CheckFinding>&) -> std::optional<Procedure> {
    ++calls;
    EXPECT_EQ(id, CheckId::delays);
    auto fixed = cur;
    fixed.steps.push_back(parse_step("Set Delay to 10 min in Plate 1. {A1: 10}"));
    return fixed;
  };
  auto out = run_guided(p, ctx);
  EXPECT_EQ(calls, 1);
  EXPECT_TRUE(out.converged);
}

namespace {

struct Mutation {
  std::string name;
  std::string experiment;
  std::function<Procedure(Procedure)> mutate;
};

std::vector<Mutation> mutations() {
  return {
      {"split addition", "exp1",
       [](Procedure p) {
         auto add = std::get<AddStep>(p.steps[1]);
         AddStep a = add, b = add;
         for (auto& [v, x] : a.values) x = x / 2;
         for (auto& [v, x] : b.values) x = x - x / 2;
         p.steps[1] = a;
         p.steps.insert(p.steps.begin() + 2, b);
         return p;
       }},
      {"missing stir reset", "exp2",
       [](Procedure p) {
         p.steps.pop_back();
         return p;
       }},
      {"cap outside array", "exp1",
       [](Procedure p) {
         std::get<SetStep>(p.steps[2]).values[VialIndex::parse("C5")] = 1;
         return p;
       }},
      {"uneven uniform transfer", "exp5",
       [](Procedure p) {
         for (auto& s : p.steps)
           if (auto* t = std::get_if<TransferStep>(&s); t && t->has(TransferFlag::StartVialTimer)) {
             t->mapping.begin()->second.amount.value = 1900;
             break;
           }
         return p;
       }},
      {"solvent before salts", "exp2",
       [](Procedure p) {
         auto pc = p.steps[4];
         p.steps.erase(p.steps.begin() + 4);
         p.steps.insert(p.steps.begin(), pc);
         return p;
       }},
  };
}

}  // namespace

TEST(Guided, MutationsAreDetected) {
  for (const auto& m : mutations()) {
    auto f = load_fixture(m.experiment);
    auto ctx = context_for(f);
    auto mutated = m.mutate(f.procedure);
    ctx.tags = default_tags(mutated, StaticTable::bundled());
    bool flagged = false;
    for (auto id : kGuidedOrder) flagged = flagged || !errors(run_check(id, mutated, ctx)).empty();
    EXPECT_TRUE(flagged) << m.name;
  }
}

TEST(Guided, FixableMutationsAreRepaired) {
  for (const auto& m : mutations()) {
    if (m.name == "cap outside array") continue;  // no rule can pick the intended vials
    auto f = load_fixture(m.experiment);
    auto ctx = context_for(f);
    auto mutated = m.mutate(f.procedure);
    ctx.tags = default_tags(mutated, StaticTable::bundled());
    auto out = run_guided(mutated, ctx);
    EXPECT_TRUE(out.converged) << m.name << "\n" << dump(out.findings);
    EXPECT_FALSE(out.applied.empty()) << m.name;
    if (m.name != "uneven uniform transfer") {
      EXPECT_EQ(eval::amount_matrix(out.revised).values, eval::amount_matrix(mutated).values) << m.name;
    }
  }
}

TEST(Guided, RestoresGroundTruthWhereUnambiguous) {
  for (const auto& m : mutations()) {
    if (m.name != "missing stir reset") continue;
    auto f = load_fixture(m.experiment);
    auto ctx = context_for(f);
    auto mutated = m.mutate(f.procedure);
    auto out = run_guided(mutated, ctx);
    EXPECT_EQ(render_procedure(out.revised), render_procedure(f.procedure)) << m.name;
  }
}

TEST(Guided, SolidsMovedAheadOfSolvent) {
  auto f = load_fixture("exp2");
  auto ctx = context_for(f);
  auto p = f.procedure;
  auto pc = p.steps[4];
  p.steps.erase(p.steps.begin() + 4);
  p.steps.insert(p.steps.begin(), pc);
  ctx.tags = default_tags(p, StaticTable::bundled());
  auto out = run_guided(p, ctx);
  ASSERT_TRUE(out.converged) << dump(out.findings);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_EQ(std::get<AddStep>(out.revised.steps[i]).unit, Unit::mg) << i;
  ASSERT_TRUE(out.tags);
  EXPECT_EQ(out.tags->at(0).core, CoreTag::Powder);
  EXPECT_EQ(out.tags->at(3).core, CoreTag::PDT);
}

TEST(Guided, Idempotent) {
  for (const auto& m : mutations()) {
    auto f = load_fixture(m.experiment);
    auto ctx = context_for(f);
    auto once = run_guided(m.mutate(f.procedure), ctx);
    auto twice = run_guided(once.revised, ctx);
    EXPECT_EQ(render_procedure(twice.revised), render_procedure(once.revised)) << m.name;
  }
}

namespace {

llm::ScriptedStub stub(std::vector<std::string> replies, llm::ScriptedStub::OnExhausted mode) {
  llm::ScriptedStub s;
  for (auto& r : replies) s.push(llm::Channel::self_check, {llm::Role::assistant, r, {}, {}, {}, {}});
  s.set_on_exhausted(mode);
  return s;
}

}  // namespace

TEST(Unguided, NoChanges) {
  auto p = load_fixture("exp1").procedure;
  auto s = stub({"NO_CHANGES"}, llm::ScriptedStub::OnExhausted::error);
  auto out = run_unguided(p, {}, "system", s);
  EXPECT_EQ(out.iterations, 1);
  EXPECT_TRUE(out.converged);
  EXPECT_EQ(render_procedure(out.revised), render_procedure(p));
}

TEST(Unguided, OneRevisionThenNoChanges) {
  auto p = load_fixture("exp1").procedure;
  auto revised = p;
  revised.steps.pop_back();
  auto s = stub({"Fixed:\n" + render_procedure(revised), "NO_CHANGES"}, llm::ScriptedStub::OnExhausted::error);
  auto out = run_unguided(p, {}, "system", s);
  EXPECT_EQ(out.iterations, 2);
  EXPECT_TRUE(out.converged);
  EXPECT_EQ(render_procedure(out.revised), render_procedure(revised));
}

TEST(Unguided, AlwaysRevisingStopsAtFive) {
  auto p = load_fixture("exp1").procedure;
  auto a = p, b = p;
  a.steps.pop_back();
  b.steps.erase(b.steps.begin());
  auto s = stub({render_procedure(a), render_procedure(b)}, llm::ScriptedStub::OnExhausted::cycle);
  std::vector<llm::Message> exchange;
  auto out = run_unguided(p, {}, "system", s, {}, &exchange);
  EXPECT_EQ(out.iterations, 5);
  EXPECT_FALSE(out.converged);
  EXPECT_EQ(s.calls(llm::Channel::self_check), 5u);
  EXPECT_EQ(exchange.size(), 10u);
}

TEST(Unguided, MalformedKeepsPrevious) {
  auto p = load_fixture("exp1").procedure;
  auto s = stub({"<final-steps><step>Add water to Plate 1</step></final-steps>", "I think it is fine"},
                llm::ScriptedStub::OnExhausted::error);
  auto out = run_unguided(p, {}, "system", s);
  EXPECT_EQ(out.iterations, 2);
  EXPECT_FALSE(out.converged);
  EXPECT_EQ(render_procedure(out.revised), render_procedure(p));
  ASSERT_EQ(out.findings.size(), 1u);
  EXPECT_EQ(out.findings[0].rule, "review.malformed_revision");
}

TEST(Unguided, MalformedThenRecovered) {
  auto p = load_fixture("exp1").procedure;
  auto s = stub({"garbled", "NO_CHANGES"}, llm::ScriptedStub::OnExhausted::error);
  auto out = run_unguided(p, {}, "system", s);
  EXPECT_EQ(out.iterations, 2);
  EXPECT_TRUE(out.converged);
}

TEST(Unguided, PromptCarriesTranscriptAndSteps) {
  auto p = load_fixture("exp1").procedure;
  auto s = stub({"NO_CHANGES"}, llm::ScriptedStub::OnExhausted::error);
  std::vector<llm::Message> transcript{{llm::Role::user, "make naphthalene solutions", {}, {}, {}, {}}};
  run_unguided(p, transcript, "SYSTEM PROMPT", s);
  auto reqs = s.requests();
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_EQ(reqs[0].system, "SYSTEM PROMPT");
  ASSERT_EQ(reqs[0].messages.size(), 2u);
  EXPECT_EQ(reqs[0].messages[0].content, "make naphthalene solutions");
  EXPECT_NE(reqs[0].messages[1].content.find("<final-steps>"), std::string::npos);
  EXPECT_NE(reqs[0].messages[1].content.find("NO_CHANGES"), std::string::npos);
}

TEST(FindingJson, Shape) {
  auto fs = refine_delays(steps("<step>Set StirRate to 700 rpm in Plate 1. {A1: 700}</step>"));
  auto j = to_json(fs.back());
  EXPECT_EQ(j["check"], "delays");
  EXPECT_TRUE(j.contains("suggested_fix"));
}
