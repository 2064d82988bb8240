#include <gtest/gtest.h>

#include <set>

#include "autolabs/eval.hpp"
#include "autolabs/fixtures.hpp"
#include "autolabs/orchestrator.hpp"

using namespace autolabs;
using namespace autolabs::orch;
using llm::Channel;
using llm::json;
using llm::ScriptedStub;

namespace {

const ModelNames kNames{"chat-model", "reasoning-model", std::string("medium")};

ModelAssignment models(Cognition c = Cognition::NR) { return ModelAssignment::for_cognition(c, kNames); }

ArchitectureConfig cfg(std::string_view name, Cognition c = Cognition::NR) { return ArchitectureConfig::parse(name, c); }

std::string gt_block(const std::string& id) { return load_fixture(id).steps_text; }

SessionOptions options_for(const std::string& id) {
  SessionOptions o;
  o.plates = load_fixture(id).plates;
  return o;
}

ScriptedStub exp_stub(const std::string& id) {
  return ScriptedStub::from_file((fixture_root() / id / "stub.json").string());
}

std::string description(const std::string& id) {
  return autolabs::detail::read_file(fixture_root() / id / "description.txt");
}

int count_user(const SessionState& s, std::string_view text) {
  int n = 0;
  for (const auto& m : s.transcript)
    if (m.role == llm::Role::user && m.content == text) ++n;
  return n;
}

}  // namespace

TEST(Agents, ParseIdsAndAliases) {
  EXPECT_EQ(parse_agent_id("Chemical_Calculations"), AgentId::ChemicalCalculations);
  EXPECT_EQ(parse_agent_id(" chemical calculations "), AgentId::ChemicalCalculations);
  EXPECT_EQ(parse_agent_id("Undesrand_And_Refine_Experiment"), AgentId::UnderstandRefine);
  EXPECT_EQ(parse_agent_id("Determine_Vial_Organization"), AgentId::VialArrangement);
  EXPECT_EQ(parse_agent_id("Generate_Final_Steps"), AgentId::FinalSteps);
  EXPECT_FALSE(parse_agent_id("Lab_Manager"));
  for (auto a : kAllAgents) EXPECT_EQ(parse_agent_id(to_string(a)), a);
}

TEST(Configs, TwentyPaperConfigurations) {
  auto all = all_configurations();
  ASSERT_EQ(all.size(), 20u);
  std::set<std::string> labels;
  for (const auto& c : all) {
    labels.insert(c.label());
    EXPECT_EQ(ArchitectureConfig::parse(c.name(), c.cognition), c);
    EXPECT_FALSE(c.topology == Topology::SingleAgent && c.cognition == Cognition::PR);
  }
  EXPECT_EQ(labels.size(), 20u);
  EXPECT_TRUE(labels.count("SA-TU-UGSC/FR"));
  EXPECT_TRUE(labels.count("MA/PR"));
  int sa = 0;
  for (const auto& c : all) sa += c.topology == Topology::SingleAgent;
  EXPECT_EQ(sa, 8);
}

TEST(Configs, RejectsInvalid) {
  EXPECT_THROW(cfg("SA-TU", Cognition::PR), InvalidConfig);
  EXPECT_THROW(ArchitectureConfig::make(Topology::SingleAgent, Cognition::PR, false, SelfCheckMode::None), InvalidConfig);
  EXPECT_THROW(cfg("XA-TU"), InvalidConfig);
  EXPECT_THROW(cfg("MA-GSC"), InvalidConfig);
  EXPECT_THROW(cfg("MA-TU-GSC-UGSC"), InvalidConfig);
  EXPECT_THROW(cfg("MA-TU-TU"), InvalidConfig);
  auto c = cfg("ma-tu-ugsc", Cognition::PR);
  EXPECT_EQ(c.name(), "MA-TU-UGSC");
  EXPECT_EQ(c.self_check, SelfCheckMode::Unguided);
}

TEST(Configs, ModelAssignmentPerCognition) {
  for (auto a : kAllAgents) {
    EXPECT_EQ(models(Cognition::NR).for_agent(a).model, "chat-model");
    EXPECT_EQ(models(Cognition::FR).for_agent(a).model, "reasoning-model");
    EXPECT_EQ(models(Cognition::FR).for_agent(a).reasoning_effort, "medium");
    EXPECT_EQ(models(Cognition::PR).for_agent(a).model,
              a == AgentId::UnderstandRefine ? "reasoning-model" : "chat-model");
  }
}

TEST(Prompts, SharedPromptAndSingleAgentVariant) {
  const auto& p = system_prompt();
  EXPECT_NE(p.find("AutoLabs is a robotic system for automated chemical experiment execution."), std::string::npos);
  EXPECT_NE(p.find("| Generate_Final_Steps |"), std::string::npos);
  auto sa = single_agent_prompt(p);
  EXPECT_EQ(sa.find("| Agent | Role |"), std::string::npos);
  EXPECT_EQ(sa.find("The role of each agent is listed below."), std::string::npos);
  EXPECT_NE(sa.find("GO STEP BY STEP."), std::string::npos);
  EXPECT_NE(sa.find("A request on math expression rendering"), std::string::npos);
  EXPECT_LT(sa.size(), p.size());
  EXPECT_EQ(p.substr(0, 400), sa.substr(0, 400));
}

TEST(Tools, RegistryHasFourSchemas) {
  const auto& tools = tool_registry();
  ASSERT_EQ(tools.size(), 4u);
  const auto& amounts = tools[3];
  EXPECT_EQ(amounts.name, "find_chemical_amounts_in_a_solution");
  for (auto key : {"total_molarity", "molar_ratio", "chemical_1", "chemical_2", "volume_L"})
    EXPECT_TRUE(amounts.parameters["properties"].contains(key)) << key;
  for (const auto& t : tools) EXPECT_FALSE(t.description.empty());
}

TEST(Tools, DispatchComputesAndReportsErrors) {
  const auto& props = StaticTable::bundled();
  auto v = dispatch({"c", "get_chem_volume", {{"chemical_name", "naphthalene"}, {"mass_mg", 5}}}, props);
  EXPECT_NEAR(v["volume_uL"].get<double>(), 4.39, 0.005);
  auto m = dispatch({"c", "find_the_concentration_of_n_percent_solution", {{"solution_name", "28% ammonia"}}}, props);
  EXPECT_NEAR(m["molarity_M"].get<double>(), 14.73, 0.01);
  auto s = dispatch({"c", "find_chemical_amounts_in_a_solution",
                     {{"total_molarity", 4}, {"molar_ratio", 0.5}, {"chemical_1", "acetic acid"},
                      {"chemical_2", "methanol"}, {"volume_L", 0.002}}},
                    props);
  EXPECT_NEAR(s["chemical_1"]["volume_uL"].get<double>(), 305.31, 0.5);
  EXPECT_NEAR(s["chemical_2"]["volume_uL"].get<double>(), 108.02, 0.5);
  EXPECT_TRUE(dispatch({"c", "launch_rocket", {}}, props).contains("error"));
  EXPECT_TRUE(dispatch({"c", "get_chem_volume", {{"chemical_name", "naphthalene"}}}, props).contains("error"));
  EXPECT_TRUE(dispatch({"c", "get_chem_volume", {{"chemical_name", "unobtainium"}, {"mass_mg", 1}}}, props).contains("error"));
  auto str = dispatch({"c", "get_chem_volume", {{"chemical_name", "naphthalene"}, {"mass_mg", "5"}}}, props);
  EXPECT_EQ(str, v);
}

TEST(Routing, SingleAgentAlwaysSupervisor) {
  ScriptedStub stub;
  auto s = new_session("d", cfg("SA-TU"), models(), Mode::FullyAutomated);
  EXPECT_EQ(route(s, stub), AgentId::Supervisor);
  EXPECT_EQ(s.path, std::vector<AgentId>{AgentId::Supervisor});
  EXPECT_EQ(stub.requests().size(), 0u);
}

TEST(Routing, ScriptedChoiceAppended) {
  ScriptedStub stub;
  stub.push(Channel::route, {llm::Role::assistant, "Chemical_Calculations", {}, {}, {}, {}});
  auto s = new_session("d", cfg("MA"), models(), Mode::FullyAutomated);
  EXPECT_EQ(route(s, stub), AgentId::ChemicalCalculations);
  EXPECT_EQ(s.path, std::vector<AgentId>{AgentId::ChemicalCalculations});
  auto req = stub.requests().front();
  EXPECT_NE(req.system.find(routing_instruction()), std::string::npos);
  EXPECT_EQ(req.messages.front().content, "d");
}

TEST(Routing, InvalidRouteRetriedOnceThenRespondToUser) {
  ScriptedStub stub;
  stub.push(Channel::route, {llm::Role::assistant, "Lab_Manager", {}, {}, {}, {}});
  stub.push(Channel::route, {llm::Role::assistant, "Vial_Arrangement", {}, {}, {}, {}});
  auto s = new_session("d", cfg("MA"), models(), Mode::FullyAutomated);
  EXPECT_EQ(route(s, stub), AgentId::VialArrangement);

  ScriptedStub bad;
  bad.push(Channel::route, {llm::Role::assistant, "nobody", {}, {}, {}, {}});
  bad.set_on_exhausted(ScriptedStub::OnExhausted::repeat_last);
  auto t = new_session("d", cfg("MA"), models(), Mode::FullyAutomated);
  EXPECT_EQ(route(t, bad), std::nullopt);
  EXPECT_EQ(bad.calls(Channel::route), 2u);
  EXPECT_TRUE(t.path.empty());
}

TEST(Routing, ReplayedSequenceBecomesPath) {
  auto stub = ScriptedStub::from_json(json::parse(R"({
    "route": ["Understand_And_Refine", "Chemical_Calculations", "Vial_Arrangement", "Processing_Steps", "Final_Steps"],
    "agent": ["u", "c", "v", "p", "f"]})"));
  auto s = new_session("d", cfg("MA"), models(), Mode::FullyAutomated);
  for (int i = 0; i < 5; ++i) s = step_session(std::move(s), stub);
  EXPECT_EQ(path_string(s.path), "U-C-V-P-F");
}

TEST(Subagent, ToolResultAppendedBeforeFinalMessage) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"agent": [
    {"content": "", "tool_calls": [{"name": "get_chem_volume", "arguments": {"chemical_name": "naphthalene", "mass_mg": 5}}]},
    "5 mg of naphthalene occupies 4.39 uL."]})"));
  auto s = new_session("d", cfg("MA-TU"), models(), Mode::FullyAutomated);
  auto reply = run_subagent(AgentId::ChemicalCalculations, s, stub);
  EXPECT_EQ(reply.content, "5 mg of naphthalene occupies 4.39 uL.");
  ASSERT_EQ(s.transcript.size(), 5u);
  const auto& call = s.transcript[2];
  const auto& result = s.transcript[3];
  EXPECT_EQ(result.role, llm::Role::tool);
  EXPECT_EQ(result.tool_call_id, call.tool_calls.at(0).id);
  EXPECT_NEAR(json::parse(result.content)["volume_uL"].get<double>(), 4.39, 0.005);
  EXPECT_EQ(s.transcript.back().agent, "Chemical_Calculations");
  EXPECT_EQ(stub.requests().front().tools.size(), 4u);
  EXPECT_GT(s.tokens.total(), 0);
  EXPECT_THROW(run_subagent(AgentId::Supervisor, s, stub), std::invalid_argument);
}

TEST(Subagent, ToolsOfferedOnlyToCalculationsAgent) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"agent": ["a"], "on_exhausted": "repeat_last"})"));
  auto s = new_session("d", cfg("MA-TU"), models(), Mode::FullyAutomated);
  run_subagent(AgentId::VialArrangement, s, stub);
  run_subagent(AgentId::ChemicalCalculations, s, stub);
  auto sa = new_session("d", cfg("SA-TU"), models(), Mode::FullyAutomated);
  run_agent(AgentId::Supervisor, sa, stub);
  auto reqs = stub.requests();
  EXPECT_TRUE(reqs[0].tools.empty());
  EXPECT_EQ(reqs[1].tools.size(), 4u);
  EXPECT_EQ(reqs[2].tools.size(), 4u);
}

TEST(Subagent, DisabledToolCallRefusedAndReprompted) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"agent": [
    {"content": "", "tool_calls": [{"name": "get_chem_volume", "arguments": {}}]},
    "answer without tools"]})"));
  auto s = new_session("d", cfg("MA"), models(), Mode::FullyAutomated);
  auto reply = run_subagent(AgentId::ChemicalCalculations, s, stub);
  EXPECT_EQ(reply.content, "answer without tools");
  EXPECT_EQ(stub.calls(Channel::agent), 2u);
  const auto& refusal = s.transcript[3];
  EXPECT_EQ(refusal.role, llm::Role::tool);
  EXPECT_NE(refusal.content.find("not available"), std::string::npos);
  EXPECT_TRUE(stub.requests()[0].tools.empty());
}

TEST(Subagent, RepeatedDisabledToolCallsStopAfterOneReprompt) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"agent": [
    {"content": "still calling", "tool_calls": [{"name": "get_chem_volume"}]}], "on_exhausted": "repeat_last"})"));
  auto s = new_session("d", cfg("MA"), models(), Mode::FullyAutomated);
  auto reply = run_subagent(AgentId::ChemicalCalculations, s, stub);
  EXPECT_EQ(reply.content, "still calling");
  EXPECT_EQ(stub.calls(Channel::agent), 2u);
}

TEST(Session, ThreeQuestionsGetThreeCannedReplies) {
  auto stub = ScriptedStub::from_json(json::parse(R"({
    "route": ["Understand_And_Refine", "Chemical_Calculations", "Vial_Arrangement", "Final_Steps"],
    "agent": ["Which solvent?", "Which plate?", "Ready to finalize?"]})"));
  stub.push(Channel::agent, {llm::Role::assistant, gt_block("exp1"), {}, {}, {}, {}});
  auto s = run_session(description("exp1"), cfg("MA"), Mode::FullyAutomated, stub, models(), options_for("exp1"));
  EXPECT_EQ(s.status, Status::done);
  EXPECT_EQ(count_user(s, kCannedReply), 3);
  int injected = 0;
  for (std::size_t i = 2; i < s.transcript.size(); ++i)
    if (s.transcript[i].role == llm::Role::user) {
      ++injected;
      EXPECT_EQ(s.transcript[i].content, "Please use your best judgment and proceed");
    }
  EXPECT_EQ(injected, 3);
  EXPECT_EQ(s.turns, 4);
}

TEST(Session, FinalStepsOnFirstTurn) {
  ScriptedStub stub;
  stub.push(Channel::agent, {llm::Role::assistant, gt_block("exp1"), {}, {}, {}, {}});
  auto s = run_session("d", cfg("SA"), Mode::FullyAutomated, stub, models(), options_for("exp1"));
  EXPECT_EQ(s.status, Status::done);
  EXPECT_EQ(s.turns, 1);
  ASSERT_TRUE(s.finalized);
  EXPECT_EQ(*s.finalized, load_fixture("exp1").procedure);
  EXPECT_TRUE(s.self_check.is_null());
  ASSERT_TRUE(s.tags);
  EXPECT_EQ(s.tags->at(0).core, CoreTag::Powder);
  EXPECT_EQ(path_and_token_report(s).length, 1u);
}

TEST(Session, FinalStepsDetectedFromAnyAgent) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"route": ["Vial_Arrangement"]})"));
  stub.push(Channel::agent, {llm::Role::assistant, "Vials chosen.\n" + gt_block("exp1"), {}, {}, {}, {}});
  auto s = run_session("d", cfg("MA"), Mode::FullyAutomated, stub, models(), options_for("exp1"));
  EXPECT_EQ(s.status, Status::done);
  EXPECT_EQ(path_string(s.path), "V");
}

TEST(Session, RespondToUserLeavesPathEmpty) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"route": ["respond_to_user"]})"));
  stub.push(Channel::agent, {llm::Role::assistant, gt_block("exp1"), {}, {}, {}, {}});
  auto s = run_session("d", cfg("MA"), Mode::FullyAutomated, stub, models(), options_for("exp1"));
  EXPECT_EQ(s.status, Status::done);
  EXPECT_EQ(path_and_token_report(s).length, 0u);
  EXPECT_EQ(s.transcript.back().agent, "Supervisor");
}

TEST(Session, MalformedFinalStepsGetCannedReply) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"agent": [
    "<final-steps><step> Add naphthalene (mg) to vials in Plate 1. {A1: } </step></final-steps>"]})"));
  stub.push(Channel::agent, {llm::Role::assistant, gt_block("exp1"), {}, {}, {}, {}});
  auto s = run_session("d", cfg("SA"), Mode::FullyAutomated, stub, models(), options_for("exp1"));
  EXPECT_EQ(s.status, Status::done);
  EXPECT_EQ(s.turns, 2);
  EXPECT_EQ(count_user(s, kCannedReply), 1);
}

TEST(Session, UnguidedAlwaysRevisingStopsAtFive) {
  auto gt = load_fixture("exp1");
  ScriptedStub stub;
  stub.push(Channel::agent, {llm::Role::assistant, gt.steps_text, {}, {}, {}, {}});
  for (int i = 0; i < 10; ++i) {
    auto p = gt.procedure;
    std::get<AddStep>(p.steps[0]).values.begin()->second = 5 + i + 1;
    stub.push(Channel::self_check, {llm::Role::assistant, render_procedure(p), {}, {}, {}, {}});
  }
  auto s = run_session("d", cfg("SA-TU-UGSC"), Mode::FullyAutomated, stub, models(), options_for("exp1"));
  EXPECT_EQ(s.status, Status::done);
  EXPECT_EQ(stub.calls(Channel::self_check), 5u);
  EXPECT_EQ(s.self_check["iterations"], 5);
  EXPECT_EQ(s.review.size(), 10u);
  ASSERT_TRUE(s.finalized);
  EXPECT_EQ(std::get<AddStep>(s.finalized->steps[0]).values.begin()->second, 10);
  EXPECT_EQ(s.path.back(), AgentId::SelfChecks);
  EXPECT_EQ(count_user(s, kCannedReply), 0);
}

TEST(Session, GuidedSelfCheckRepairsAndCarriesTags) {
  auto gt = load_fixture("exp1");
  auto broken = gt.procedure;
  broken.steps.pop_back();
  ScriptedStub stub;
  stub.push(Channel::agent, {llm::Role::assistant, render_procedure(broken), {}, {}, {}, {}});
  auto s = run_session("d", cfg("SA-TU-GSC"), Mode::FullyAutomated, stub, models(), options_for("exp1"));
  EXPECT_EQ(s.status, Status::done);
  ASSERT_TRUE(s.finalized);
  EXPECT_EQ(*s.finalized, gt.procedure);
  EXPECT_TRUE(s.self_check["converged"].get<bool>());
  EXPECT_FALSE(s.self_check["applied_fixes"].empty());
  EXPECT_EQ(s.tags->size(), gt.procedure.steps.size());
}

TEST(Session, NeverFinalizingFailsAtTurnLimit) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"agent": ["thinking"], "route": ["Final_Steps"],
                                                     "on_exhausted": "repeat_last"})"));
  auto s = run_session("d", cfg("MA"), Mode::FullyAutomated, stub, models());
  EXPECT_EQ(s.status, Status::failed);
  EXPECT_EQ(s.turns, 40);
  EXPECT_EQ(stub.calls(Channel::agent), 40u);
  ASSERT_TRUE(s.failure);
  EXPECT_EQ(s.failure->rfind(std::string(kTurnLimitExceeded), 0), 0u);
  EXPECT_EQ(count_user(s, kCannedReply), 40);

  SessionOptions o;
  o.turn_limit = 3;
  auto stub2 = ScriptedStub::from_json(json::parse(R"({"agent": ["thinking"], "on_exhausted": "repeat_last"})"));
  auto t = run_session("d", cfg("SA"), Mode::FullyAutomated, stub2, models(), o);
  EXPECT_EQ(t.turns, 3);
  EXPECT_EQ(t.status, Status::failed);
}

TEST(Session, LlmOutageFailsSession) {
  ScriptedStub stub;
  auto s = run_session("d", cfg("MA"), Mode::FullyAutomated, stub, models());
  EXPECT_EQ(s.status, Status::failed);
  ASSERT_TRUE(s.failure);
  EXPECT_EQ(s.failure->rfind("LLMUnavailable", 0), 0u);
}

TEST(Session, ReplayIsByteIdentical) {
  for (const auto& label : {"MA-TU-GSC", "SA-TU-UGSC", "MA-TU"}) {
    auto a_stub = exp_stub("exp3");
    auto b_stub = exp_stub("exp3");
    auto a = run_session(description("exp3"), cfg(label, Cognition::FR), Mode::FullyAutomated, a_stub,
                         models(Cognition::FR), options_for("exp3"));
    auto b = run_session(description("exp3"), cfg(label, Cognition::FR), Mode::FullyAutomated, b_stub,
                         models(Cognition::FR), options_for("exp3"));
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump()) << label;
    EXPECT_EQ(a.status, Status::done) << label;
  }
}

TEST(Session, HumanInLoopParksAndResumes) {
  auto stub = ScriptedStub::from_json(json::parse(R"({"agent": ["Which plate?"]})"));
  stub.push(Channel::agent, {llm::Role::assistant, gt_block("exp1"), {}, {}, {}, {}});
  auto s = run_session("d", cfg("SA"), Mode::HumanInLoop, stub, models(), options_for("exp1"));
  EXPECT_EQ(s.status, Status::awaiting_user);
  auto parked = advance(s, stub, options_for("exp1"));
  EXPECT_EQ(parked, s);
  EXPECT_EQ(stub.calls(Channel::agent), 1u);

  s = advance(std::move(s), stub, options_for("exp1"), std::string("Plate 1, 20 mL vials"));
  EXPECT_EQ(s.status, Status::awaiting_tags);
  EXPECT_EQ(count_user(s, "Plate 1, 20 mL vials"), 1);
  EXPECT_EQ(count_user(s, kCannedReply), 0);
  ASSERT_TRUE(s.tags);

  auto bad = *s.tags;
  bad[1].core = CoreTag::Powder;
  EXPECT_THROW(submit_tags(s, bad, StaticTable::bundled()), InvalidTagSet);
  auto done = submit_tags(s, *s.tags, StaticTable::bundled());
  EXPECT_EQ(done.status, Status::done);
  EXPECT_THROW(submit_tags(done, *s.tags, StaticTable::bundled()), std::logic_error);
  EXPECT_THROW(step_session(done, stub, {}, std::string("more")), std::logic_error);
}

TEST(Session, ArraysInferredWithoutBindings) {
  ScriptedStub stub;
  stub.push(Channel::agent, {llm::Role::assistant, gt_block("exp1"), {}, {}, {}, {}});
  auto s = run_session("d", cfg("SA"), Mode::FullyAutomated, stub, models());
  ASSERT_TRUE(s.finalized);
  EXPECT_DOUBLE_EQ(s.finalized->arrays.at(PlateId{1}).vial_volume_mL, 20.0);
  auto exp3 = load_fixture("exp3").procedure;
  exp3.arrays.clear();
  EXPECT_DOUBLE_EQ(infer_array(exp3, PlateId{1}).vial_volume_mL, 2.0);
}

TEST(EndToEnd, StubSessionsReproduceGroundTruth) {
  for (const auto& id : experiment_ids()) {
    auto stub = exp_stub(id);
    auto s = run_session(description(id), cfg("MA-TU-GSC", Cognition::FR), Mode::FullyAutomated, stub,
                         models(Cognition::FR), options_for(id));
    ASSERT_EQ(s.status, Status::done) << id << " " << s.failure.value_or("");
    auto gt = load_fixture(id);
    auto r = eval::evaluate(*s.finalized, gt.procedure);
    EXPECT_EQ(r.f1, 1.0) << id;
    ASSERT_TRUE(r.nrmse.value) << id;
    EXPECT_EQ(*r.nrmse.value, 0.0) << id;
    EXPECT_EQ(path_string(s.path), "U-C-V-P-F-SC") << id;
    bool tool_result = false;
    for (const auto& m : s.transcript)
      if (m.role == llm::Role::tool) {
        tool_result = true;
        EXPECT_FALSE(json::parse(m.content).contains("error")) << id << m.content;
      }
    EXPECT_TRUE(tool_result) << id;
  }
}

TEST(EndToEnd, AllConfigurationsTerminateOnStub) {
  for (const auto& c : all_configurations()) {
    auto stub = exp_stub("exp1");
    auto s = run_session(description("exp1"), c, Mode::FullyAutomated, stub, models(c.cognition), options_for("exp1"));
    EXPECT_EQ(s.status, Status::done) << c.label();
    auto r = eval::evaluate(*s.finalized, load_fixture("exp1").procedure);
    EXPECT_EQ(r.f1, 1.0) << c.label();
    for (const auto& req : stub.requests()) {
      bool sa_prompt = req.system.find("| Agent | Role |") == std::string::npos;
      EXPECT_EQ(sa_prompt, c.topology == Topology::SingleAgent) << c.label();
    }
  }
}

TEST(EndToEnd, OmittedVortexStepsLowerRecall) {
  auto gt = load_fixture("exp1");
  auto partial = gt.procedure;
  partial.steps.erase(partial.steps.begin() + 3);
  partial.steps.pop_back();
  ScriptedStub stub;
  stub.push(Channel::agent, {llm::Role::assistant, render_procedure(partial), {}, {}, {}, {}});
  auto s = run_session("d", cfg("SA-TU"), Mode::FullyAutomated, stub, models(), options_for("exp1"));
  ASSERT_TRUE(s.finalized);
  auto r = eval::evaluate(*s.finalized, gt.procedure);
  EXPECT_DOUBLE_EQ(r.recall, 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
}

TEST(EndToEnd, PerRequestModelsFollowCognition) {
  auto stub = exp_stub("exp1");
  run_session(description("exp1"), cfg("MA-TU-UGSC", Cognition::PR), Mode::FullyAutomated, stub,
              models(Cognition::PR), options_for("exp1"));
  bool saw_reasoning = false;
  for (const auto& req : stub.requests()) {
    bool understand = req.channel == Channel::agent && req.system.find("You are the Understand_And_Refine agent") != std::string::npos;
    EXPECT_EQ(req.model, understand ? "reasoning-model" : "chat-model");
    saw_reasoning |= understand;
  }
  EXPECT_TRUE(saw_reasoning);
}

TEST(Reports, PathAndTokens) {
  SessionState s;
  s.status = Status::done;
  s.path = {AgentId::UnderstandRefine, AgentId::ChemicalCalculations, AgentId::VialArrangement, AgentId::FinalSteps};
  s.tokens = {100, 20};
  auto r = path_and_token_report(s);
  EXPECT_EQ(r.length, 4u);
  for (auto a : s.path) EXPECT_EQ(r.visits.at(a), 1);
  EXPECT_EQ(r.tokens.total(), 120);
  s.status = Status::active;
  EXPECT_THROW(path_and_token_report(s), std::logic_error);
}

TEST(Reports, RepetitionsAggregate) {
  PathReport total;
  PathReport one;
  long tokens = 0;
  for (int i = 0; i < 10; ++i) {
    auto stub = exp_stub("exp1");
    auto s = run_session(description("exp1"), cfg("MA-TU"), Mode::FullyAutomated, stub, models(), options_for("exp1"));
    one = path_and_token_report(s);
    tokens += s.tokens.total();
    total += one;
  }
  EXPECT_EQ(total.runs, 10);
  EXPECT_EQ(total.length, 10 * one.length);
  for (const auto& [a, n] : one.visits) EXPECT_EQ(total.visits.at(a), 10 * n);
  EXPECT_EQ(total.tokens.total(), tokens);
  EXPECT_EQ(to_json(total)["visits"]["Final_Steps"], 10);
}

TEST(Serialization, SessionJsonRoundTrip) {
  auto stub = exp_stub("exp5");
  auto s = run_session(description("exp5"), cfg("MA-TU-GSC", Cognition::PR), Mode::HumanInLoop, stub,
                       models(Cognition::PR), options_for("exp5"));
  s = advance(std::move(s), stub, options_for("exp5"), std::string("yes"));
  while (s.status == Status::awaiting_user) s = advance(std::move(s), stub, options_for("exp5"), std::string("go on"));
  ASSERT_EQ(s.status, Status::awaiting_tags);
  auto back = session_from_json(json::parse(to_json(s).dump()));
  EXPECT_EQ(back, s);
  EXPECT_EQ(to_json(back).dump(), to_json(s).dump());
}
