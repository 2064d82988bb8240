// Runs the scripted Exp-1 session, scores it against the ground truth and
// prints the hardware file.

#include <iostream>

#include "autolabs/eval.hpp"
#include "autolabs/fixtures.hpp"
#include "autolabs/hardware.hpp"
#include "autolabs/orchestrator.hpp"

using namespace autolabs;

int main() {
  auto gt = load_fixture("exp1");
  auto stub = llm::ScriptedStub::from_json(nlohmann::json::parse(detail::read_file(gt.dir / "stub.json")));

  auto config = orch::ArchitectureConfig::parse("MA-TU-GSC", orch::Cognition::FR);
  auto models = orch::ModelAssignment::for_cognition(orch::Cognition::FR, {"gpt-4o", "o3-mini", "medium"});
  orch::SessionOptions options;
  options.plates = gt.plates;

  auto session = orch::run_session(detail::read_file(gt.dir / "description.txt"), config, orch::Mode::FullyAutomated,
                                   stub, models, options);
  std::cout << "status: " << orch::to_string(session.status) << "\n"
            << "path:   " << orch::path_string(session.path) << "\n";
  if (!session.finalized) return 1;

  auto report = eval::evaluate(*session.finalized, gt.procedure);
  std::cout << eval::to_table(report) << "\n";
  std::cout << hw::emit(*session.finalized, *session.tags, StaticTable::bundled());
  return 0;
}
