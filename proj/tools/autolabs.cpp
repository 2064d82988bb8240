// autolabs command-line interface.
//
// Exit codes: 0 success, 1 validation failure, 2 usage error.

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "autolabs/config.hpp"
#include "autolabs/eval.hpp"
#include "autolabs/fixtures.hpp"
#include "autolabs/hardware.hpp"
#include "autolabs/llm_properties.hpp"
#include "autolabs/orchestrator.hpp"
#include "autolabs/self_checks.hpp"
#include "autolabs/service.hpp"

using namespace autolabs;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kUsage = 2;

/// Bad flag value; the message names the flag.
struct UsageError : std::runtime_error {
  UsageError(const std::string& flag, const std::string& what) : std::runtime_error(flag + ": " + what) {}
};

/// Input that parsed as arguments but failed validation.
struct Invalid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v, int places = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(places) << v;
  return out.str();
}

std::string fmt(const std::optional<double>& v, int places = 4) { return v ? fmt(*v, places) : "n/a"; }

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError(path, "cannot write file");
  out << text;
}

/// A `<final-steps>` block, or one step per non-empty line.
Procedure read_procedure(const std::string& path, const std::string& flag) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const std::exception&) {
    throw UsageError(flag, "cannot read '" + path + "'");
  }
  try {
    if (auto p = extract_final_steps(text)) return *p;
    Procedure p;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      p.steps.push_back(parse_step(line));
    }
    return p;
  } catch (const std::exception& e) {
    throw Invalid(path + ": " + e.what());
  }
}

/// Arrays from a plates.csv next to the steps file, else inferred.
Procedure with_arrays(Procedure p, const std::string& steps_path, const std::string& plates_path) {
  std::vector<PlateBinding> plates;
  std::filesystem::path candidate = plates_path.empty() ? std::filesystem::path(steps_path).parent_path() / "plates.csv"
                                                        : std::filesystem::path(plates_path);
  if (!plates_path.empty() && !std::filesystem::exists(candidate)) throw UsageError("--plates", "no such file");
  if (std::filesystem::exists(candidate)) plates = load_plates(candidate);
  return orch::bind_arrays(std::move(p), plates);
}

Fixture ground_truth(const AppConfig& config, const std::string& value, bool alt_order) {
  std::string id = value;
  if (alt_order) {
    if (value != "exp3") throw UsageError("--alt-order", "only applies to --ground-truth exp3");
    id = "exp3-alt";
  }
  if (std::filesystem::is_regular_file(id)) {
    Fixture f;
    f.id = std::filesystem::path(id).stem().string();
    f.procedure = read_procedure(id, "--ground-truth");
    return f;
  }
  try {
    return config.fixture(id);
  } catch (const std::exception& e) {
    throw UsageError("--ground-truth", e.what());
  }
}

AppConfig load_config(const std::string& file) {
  try {
    return AppConfig::load(file.empty() ? std::nullopt : std::optional<std::filesystem::path>(file));
  } catch (const std::exception& e) {
    throw UsageError("--config-file", e.what());
  }
}

/// Property lookups: the bundled table, then the model for the http client.
struct Properties {
  std::unique_ptr<LlmPropertyProvider> model;
  std::unique_ptr<FallbackProvider> chain;
  std::unique_ptr<CachingProvider> cache;
  const PropertyProvider* provider = &StaticTable::bundled();

  Properties(llm::ChatClient* client, const std::string& model_name) {
    if (!client) return;
    model = std::make_unique<LlmPropertyProvider>(*client, model_name);
    chain = std::make_unique<FallbackProvider>(StaticTable::bundled(), *model);
    cache = std::make_unique<CachingProvider>(*chain);
    provider = cache.get();
  }
};

std::shared_ptr<llm::ChatClient> make_client(const std::string& kind, const AppConfig& config,
                                             const std::string& stub_path) {
  if (kind == "http") {
    try {
      return std::make_shared<llm::HttpChatClient>(config.http());
    } catch (const std::exception& e) {
      throw UsageError("--client", e.what());
    }
  }
  if (stub_path.empty()) throw UsageError("--stub", "the stub client needs a script (--stub or an --experiment with stub.json)");
  try {
    return std::make_shared<llm::ScriptedStub>(llm::ScriptedStub::from_json(json::parse(detail::read_file(stub_path))));
  } catch (const std::exception& e) {
    throw UsageError("--stub", e.what());
  }
}

// ---------------------------------------------------------------------------
// run

struct RunArgs {
  std::string experiment;
  std::string config = "MA-TU-GSC";
  std::string cognition = "FR";
  std::string mode = "auto";
  std::string client = "stub";
  std::string stub;
  std::string ground_truth;
  std::string config_file;
  std::string steps_out;
  std::string hardware_out;
  std::string transcript_out;
  std::string format = "text";
  int repeat = 1;
};

/// Interactive prompts on stdin; EOF ends the session as failed.
orch::SessionState interact(orch::SessionState s, llm::ChatClient& client, const orch::SessionOptions& options) {
  s = orch::advance(std::move(s), client, options);
  while (s.status == orch::Status::awaiting_user) {
    for (auto it = s.transcript.rbegin(); it != s.transcript.rend(); ++it)
      if (it->role == llm::Role::assistant && !it->content.empty()) {
        std::cout << "[" << it->agent.value_or("assistant") << "] " << it->content << "\n";
        break;
      }
    std::cout << "> " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line)) {
      s.status = orch::Status::failed;
      s.failure = "input closed while awaiting the user";
      return s;
    }
    s = orch::advance(std::move(s), client, options, line.empty() ? std::string(orch::kCannedReply) : line);
  }
  return s;
}

int cmd_run(const RunArgs& a) {
  auto config = load_config(a.config_file);
  auto cognition = orch::parse_cognition(a.cognition);
  if (!cognition) throw UsageError("--cognition", "expected NR, PR or FR, got '" + a.cognition + "'");
  orch::ArchitectureConfig arch;
  try {
    arch = orch::ArchitectureConfig::parse(a.config, *cognition);
  } catch (const std::exception& e) {
    throw UsageError("--config", e.what());
  }
  auto mode = a.mode == "auto" ? orch::Mode::FullyAutomated : orch::Mode::HumanInLoop;

  std::string description;
  std::optional<Fixture> fixture;
  std::string stub_path = a.stub;
  if (std::filesystem::is_regular_file(a.experiment)) {
    description = detail::read_file(a.experiment);
  } else {
    try {
      fixture = config.fixture(a.experiment);
    } catch (const std::exception& e) {
      throw UsageError("--experiment", e.what());
    }
    description = detail::read_file(fixture->dir / "description.txt");
    if (stub_path.empty() && std::filesystem::exists(fixture->dir / "stub.json"))
      stub_path = (fixture->dir / "stub.json").string();
  }
  while (!description.empty() && (description.back() == '\n' || description.back() == '\r')) description.pop_back();

  std::optional<Fixture> gt;
  if (!a.ground_truth.empty()) gt = ground_truth(config, a.ground_truth, false);
  else if (fixture) gt = fixture;

  auto models = orch::ModelAssignment::for_cognition(*cognition, config.models);
  auto options = config.session_options();
  if (fixture) options.plates = fixture->plates;

  orch::PathReport total;
  std::vector<double> f1s, nrmses;
  json runs = json::array();
  int failures = 0;
  std::optional<orch::SessionState> last;
  for (int i = 0; i < a.repeat; ++i) {
    auto client = make_client(a.client, config, stub_path);
    Properties props(a.client == "http" ? client.get() : nullptr, config.models.non_reasoning);
    options.props = props.provider;
    auto s = orch::new_session(description, arch, models, mode, options);
    s = mode == orch::Mode::FullyAutomated ? orch::advance(std::move(s), *client, options)
                                           : interact(std::move(s), *client, options);
    if (s.status == orch::Status::awaiting_tags) s = orch::submit_tags(s, *s.tags, *props.provider);
    total += orch::path_and_token_report(s);

    json run{{"run", i + 1},
             {"status", orch::to_string(s.status)},
             {"turns", s.turns},
             {"path", orch::path_string(s.path)},
             {"report", orch::to_json(orch::path_and_token_report(s))}};
    if (s.failure) run["failure"] = *s.failure;
    if (s.status != orch::Status::done) ++failures;
    std::optional<eval::MetricsReport> metrics;
    if (gt && s.finalized) {
      metrics = eval::evaluate(*s.finalized, gt->procedure);
      run["metrics"] = eval::to_json(*metrics);
      run["metrics"]["ground_truth"] = gt->id;
      f1s.push_back(metrics->f1);
      if (metrics->nrmse.value) nrmses.push_back(*metrics->nrmse.value);
    }
    if (a.format == "text") {
      std::cout << "run " << i + 1 << "/" << a.repeat << ": status " << orch::to_string(s.status) << ", " << a.config
                << "/" << a.cognition << ", turns " << s.turns << ", path " << orch::path_string(s.path) << ", tokens "
                << s.tokens.total() << "\n";
      if (s.failure) std::cout << "  failure: " << *s.failure << "\n";
      if (metrics)
        std::cout << "  vs " << gt->id << ": precision " << fmt(metrics->precision) << "  recall " << fmt(metrics->recall)
                  << "  F1 " << fmt(metrics->f1) << "  spearman " << fmt(metrics->spearman) << "  nRMSE "
                  << fmt(metrics->nrmse.value) << "\n";
    }
    runs.push_back(run);
    last = std::move(s);
  }

  auto mean = [](const std::vector<double>& xs) -> std::optional<double> {
    if (xs.empty()) return std::nullopt;
    double sum = 0;
    for (double x : xs) sum += x;
    return sum / static_cast<double>(xs.size());
  };
  if (a.format == "json") {
    json out{{"config", arch.label()}, {"mode", orch::to_string(mode)}, {"runs", runs}, {"aggregate", orch::to_json(total)}};
    if (auto m = mean(f1s)) out["aggregate"]["mean_f1"] = *m;
    if (auto m = mean(nrmses)) out["aggregate"]["mean_nrmse"] = *m;
    std::cout << out.dump(2) << "\n";
  } else if (a.repeat > 1) {
    std::cout << "aggregate: " << a.repeat - failures << "/" << a.repeat << " done, mean path length "
              << fmt(static_cast<double>(total.length) / a.repeat, 2) << ", mean tokens "
              << fmt(static_cast<double>(total.tokens.total()) / a.repeat, 1) << ", mean F1 " << fmt(mean(f1s))
              << ", mean nRMSE " << fmt(mean(nrmses)) << "\n";
  }

  if (last && last->finalized) {
    if (!a.steps_out.empty()) write_text(a.steps_out, render_procedure(*last->finalized));
    if (!a.hardware_out.empty()) {
      try {
        write_text(a.hardware_out, hw::emit(*last->finalized, *last->tags, StaticTable::bundled()));
      } catch (const std::exception& e) {
        throw Invalid(std::string("hardware file: ") + e.what());
      }
    }
  }
  if (last && !a.transcript_out.empty()) write_text(a.transcript_out, orch::to_json(*last).dump(2) + "\n");
  return failures == 0 ? kOk : kInvalid;
}

// ---------------------------------------------------------------------------
// eval / check / emit / validate / calc

int cmd_eval(const std::string& generated, const std::string& gt_arg, bool alt_order, const std::string& format,
             const std::string& config_file) {
  auto config = load_config(config_file);
  auto gen = read_procedure(generated, "--generated");
  auto gt = ground_truth(config, gt_arg, alt_order);
  auto report = eval::evaluate(gen, gt.procedure);
  if (format == "json") {
    auto j = eval::to_json(report);
    j["ground_truth"] = gt.id;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "ground truth: " << gt.id << "\n" << eval::to_table(report);
  }
  return kOk;
}

int cmd_check(const std::string& file, bool unguided, const std::string& plates, const std::string& client_kind,
              const std::string& stub, const std::string& config_file, const std::string& revised_out) {
  auto config = load_config(config_file);
  auto p = with_arrays(read_procedure(file, "file"), file, plates);
  checks::SelfCheckOutcome outcome;
  if (unguided) {
    auto client = make_client(client_kind, config, stub);
    auto models = orch::ModelAssignment::for_cognition(orch::Cognition::NR, config.models);
    const auto& m = models.for_agent(orch::AgentId::SelfChecks);
    outcome = checks::run_unguided(p, {}, orch::system_prompt(), *client, {m.model, m.reasoning_effort, config.self_check_limit});
  } else {
    checks::CheckContext ctx;
    ctx.props = &StaticTable::bundled();
    ctx.solvent_tolerance = config.solvent_tolerance;
    std::filesystem::path candidate =
        plates.empty() ? std::filesystem::path(file).parent_path() / "plates.csv" : std::filesystem::path(plates);
    if (std::filesystem::exists(candidate))
      for (const auto& b : load_plates(candidate))
        if (b.target_volume_uL) ctx.target_volume_uL[b.plate] = *b.target_volume_uL;
    try {
      ctx.tags = default_tags(p, StaticTable::bundled());
    } catch (const std::exception&) {
    }
    outcome = checks::run_guided(p, ctx);
  }
  std::cout << checks::to_json(outcome).dump(2) << "\n";
  if (!revised_out.empty()) write_text(revised_out, render_procedure(outcome.revised));
  return checks::has_errors(outcome.findings) ? kInvalid : kOk;
}

int cmd_emit(const std::string& steps, const std::string& tags_file, const std::string& plates, const std::string& out) {
  auto p = with_arrays(read_procedure(steps, "--steps"), steps, plates);
  StepTags tags;
  if (tags_file.empty()) {
    tags = default_tags(p, StaticTable::bundled());
  } else {
    json j;
    try {
      j = json::parse(detail::read_file(tags_file));
    } catch (const std::exception& e) {
      throw UsageError("--tags", e.what());
    }
    try {
      tags = step_tags_from_json(j);
    } catch (const std::exception& e) {
      throw Invalid(tags_file + ": " + e.what());
    }
  }
  std::string xml;
  try {
    xml = hw::emit(p, tags, StaticTable::bundled());
  } catch (const hw::ValidationFailed& e) {
    std::ostringstream msg;
    msg << "hardware file rejected:";
    for (const auto& problem : e.problems()) msg << "\n  " << problem;
    throw Invalid(msg.str());
  }
  write_text(out, xml);
  return kOk;
}

int cmd_validate(const std::string& file) {
  std::string xml;
  try {
    xml = detail::read_file(file);
  } catch (const std::exception&) {
    throw UsageError("file", "cannot read '" + file + "'");
  }
  auto problems = hw::validate_document(xml);
  for (const auto& p : problems) std::cout << p << "\n";
  if (problems.empty()) std::cout << file << ": valid\n";
  return problems.empty() ? kOk : kInvalid;
}

int cmd_serve(const std::string& config_file, const std::string& host, int port, const std::string& store_dir,
              const std::string& client_kind) {
  auto config = load_config(config_file);
  if (!host.empty()) config.host = host;
  if (port >= 0) config.port = port;
  if (!store_dir.empty()) config.store_dir = store_dir;
  if (!client_kind.empty()) config.client = client_kind == "http" ? ClientKind::http : ClientKind::stub;

  store::SessionStore store(config.store_dir);
  svc::ClientFactory factory;
  std::shared_ptr<llm::ChatClient> shared;
  Properties* props_ptr = nullptr;
  std::unique_ptr<Properties> props;
  if (config.client == ClientKind::http) {
    shared = make_client("http", config, "");
    factory = svc::shared_factory(shared);
    props = std::make_unique<Properties>(shared.get(), config.models.non_reasoning);
    props_ptr = props.get();
  } else {
    factory = svc::stub_factory(config);
  }
  svc::Service service(config, store, factory, props_ptr ? *props_ptr->provider : StaticTable::bundled());
  for (const auto& id : service.recover()) std::cerr << "could not restore session " << id << "\n";
  int bound = service.bind(config.host, config.port);
  if (bound < 0) throw UsageError("--port", "cannot listen on " + config.host + ":" + std::to_string(config.port));
  std::cout << "listening on http://" << config.host << ":" << bound << " (sessions in " << config.store_dir.string()
            << ")" << std::endl;
  static svc::Service* running = nullptr;
  running = &service;
  std::signal(SIGINT, [](int) {
    if (running) running->server().stop();
  });
  std::signal(SIGTERM, [](int) {
    if (running) running->server().stop();
  });
  service.listen();
  running = nullptr;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AutoLabs: protocol generation, evaluation, self-checks and hardware files"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "autolabs 1.0.0");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a session and report path, tokens and metrics");
  run_cmd->add_option("--experiment", run.experiment, "Experiment id, fixture directory, or a description file")->required();
  run_cmd->add_option("--config", run.config, "SA|MA with -TU and -GSC|-UGSC suffixes")->capture_default_str();
  run_cmd->add_option("--cognition", run.cognition, "NR, PR or FR")->check(CLI::IsMember({"NR", "PR", "FR"}))->capture_default_str();
  run_cmd->add_option("--mode", run.mode, "auto or interactive")->check(CLI::IsMember({"auto", "interactive"}))->capture_default_str();
  run_cmd->add_option("--client", run.client, "stub or http")->check(CLI::IsMember({"stub", "http"}))->capture_default_str();
  run_cmd->add_option("--stub", run.stub, "Scripted stub file (default: the experiment's stub.json)")->check(CLI::ExistingFile);
  run_cmd->add_option("--repeat", run.repeat, "Number of runs")->check(CLI::PositiveNumber)->capture_default_str();
  run_cmd->add_option("--ground-truth", run.ground_truth, "Experiment id or steps file to score against");
  run_cmd->add_option("--config-file", run.config_file, "Application config JSON")->check(CLI::ExistingFile);
  run_cmd->add_option("--steps-out", run.steps_out, "Write the final steps of the last run");
  run_cmd->add_option("--hardware-out", run.hardware_out, "Write the hardware file of the last run");
  run_cmd->add_option("--transcript-out", run.transcript_out, "Write the last session state as JSON");
  run_cmd->add_option("--format", run.format, "text or json")->check(CLI::IsMember({"text", "json"}))->capture_default_str();

  std::string generated, gt, eval_format = "json", eval_config;
  bool alt_order = false;
  auto* eval_cmd = app.add_subcommand("eval", "Score a generated procedure against a ground truth");
  eval_cmd->add_option("--generated", generated, "Generated steps file")->required();
  eval_cmd->add_option("--ground-truth", gt, "Experiment id or steps file")->required();
  eval_cmd->add_flag("--alt-order", alt_order, "Use the alternative Exp-3 ordering as ground truth");
  eval_cmd->add_option("--format", eval_format, "json or table")->check(CLI::IsMember({"json", "table"}))->capture_default_str();
  eval_cmd->add_option("--config-file", eval_config, "Application config JSON")->check(CLI::ExistingFile);

  std::string check_file, check_plates, check_client = "stub", check_stub, check_config, check_out;
  bool guided = false, unguided = false;
  auto* check_cmd = app.add_subcommand("check", "Run the guided checks or the model review on a procedure");
  auto* guided_flag = check_cmd->add_flag("--guided", guided, "Rule-based checks with automatic repair");
  auto* unguided_flag = check_cmd->add_flag("--unguided", unguided, "Holistic model review");
  guided_flag->excludes(unguided_flag);
  check_cmd->add_option("file", check_file, "Steps file")->required();
  check_cmd->add_option("--plates", check_plates, "plates.csv with vial sizes and target volumes");
  check_cmd->add_option("--client", check_client, "stub or http")->check(CLI::IsMember({"stub", "http"}));
  check_cmd->add_option("--stub", check_stub, "Scripted stub file for --unguided")->check(CLI::ExistingFile);
  check_cmd->add_option("--config-file", check_config, "Application config JSON")->check(CLI::ExistingFile);
  check_cmd->add_option("--revised-out", check_out, "Write the revised steps");

  std::string emit_steps, emit_tags, emit_plates, emit_out = "-";
  auto* emit_cmd = app.add_subcommand("emit", "Write the hardware file for a procedure");
  emit_cmd->add_option("--steps", emit_steps, "Steps file")->required();
  emit_cmd->add_option("--tags", emit_tags, "JSON map of step index to tags (default: suggested tags)");
  emit_cmd->add_option("--plates", emit_plates, "plates.csv with vial sizes");
  emit_cmd->add_option("-o,--output", emit_out, "Output file, - for stdout")->capture_default_str();

  std::string validate_file;
  auto* validate_cmd = app.add_subcommand("validate", "Check a hardware file against the format rules");
  validate_cmd->add_option("file", validate_file, "Hardware XML file")->required();

  auto* calc_cmd = app.add_subcommand("calc", "Chemistry calculations");
  calc_cmd->require_subcommand(1);
  std::string chem_name, chem_name2;
  double number1 = 0, number2 = 0, number3 = 0;
  auto* n_percent = calc_cmd->add_subcommand("n-percent", "Molarity of an n% solution, M");
  n_percent->add_option("solution", chem_name, "e.g. \"28% ammonia\"")->required();
  auto* volume = calc_cmd->add_subcommand("volume", "Volume of a mass of chemical, uL");
  volume->add_option("chemical", chem_name)->required();
  volume->add_option("mass_mg", number1)->required();
  auto* moles_volume = calc_cmd->add_subcommand("moles-volume", "Volume holding an amount of chemical, uL");
  moles_volume->add_option("chemical", chem_name)->required();
  moles_volume->add_option("moles", number1)->required();
  auto* amounts = calc_cmd->add_subcommand("amounts", "Two-component solution amounts");
  amounts->add_option("total_molarity", number1)->required();
  amounts->add_option("molar_ratio", number2, "[chemical_2]/[chemical_1]")->required();
  amounts->add_option("chemical_1", chem_name)->required();
  amounts->add_option("chemical_2", chem_name2)->required();
  amounts->add_option("volume_L", number3)->required();
  auto* dilution = calc_cmd->add_subcommand("dilution", "Stock volume for a dilution, uL");
  dilution->add_option("stock_M", number1)->required();
  dilution->add_option("target_M", number2)->required();
  dilution->add_option("volume_L", number3)->required();
  auto* split = calc_cmd->add_subcommand("split", "Modifier stock and neat solvent volumes, uL");
  split->add_option("total_uL", number1)->required();
  split->add_option("target_percent", number2)->required();
  split->add_option("stock_percent", number3)->required();

  std::string serve_config, serve_host, serve_store, serve_client;
  int serve_port = -1;
  auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP session service");
  serve_cmd->add_option("--config-file", serve_config, "Application config JSON")->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", serve_host, "Listen address");
  serve_cmd->add_option("--port", serve_port, "Listen port, 0 for any")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--store-dir", serve_store, "Session log directory");
  serve_cmd->add_option("--client", serve_client, "stub or http")->check(CLI::IsMember({"stub", "http"}));

  auto* tags_cmd = app.add_subcommand("tags", "Print the hardware tag rules as JSON");
  auto* configs_cmd = app.add_subcommand("configs", "List the architecture configurations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*eval_cmd) return cmd_eval(generated, gt, alt_order, eval_format, eval_config);
    if (*check_cmd) {
      if (!guided && !unguided) throw UsageError("--guided|--unguided", "choose one");
      return cmd_check(check_file, unguided, check_plates, check_client, check_stub, check_config, check_out);
    }
    if (*emit_cmd) return cmd_emit(emit_steps, emit_tags, emit_plates, emit_out);
    if (*validate_cmd) return cmd_validate(validate_file);
    if (*serve_cmd) return cmd_serve(serve_config, serve_host, serve_port, serve_store, serve_client);
    if (*tags_cmd) {
      std::cout << tag_rules().dump(2) << "\n";
      return kOk;
    }
    if (*configs_cmd) {
      for (const auto& c : orch::all_configurations()) std::cout << c.label() << "\n";
      return kOk;
    }
    const auto& props = StaticTable::bundled();
    if (*n_percent) {
      std::cout << fmt(find_the_concentration_of_n_percent_solution(props, chem_name).value, 2) << " M\n";
    } else if (*volume) {
      std::cout << fmt(get_chem_volume(props, chem_name, Milligrams{number1}).value, 2) << " uL\n";
    } else if (*moles_volume) {
      std::cout << fmt(find_the_volume_corresponding_to_moles(props, chem_name, Moles{number1}).value, 2) << " uL\n";
    } else if (*amounts) {
      auto [c1, c2] = find_chemical_amounts_in_a_solution(props, {Molar{number1}, number2, Liters{number3}}, chem_name, chem_name2);
      for (const auto& c : {c1, c2}) {
        auto amount = c.canonical();
        std::cout << c.name << ": " << fmt(amount.value, 2) << " " << to_string(amount.unit) << " (" << fmt(c.molarity.value, 4)
                  << " M, " << fmt(c.moles.value * 1000, 4) << " mmol)\n";
      }
    } else if (*dilution) {
      std::cout << fmt(dilution_volume(Molar{number1}, Molar{number2}, Liters{number3}).value, 2) << " uL\n";
    } else if (*split) {
      auto s = modifier_stock_split(Microliters{number1}, number2, number3);
      std::cout << "stock " << fmt(s.stock.value, 2) << " uL, neat solvent " << fmt(s.neat_solvent.value, 2) << " uL\n";
    }
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
}
