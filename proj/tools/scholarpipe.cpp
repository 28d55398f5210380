// scholarpipe: command-line front end for the pipeline stages.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scholarpipe/pipeline.hpp"

namespace sp = scholarpipe;
namespace pl = scholarpipe::pipeline;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> stages;
  std::optional<std::string> strategy;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool mock = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_stage) {
  cmd->add_option("--config", f.config, "pipeline configuration file")->required();
  if (with_stage) cmd->add_option("--stage", f.stages, "restrict to these stages (repeatable)");
  cmd->add_option("--strategy", f.strategy, "prompting strategy: baseline, fixed or random");
  cmd->add_option("--seed", f.seed, "seed for all randomness");
  cmd->add_option("--workers", f.workers, "worker count");
  cmd->add_flag("--mock-backend", f.mock, "use the deterministic mock backend");
}

pl::PipelineConfig load_config(const CommonFlags& f) {
  auto cfg = pl::PipelineConfig::load(f.config);
  if (f.strategy) {
    try {
      cfg.strategy = sp::semclass::parse_strategy(*f.strategy);
    } catch (const sp::Error&) {
      throw sp::Error(sp::Errc::Config, "unknown strategy '" + *f.strategy + "'");
    }
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  if (f.mock) cfg.mock_backend = true;
  cfg.validate();
  return cfg;
}

int run_stages(const CommonFlags& f, std::vector<pl::Stage> stages) {
  auto cfg = load_config(f);
  if (!f.stages.empty()) {
    stages.clear();
    for (const auto& s : f.stages) stages.push_back(pl::parse_stage(s));
  }
  pl::Pipeline p(cfg, &std::cerr);
  return p.run(stages).exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scholarpipe: corpus ingestion, AI-method classification and indicator pipeline"};
  app.require_subcommand(1);

  struct Cmd {
    const char* name;
    const char* help;
    std::optional<pl::Stage> stage;
  };
  const Cmd cmds[] = {{"ingest", "decode, filter and normalize the corpus", pl::Stage::Ingest},
                      {"match", "dictionary matching over abstracts", pl::Stage::Match},
                      {"classify", "two-stage method classification", pl::Stage::Classify},
                      {"extract-sections", "locate methods sections in full texts", pl::Stage::ExtractSections},
                      {"indicators", "yearly series and group indicators", pl::Stage::Indicators},
                      {"fit", "quasi-Poisson models and adjusted predictions", pl::Stage::Fit},
                      {"geo", "country aggregates", pl::Stage::Geo},
                      {"report", "combined run report", pl::Stage::Report},
                      {"validate", "sample plan, or agreement against coder labels", std::nullopt},
                      {"run-all", "every stage in dependency order", std::nullopt}};

  std::vector<CommonFlags> flags(std::size(cmds));
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(cmds); ++i) {
    auto* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    add_common(sub, flags[i], std::string_view(cmds[i].name) == "run-all");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : pl::kExitConfig;
  }

  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      const std::string_view name = cmds[i].name;
      if (cmds[i].stage) return run_stages(flags[i], {*cmds[i].stage});
      if (name == "run-all")
        return run_stages(flags[i], std::vector<pl::Stage>(std::begin(pl::kAllStages), std::end(pl::kAllStages)));
      if (name == "validate") {
        auto cfg = load_config(flags[i]);
        std::cout << pl::run_validate(cfg).dump(2) << "\n";
        return pl::kExitOk;
      }
    }
  } catch (const sp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == sp::Errc::Config ? pl::kExitConfig : pl::kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pl::kExitStage;
  }
  return pl::kExitOk;
}
