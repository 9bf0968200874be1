// s3m: train probes, build embedding stores, run the analogy evaluations and
// collect figure data.
//
// Exit codes: 0 success, 1 hard failure, 2 configuration or validation error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "s3m/error.hpp"
#include "s3m/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> layer;
  std::optional<std::string> space;
  std::optional<int> jobs;
  std::optional<std::string> out;
};

s3m::PipelineConfig load_config(const GlobalFlags& g) {
  s3m::PipelineConfig cfg;
  if (!g.config.empty()) {
    cfg = s3m::PipelineConfig::read(g.config);
  } else {
    cfg.base_dir = std::filesystem::current_path();
  }
  s3m::ConfigOverrides o;
  o.seed = g.seed;
  o.layer = g.layer;
  o.space = g.space;
  o.jobs = g.jobs;
  if (g.out) o.out = std::filesystem::absolute(*g.out);
  s3m::apply_overrides(cfg, o);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word-probe training and vector-analogy evaluation over speech model activations", "s3m"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--seed", g.seed, "Root seed");
  app.add_option("--layer", g.layer, "Layer to train and analyse")->check(CLI::NonNegativeNumber);
  app.add_option("--space", g.space, "raw, probe or both")->check(CLI::IsMember({"raw", "probe", "both"}));
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");

  auto* train = app.add_subcommand("train", "Train one probe per configured layer");
  auto* embed = app.add_subcommand("embed", "Pool token embeddings into stores");
  auto* evaluate = app.add_subcommand("evaluate", "Run the enabled evaluations");
  auto* report = app.add_subcommand("report", "Collect figure-data CSVs from the results");
  auto* validate = app.add_subcommand("validate-stimuli", "Check the stimulus materials");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    const auto cfg = load_config(g);
    if (train->parsed()) {
      s3m::cmd_train(cfg, std::cout);
    } else if (embed->parsed()) {
      s3m::cmd_embed(cfg, std::cout);
    } else if (evaluate->parsed()) {
      const auto status = s3m::cmd_evaluate(cfg, std::cout);
      if (!status.ok()) {
        std::cerr << "s3m: " << status.failures.size() << " evaluation step(s) failed\n";
        return kFailure;
      }
    } else if (report->parsed()) {
      s3m::cmd_report(cfg, std::cout);
    } else if (validate->parsed()) {
      const auto problems = s3m::validate_stimuli(cfg, std::cout);
      if (!problems.empty()) {
        std::cerr << "s3m: " << problems.size() << " stimulus problem(s)\n";
        return kConfigError;
      }
    }
  } catch (const s3m::ConfigError& e) {
    std::cerr << "s3m: configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "s3m: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
