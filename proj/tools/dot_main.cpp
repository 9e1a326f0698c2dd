#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "dot/io.hpp"
#include "dot/run.hpp"
#include "dot/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"2D diffuse optical tomography simulator and TCSPC acquisition model"};
  app.set_version_flag("--version", std::string(dot::kVersion) + " (" +
                                        dot::kGitRevision + ")");

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int jobs = 1;
  int figure = 0;
  bool print_default = false;
  bool dump_jacobian = false;

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "RNG seed (64-bit)");
  app.add_option("--jobs", jobs, "internal parallelism")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--print-default-config", print_default,
               "dump the default config as JSON and exit");

  auto* mesh = app.add_subcommand("mesh", "generate and save the disk mesh");
  auto* forward = app.add_subcommand("forward", "simulate measurements");
  auto* recon = app.add_subcommand("recon", "reconstruct from simulated data");
  auto* sweep = app.add_subcommand("sweep", "resolution or depth sweep");
  auto* tcspc = app.add_subcommand("tcspc", "photon-counting acquisition");
  sweep->add_option("--figure", figure, "sweep family: 3 (resolution) or 4 (depth)");
  recon->add_flag("--dump-jacobian", dump_jacobian,
                  "write the final-iterate Jacobian as CSV");
  for (auto* sub : {mesh, forward, recon, sweep, tcspc}) sub->fallthrough();
  app.require_subcommand(0, 1);

  CLI11_PARSE(app, argc, argv);

  if (print_default) {
    std::printf("%s\n", dot::default_config().dump(2).c_str());
    return 0;
  }

  dot::RunConfig cfg;
  if (mesh->parsed()) cfg.command = "mesh";
  else if (forward->parsed()) cfg.command = "forward";
  else if (recon->parsed()) cfg.command = "recon";
  else if (sweep->parsed()) cfg.command = "sweep";
  else if (tcspc->parsed()) cfg.command = "tcspc";
  else {
    std::fprintf(stderr, "%s\n", app.help().c_str());
    return 2;
  }

  cfg.seed = seed;
  cfg.jobs = jobs;
  cfg.out_dir = out_dir;
  try {
    if (!config_path.empty()) {
      const auto user = nlohmann::json::parse(dot::read_text_file(config_path));
      cfg.tree = dot::merge_config(user);
    }
    if (figure != 0) cfg.tree["sweep"]["figure"] = figure;
    if (dump_jacobian) cfg.tree["recon"]["dump_jacobian"] = true;
  } catch (const dot::ConfigError& ex) {
    std::printf("%s\n", nlohmann::json{{"error", {{"type", "config"},
                                                  {"message", ex.what()}}}}
                            .dump()
                            .c_str());
    return 2;
  } catch (const std::exception& ex) {
    std::printf("%s\n", nlohmann::json{{"error", {{"type", "config"},
                                                  {"message", ex.what()}}}}
                            .dump()
                            .c_str());
    return 2;
  }

  return dot::run(cfg);
}
