#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "dot/experiments.hpp"
#include "dot/tcspc.hpp"

namespace dot {

/// Thrown for malformed configs; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

nlohmann::json default_config();

/// Rejects unknown keys and type mismatches anywhere in the tree, then
/// returns the default config overlaid with the user's values.
nlohmann::json merge_config(const nlohmann::json& user);

struct RunConfig {
  std::string command;  // mesh | forward | recon | sweep | tcspc
  nlohmann::json tree = default_config();
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out_dir = "out";

  MeshSpec mesh_spec() const;
  MeshSpec data_mesh_spec() const;
  PhantomSpec phantom_spec() const;
  OptodeLayout layout(double radius) const;
  TimeGrid time_grid() const;
  ForwardOptions forward_options() const;
  Mode forward_mode() const;
  ReconSettings recon_settings() const;
  Calibration calibration() const;
  DiscernSettings discern_settings() const;
  SweepSpec sweep_spec() const;
  LaserModel laser_model() const;
  DetectorModel detector_model() const;
  AcquireOptions acquire_options() const;
};

}  // namespace dot
