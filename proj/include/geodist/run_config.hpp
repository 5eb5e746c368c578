#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "geodist/baseline_vf.hpp"
#include "geodist/denoiser.hpp"
#include "geodist/sampler.hpp"
#include "geodist/training.hpp"

namespace geodist {

inline constexpr const char* kToolVersion = "geodist 1.0.0";

struct MeshSection {
  std::filesystem::path path;
  long normalize_samples = 1000000;
};

struct SamplerSection {
  long n_points = 100000;
  int steps = 64;
  Solver solver = Solver::heun;
  InitKind init = InitKind::gaussian;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;

  NoiseSchedule schedule() const { return NoiseSchedule::karras(steps, sigma_min, sigma_max, rho); }
};

struct EvalSection {
  long n_points = 100000;
  int steps = 32;
  std::uint64_t reference_seed = 1;
};

/// Every field is optional; missing ones keep these defaults. The top-level
/// seed feeds every stage unless a section overrides it.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  MeshSection mesh;
  DenoiserConfig denoiser;
  TrainConfig training;
  SamplerSection sampler;
  EvalSection eval;
  VectorFieldConfig baseline;

  void validate() const;
};

/// Throws ConfigError on unknown keys, wrong types or out-of-range values.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

/// FNV-1a of the canonical JSON of the fully resolved config, as 16 hex digits.
/// The output directory is left out so that relocated runs share a hash.
std::string config_hash(const RunConfig& config);
std::string json_hash(const nlohmann::json& j);

Solver parse_solver(const std::string& name);
InitKind parse_init(const std::string& name);
std::string to_string(Solver solver);
std::string to_string(InitKind init);

}  // namespace geodist
