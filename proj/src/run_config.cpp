#include "geodist/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <type_traits>
#include <vector>

#include "geodist/errors.hpp"

namespace geodist {

Solver parse_solver(const std::string& name) {
  if (name == "euler") return Solver::euler;
  if (name == "heun") return Solver::heun;
  throw ConfigError("unknown solver '" + name + "' (expected euler or heun)");
}

InitKind parse_init(const std::string& name) {
  if (name == "gaussian") return InitKind::gaussian;
  if (name == "uniform") return InitKind::uniform;
  throw ConfigError("unknown init '" + name + "' (expected gaussian or uniform)");
}

std::string to_string(Solver solver) { return solver == Solver::euler ? "euler" : "heun"; }
std::string to_string(InitKind init) { return init == InitKind::gaussian ? "gaussian" : "uniform"; }

namespace {

/// Reads typed fields out of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    const nlohmann::json& v = j_.at(key);
    if (!matches<T>(v)) throw ConfigError("'" + path(key) + "' has the wrong type");
    try {
      out = v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("'" + path(key) + "' is out of range");
    }
  }

  const nlohmann::json* child(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!known_.count(key)) throw ConfigError("unknown key '" + path(key) + "'");
  }

 private:
  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  // No silent conversions: 3.5 is not an int, true is not a number, -1 is not a seed.
  template <typename T>
  static bool matches(const nlohmann::json& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      return v.is_string();
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      if (!v.is_array()) return false;
      for (const auto& e : v)
        if (!matches<int>(e)) return false;
      return true;
    } else if constexpr (std::is_floating_point_v<T>) {
      return v.is_number();
    } else if constexpr (std::is_unsigned_v<T>) {
      return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    } else {
      return v.is_number_integer() && v.get<std::int64_t>() >= std::numeric_limits<T>::min() &&
             v.get<std::int64_t>() <= std::numeric_limits<T>::max();
    }
  }

  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> known_;
};

}  // namespace

void RunConfig::validate() const {
  if (mesh.normalize_samples < 1000) throw ConfigError("mesh.normalize_samples must be >= 1000");
  denoiser.validate();
  training.validate();
  if (sampler.n_points < 0) throw ConfigError("sampler.n_points must be >= 0");
  if (sampler.steps < 1) throw ConfigError("sampler.steps must be >= 1");
  if (!(sampler.sigma_min > 0.0) || !(sampler.sigma_max > sampler.sigma_min))
    throw ConfigError("sampler needs 0 < sigma_min < sigma_max");
  if (!(sampler.rho > 0.0)) throw ConfigError("sampler.rho must be > 0");
  if (eval.n_points < 1) throw ConfigError("eval.n_points must be >= 1");
  if (eval.steps < 1) throw ConfigError("eval.steps must be >= 1");
  baseline.validate();
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  c.training.seed = c.seed;
  c.baseline.seed = c.seed;
  std::string output_dir = c.output_dir.string();
  root.read("output_dir", output_dir);
  c.output_dir = output_dir;

  if (const auto* m = root.child("mesh")) {
    Section s(*m, "mesh");
    std::string path;
    s.read("path", path);
    c.mesh.path = path;
    s.read("normalize_samples", c.mesh.normalize_samples);
    s.finish();
  }
  if (const auto* d = root.child("denoiser")) {
    Section s(*d, "denoiser");
    s.read("channels", c.denoiser.channels);
    s.read("n_blocks", c.denoiser.n_blocks);
    s.read("d_in", c.denoiser.d_in);
    s.read("fourier_bands", c.denoiser.fourier_bands);
    s.read("sigma_data", c.denoiser.sigma_data);
    s.finish();
  }
  if (const auto* t = root.child("training")) {
    Section s(*t, "training");
    auto& tc = c.training;
    s.read("epochs", tc.epochs);
    s.read("iters_per_epoch", tc.iters_per_epoch);
    s.read("batch_size", tc.batch_size);
    s.read("points_per_epoch", tc.points_per_epoch);
    s.read("p_mean", tc.p_mean);
    s.read("p_std", tc.p_std);
    s.read("lr", tc.lr);
    s.read("lr_ref_iters", tc.lr_ref_iters);
    s.read("beta1", tc.beta1);
    s.read("beta2", tc.beta2);
    s.read("adam_eps", tc.adam_eps);
    s.read("seed", tc.seed);
    s.read("checkpoint_every", tc.checkpoint_every);
    s.read("chamfer_every", tc.chamfer_every);
    s.read("chamfer_points", tc.chamfer_points);
    s.read("chamfer_steps", tc.chamfer_steps);
    s.finish();
  }
  if (const auto* p = root.child("sampler")) {
    Section s(*p, "sampler");
    s.read("n_points", c.sampler.n_points);
    s.read("steps", c.sampler.steps);
    std::string solver = to_string(c.sampler.solver);
    std::string init = to_string(c.sampler.init);
    s.read("solver", solver);
    s.read("init", init);
    c.sampler.solver = parse_solver(solver);
    c.sampler.init = parse_init(init);
    s.read("sigma_min", c.sampler.sigma_min);
    s.read("sigma_max", c.sampler.sigma_max);
    s.read("rho", c.sampler.rho);
    s.finish();
  }
  if (const auto* e = root.child("eval")) {
    Section s(*e, "eval");
    s.read("n_points", c.eval.n_points);
    s.read("steps", c.eval.steps);
    s.read("reference_seed", c.eval.reference_seed);
    s.finish();
  }
  if (const auto* b = root.child("baseline")) {
    Section s(*b, "baseline");
    s.read("hidden", c.baseline.hidden);
    s.read("epochs", c.baseline.epochs);
    s.read("iters_per_epoch", c.baseline.iters_per_epoch);
    s.read("batch_size", c.baseline.batch_size);
    s.read("lr", c.baseline.lr);
    s.read("seed", c.baseline.seed);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

nlohmann::json to_json(const RunConfig& c) {
  const auto& tc = c.training;
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"mesh", {{"path", c.mesh.path.string()}, {"normalize_samples", c.mesh.normalize_samples}}},
      {"denoiser",
       {{"channels", c.denoiser.channels},
        {"n_blocks", c.denoiser.n_blocks},
        {"d_in", c.denoiser.d_in},
        {"fourier_bands", c.denoiser.fourier_bands},
        {"sigma_data", c.denoiser.sigma_data}}},
      {"training",
       {{"epochs", tc.epochs},
        {"iters_per_epoch", tc.iters_per_epoch},
        {"batch_size", tc.batch_size},
        {"points_per_epoch", tc.points_per_epoch},
        {"p_mean", tc.p_mean},
        {"p_std", tc.p_std},
        {"lr", tc.lr},
        {"lr_ref_iters", tc.lr_ref_iters},
        {"beta1", tc.beta1},
        {"beta2", tc.beta2},
        {"adam_eps", tc.adam_eps},
        {"seed", tc.seed},
        {"checkpoint_every", tc.checkpoint_every},
        {"chamfer_every", tc.chamfer_every},
        {"chamfer_points", tc.chamfer_points},
        {"chamfer_steps", tc.chamfer_steps}}},
      {"sampler",
       {{"n_points", c.sampler.n_points},
        {"steps", c.sampler.steps},
        {"solver", to_string(c.sampler.solver)},
        {"init", to_string(c.sampler.init)},
        {"sigma_min", c.sampler.sigma_min},
        {"sigma_max", c.sampler.sigma_max},
        {"rho", c.sampler.rho}}},
      {"eval", {{"n_points", c.eval.n_points}, {"steps", c.eval.steps}, {"reference_seed", c.eval.reference_seed}}},
      {"baseline",
       {{"hidden", c.baseline.hidden},
        {"epochs", c.baseline.epochs},
        {"iters_per_epoch", c.baseline.iters_per_epoch},
        {"batch_size", c.baseline.batch_size},
        {"lr", c.baseline.lr},
        {"seed", c.baseline.seed}}},
  };
}

std::string config_hash(const RunConfig& config) {
  nlohmann::json j = to_json(config);
  j.erase("output_dir");
  return json_hash(j);
}

std::string json_hash(const nlohmann::json& j) {
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace geodist
