#include <omp.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "geodist/baseline_vf.hpp"
#include "geodist/checkpoint.hpp"
#include "geodist/errors.hpp"
#include "geodist/io.hpp"
#include "geodist/metrics.hpp"
#include "geodist/random.hpp"
#include "geodist/run_config.hpp"
#include "geodist/sampler.hpp"
#include "geodist/training.hpp"

namespace fs = std::filesystem;
using namespace geodist;

namespace {

struct Common {
  int threads = 0;
  std::optional<std::uint64_t> seed;
};

void apply_threads(const Common& common) {
  if (common.threads > 0) omp_set_num_threads(common.threads);
}

std::string provenance(const std::string& hash) { return std::string(kToolVersion) + " config " + hash; }

void log(const std::string& line) { std::cerr << line << std::endl; }

Mesh normalized_copy(const Mesh& mesh, const NormalizationTransform& transform) {
  Mesh out = mesh;
  out.vertices = transform.to_normalized(PointSet(mesh.vertices));
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

struct TrainArgs {
  fs::path config;
  std::optional<fs::path> mesh;
  std::optional<fs::path> output;
  std::optional<int> epochs;
};

/// Loads the config, applies command-line overrides and validates the result.
RunConfig resolve_config(const TrainArgs& args, const Common& common) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : load_run_config(args.config);
  if (common.seed) {
    cfg.seed = *common.seed;
    cfg.training.seed = *common.seed;
    cfg.baseline.seed = *common.seed;
  }
  if (args.mesh) cfg.mesh.path = *args.mesh;
  if (args.output) cfg.output_dir = *args.output;
  if (args.epochs) {
    cfg.training.epochs = *args.epochs;
    cfg.baseline.epochs = *args.epochs;
  }
  if (cfg.mesh.path.empty()) throw ConfigError("no mesh given (mesh.path or --mesh)");
  cfg.validate();
  return cfg;
}

NormalizedMesh load_normalized(const RunConfig& cfg) {
  LoadedMesh loaded = load_mesh(cfg.mesh.path);
  if (loaded.dropped_faces > 0) log("dropped " + std::to_string(loaded.dropped_faces) + " degenerate faces");
  return normalize_mesh(loaded.mesh, cfg.mesh.normalize_samples, stream_seed(cfg.seed, 0x6e6f726dULL));
}

int cmd_train(const TrainArgs& args, const Common& common) {
  apply_threads(common);
  const RunConfig cfg = resolve_config(args, common);
  const std::string hash = config_hash(cfg);
  const NormalizedMesh nm = load_normalized(cfg);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(cfg));
  write_json(dir / "normalization.json",
             {{"tool", kToolVersion}, {"config_hash", hash}, {"transform", to_json(nm.transform)}});

  auto save = [&](const DenoiserModel& model, const fs::path& path, int epoch) {
    nlohmann::json info = {{"tool", kToolVersion}, {"config_hash", hash}, {"epoch", epoch}};
    save_checkpoint(path, Checkpoint{model, nm.transform, std::move(info)});
  };
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r, const DenoiserModel&) {
    std::ostringstream line;
    line << "epoch " << r.epoch << " loss " << std::setprecision(6) << r.mean_loss;
    if (!std::isnan(r.chamfer)) line << " chamfer " << r.chamfer;
    line << " (" << std::setprecision(3) << r.seconds << " s)";
    log(line.str());
  };
  hooks.on_checkpoint = [&](const DenoiserModel& model, const EpochRecord& r, bool best) {
    save(model, dir / "checkpoint_latest.ckpt", r.epoch);
    if (best) save(model, dir / "checkpoint_best.ckpt", r.epoch);
  };
  const TrainResult result = train(nm.mesh, cfg.denoiser, cfg.training, hooks);
  const int last_epoch = static_cast<int>(result.report.epochs.size()) - 1;
  save(result.model, dir / "checkpoint_latest.ckpt", last_epoch);
  write_report_csv(dir / "train_report.csv", result.report, {provenance(hash)});
  log("wrote " + (dir / "checkpoint_latest.ckpt").string() + " (" + std::to_string(result.model.param_count()) +
      " parameters)");
  return 0;
}

int cmd_vf_train(const TrainArgs& args, const Common& common) {
  apply_threads(common);
  const RunConfig cfg = resolve_config(args, common);
  const std::string hash = config_hash(cfg);
  const NormalizedMesh nm = load_normalized(cfg);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(cfg));
  write_json(dir / "normalization.json",
             {{"tool", kToolVersion}, {"config_hash", hash}, {"transform", to_json(nm.transform)}});
  const VfTrainResult result = train_vf(nm.mesh, cfg.baseline, [](int epoch, double loss) {
    log("epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
  });
  nlohmann::json info = {{"tool", kToolVersion}, {"config_hash", hash}, {"epoch", cfg.baseline.epochs - 1}};
  save_checkpoint(dir / "vf_checkpoint.ckpt", Checkpoint{result.model, nm.transform, std::move(info)});
  std::ofstream out(dir / "vf_loss.csv");
  if (!out) throw IoError("cannot write '" + (dir / "vf_loss.csv").string() + "'");
  out << "# " << provenance(hash) << "\nepoch,loss\n" << std::setprecision(10);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) out << e << ',' << result.epoch_loss[e] << '\n';
  log("wrote " + (dir / "vf_checkpoint.ckpt").string() + " (" + std::to_string(result.model.param_count()) +
      " parameters)");
  return 0;
}

std::string checkpoint_hash(const Checkpoint& ckpt) {
  return ckpt.info.contains("config_hash") && ckpt.info["config_hash"].is_string()
             ? ckpt.info["config_hash"].get<std::string>()
             : std::string("unknown");
}

struct SampleArgs {
  fs::path checkpoint;
  long n = 100000;
  int steps = 64;
  std::string solver = "heun";
  std::string init = "gaussian";
  fs::path out = "samples.ply";
  std::vector<int> record;
  std::optional<fs::path> frames_dir;
  int iterations = 1;
};

int cmd_sample(const SampleArgs& args, const Common& common) {
  apply_threads(common);
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const DenoiserModel& model = ckpt.denoiser();
  const std::uint64_t seed = common.seed.value_or(0);
  const Solver solver = parse_solver(args.solver);
  const InitKind init = parse_init(args.init);
  for (int r : args.record)
    if (r < 0 || r > args.steps) throw ConfigError("--record index " + std::to_string(r) + " outside [0, steps]");
  const std::string hash = json_hash({{"checkpoint", checkpoint_hash(ckpt)},
                                      {"n", args.n},
                                      {"steps", args.steps},
                                      {"solver", args.solver},
                                      {"init", args.init},
                                      {"seed", seed},
                                      {"record", args.record}});
  const std::vector<std::string> comments = {provenance(hash)};

  IntegratorOptions options{.solver = solver, .record = args.record};
  const SampleResult result = sample_forward(model_denoiser(model), args.n, model.config().d_in,
                                             NoiseSchedule::karras(args.steps), init, seed, options);
  write_points(args.out, ckpt.transform.from_normalized(result.points), comments);
  if (!args.record.empty()) {
    const fs::path dir = args.frames_dir.value_or(args.out.parent_path() / (args.out.stem().string() + "_frames"));
    fs::create_directories(dir);
    for (const auto& snap : result.trajectory.snapshots) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%03d.ply", snap.index);
      write_ply(dir / name, ckpt.transform.from_normalized(snap.points), comments);
    }
  }
  log("wrote " + std::to_string(args.n) + " points to " + args.out.string());
  return 0;
}

int cmd_vf_sample(const SampleArgs& args, const Common& common) {
  apply_threads(common);
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const std::uint64_t seed = common.seed.value_or(0);
  const std::string hash = json_hash({{"checkpoint", checkpoint_hash(ckpt)},
                                      {"n", args.n},
                                      {"iterations", args.iterations},
                                      {"seed", seed}});
  const PointSet points = sample_vf(ckpt.vector_field(), args.n, seed, args.iterations);
  write_points(args.out, ckpt.transform.from_normalized(points), {provenance(hash)});
  log("wrote " + std::to_string(args.n) + " points to " + args.out.string());
  return 0;
}

struct InvertArgs {
  fs::path checkpoint;
  fs::path points;
  int steps = 64;
  fs::path out = "noise.ply";
  std::optional<fs::path> correspondence;
};

int cmd_invert(const InvertArgs& args, const Common& common) {
  apply_threads(common);
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const DenoiserModel& model = ckpt.denoiser();
  PointSet input = read_points(args.points);
  if (input.cols() != model.config().d_in) {
    if (model.config().d_in == 3 && input.cols() == 6) {
      input = PointSet(input.leftCols(3));
    } else {
      throw ShapeError("input points have " + std::to_string(input.cols()) + " columns, model expects " +
                       std::to_string(model.config().d_in));
    }
  }
  const std::string hash =
      json_hash({{"checkpoint", checkpoint_hash(ckpt)}, {"points", args.points.string()}, {"steps", args.steps}});
  const std::vector<std::string> comments = {provenance(hash)};
  const PointSet normalized = ckpt.transform.to_normalized(input);
  const SampleResult result =
      sample_inverse(model_denoiser(model), normalized, NoiseSchedule::karras(args.steps).for_inversion());
  write_ply(args.out, result.points, comments);

  const fs::path csv_path =
      args.correspondence.value_or(args.out.parent_path() / (args.out.stem().string() + "_correspondence.csv"));
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write '" + csv_path.string() + "'");
  csv << "# " << comments.front() << "\nindex,x,y,z,noise_x,noise_y,noise_z\n" << std::setprecision(9);
  for (Eigen::Index i = 0; i < input.rows(); ++i) {
    csv << i;
    for (int k = 0; k < 3; ++k) csv << ',' << input(i, k);
    for (int k = 0; k < 3; ++k) csv << ',' << result.points(i, k);
    csv << '\n';
  }
  if (!csv) throw IoError("failed writing '" + csv_path.string() + "'");
  log("inverted " + std::to_string(input.rows()) + " points to " + args.out.string());
  return 0;
}

struct RoundtripArgs {
  fs::path checkpoint;
  std::optional<fs::path> points;
  std::optional<fs::path> mesh;
  long n = 10000;
  std::vector<int> steps = {4, 8, 16, 64};
  fs::path out = "roundtrip.csv";
};

int cmd_roundtrip(const RoundtripArgs& args, const Common& common) {
  apply_threads(common);
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const DenoiserModel& model = ckpt.denoiser();
  const std::uint64_t seed = common.seed.value_or(0);
  PointSet points;
  if (args.points) {
    points = ckpt.transform.to_normalized(read_points(*args.points)).leftCols(model.config().d_in);
  } else if (args.mesh) {
    const Mesh mesh = normalized_copy(load_mesh(*args.mesh).mesh, ckpt.transform);
    points = sample_surface(mesh, args.n, seed, model.config().d_in == 6);
  } else {
    throw ConfigError("roundtrip needs --points or --mesh");
  }
  const std::string hash = json_hash({{"checkpoint", checkpoint_hash(ckpt)}, {"n", points.rows()},
                                      {"steps", args.steps}, {"seed", seed}});
  std::ofstream out(args.out);
  if (!out) throw IoError("cannot write '" + args.out.string() + "'");
  out << "# " << provenance(hash) << "\n# squared error in normalized units\nsteps,mse\n" << std::setprecision(10);
  for (int steps : args.steps) {
    const double mse = roundtrip_mse(model_denoiser(model), points, NoiseSchedule::karras(steps));
    out << steps << ',' << mse << '\n';
    log("steps " + std::to_string(steps) + " round-trip mse " + std::to_string(mse));
  }
  return 0;
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path mesh;
  long n = 100000;
  int steps = 32;
  std::string solver = "heun";
  std::string init = "gaussian";
  std::uint64_t reference_seed = 1;
  fs::path out = "metrics.csv";
  std::optional<fs::path> errors;
};

int cmd_eval(const EvalArgs& args, const Common& common) {
  apply_threads(common);
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const Mesh mesh = normalized_copy(load_mesh(args.mesh).mesh, ckpt.transform);
  const std::uint64_t seed = common.seed.value_or(0);
  PointGenerator generator;
  double params = 0.0;
  if (ckpt.is_denoiser()) {
    generator = denoiser_generator(ckpt.denoiser(), NoiseSchedule::karras(args.steps), parse_solver(args.solver),
                                   parse_init(args.init));
    params = static_cast<double>(ckpt.denoiser().param_count());
  } else {
    const VectorFieldModel& vf = ckpt.vector_field();
    generator = [&vf](long n, std::uint64_t s) { return sample_vf(vf, n, s); };
    params = static_cast<double>(vf.param_count());
  }
  const EvalReport report = eval_model(generator, mesh, args.n, seed, args.reference_seed);
  const std::string hash = json_hash({{"checkpoint", checkpoint_hash(ckpt)},
                                      {"mesh", args.mesh.string()},
                                      {"n", args.n},
                                      {"steps", args.steps},
                                      {"solver", args.solver},
                                      {"init", args.init},
                                      {"seed", seed},
                                      {"reference_seed", args.reference_seed}});
  const std::vector<std::string> comments = {provenance(hash), "distances in normalized units"};
  write_eval_csv(args.out, report,
                 {{"param_count", params},
                  {"compression_1e6", compression_ratio(params, 1e6)},
                  {"compression_1e9", compression_ratio(params, 1e9)}},
                 comments);
  const fs::path errors_path = args.errors.value_or(args.out.parent_path() / (args.out.stem().string() + "_errors.ply"));
  write_ply(errors_path, ckpt.transform.from_normalized(report.generated), comments, {{"error", report.errors}});
  std::cout << std::setprecision(6) << "chamfer " << report.chamfer.total() << " params " << params << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometry distributions: train a surface denoiser, sample, invert and evaluate"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--threads", common.threads, "Worker threads (1 = deterministic reference mode)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", common.seed, "Seed for every random draw");
  };

  TrainArgs train_args;
  auto add_train = [&](CLI::App* sub) {
    sub->add_option("config", train_args.config, "JSON run config");
    sub->add_option("--mesh", train_args.mesh, "OBJ mesh (overrides mesh.path)");
    sub->add_option("--output", train_args.output, "Output directory (overrides output_dir)");
    sub->add_option("--epochs", train_args.epochs, "Epoch count override")->check(CLI::NonNegativeNumber);
    add_common(sub);
  };
  auto* train_cmd = app.add_subcommand("train", "Train a denoiser on a mesh");
  add_train(train_cmd);
  auto* vf_train_cmd = app.add_subcommand("vf-train", "Train the vector-field baseline on a mesh");
  add_train(vf_train_cmd);

  SampleArgs sample_args;
  auto* sample_cmd = app.add_subcommand("sample", "Generate surface points from a checkpoint");
  sample_cmd->add_option("checkpoint", sample_args.checkpoint)->required();
  sample_cmd->add_option("-n,--n", sample_args.n, "Point count")->check(CLI::NonNegativeNumber);
  sample_cmd->add_option("--steps", sample_args.steps, "Schedule steps")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--solver", sample_args.solver)->check(CLI::IsMember({"euler", "heun"}));
  sample_cmd->add_option("--init", sample_args.init)->check(CLI::IsMember({"gaussian", "uniform"}));
  sample_cmd->add_option("-o,--out", sample_args.out, "Output .ply or .xyz");
  sample_cmd->add_option("--record", sample_args.record, "Schedule indices to save as frames")->delimiter(',');
  sample_cmd->add_option("--frames-dir", sample_args.frames_dir);
  add_common(sample_cmd);

  auto* vf_sample_cmd = app.add_subcommand("vf-sample", "Generate points with the vector-field baseline");
  vf_sample_cmd->add_option("checkpoint", sample_args.checkpoint)->required();
  vf_sample_cmd->add_option("-n,--n", sample_args.n, "Point count")->check(CLI::NonNegativeNumber);
  vf_sample_cmd->add_option("--iterations", sample_args.iterations, "Field applications")
      ->check(CLI::PositiveNumber);
  vf_sample_cmd->add_option("-o,--out", sample_args.out, "Output .ply or .xyz");
  add_common(vf_sample_cmd);

  InvertArgs invert_args;
  auto* invert_cmd = app.add_subcommand("invert", "Map surface points back to noise");
  invert_cmd->add_option("checkpoint", invert_args.checkpoint)->required();
  invert_cmd->add_option("points", invert_args.points)->required();
  invert_cmd->add_option("--steps", invert_args.steps)->check(CLI::PositiveNumber);
  invert_cmd->add_option("-o,--out", invert_args.out, "Noise .ply");
  invert_cmd->add_option("--correspondence", invert_args.correspondence, "Per-point CSV");
  add_common(invert_cmd);

  RoundtripArgs rt_args;
  auto* rt_cmd = app.add_subcommand("roundtrip", "Inversion then forward sampling error per step count");
  rt_cmd->add_option("checkpoint", rt_args.checkpoint)->required();
  rt_cmd->add_option("--points", rt_args.points);
  rt_cmd->add_option("--mesh", rt_args.mesh, "Sample the points from this mesh instead");
  rt_cmd->add_option("-n,--n", rt_args.n)->check(CLI::PositiveNumber);
  rt_cmd->add_option("--steps", rt_args.steps)->delimiter(',')->check(CLI::PositiveNumber);
  rt_cmd->add_option("-o,--out", rt_args.out);
  add_common(rt_cmd);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Chamfer, surface error and compression of a checkpoint");
  eval_cmd->add_option("checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("mesh", eval_args.mesh)->required();
  eval_cmd->add_option("-n,--n", eval_args.n)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--steps", eval_args.steps)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--solver", eval_args.solver)->check(CLI::IsMember({"euler", "heun"}));
  eval_cmd->add_option("--init", eval_args.init)->check(CLI::IsMember({"gaussian", "uniform"}));
  eval_cmd->add_option("--reference-seed", eval_args.reference_seed);
  eval_cmd->add_option("-o,--out", eval_args.out, "Metrics CSV");
  eval_cmd->add_option("--errors", eval_args.errors, "Per-point error PLY");
  add_common(eval_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, common);
    if (*vf_train_cmd) return cmd_vf_train(train_args, common);
    if (*sample_cmd) return cmd_sample(sample_args, common);
    if (*vf_sample_cmd) return cmd_vf_sample(sample_args, common);
    if (*invert_cmd) return cmd_invert(invert_args, common);
    if (*rt_cmd) return cmd_roundtrip(rt_args, common);
    if (*eval_cmd) return cmd_eval(eval_args, common);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
