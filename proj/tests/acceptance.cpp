// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "geodist/baseline_vf.hpp"
#include "geodist/checkpoint.hpp"
#include "geodist/io.hpp"
#include "geodist/metrics.hpp"
#include "geodist/sampler.hpp"
#include "geodist/training.hpp"

using namespace geodist;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Context {
  fs::path cli;
  fs::path work;
};

// ---- shared fixtures -------------------------------------------------------

constexpr long kEvalPoints = 100000;

DenoiserConfig desk_denoiser() {
  DenoiserConfig cfg;
  cfg.channels = 64;
  cfg.n_blocks = 4;
  return cfg;
}

TrainConfig desk_training(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.iters_per_epoch = 64;
  cfg.batch_size = 4096;
  cfg.points_per_epoch = 1L << 18;
  cfg.lr = 1e-3;
  cfg.seed = seed;
  return cfg;
}

struct Trained {
  Mesh mesh;
  NormalizedMesh normalized;
  DenoiserModel model;
  bool reused = false;
  double seconds = 0.0;
};

// Trains the desk model on `mesh`, reusing a checkpoint in the work directory
// when it was produced by the same setup.
Trained train_desk(const Context& ctx, const std::string& name, const Mesh& mesh, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  NormalizedMesh normalized = normalize_mesh(mesh, 1000000, seed);
  const TrainConfig tc = desk_training(seed);
  const nlohmann::json setup = {{"mesh", name},
                                {"faces", mesh.face_count()},
                                {"channels", desk_denoiser().channels},
                                {"blocks", desk_denoiser().n_blocks},
                                {"epochs", tc.epochs},
                                {"iters", tc.iters_per_epoch},
                                {"batch", tc.batch_size},
                                {"points", tc.points_per_epoch},
                                {"lr", tc.lr},
                                {"seed", seed}};
  const fs::path cache = ctx.work / (name + "_desk.ckpt");
  if (fs::exists(cache)) {
    try {
      Checkpoint ckpt = load_checkpoint(cache);
      if (ckpt.is_denoiser() && ckpt.info.value("setup", nlohmann::json()) == setup)
        return {mesh, std::move(normalized), ckpt.denoiser(), true, 0.0};
    } catch (const std::exception&) {
    }
  }
  std::cerr << "training desk model on " << name << "\n";
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r, const DenoiserModel&) {
    if (r.epoch % 20 == 0) std::cerr << "  epoch " << r.epoch << " loss " << r.mean_loss << "\n";
  };
  TrainResult r = train(normalized.mesh, desk_denoiser(), tc, hooks);
  save_checkpoint(cache, Checkpoint{r.model, normalized.transform, {{"setup", setup}}});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {mesh, std::move(normalized), std::move(r.model), false, seconds};
}

// Chamfer in mesh units between n generated points and n fresh surface samples.
double desk_chamfer(const Trained& t, int steps, Solver solver, InitKind init, std::uint64_t seed) {
  IntegratorOptions opt;
  opt.solver = solver;
  const PointSet gen = sample_forward(model_denoiser(t.model), kEvalPoints, 3, NoiseSchedule::karras(steps), init,
                                      seed, opt)
                           .points;
  return chamfer(sample_surface(t.mesh, kEvalPoints, seed + 1000), t.normalized.transform.from_normalized(gen));
}

Trained& sphere(const Context& ctx) {
  static Trained t = train_desk(ctx, "sphere", make_icosphere(5), 1);
  return t;
}

// ---- criteria --------------------------------------------------------------

Outcome oracle_ode(const Context&) {
  const DenoiseFn zero = [](const PointSet& x, double) { return PointSet::Zero(x.rows(), x.cols()); };
  double worst_final = 0.0, worst_path = 0.0;
  for (int n : {1, 2, 3, 8, 32, 64, 256}) {
    const NoiseSchedule s = NoiseSchedule::karras(n);
    std::vector<int> record;
    for (int i = 0; i <= n; ++i) record.push_back(i);
    const SampleResult r = sample_forward_euler(zero, 1000, 3, s, InitKind::gaussian, 40 + n, record);
    const PointSet& x0 = r.trajectory.snapshots.front().points;
    worst_final = std::max(worst_final, r.points.rowwise().norm().maxCoeff());
    for (const Snapshot& snap : r.trajectory.snapshots) {
      const PointSet expected = x0 * (s.t[static_cast<std::size_t>(snap.index)] / s.t.front());
      worst_path = std::max(worst_path, (snap.points - expected).cwiseAbs().maxCoeff());
    }
  }
  return {worst_final < 1e-6 && worst_path < 1e-6,
          fmt("max |x_N| %.3g, max path error %.3g (tol 1e-6)", worst_final, worst_path)};
}

Outcome gradient_check(const Context&) {
  DenoiserConfig cfg;
  cfg.channels = 16;
  cfg.n_blocks = 2;
  std::mt19937_64 gen(17);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<float> gain(0.5f, 1.5f);
  double worst = 0.0;
  std::string worst_name;
  for (int batch = 0; batch < 3; ++batch) {
    DenoiserModel model = DenoiserModel::initialize(cfg, 100 + static_cast<std::uint64_t>(batch));
    // Zero-initialized gains would hide most of the network from the loss.
    for (const auto& seg : model.segments())
      if (seg.size() == 1) model.view(seg.name)(0, 0) = gain(gen);
    const long b = 16;
    ad::Matrix<double> x(b, 3), noise(b, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x.data()[i] = n01(gen);
      noise.data()[i] = n01(gen);
    }
    Eigen::VectorXd sigma(b);
    for (long i = 0; i < b; ++i) sigma(i) = std::exp(-1.2 + 1.2 * n01(gen));
    const ad::Vector<double> params = model.params().cast<double>();
    ad::Vector<double> grads;
    denoising_loss<double>(model, params, x, sigma, noise, &grads);
    const double h = 1e-6;
    for (const auto& seg : model.segments()) {
      ad::Vector<double> fd(seg.size());
      for (Eigen::Index i = 0; i < seg.size(); ++i) {
        ad::Vector<double> plus = params, minus = params;
        plus(seg.offset + i) += h;
        minus(seg.offset + i) -= h;
        fd(i) = (denoising_loss<double>(model, plus, x, sigma, noise, nullptr) -
                 denoising_loss<double>(model, minus, x, sigma, noise, nullptr)) /
                (2 * h);
      }
      const double rel = (grads.segment(seg.offset, seg.size()) - fd).norm() / std::max(fd.norm(), 1e-12);
      if (rel > worst) {
        worst = rel;
        worst_name = seg.name;
      }
    }
  }
  return {worst < 1e-3, fmt("worst segment relative error %.3g (%s), tol 1e-3", worst, worst_name.c_str())};
}

Outcome desk_training_chamfer(const Context& ctx) {
  const Trained& t = sphere(ctx);
  const double cd = desk_chamfer(t, 32, Solver::heun, InitKind::gaussian, 7);
  const double floor = chamfer(sample_surface(t.mesh, kEvalPoints, 8), sample_surface(t.mesh, kEvalPoints, 9));
  const double scale = t.normalized.transform.scale;
  return {cd < 0.02, fmt("chamfer %.5f unit-sphere units (%.5f normalized), two-draw floor %.5f, tol 0.02%s",
                         cd, cd / scale, floor, t.reused ? ", model reused" : fmt(", trained in %.0f s", t.seconds).c_str())};
}

Outcome step_trend(const Context& ctx) {
  const Trained& t = sphere(ctx);
  const double c8 = desk_chamfer(t, 8, Solver::heun, InitKind::gaussian, 11);
  const double c16 = desk_chamfer(t, 16, Solver::heun, InitKind::gaussian, 11);
  const double c64 = desk_chamfer(t, 64, Solver::heun, InitKind::gaussian, 11);
  return {c8 > c16 && c16 <= 1.1 * c64, fmt("chamfer N=8 %.5f, N=16 %.5f, N=64 %.5f", c8, c16, c64)};
}

Outcome inversion_trend(const Context& ctx) {
  const Trained& t = sphere(ctx);
  const PointSet points = sample_surface(t.normalized.mesh, 10000, 12);
  const DenoiseFn d = model_denoiser(t.model);
  std::vector<double> mse;
  for (int steps : {4, 8, 16, 64}) mse.push_back(roundtrip_mse(d, points, NoiseSchedule::karras(steps)));
  const bool decreasing = mse[0] > mse[1] && mse[1] > mse[2] && mse[2] > mse[3];
  return {decreasing && mse[3] < 1e-2 * mse[0],
          fmt("mse 4: %.4g, 8: %.4g, 16: %.4g, 64: %.4g (ratio 64/4 %.3g, tol 1e-2)", mse[0], mse[1], mse[2], mse[3],
              mse[3] / mse[0])};
}

Outcome init_kinds(const Context& ctx) {
  const Trained& t = sphere(ctx);
  const double g = desk_chamfer(t, 32, Solver::heun, InitKind::gaussian, 13);
  const double u = desk_chamfer(t, 32, Solver::heun, InitKind::uniform, 13);
  const double ratio = std::max(g, u) / std::min(g, u);
  return {ratio < 1.5, fmt("gaussian %.5f, uniform %.5f, ratio %.3f (tol 1.5)", g, u, ratio)};
}

Outcome compression(const Context&) {
  const double r6 = compression_ratio(5.53e6, 1e6);
  const double r9 = compression_ratio(5.53e6, 1e9);
  DenoiserConfig cfg;
  cfg.channels = 512;
  cfg.n_blocks = 6;
  const double params = static_cast<double>(DenoiserModel::initialize(cfg, 0).param_count());
  const bool ok = std::abs(r6 - 0.542) <= 0.002 && std::abs(r9 - 542.0) <= 2.0 && std::abs(params / 5.53e6 - 1.0) <= 0.1;
  return {ok, fmt("ratio 1e6 %.4f, 1e9 %.2f, params(C=512, 6 blocks) %.0f", r6, r9, params)};
}

Outcome metric_oracles(const Context&) {
  std::mt19937_64 gen(21);
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<int> size(1, 3000);
  long mismatches = 0, queries = 0;
  for (int c = 0; c < 100; ++c) {
    const int n = size(gen);
    PointSet pts(n, 3);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = n01(gen);
    if (c % 4 == 1) pts.col(2).setZero();
    if (c % 4 == 2)
      for (int i = 0; i < n; ++i) pts.row(i) = pts.row(i % 7);
    if (c % 4 == 3) pts = (pts * 4.0).array().round() / 4.0;
    const KdTree3 tree(pts);
    for (int q = 0; q < 200; ++q) {
      const Eigen::Vector3d p(n01(gen), n01(gen), n01(gen));
      Eigen::Index best = -1;
      double best_sq = INFINITY;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = squared_distance(p, pts.row(i).transpose());
        if (d < best_sq) {
          best_sq = d;
          best = i;
        }
      }
      const KdTree3::Neighbor nb = tree.nearest(p);
      ++queries;
      if (nb.index != best || nb.distance != std::sqrt(best_sq)) ++mismatches;
    }
  }
  PointSet origin = PointSet::Zero(1, 3), unit = PointSet::Zero(1, 3);
  unit(0, 0) = 1.0;
  const double two = chamfer(origin, unit);
  PointSet a(5000, 3), b(3000, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n01(gen);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = 1.5 * n01(gen);
  const double asym = std::abs(chamfer(a, b) - chamfer(b, a));
  return {mismatches == 0 && two == 2.0 && asym <= 1e-12,
          fmt("%ld/%ld kd-tree mismatches, chamfer(origin, e_x) = %.17g, asymmetry %.3g", mismatches, queries, two,
              asym)};
}

Outcome baseline_ordering(const Context& ctx) {
  const Mesh torus = make_torus(1.0, 0.35, 128, 64);
  const Trained t = train_desk(ctx, "torus", torus, 2);
  const Eigen::Index budget = t.model.param_count();
  // Six equal hidden layers: 5w² + 12w + 3 parameters, w chosen closest to the budget.
  int width = 1;
  auto count = [](long w) { return 5 * w * w + 12 * w + 3; };
  while (std::abs(count(width + 1) - budget) < std::abs(count(width) - budget)) ++width;
  VectorFieldConfig vc;
  vc.hidden = std::vector<int>(6, width);
  vc.epochs = 200;
  vc.iters_per_epoch = 64;
  vc.batch_size = 4096;
  vc.lr = 1e-3;
  vc.seed = 3;
  const fs::path cache = ctx.work / "torus_vf.ckpt";
  const nlohmann::json setup = {{"hidden", vc.hidden}, {"epochs", vc.epochs}, {"iters", vc.iters_per_epoch},
                                {"batch", vc.batch_size}, {"lr", vc.lr}, {"seed", vc.seed}};
  std::optional<VectorFieldModel> vf;
  if (fs::exists(cache)) {
    try {
      Checkpoint ckpt = load_checkpoint(cache);
      if (!ckpt.is_denoiser() && ckpt.info.value("setup", nlohmann::json()) == setup) vf = ckpt.vector_field();
    } catch (const std::exception&) {
    }
  }
  if (!vf) {
    std::cerr << "training vector-field baseline on torus\n";
    vf = train_vf(t.normalized.mesh, vc).model;
    save_checkpoint(cache, Checkpoint{*vf, t.normalized.transform, {{"setup", setup}}});
  }
  const double ours = desk_chamfer(t, 32, Solver::heun, InitKind::gaussian, 14);
  const PointSet vf_points = t.normalized.transform.from_normalized(sample_vf(*vf, kEvalPoints, 14));
  const double theirs = chamfer(sample_surface(torus, kEvalPoints, 14 + 1000), vf_points);
  return {theirs > ours, fmt("vector field %.5f (%ld params) vs geodist %.5f (%ld params)", theirs,
                             static_cast<long>(vf->param_count()), ours, static_cast<long>(budget))};
}

int run_cli(const Context& ctx, const std::string& args) {
  const std::string cmd = ctx.cli.string() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const Context& ctx) {
  const fs::path dir = ctx.work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_obj(dir / "sphere.obj", make_icosphere(4));
  std::ofstream(dir / "config.json") << R"({
    "denoiser": {"channels": 32, "n_blocks": 2},
    "training": {"epochs": 3, "iters_per_epoch": 8, "batch_size": 512, "points_per_epoch": 16384}
  })";
  for (const char* run : {"a", "b"}) {
    const fs::path out = dir / run;
    if (run_cli(ctx, "train " + (dir / "config.json").string() + " --mesh " + (dir / "sphere.obj").string() +
                         " --output " + out.string() + " --threads 1 --seed 5") != 0 ||
        run_cli(ctx, "sample " + (out / "checkpoint_latest.ckpt").string() + " -n 20000 --steps 16 --threads 1 " +
                         "--seed 6 -o " + (out / "samples.ply").string()) != 0)
      return {false, "cli run failed"};
  }
  const bool ckpt = slurp(dir / "a" / "checkpoint_latest.ckpt") == slurp(dir / "b" / "checkpoint_latest.ckpt");
  const bool ply = slurp(dir / "a" / "samples.ply") == slurp(dir / "b" / "samples.ply");
  return {ckpt && ply, fmt("checkpoints %s, PLY files %s", ckpt ? "identical" : "differ", ply ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geodist acceptance suite"};
  Context ctx;
  std::vector<int> only;
  app.add_option("--cli", ctx.cli, "geodist executable")->required();
  app.add_option("--work", ctx.work, "scratch directory")->required();
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria = {
      {"oracle ODE exactness", oracle_ode},
      {"gradient correctness", gradient_check},
      {"desk-scale sphere training", desk_training_chamfer},
      {"sampling-steps trend", step_trend},
      {"inversion-steps trend", inversion_trend},
      {"gaussian vs uniform init", init_kinds},
      {"compression arithmetic", compression},
      {"metric oracles", metric_oracles},
      {"vector-field baseline ordering", baseline_ordering},
      {"determinism", determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail << " ["
              << fmt("%.1f s", seconds) << "]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
