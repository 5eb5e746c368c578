#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "geodist/denoiser.hpp"
#include "geodist/geometry.hpp"

namespace geodist {

/// Noise levels t_0 > t_1 > ... > t_N used as ODE discretization nodes.
struct NoiseSchedule {
  std::vector<double> t;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;

  int steps() const { return static_cast<int>(t.size()) - 1; }

  /// t_i = (σ_max^{1/ρ} + i/(N-1)·(σ_min^{1/ρ} - σ_max^{1/ρ}))^ρ for i < N, t_N = 0.
  static NoiseSchedule karras(int steps, double sigma_min = 0.002, double sigma_max = 80.0, double rho = 7.0);

  /// Copy with the terminal zero replaced by kInversionStart, where inversion begins.
  NoiseSchedule for_inversion() const;
};

inline constexpr double kInversionStart = 1e-8;

/// D(x, t) for every row at a shared noise level t.
using DenoiseFn = std::function<PointSet(const PointSet& x, double t)>;

DenoiseFn model_denoiser(const DenoiserModel& model, int threads = 0);

enum class Solver { euler, heun };
enum class InitKind { gaussian, uniform };

/// Unit-variance initial noise: N(0,1) or (U(0,1) - 0.5)/sqrt(1/12) entries.
PointSet initial_noise(long n, int d, InitKind kind, std::uint64_t seed);

struct Snapshot {
  int index = 0;
  double t = 0.0;
  PointSet points;
};

struct Trajectory {
  std::vector<Snapshot> snapshots;
};

struct SampleResult {
  PointSet points;
  Trajectory trajectory;
  /// Denoiser evaluations per point.
  long evaluations = 0;
};

struct IntegratorOptions {
  Solver solver = Solver::heun;
  /// Schedule indices whose states are recorded.
  std::vector<int> record;
  /// Points integrated together; chunking does not change results.
  long chunk_size = 65536;
  int threads = 0;
};

/// Integrates dx/dt = (x - D(x,t))/t from t_0 down to t_N starting at x0.
SampleResult integrate_forward(const DenoiseFn& denoiser, const PointSet& x0, const NoiseSchedule& schedule,
                               const IntegratorOptions& options = {});

/// Forward sampling: x_0 = t_0·n with n from `init`, then integrate to t_N.
SampleResult sample_forward(const DenoiseFn& denoiser, long n_points, int d, const NoiseSchedule& schedule,
                            InitKind init, std::uint64_t seed, const IntegratorOptions& options = {});

SampleResult sample_forward_euler(const DenoiseFn& denoiser, long n_points, int d, const NoiseSchedule& schedule,
                                  InitKind init, std::uint64_t seed, const std::vector<int>& record = {});
SampleResult sample_forward_heun(const DenoiseFn& denoiser, long n_points, int d, const NoiseSchedule& schedule,
                                 InitKind init, std::uint64_t seed, const std::vector<int>& record = {});

/// Inverse sampling from surface points (at t_N) up to t_0; the result is the
/// normalized noise x_0 / sqrt(1 + t_0²). `schedule` must end at kInversionStart
/// (see NoiseSchedule::for_inversion). Snapshots hold unnormalized states x_i.
SampleResult sample_inverse(const DenoiseFn& denoiser, const PointSet& surface_points, const NoiseSchedule& schedule,
                            const IntegratorOptions& options = {.solver = Solver::euler});

/// Inverts with `steps` nodes, maps the noise back to x(t_0) = n·sqrt(1 + t_0²),
/// integrates forward on the matching schedule and returns the mean squared L2
/// error between the input points and their reconstruction.
double roundtrip_mse(const DenoiseFn& denoiser, const PointSet& points, const NoiseSchedule& schedule,
                     const IntegratorOptions& options = {.solver = Solver::euler});

}  // namespace geodist
