#include "geodist/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "geodist/parallel.hpp"
#include "geodist/random.hpp"

namespace geodist {

NoiseSchedule NoiseSchedule::karras(int steps, double sigma_min, double sigma_max, double rho) {
  if (steps < 1) throw DomainError("schedule needs at least one step");
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min)) throw DomainError("schedule needs 0 < sigma_min < sigma_max");
  if (!(rho > 0.0)) throw DomainError("schedule rho must be positive");
  NoiseSchedule s;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  s.rho = rho;
  s.t.resize(static_cast<std::size_t>(steps) + 1);
  const double hi = std::pow(sigma_max, 1.0 / rho);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  for (int i = 0; i < steps; ++i) {
    const double frac = steps > 1 ? static_cast<double>(i) / (steps - 1) : 0.0;
    s.t[static_cast<std::size_t>(i)] = std::pow(hi + frac * (lo - hi), rho);
  }
  s.t.front() = sigma_max;
  if (steps > 1) s.t[static_cast<std::size_t>(steps) - 1] = sigma_min;
  s.t.back() = 0.0;
  return s;
}

NoiseSchedule NoiseSchedule::for_inversion() const {
  NoiseSchedule s = *this;
  s.t.back() = kInversionStart;
  return s;
}

DenoiseFn model_denoiser(const DenoiserModel& model, int threads) {
  return [&model, threads](const PointSet& x, double t) { return denoise(model, x, t, threads); };
}

PointSet initial_noise(long n, int d, InitKind kind, std::uint64_t seed) {
  if (n < 0 || d < 1) throw DomainError("invalid noise shape");
  PointSet out(n, d);
  const double inv_std = 1.0 / std::sqrt(1.0 / 12.0);
  parallel_chunks(chunk_count(n, kRngChunk), 0, [&](long chunk) {
    Rng rng(seed, static_cast<std::uint64_t>(chunk));
    const long end = std::min(n, (chunk + 1) * kRngChunk);
    for (long i = chunk * kRngChunk; i < end; ++i)
      for (int k = 0; k < d; ++k)
        out(i, k) = kind == InitKind::gaussian ? rng.normal() : (rng.uniform() - 0.5) * inv_std;
  });
  return out;
}

namespace {

void validate_schedule(const NoiseSchedule& schedule) {
  if (schedule.t.size() < 2) throw DomainError("schedule needs at least one step");
  for (std::size_t i = 0; i + 1 < schedule.t.size(); ++i)
    if (!(schedule.t[i] > schedule.t[i + 1])) throw DomainError("schedule must be strictly decreasing");
  if (!(schedule.t.back() >= 0.0)) throw DomainError("schedule must end at a nonnegative level");
}

/// Integrates one chunk through `nodes` (in integration order). Calls
/// `record(position, state)` for every position listed in `wanted`.
template <typename RecordFn>
long integrate_chunk(const DenoiseFn& denoiser, PointSet& x, const std::vector<double>& nodes, Solver solver,
                     const std::vector<char>& wanted, RecordFn&& record) {
  long evaluations = 0;
  auto drift = [&](const PointSet& state, double t) {
    ++evaluations;
    PointSet d = denoiser(state, t);
    if (d.rows() != state.rows() || d.cols() != state.cols()) throw ShapeError("denoiser changed the point shape");
    return PointSet((state - d) / t);
  };
  if (wanted[0]) record(0, x);
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    const double t_cur = nodes[i];
    const double t_next = nodes[i + 1];
    const double h = t_next - t_cur;
    const PointSet d = drift(x, t_cur);
    if (solver == Solver::heun && t_next != 0.0) {
      const PointSet x_pred = x + h * d;
      const PointSet d_next = drift(x_pred, t_next);
      x += (0.5 * h) * (d + d_next);
    } else {
      x += h * d;
    }
    if (wanted[i + 1]) record(static_cast<int>(i + 1), x);
  }
  return evaluations;
}

/// Runs integrate_chunk over row chunks; snapshot positions map to schedule
/// indices through `index_of`.
template <typename IndexFn>
SampleResult integrate_chunked(const DenoiseFn& denoiser, const PointSet& start, const NoiseSchedule& schedule,
                               const std::vector<double>& nodes, const IntegratorOptions& options, IndexFn&& index_of) {
  if (options.chunk_size < 1) throw DomainError("chunk_size must be positive");
  const int steps = schedule.steps();
  std::vector<char> wanted(nodes.size(), 0);
  SampleResult result;
  std::vector<int> slot_of(nodes.size(), -1);
  std::vector<int> record = options.record;
  std::sort(record.begin(), record.end());
  record.erase(std::unique(record.begin(), record.end()), record.end());
  for (int index : record) {
    if (index < 0 || index > steps)
      throw DomainError("record index " + std::to_string(index) + " outside [0, " + std::to_string(steps) + "]");
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      if (index_of(static_cast<int>(p)) == index) {
        wanted[p] = 1;
        slot_of[p] = static_cast<int>(result.trajectory.snapshots.size());
      }
    }
    result.trajectory.snapshots.push_back(
        {index, schedule.t[static_cast<std::size_t>(index)], PointSet(start.rows(), start.cols())});
  }

  const long n = static_cast<long>(start.rows());
  result.points = start;
  std::vector<long> evaluations(static_cast<std::size_t>(std::max(1L, chunk_count(n, options.chunk_size))), 0);
  parallel_chunks(chunk_count(n, options.chunk_size), options.threads, [&](long chunk) {
    const long begin = chunk * options.chunk_size;
    const long rows = std::min(n, begin + options.chunk_size) - begin;
    PointSet x = start.middleRows(begin, rows);
    evaluations[static_cast<std::size_t>(chunk)] =
        integrate_chunk(denoiser, x, nodes, options.solver, wanted, [&](int position, const PointSet& state) {
          auto& snap = result.trajectory.snapshots[static_cast<std::size_t>(slot_of[static_cast<std::size_t>(position)])];
          snap.points.middleRows(begin, rows) = state;
        });
    result.points.middleRows(begin, rows) = x;
  });
  const long per_point = options.solver == Solver::euler ? steps : 2L * steps - (nodes.back() == 0.0 ? 1 : 0);
  result.evaluations = n > 0 ? evaluations[0] : per_point;
  return result;
}

}  // namespace

SampleResult integrate_forward(const DenoiseFn& denoiser, const PointSet& x0, const NoiseSchedule& schedule,
                               const IntegratorOptions& options) {
  validate_schedule(schedule);
  return integrate_chunked(denoiser, x0, schedule, schedule.t, options, [](int p) { return p; });
}

SampleResult sample_forward(const DenoiseFn& denoiser, long n_points, int d, const NoiseSchedule& schedule,
                            InitKind init, std::uint64_t seed, const IntegratorOptions& options) {
  validate_schedule(schedule);
  if (n_points < 0) throw DomainError("point count must be nonnegative");
  const PointSet x0 = initial_noise(n_points, d, init, seed) * schedule.t.front();
  return integrate_forward(denoiser, x0, schedule, options);
}

SampleResult sample_forward_euler(const DenoiseFn& denoiser, long n_points, int d, const NoiseSchedule& schedule,
                                  InitKind init, std::uint64_t seed, const std::vector<int>& record) {
  return sample_forward(denoiser, n_points, d, schedule, init, seed, {.solver = Solver::euler, .record = record});
}

SampleResult sample_forward_heun(const DenoiseFn& denoiser, long n_points, int d, const NoiseSchedule& schedule,
                                 InitKind init, std::uint64_t seed, const std::vector<int>& record) {
  return sample_forward(denoiser, n_points, d, schedule, init, seed, {.solver = Solver::heun, .record = record});
}

SampleResult sample_inverse(const DenoiseFn& denoiser, const PointSet& surface_points, const NoiseSchedule& schedule,
                            const IntegratorOptions& options) {
  validate_schedule(schedule);
  if (!(schedule.t.back() > 0.0)) throw DomainError("inversion schedule must start above zero (use for_inversion)");
  if (!surface_points.allFinite()) throw DomainError("surface points must be finite");
  const std::vector<double> nodes(schedule.t.rbegin(), schedule.t.rend());
  const int steps = schedule.steps();
  SampleResult result =
      integrate_chunked(denoiser, surface_points, schedule, nodes, options, [steps](int p) { return steps - p; });
  result.points /= std::sqrt(1.0 + schedule.t.front() * schedule.t.front());
  return result;
}

double roundtrip_mse(const DenoiseFn& denoiser, const PointSet& points, const NoiseSchedule& schedule,
                     const IntegratorOptions& options) {
  if (points.rows() == 0) return 0.0;
  IntegratorOptions plain = options;
  plain.record.clear();
  const SampleResult noise = sample_inverse(denoiser, points, schedule.for_inversion(), plain);
  NoiseSchedule forward = schedule;
  forward.t.back() = 0.0;
  const double t0 = forward.t.front();
  const PointSet start = noise.points * std::sqrt(1.0 + t0 * t0);
  const SampleResult back = integrate_forward(denoiser, start, forward, plain);
  return (back.points - points).rowwise().squaredNorm().mean();
}

}  // namespace geodist
