#include "geodist/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "geodist/parallel.hpp"

namespace geodist {

KdTree3::KdTree3(const PointSet& points) {
  if (points.rows() > 0 && points.cols() < 3) throw ShapeError("KdTree3 needs at least 3 columns");
  points_.resize(static_cast<std::size_t>(points.rows()));
  index_.resize(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    points_[static_cast<std::size_t>(i)] = points.row(i).head<3>().transpose();
    index_[static_cast<std::size_t>(i)] = i;
  }
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / 8 + 2);
    build(0, static_cast<int>(points_.size()));
  }
}

int KdTree3::build(int begin, int end) {
  constexpr int kLeafSize = 8;
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Eigen::AlignedBox3d box;
  for (int i = begin; i < end; ++i) box.extend(points_[static_cast<std::size_t>(i)]);
  Eigen::Index axis = 0;
  box.sizes().maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;

  // Co-sort points and original indices along `axis`.
  std::vector<int> order(static_cast<std::size_t>(end - begin));
  for (int i = 0; i < end - begin; ++i) order[static_cast<std::size_t>(i)] = begin + i;
  std::nth_element(order.begin(), order.begin() + (mid - begin), order.end(), [&](int a, int b) {
    return points_[static_cast<std::size_t>(a)](axis) < points_[static_cast<std::size_t>(b)](axis);
  });
  std::vector<Eigen::Vector3d> pts;
  std::vector<Eigen::Index> idx;
  pts.reserve(order.size());
  idx.reserve(order.size());
  for (int o : order) {
    pts.push_back(points_[static_cast<std::size_t>(o)]);
    idx.push_back(index_[static_cast<std::size_t>(o)]);
  }
  std::copy(pts.begin(), pts.end(), points_.begin() + begin);
  std::copy(idx.begin(), idx.end(), index_.begin() + begin);

  const double split = points_[static_cast<std::size_t>(mid)](axis);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& node = nodes_[static_cast<std::size_t>(id)];
  node.axis = static_cast<int>(axis);
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void KdTree3::search(int id, const Eigen::Vector3d& p, Eigen::Index& best, double& best_sq) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const double d2 = squared_distance(points_[static_cast<std::size_t>(i)], p);
      const Eigen::Index original = index_[static_cast<std::size_t>(i)];
      if (d2 < best_sq || (d2 == best_sq && original < best)) {
        best_sq = d2;
        best = original;
      }
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = p(node.axis) - node.split;
  const int near = diff <= 0.0 ? node.left : node.right;
  const int far = diff <= 0.0 ? node.right : node.left;
  search(near, p, best, best_sq);
  if (diff * diff <= best_sq) search(far, p, best, best_sq);
}

KdTree3::Neighbor KdTree3::nearest(const Eigen::Vector3d& p) const {
  if (points_.empty()) throw DomainError("nearest() on an empty KdTree3");
  Eigen::Index best = -1;
  double best_sq = std::numeric_limits<double>::infinity();
  search(0, p, best, best_sq);
  return {best, std::sqrt(best_sq)};
}

namespace {

void mean_nearest(const KdTree3& tree, const PointSet& queries, int threads, double& mean, double& mean_sq) {
  const long n = static_cast<long>(queries.rows());
  constexpr long kChunk = 4096;
  const long chunks = chunk_count(n, kChunk);
  std::vector<double> sums(static_cast<std::size_t>(chunks), 0.0);
  std::vector<double> sums_sq(static_cast<std::size_t>(chunks), 0.0);
  parallel_chunks(chunks, threads, [&](long chunk) {
    const long end = std::min(n, (chunk + 1) * kChunk);
    double s = 0.0;
    double s2 = 0.0;
    for (long i = chunk * kChunk; i < end; ++i) {
      const double d = tree.nearest(queries.row(i).head<3>().transpose()).distance;
      s += d;
      s2 += d * d;
    }
    sums[static_cast<std::size_t>(chunk)] = s;
    sums_sq[static_cast<std::size_t>(chunk)] = s2;
  });
  double total = 0.0;
  double total_sq = 0.0;
  for (long c = 0; c < chunks; ++c) {
    total += sums[static_cast<std::size_t>(c)];
    total_sq += sums_sq[static_cast<std::size_t>(c)];
  }
  mean = total / static_cast<double>(n);
  mean_sq = total_sq / static_cast<double>(n);
}

}  // namespace

ChamferTerms chamfer_terms(const PointSet& reference, const PointSet& generated, int threads) {
  if (reference.rows() == 0 || generated.rows() == 0) throw DomainError("chamfer distance of an empty set");
  ChamferTerms terms;
  const KdTree3 gen_tree(generated);
  mean_nearest(gen_tree, reference, threads, terms.ref_to_gen, terms.ref_to_gen_sq);
  const KdTree3 ref_tree(reference);
  mean_nearest(ref_tree, generated, threads, terms.gen_to_ref, terms.gen_to_ref_sq);
  return terms;
}

double chamfer(const PointSet& reference, const PointSet& generated, int threads) {
  return chamfer_terms(reference, generated, threads).total();
}

PointGenerator denoiser_generator(const DenoiserModel& model, const NoiseSchedule& schedule, Solver solver,
                                  InitKind init) {
  return [&model, schedule, solver, init](long n, std::uint64_t seed) {
    return sample_forward(model_denoiser(model), n, model.config().d_in, schedule, init, seed, {.solver = solver})
        .points;
  };
}

double percentile(Eigen::VectorXd values, double q) {
  if (values.size() == 0) throw DomainError("percentile of an empty set");
  std::sort(values.data(), values.data() + values.size());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const auto hi = std::min<Eigen::Index>(lo + 1, values.size() - 1);
  return values(lo) + (pos - static_cast<double>(lo)) * (values(hi) - values(lo));
}

EvalReport eval_model(const PointGenerator& generator, const Mesh& mesh, long n, std::uint64_t seed,
                      std::uint64_t reference_seed, int threads) {
  if (n < 1) throw DomainError("evaluation needs at least one point");
  EvalReport report;
  report.n_points = n;
  report.generated = generator(n, seed);
  const PointSet reference = sample_surface(mesh, n, reference_seed);
  report.chamfer = chamfer_terms(reference, report.generated.leftCols(3), threads);
  report.errors = point_mesh_distance(report.generated, mesh, threads);
  report.error_p50 = percentile(report.errors, 0.50);
  report.error_p90 = percentile(report.errors, 0.90);
  report.error_p99 = percentile(report.errors, 0.99);
  report.error_max = report.errors.maxCoeff();
  report.error_mean = report.errors.mean();
  return report;
}

double compression_ratio(double param_count, double n_points) {
  if (!(param_count > 0.0)) throw DomainError("parameter count must be positive");
  return 3.0 * n_points / param_count;
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report,
                    const std::vector<std::pair<std::string, double>>& extra, const std::vector<std::string>& comments) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "n_points,chamfer,chamfer_ref_to_gen,chamfer_gen_to_ref,chamfer_squared,error_mean,error_p50,error_p90,"
         "error_p99,error_max";
  for (const auto& [name, value] : extra) out << ',' << name;
  out << '\n' << std::setprecision(10);
  out << report.n_points << ',' << report.chamfer.total() << ',' << report.chamfer.ref_to_gen << ','
      << report.chamfer.gen_to_ref << ',' << report.chamfer.total_squared() << ',' << report.error_mean << ','
      << report.error_p50 << ',' << report.error_p90 << ',' << report.error_p99 << ',' << report.error_max;
  for (const auto& [name, value] : extra) out << ',' << value;
  out << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace geodist
