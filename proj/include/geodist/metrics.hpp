#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "geodist/geometry.hpp"
#include "geodist/sampler.hpp"

namespace geodist {

/// dx² + dy² + dz², summed left to right.
inline double squared_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double dx = a(0) - b(0), dy = a(1) - b(1), dz = a(2) - b(2);
  return dx * dx + dy * dy + dz * dz;
}

/// Exact nearest-neighbor search over the first three columns of a PointSet.
/// Ties are broken by the lowest point index.
class KdTree3 {
 public:
  explicit KdTree3(const PointSet& points);

  struct Neighbor {
    Eigen::Index index = -1;
    double distance = 0.0;
  };

  Neighbor nearest(const Eigen::Vector3d& p) const;
  Eigen::Index size() const { return static_cast<Eigen::Index>(index_.size()); }

 private:
  struct Node {
    int begin = 0;
    int end = 0;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end);
  void search(int node, const Eigen::Vector3d& p, Eigen::Index& best, double& best_sq) const;

  std::vector<Eigen::Vector3d> points_;  // tree order
  std::vector<Eigen::Index> index_;      // original index of points_[i]
  std::vector<Node> nodes_;
};

struct ChamferTerms {
  double ref_to_gen = 0.0;
  double gen_to_ref = 0.0;
  double ref_to_gen_sq = 0.0;
  double gen_to_ref_sq = 0.0;

  /// Sum of the two mean unsquared nearest-neighbor distances.
  double total() const { return ref_to_gen + gen_to_ref; }
  double total_squared() const { return ref_to_gen_sq + gen_to_ref_sq; }
};

ChamferTerms chamfer_terms(const PointSet& reference, const PointSet& generated, int threads = 0);

/// (1/|ref|) Σ_a min_b ‖a-b‖ + (1/|gen|) Σ_b min_a ‖a-b‖ over positions.
double chamfer(const PointSet& reference, const PointSet& generated, int threads = 0);

/// Produces n points for a seed; the object under evaluation.
using PointGenerator = std::function<PointSet(long n, std::uint64_t seed)>;

/// Forward sampling from a trained denoiser.
PointGenerator denoiser_generator(const DenoiserModel& model, const NoiseSchedule& schedule, Solver solver,
                                  InitKind init);

struct EvalReport {
  long n_points = 0;
  ChamferTerms chamfer;
  double error_p50 = 0.0;
  double error_p90 = 0.0;
  double error_p99 = 0.0;
  double error_max = 0.0;
  double error_mean = 0.0;
  PointSet generated;
  /// Unsigned distance of every generated point to the mesh.
  Eigen::VectorXd errors;
};

/// Generates n points with `seed`, compares them to n fresh surface samples
/// drawn with `reference_seed`, and measures point-to-surface errors.
EvalReport eval_model(const PointGenerator& generator, const Mesh& mesh, long n, std::uint64_t seed,
                      std::uint64_t reference_seed, int threads = 0);

/// Linear-interpolated percentile of `values` (q in [0, 1]).
double percentile(Eigen::VectorXd values, double q);

/// 3 floats per point divided by one float per parameter.
double compression_ratio(double param_count, double n_points);

/// One-row CSV with the scalar fields of `report`, prefixed by `# ` comment lines.
void write_eval_csv(const std::filesystem::path& path, const EvalReport& report,
                    const std::vector<std::pair<std::string, double>>& extra,
                    const std::vector<std::string>& comments = {});

}  // namespace geodist
