#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "geodist/errors.hpp"

namespace geodist {

/// N×d sample matrix, one point per row. d = 3 for positions, 6 for position + color.
using PointSet = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct Mesh {
  Vertices vertices;
  Faces faces;
  /// Per-vertex RGB in [0,1]; either empty or one row per vertex.
  Vertices colors;

  bool has_colors() const { return colors.rows() > 0; }
  Eigen::Index vertex_count() const { return vertices.rows(); }
  Eigen::Index face_count() const { return faces.rows(); }
};

/// Faces with area below this are dropped by the loader and ignored by the sampler.
inline constexpr double kDegenerateArea = 1e-12;

/// Throws GeometryError if an index is out of range, a face repeats a vertex,
/// or no face has nonzero area.
void validate_mesh(const Mesh& mesh);

Eigen::VectorXd face_areas(const Mesh& mesh);
double surface_area(const Mesh& mesh);

/// Removes faces with repeated indices or area < kDegenerateArea. Returns the number removed.
long drop_degenerate_faces(Mesh& mesh);

/// n points i.i.d. uniform with respect to surface area. With `with_color` and a
/// colored mesh the rows carry interpolated vertex colors in columns 3..5.
PointSet sample_surface(const Mesh& mesh, long n, std::uint64_t seed, bool with_color = false);

/// Affine map between model units and normalized units: normalized = (x - shift) / scale.
struct NormalizationTransform {
  Eigen::Vector3d shift = Eigen::Vector3d::Zero();
  double scale = 1.0;

  /// Applies to the first three columns only; color channels pass through.
  PointSet to_normalized(const PointSet& points) const;
  PointSet from_normalized(const PointSet& points) const;
};

struct NormalizedMesh {
  Mesh mesh;
  NormalizationTransform transform;
};

/// Centers by the scalar mean of all coordinates of n_samples surface samples and
/// divides by their scalar standard deviation.
NormalizedMesh normalize_mesh(const Mesh& mesh, long n_samples, std::uint64_t seed);

struct ClosestPoint {
  Eigen::Vector3d point;
  Eigen::Vector3d barycentric;
  double dist_sq = 0.0;
};

/// Exact closest point on triangle (a, b, c); handles degenerate triangles.
ClosestPoint point_triangle_closest(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                    const Eigen::Vector3d& b, const Eigen::Vector3d& c);

/// Bounding volume hierarchy over mesh triangles for exact closest-point queries.
class TriangleBvh {
 public:
  explicit TriangleBvh(const Mesh& mesh);

  struct Hit {
    Eigen::Vector3d point;
    double dist_sq = 0.0;
    int face = -1;
  };

  Hit closest(const Eigen::Vector3d& p) const;

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1;
    int right = -1;
    int begin = 0;
    int end = 0;
  };

  int build(int begin, int end);

  const Mesh* mesh_;
  std::vector<int> order_;
  std::vector<Eigen::Vector3d> centroids_;
  std::vector<Node> nodes_;
};

/// Closest surface point for each row (positions in the first three columns).
struct SurfaceProjection {
  PointSet closest;
  Eigen::VectorXd dist_sq;
};

SurfaceProjection project_to_mesh(const PointSet& points, const Mesh& mesh, int threads = 0);

/// Unsigned L2 distance from each point to the surface.
Eigen::VectorXd point_mesh_distance(const PointSet& points, const Mesh& mesh, int threads = 0);

/// Icosahedron subdivided `subdivisions` times and projected onto a sphere (20·4^s faces).
Mesh make_icosphere(int subdivisions, double radius = 1.0);

/// Torus around the z axis with the given major and minor radii.
Mesh make_torus(double major_radius, double minor_radius, int major_segments, int minor_segments);

}  // namespace geodist
