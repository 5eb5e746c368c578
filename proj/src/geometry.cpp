#include "geodist/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <utility>

#include "geodist/parallel.hpp"
#include "geodist/random.hpp"

namespace geodist {

namespace {

Eigen::Vector3d vertex(const Mesh& mesh, int index) { return mesh.vertices.row(index).transpose(); }

double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

ClosestPoint closest_on_segment(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                const Eigen::Vector3d& b) {
  const Eigen::Vector3d ab = b - a;
  const double len_sq = ab.squaredNorm();
  double s = len_sq > 0.0 ? std::clamp((p - a).dot(ab) / len_sq, 0.0, 1.0) : 0.0;
  ClosestPoint out;
  out.point = a + s * ab;
  out.barycentric = Eigen::Vector3d(1.0 - s, s, 0.0);
  out.dist_sq = (p - out.point).squaredNorm();
  return out;
}

ClosestPoint make_closest(const Eigen::Vector3d& p, const Eigen::Vector3d& point, double u,
                          double v, double w) {
  return {point, Eigen::Vector3d(u, v, w), (p - point).squaredNorm()};
}

}  // namespace

void validate_mesh(const Mesh& mesh) {
  const Eigen::Index nv = mesh.vertex_count();
  if (mesh.face_count() == 0) throw GeometryError("mesh has no faces");
  if (mesh.has_colors() && mesh.colors.rows() != nv)
    throw GeometryError("vertex color count does not match vertex count");
  if (!mesh.vertices.allFinite()) throw GeometryError("mesh has non-finite vertex coordinates");
  bool any_area = false;
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const auto face = mesh.faces.row(f);
    for (int k = 0; k < 3; ++k) {
      if (face(k) < 0 || face(k) >= nv)
        throw GeometryError("face " + std::to_string(f) + " references vertex " +
                            std::to_string(face(k)) + " of " + std::to_string(nv));
    }
    if (face(0) == face(1) || face(1) == face(2) || face(0) == face(2))
      throw GeometryError("face " + std::to_string(f) + " repeats a vertex index");
    if (triangle_area(vertex(mesh, face(0)), vertex(mesh, face(1)), vertex(mesh, face(2))) >=
        kDegenerateArea)
      any_area = true;
  }
  if (!any_area) throw GeometryError("mesh has zero surface area");
}

Eigen::VectorXd face_areas(const Mesh& mesh) {
  Eigen::VectorXd areas(mesh.face_count());
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const auto face = mesh.faces.row(f);
    areas(f) = triangle_area(vertex(mesh, face(0)), vertex(mesh, face(1)), vertex(mesh, face(2)));
  }
  return areas;
}

double surface_area(const Mesh& mesh) { return face_areas(mesh).sum(); }

long drop_degenerate_faces(Mesh& mesh) {
  const Eigen::VectorXd areas = face_areas(mesh);
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(mesh.face_count()));
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const auto face = mesh.faces.row(f);
    const bool repeated = face(0) == face(1) || face(1) == face(2) || face(0) == face(2);
    if (!repeated && areas(f) >= kDegenerateArea) keep.push_back(f);
  }
  const long dropped = static_cast<long>(mesh.face_count()) - static_cast<long>(keep.size());
  if (dropped > 0) {
    Faces kept(static_cast<Eigen::Index>(keep.size()), 3);
    for (std::size_t i = 0; i < keep.size(); ++i) kept.row(static_cast<Eigen::Index>(i)) = mesh.faces.row(keep[i]);
    mesh.faces = std::move(kept);
  }
  return dropped;
}

PointSet sample_surface(const Mesh& mesh, long n, std::uint64_t seed, bool with_color) {
  validate_mesh(mesh);
  if (n < 0) throw GeometryError("sample count must be nonnegative");
  const bool color = with_color && mesh.has_colors();
  const Eigen::VectorXd areas = face_areas(mesh);
  std::vector<double> cdf(static_cast<std::size_t>(areas.size()));
  double running = 0.0;
  for (Eigen::Index f = 0; f < areas.size(); ++f) {
    if (areas(f) >= kDegenerateArea) running += areas(f);
    cdf[static_cast<std::size_t>(f)] = running;
  }
  const double total = running;

  PointSet out(n, color ? 6 : 3);
  parallel_chunks(chunk_count(n, kRngChunk), 0, [&](long chunk) {
    Rng rng(seed, static_cast<std::uint64_t>(chunk));
    const long end = std::min(n, (chunk + 1) * kRngChunk);
    for (long i = chunk * kRngChunk; i < end; ++i) {
      const double r = rng.uniform() * total;
      auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
      if (it == cdf.end()) --it;
      const auto f = static_cast<Eigen::Index>(it - cdf.begin());
      double u = rng.uniform();
      double v = rng.uniform();
      if (u + v > 1.0) {
        u = 1.0 - u;
        v = 1.0 - v;
      }
      const auto face = mesh.faces.row(f);
      const double w0 = 1.0 - u - v;
      out.row(i).head<3>() = w0 * mesh.vertices.row(face(0)) + u * mesh.vertices.row(face(1)) +
                             v * mesh.vertices.row(face(2));
      if (color) {
        out.row(i).segment<3>(3) = w0 * mesh.colors.row(face(0)) + u * mesh.colors.row(face(1)) +
                                   v * mesh.colors.row(face(2));
      }
    }
  });
  return out;
}

PointSet NormalizationTransform::to_normalized(const PointSet& points) const {
  PointSet out = points;
  if (points.cols() < 3) throw ShapeError("points need at least 3 columns");
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i).head<3>() = (points.row(i).head<3>() - shift.transpose()) / scale;
  return out;
}

PointSet NormalizationTransform::from_normalized(const PointSet& points) const {
  PointSet out = points;
  if (points.cols() < 3) throw ShapeError("points need at least 3 columns");
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i).head<3>() = points.row(i).head<3>() * scale + shift.transpose();
  return out;
}

NormalizedMesh normalize_mesh(const Mesh& mesh, long n_samples, std::uint64_t seed) {
  validate_mesh(mesh);
  if (n_samples < 1) throw GeometryError("normalization needs at least one sample");
  const PointSet samples = sample_surface(mesh, n_samples, seed);
  // Scalar reductions over every coordinate entry, not per axis.
  const double count = static_cast<double>(samples.size());
  const double mean = samples.sum() / count;
  const double variance = (samples.array() - mean).square().sum() / count;
  const double stddev = std::sqrt(variance);
  if (!(stddev > 0.0)) throw GeometryError("surface samples have zero spread");

  NormalizedMesh out;
  out.transform.shift = Eigen::Vector3d::Constant(mean);
  out.transform.scale = stddev;
  out.mesh = mesh;
  out.mesh.vertices = ((mesh.vertices.array() - mean) / stddev).matrix();
  return out;
}

ClosestPoint point_triangle_closest(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                    const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a;
  const Eigen::Vector3d ac = c - a;
  const double cross_sq = ab.cross(ac).squaredNorm();
  if (!(cross_sq > 1e-24 * ab.squaredNorm() * ac.squaredNorm())) {
    // Collinear or collapsed: the closest point lies on one of the edges.
    ClosestPoint best = closest_on_segment(p, a, b);
    ClosestPoint on_bc = closest_on_segment(p, b, c);
    on_bc.barycentric = Eigen::Vector3d(0.0, on_bc.barycentric(0), on_bc.barycentric(1));
    ClosestPoint on_ca = closest_on_segment(p, c, a);
    on_ca.barycentric = Eigen::Vector3d(on_ca.barycentric(1), 0.0, on_ca.barycentric(0));
    if (on_bc.dist_sq < best.dist_sq) best = on_bc;
    if (on_ca.dist_sq < best.dist_sq) best = on_ca;
    return best;
  }

  const Eigen::Vector3d ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return make_closest(p, a, 1.0, 0.0, 0.0);

  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return make_closest(p, b, 0.0, 1.0, 0.0);

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return make_closest(p, a + v * ab, 1.0 - v, v, 0.0);
  }

  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return make_closest(p, c, 0.0, 0.0, 1.0);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return make_closest(p, a + w * ac, 1.0 - w, 0.0, w);
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return make_closest(p, b + w * (c - b), 0.0, 1.0 - w, w);
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return make_closest(p, a + ab * v + ac * w, 1.0 - v - w, v, w);
}

TriangleBvh::TriangleBvh(const Mesh& mesh) : mesh_(&mesh) {
  validate_mesh(mesh);
  const int nf = static_cast<int>(mesh.face_count());
  order_.resize(static_cast<std::size_t>(nf));
  centroids_.resize(static_cast<std::size_t>(nf));
  for (int f = 0; f < nf; ++f) {
    order_[static_cast<std::size_t>(f)] = f;
    const auto face = mesh.faces.row(f);
    centroids_[static_cast<std::size_t>(f)] =
        (vertex(mesh, face(0)) + vertex(mesh, face(1)) + vertex(mesh, face(2))) / 3.0;
  }
  nodes_.reserve(static_cast<std::size_t>(2 * nf));
  build(0, nf);
}

int TriangleBvh::build(int begin, int end) {
  constexpr int kLeafSize = 4;
  const int index = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d centroid_box;
  for (int i = begin; i < end; ++i) {
    const int f = order_[static_cast<std::size_t>(i)];
    const auto face = mesh_->faces.row(f);
    for (int k = 0; k < 3; ++k) box.extend(vertex(*mesh_, face(k)));
    centroid_box.extend(centroids_[static_cast<std::size_t>(f)]);
  }
  nodes_[static_cast<std::size_t>(index)].box = box;
  nodes_[static_cast<std::size_t>(index)].begin = begin;
  nodes_[static_cast<std::size_t>(index)].end = end;
  if (end - begin <= kLeafSize) return index;

  Eigen::Index axis = 0;
  centroid_box.sizes().maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int lhs, int rhs) {
                     return centroids_[static_cast<std::size_t>(lhs)](axis) <
                            centroids_[static_cast<std::size_t>(rhs)](axis);
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

TriangleBvh::Hit TriangleBvh::closest(const Eigen::Vector3d& p) const {
  Hit best;
  best.dist_sq = std::numeric_limits<double>::infinity();
  std::array<int, 128> stack{};
  int top = 0;
  stack[static_cast<std::size_t>(top++)] = 0;
  while (top > 0) {
    const Node& node = nodes_[static_cast<std::size_t>(stack[static_cast<std::size_t>(--top)])];
    if (node.box.squaredExteriorDistance(p) > best.dist_sq) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int f = order_[static_cast<std::size_t>(i)];
        const auto face = mesh_->faces.row(f);
        const ClosestPoint cp = point_triangle_closest(p, vertex(*mesh_, face(0)),
                                                       vertex(*mesh_, face(1)), vertex(*mesh_, face(2)));
        if (cp.dist_sq < best.dist_sq || (cp.dist_sq == best.dist_sq && f < best.face)) {
          best.dist_sq = cp.dist_sq;
          best.point = cp.point;
          best.face = f;
        }
      }
      continue;
    }
    const Node& left = nodes_[static_cast<std::size_t>(node.left)];
    const Node& right = nodes_[static_cast<std::size_t>(node.right)];
    const double dl = left.box.squaredExteriorDistance(p);
    const double dr = right.box.squaredExteriorDistance(p);
    // Push the farther child first so the nearer one is visited next.
    if (dl <= dr) {
      stack[static_cast<std::size_t>(top++)] = node.right;
      stack[static_cast<std::size_t>(top++)] = node.left;
    } else {
      stack[static_cast<std::size_t>(top++)] = node.left;
      stack[static_cast<std::size_t>(top++)] = node.right;
    }
  }
  return best;
}

SurfaceProjection project_to_mesh(const PointSet& points, const Mesh& mesh, int threads) {
  if (points.cols() < 3) throw ShapeError("points need at least 3 columns");
  const TriangleBvh bvh(mesh);
  SurfaceProjection out{PointSet(points.rows(), 3), Eigen::VectorXd(points.rows())};
  const long n = static_cast<long>(points.rows());
  parallel_chunks(chunk_count(n, 1024), threads, [&](long chunk) {
    const long end = std::min(n, (chunk + 1) * 1024);
    for (long i = chunk * 1024; i < end; ++i) {
      const auto hit = bvh.closest(points.row(i).head<3>().transpose());
      out.closest.row(i) = hit.point.transpose();
      out.dist_sq(i) = hit.dist_sq;
    }
  });
  return out;
}

Eigen::VectorXd point_mesh_distance(const PointSet& points, const Mesh& mesh, int threads) {
  return project_to_mesh(points, mesh, threads).dist_sq.cwiseSqrt();
}

Mesh make_icosphere(int subdivisions, double radius) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int i, int j) {
      const auto key = std::minmax(i, j);
      if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
      verts.push_back((verts[static_cast<std::size_t>(i)] + verts[static_cast<std::size_t>(j)]).normalized());
      const int id = static_cast<int>(verts.size()) - 1;
      midpoints.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int a = midpoint(f[0], f[1]);
      const int b = midpoint(f[1], f[2]);
      const int c = midpoint(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i)
    mesh.vertices.row(static_cast<Eigen::Index>(i)) = radius * verts[i].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    mesh.faces.row(static_cast<Eigen::Index>(i)) << faces[i][0], faces[i][1], faces[i][2];
  return mesh;
}

Mesh make_torus(double major_radius, double minor_radius, int major_segments, int minor_segments) {
  if (major_segments < 3 || minor_segments < 3) throw GeometryError("torus needs at least 3 segments per ring");
  Mesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(major_segments) * minor_segments, 3);
  mesh.faces.resize(2 * static_cast<Eigen::Index>(major_segments) * minor_segments, 3);
  const double two_pi = 2.0 * std::numbers::pi;
  auto id = [&](int i, int j) { return (i % major_segments) * minor_segments + (j % minor_segments); };
  for (int i = 0; i < major_segments; ++i) {
    const double u = two_pi * i / major_segments;
    for (int j = 0; j < minor_segments; ++j) {
      const double v = two_pi * j / minor_segments;
      const double ring = major_radius + minor_radius * std::cos(v);
      mesh.vertices.row(id(i, j)) << ring * std::cos(u), ring * std::sin(u), minor_radius * std::sin(v);
    }
  }
  Eigen::Index f = 0;
  for (int i = 0; i < major_segments; ++i) {
    for (int j = 0; j < minor_segments; ++j) {
      mesh.faces.row(f++) << id(i, j), id(i + 1, j), id(i + 1, j + 1);
      mesh.faces.row(f++) << id(i, j), id(i + 1, j + 1), id(i, j + 1);
    }
  }
  return mesh;
}

}  // namespace geodist
