#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"

#include "geodist/errors.hpp"
#include "geodist/geometry.hpp"
#include "geodist/io.hpp"

using namespace geodist;

namespace {

Mesh single_triangle() {
  Mesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;
  return m;
}

double global_mean(const PointSet& p) { return p.sum() / static_cast<double>(p.size()); }

double global_std(const PointSet& p) {
  const double mu = global_mean(p);
  return std::sqrt((p.array() - mu).square().sum() / static_cast<double>(p.size()));
}

// Closest point by exhaustive search over a barycentric grid that includes the edges.
double sampled_min_dist_sq(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                           const Eigen::Vector3d& c, int divisions) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= divisions; ++i) {
    for (int j = 0; i + j <= divisions; ++j) {
      const double u = static_cast<double>(i) / divisions;
      const double v = static_cast<double>(j) / divisions;
      best = std::min(best, (a + u * (b - a) + v * (c - a) - p).squaredNorm());
    }
  }
  return best;
}

}  // namespace

TEST_CASE("minimal OBJ parses to one triangle") {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  const LoadedMesh loaded = parse_obj(in);
  CHECK(loaded.mesh.vertex_count() == 3);
  CHECK(loaded.mesh.face_count() == 1);
}

TEST_CASE("OBJ face index out of range is rejected") {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n");
  CHECK_THROWS_AS(parse_obj(in), ParseError);
}

TEST_CASE("OBJ quad is fan triangulated") {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  const Mesh m = parse_obj(in).mesh;
  REQUIRE(m.face_count() == 2);
  CHECK(m.faces.row(0) == Eigen::RowVector3i(0, 1, 2));
  CHECK(m.faces.row(1) == Eigen::RowVector3i(0, 2, 3));
}

TEST_CASE("single triangle samples are centered on the centroid") {
  const PointSet p = sample_surface(single_triangle(), 100000, 11);
  const Eigen::RowVector3d centroid = p.colwise().mean();
  CHECK(std::abs(centroid(0) - 1.0 / 3.0) < 0.01);
  CHECK(std::abs(centroid(1) - 1.0 / 3.0) < 0.01);
  CHECK(std::abs(centroid(2)) < 1e-12);
  CHECK((p.col(0).array() + p.col(1).array()).maxCoeff() <= 1.0 + 1e-12);
}

TEST_CASE("sampling is area weighted") {
  Mesh m;
  m.vertices.resize(6, 3);
  // Area 1 near the origin, area 3 shifted along x.
  m.vertices << 0, 0, 0, 2, 0, 0, 0, 1, 0, 10, 0, 0, 13, 0, 0, 10, 2, 0;
  m.faces.resize(2, 3);
  m.faces << 0, 1, 2, 3, 4, 5;
  CHECK(face_areas(m)(0) == doctest::Approx(1.0));
  CHECK(face_areas(m)(1) == doctest::Approx(3.0));
  const PointSet p = sample_surface(m, 100000, 5);
  const double on_large = (p.col(0).array() >= 10.0).cast<double>().mean();
  CHECK(on_large >= 0.74);
  CHECK(on_large <= 0.76);
}

TEST_CASE("sampling is a pure function of the seed") {
  const Mesh m = make_icosphere(2);
  CHECK(sample_surface(m, 20000, 3) == sample_surface(m, 20000, 3));
  CHECK(sample_surface(m, 20000, 3) != sample_surface(m, 20000, 4));
}

TEST_CASE("degenerate faces receive no samples") {
  Mesh m = single_triangle();
  m.vertices.conservativeResize(6, 3);
  m.vertices.row(3) << 5, 5, 5;
  m.vertices.row(4) << 6, 6, 6;
  m.vertices.row(5) << 7, 7, 7;
  m.faces.conservativeResize(2, 3);
  m.faces.row(1) << 3, 4, 5;
  const PointSet p = sample_surface(m, 5000, 1);
  CHECK(p.col(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("normalization fixed point and translation") {
  // Sphere of radius sqrt(3) has per-entry variance 1 and zero mean.
  const Mesh m = make_icosphere(5, std::sqrt(3.0));
  const NormalizedMesh nm = normalize_mesh(m, 1000000, 2);
  CHECK(nm.transform.shift.norm() < 0.01);
  CHECK(std::abs(nm.transform.scale - 1.0) < 0.01);

  Mesh moved = m;
  moved.vertices.array() += 5.0;
  const NormalizedMesh nm2 = normalize_mesh(moved, 1000000, 2);
  CHECK(std::abs(nm2.transform.shift(0) - 5.0) < 0.01);
  CHECK(std::abs(nm2.transform.scale - 1.0) < 0.01);
}

TEST_CASE("normalized mesh resamples to zero mean and unit std") {
  Mesh m = make_torus(3.0, 0.7, 96, 48);
  m.vertices.col(1) *= 2.0;
  m.vertices.array() += 1.5;
  const NormalizedMesh nm = normalize_mesh(m, 1000000, 9);
  const PointSet p = sample_surface(nm.mesh, 1000000, 10);
  CHECK(std::abs(global_mean(p)) < 0.02);
  CHECK(std::abs(global_std(p) - 1.0) < 0.05);

  const PointSet back = nm.transform.from_normalized(nm.transform.to_normalized(p));
  CHECK((back - p).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("closest point above the interior is the projection") {
  const Eigen::Vector3d a(0, 0, 0), b(2, 0, 0), c(0, 2, 0);
  const ClosestPoint cp = point_triangle_closest({0.5, 0.5, 0.7}, a, b, c);
  CHECK((cp.point - Eigen::Vector3d(0.5, 0.5, 0)).norm() < 1e-15);
  CHECK(cp.dist_sq == doctest::Approx(0.49));
}

TEST_CASE("closest point beyond an edge lies on that edge") {
  const Eigen::Vector3d a(0, 0, 0), b(2, 0, 0), c(0, 2, 0);
  const ClosestPoint cp = point_triangle_closest({1.0, -1.0, 0.5}, a, b, c);
  CHECK((cp.point - Eigen::Vector3d(1, 0, 0)).norm() < 1e-15);
  CHECK(cp.dist_sq == doctest::Approx(1.25));
  const ClosestPoint hyp = point_triangle_closest({2.0, 2.0, 0.0}, a, b, c);
  CHECK((hyp.point - Eigen::Vector3d(1, 1, 0)).norm() < 1e-15);
}

TEST_CASE("closest point agrees with dense sampling") {
  std::mt19937_64 gen(42);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Vector3d a(n01(gen), n01(gen), n01(gen));
    const Eigen::Vector3d b(n01(gen), n01(gen), n01(gen));
    const Eigen::Vector3d c(n01(gen), n01(gen), n01(gen));
    const Eigen::Vector3d p = 1.5 * Eigen::Vector3d(n01(gen), n01(gen), n01(gen));
    const ClosestPoint cp = point_triangle_closest(p, a, b, c);
    const double sampled = sampled_min_dist_sq(p, a, b, c, 1413);  // ~10^6 grid points
    CHECK(cp.dist_sq <= sampled + 1e-12);
    CHECK(sampled - cp.dist_sq < 1e-4);
  }
}

TEST_CASE("closest point barycentrics stay inside the triangle") {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 2000; ++trial) {
    const Eigen::Vector3d a(n01(gen), n01(gen), n01(gen));
    Eigen::Vector3d b(n01(gen), n01(gen), n01(gen));
    Eigen::Vector3d c(n01(gen), n01(gen), n01(gen));
    if (trial % 10 == 0) c = a + 0.5 * (b - a);  // collinear
    if (trial % 17 == 0) b = a;                   // collapsed edge
    const Eigen::Vector3d p(2 * n01(gen), 2 * n01(gen), 2 * n01(gen));
    const ClosestPoint cp = point_triangle_closest(p, a, b, c);
    const Eigen::Vector3d& w = cp.barycentric;
    CHECK(w.minCoeff() >= -1e-9);
    CHECK(w.maxCoeff() <= 1.0 + 1e-9);
    CHECK(std::abs(w.sum() - 1.0) < 1e-9);
    CHECK((w(0) * a + w(1) * b + w(2) * c - cp.point).norm() < 1e-9);
    CHECK(std::abs((cp.point - p).squaredNorm() - cp.dist_sq) < 1e-9);
  }
}

TEST_CASE("point mesh distance examples") {
  const Mesh sphere = make_icosphere(4);
  PointSet q(2, 3);
  q.row(0) = sphere.vertices.row(17);
  q.row(1).setZero();
  const Eigen::VectorXd d = point_mesh_distance(q, sphere);
  CHECK(d(0) == 0.0);
  CHECK(std::abs(d(1) - 1.0) < 0.01);
}

TEST_CASE("BVH distance matches brute force over all faces") {
  const Mesh m = make_torus(1.0, 0.3, 40, 20);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n01;
  PointSet q(1000, 3);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = 1.2 * n01(gen);
  const Eigen::VectorXd fast = point_mesh_distance(q, m);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const Eigen::Vector3d p = q.row(i).transpose();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index f = 0; f < m.face_count(); ++f) {
      best = std::min(best, point_triangle_closest(p, m.vertices.row(m.faces(f, 0)).transpose(),
                                                   m.vertices.row(m.faces(f, 1)).transpose(),
                                                   m.vertices.row(m.faces(f, 2)).transpose())
                                .dist_sq);
    }
    CHECK(std::abs(fast(i) - std::sqrt(best)) < 1e-9);
  }
}

TEST_CASE("surface samples lie on the surface") {
  const Mesh m = make_torus(1.0, 0.4, 32, 16);
  const PointSet p = sample_surface(m, 5000, 8);
  CHECK(point_mesh_distance(p, m).maxCoeff() < 1e-9);
}

TEST_CASE("icosphere and torus sizes") {
  const Mesh s = make_icosphere(5);
  CHECK(s.face_count() == 20480);
  CHECK(std::abs(surface_area(s) - 4.0 * M_PI) / (4.0 * M_PI) < 0.01);
  const Mesh t = make_torus(2.0, 0.5, 64, 32);
  CHECK(t.face_count() == 2 * 64 * 32);
  CHECK(std::abs(surface_area(t) - 4.0 * M_PI * M_PI) / (4.0 * M_PI * M_PI) < 0.01);
}

TEST_CASE("invalid meshes are rejected") {
  Mesh m = single_triangle();
  m.faces(0, 2) = 7;
  CHECK_THROWS_AS(validate_mesh(m), GeometryError);
  CHECK_THROWS(sample_surface(single_triangle(), -1, 0));
}
