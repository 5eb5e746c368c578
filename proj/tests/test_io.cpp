#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "geodist/errors.hpp"
#include "geodist/io.hpp"

using namespace geodist;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "geodist_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

PointSet ramp(Eigen::Index n, Eigen::Index d) {
  PointSet p(n, d);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = 0.25 * static_cast<double>(i) - 3.0;
  return p;
}

}  // namespace

TEST_CASE("OBJ with slashes, negative indices and comments") {
  std::istringstream in(
      "# header\n"
      "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\n"
      "f 1/1/1 2/1/1 3/1/1\n"
      "f -3//1 -1//1 -2//1\n"
      "o ignored\n");
  const Mesh m = parse_obj(in).mesh;
  REQUIRE(m.face_count() == 2);
  CHECK(m.faces.row(1) == Eigen::RowVector3i(0, 2, 1));
  CHECK_FALSE(m.has_colors());
}

TEST_CASE("OBJ vertex colors are kept only when every vertex has them") {
  std::istringstream with("v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nf 1 2 3\n");
  const Mesh m = parse_obj(with).mesh;
  REQUIRE(m.has_colors());
  CHECK(m.colors(1, 1) == 1.0);
  std::istringstream partial("v 0 0 0 1 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  CHECK_FALSE(parse_obj(partial).mesh.has_colors());
}

TEST_CASE("OBJ errors carry line numbers") {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 9\n");
  try {
    parse_obj(in);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 5") != std::string::npos);
  }
  std::istringstream empty("# nothing\n");
  CHECK_THROWS_AS(parse_obj(empty), ParseError);
  std::istringstream garbage("v 0 zero 0\n");
  CHECK_THROWS_AS(parse_obj(garbage), ParseError);
}

TEST_CASE("loading a missing mesh names the path") {
  try {
    load_mesh("/nonexistent/shape.obj");
    FAIL("expected an IO error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/shape.obj") != std::string::npos);
  }
}

TEST_CASE("OBJ write and reload") {
  Mesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, 0, 1.5, 0, 0, 1.5, 2.25, 0.125, 0, 2.25, -0.5;
  m.faces.resize(2, 3);
  m.faces << 0, 1, 2, 0, 2, 3;
  const fs::path path = scratch("roundtrip.obj");
  write_obj(path, m);
  const Mesh back = load_mesh(path).mesh;
  CHECK(back.faces == m.faces);
  CHECK((back.vertices - m.vertices).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("binary PLY round trip at float32 precision") {
  const PointSet p = ramp(100, 3);
  const fs::path path = scratch("points.ply");
  write_ply(path, p, {"made by a test"});
  const std::string bytes = slurp(path);
  CHECK(bytes.rfind("ply\nformat binary_little_endian 1.0\n", 0) == 0);
  CHECK(bytes.find("comment made by a test\n") != std::string::npos);
  CHECK(bytes.find("element vertex 100\n") != std::string::npos);
  const PointSet back = read_ply(path);
  REQUIRE(back.rows() == 100);
  REQUIRE(back.cols() == 3);
  CHECK((back - p.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("PLY with colors and an extra property") {
  PointSet p(3, 6);
  p << 0, 0, 0, 1, 0, 0, 1, 1, 1, 0, 1, 0, 2, 2, 2, 0, 0, 1;
  Eigen::VectorXd err(3);
  err << 0.5, 0.25, 0.125;
  const fs::path path = scratch("colored.ply");
  write_ply(path, p, {}, {{"error", err}});
  const std::string bytes = slurp(path);
  CHECK(bytes.find("property float red\n") != std::string::npos);
  CHECK(bytes.find("property float error\n") != std::string::npos);
  const PointSet back = read_ply(path);
  REQUIRE(back.cols() == 6);
  CHECK((back - p).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("empty point set gives a header-only PLY") {
  const fs::path path = scratch("empty.ply");
  write_ply(path, PointSet(0, 3));
  const std::string bytes = slurp(path);
  CHECK(bytes.size() >= 10);
  CHECK(bytes.substr(bytes.size() - 11) == "end_header\n");
  CHECK(read_ply(path).rows() == 0);
}

TEST_CASE("ASCII PLY is readable") {
  const fs::path path = scratch("ascii.ply");
  {
    std::ofstream out(path);
    out << "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
           "property float nx\nend_header\n1 2 3 9\n4 5 6 9\n";
  }
  const PointSet p = read_ply(path);
  REQUIRE(p.rows() == 2);
  CHECK(p(1, 2) == 6.0);
}

TEST_CASE("malformed PLY is a parse error") {
  const fs::path path = scratch("bad.ply");
  {
    std::ofstream out(path, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 10\nproperty float x\nproperty float y\n"
           "property float z\nend_header\n1234";
  }
  CHECK_THROWS_AS(read_ply(path), ParseError);
}

TEST_CASE("XYZ round trip and extension dispatch") {
  const PointSet p = ramp(7, 3);
  const fs::path path = scratch("points.xyz");
  write_points(path, p, {"provenance line"});
  CHECK(slurp(path).rfind("# provenance line\n", 0) == 0);
  const PointSet back = read_points(path);
  CHECK((back - p).cwiseAbs().maxCoeff() < 1e-12);
  const fs::path ply = scratch("dispatch.ply");
  write_points(ply, p);
  CHECK(slurp(ply).rfind("ply\n", 0) == 0);
}
