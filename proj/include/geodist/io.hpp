#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "geodist/geometry.hpp"

namespace geodist {

struct LoadedMesh {
  Mesh mesh;
  /// Zero-area or repeated-index triangles removed during loading.
  long dropped_faces = 0;
};

/// Wavefront OBJ: `v x y z [r g b]` and `f` records (1-based or negative indices,
/// `i/t/n` forms accepted). Polygons are fan-triangulated; other records are ignored.
LoadedMesh parse_obj(std::istream& in);
LoadedMesh load_mesh(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const Mesh& mesh);

/// Extra per-point float32 property written after the coordinate columns.
struct PointProperty {
  std::string name;
  Eigen::VectorXd values;
};

/// Binary little-endian PLY with float32 x,y,z[,red,green,blue] plus `extra` properties.
void write_ply(const std::filesystem::path& path, const PointSet& points,
               const std::vector<std::string>& comments = {},
               const std::vector<PointProperty>& extra = {});

/// Reads the vertex element of a binary little-endian or ASCII PLY. Returns N×3, or
/// N×6 when red/green/blue are present (uchar colors scaled to [0,1]).
PointSet read_ply(const std::filesystem::path& path);

/// Whitespace-separated rows; lines starting with '#' are comments.
void write_xyz(const std::filesystem::path& path, const PointSet& points,
               const std::vector<std::string>& comments = {});
PointSet read_xyz(const std::filesystem::path& path);

/// Dispatches on extension: .ply, otherwise plain XYZ text.
void write_points(const std::filesystem::path& path, const PointSet& points,
                  const std::vector<std::string>& comments = {});
PointSet read_points(const std::filesystem::path& path);

}  // namespace geodist
