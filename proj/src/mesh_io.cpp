#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "geodist/io.hpp"

namespace geodist {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

double parse_real(std::string_view token, long line_no) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + std::string(token) + "'");
  return value;
}

long parse_index(std::string_view token, long line_no, long vertex_count) {
  const auto slash = token.find('/');
  const std::string_view head = token.substr(0, slash);
  long value = 0;
  const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), value);
  if (ec != std::errc() || ptr != head.data() + head.size() || value == 0)
    throw ParseError("line " + std::to_string(line_no) + ": bad face index '" + std::string(token) + "'");
  const long index = value > 0 ? value - 1 : vertex_count + value;
  if (index < 0 || index >= vertex_count)
    throw ParseError("line " + std::to_string(line_no) + ": face index " + std::to_string(value) +
                     " out of range (" + std::to_string(vertex_count) + " vertices)");
  return index;
}

}  // namespace

LoadedMesh parse_obj(std::istream& in) {
  std::vector<double> positions;
  std::vector<double> colors;
  long colored = 0;
  std::vector<int> faces;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    if (tokens[0] == "v") {
      if (tokens.size() < 4)
        throw ParseError("line " + std::to_string(line_no) + ": vertex needs 3 coordinates");
      for (int k = 1; k <= 3; ++k) positions.push_back(parse_real(tokens[static_cast<std::size_t>(k)], line_no));
      if (tokens.size() >= 7) {
        for (int k = 4; k <= 6; ++k) colors.push_back(parse_real(tokens[static_cast<std::size_t>(k)], line_no));
        ++colored;
      } else {
        colors.insert(colors.end(), {0.0, 0.0, 0.0});
      }
    } else if (tokens[0] == "f") {
      if (tokens.size() < 4)
        throw ParseError("line " + std::to_string(line_no) + ": face needs at least 3 vertices");
      const long nv = static_cast<long>(positions.size() / 3);
      std::vector<int> polygon;
      for (std::size_t k = 1; k < tokens.size(); ++k)
        polygon.push_back(static_cast<int>(parse_index(tokens[k], line_no, nv)));
      for (std::size_t k = 1; k + 1 < polygon.size(); ++k)
        faces.insert(faces.end(), {polygon[0], polygon[k], polygon[k + 1]});
    }
  }
  if (positions.empty() || faces.empty()) throw ParseError("empty mesh: no vertices or faces");

  LoadedMesh out;
  const auto nv = static_cast<Eigen::Index>(positions.size() / 3);
  out.mesh.vertices = Eigen::Map<const Vertices>(positions.data(), nv, 3);
  out.mesh.faces = Eigen::Map<const Faces>(faces.data(), static_cast<Eigen::Index>(faces.size() / 3), 3);
  // Colors only when every vertex carries them.
  if (colored == nv) out.mesh.colors = Eigen::Map<const Vertices>(colors.data(), nv, 3);
  out.dropped_faces = drop_degenerate_faces(out.mesh);
  if (out.mesh.face_count() == 0) throw ParseError("empty mesh: every face is degenerate");
  return out;
}

LoadedMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh '" + path.string() + "'");
  try {
    return parse_obj(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) {
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2);
    if (mesh.has_colors()) out << ' ' << mesh.colors(i, 0) << ' ' << mesh.colors(i, 1) << ' ' << mesh.colors(i, 2);
    out << '\n';
  }
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f)
    out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' ' << mesh.faces(f, 2) + 1 << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace geodist
