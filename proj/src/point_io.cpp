#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "geodist/io.hpp"

namespace geodist {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
};

int type_size(const std::string& type) {
  static const std::map<std::string, int> sizes = {
      {"char", 1},   {"uchar", 1},  {"int8", 1},   {"uint8", 1},  {"short", 2},   {"ushort", 2},
      {"int16", 2},  {"uint16", 2}, {"int", 4},    {"uint", 4},   {"int32", 4},   {"uint32", 4},
      {"float", 4},  {"float32", 4}, {"double", 8}, {"float64", 8}};
  const auto it = sizes.find(type);
  if (it == sizes.end()) throw ParseError("unsupported PLY property type '" + type + "'");
  return it->second;
}

double decode(const char* bytes, const std::string& type) {
  auto load = [bytes]<typename T>(T) {
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return static_cast<double>(value);
  };
  if (type == "char" || type == "int8") return load(std::int8_t{});
  if (type == "uchar" || type == "uint8") return load(std::uint8_t{});
  if (type == "short" || type == "int16") return load(std::int16_t{});
  if (type == "ushort" || type == "uint16") return load(std::uint16_t{});
  if (type == "int" || type == "int32") return load(std::int32_t{});
  if (type == "uint" || type == "uint32") return load(std::uint32_t{});
  if (type == "float" || type == "float32") return load(float{});
  return load(double{});
}

bool is_integer_type(const std::string& type) {
  return type != "float" && type != "float32" && type != "double" && type != "float64";
}

std::ofstream open_for_write(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

void write_ply(const std::filesystem::path& path, const PointSet& points,
               const std::vector<std::string>& comments, const std::vector<PointProperty>& extra) {
  if (points.cols() != 3 && points.cols() != 6 && !(points.rows() == 0))
    throw ShapeError("PLY export expects 3 or 6 columns");
  for (const auto& prop : extra)
    if (prop.values.size() != points.rows()) throw ShapeError("property '" + prop.name + "' length mismatch");

  auto out = open_for_write(path, std::ios::out | std::ios::binary);
  out << "ply\nformat binary_little_endian 1.0\n";
  for (const auto& c : comments) out << "comment " << c << '\n';
  out << "element vertex " << points.rows() << '\n';
  out << "property float x\nproperty float y\nproperty float z\n";
  const bool color = points.cols() == 6;
  if (color) out << "property float red\nproperty float green\nproperty float blue\n";
  for (const auto& prop : extra) out << "property float " << prop.name << '\n';
  out << "end_header\n";

  const Eigen::Index width = points.cols() + static_cast<Eigen::Index>(extra.size());
  std::vector<float> row(static_cast<std::size_t>(width));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    Eigen::Index k = 0;
    for (; k < points.cols(); ++k) row[static_cast<std::size_t>(k)] = static_cast<float>(points(i, k));
    for (const auto& prop : extra) row[static_cast<std::size_t>(k++)] = static_cast<float>(prop.values(i));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

PointSet read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "ply" && line != "ply\r") throw ParseError(path.string() + ": missing 'ply' magic");

  std::string format;
  long count = -1;
  bool in_vertex = false;
  bool seen_element = false;
  std::vector<PlyProperty> props;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "format") {
      ls >> format;
    } else if (keyword == "element") {
      std::string name;
      long n = 0;
      ls >> name >> n;
      if (name == "vertex") {
        if (seen_element) throw ParseError(path.string() + ": vertex must be the first PLY element");
        count = n;
        in_vertex = true;
      } else {
        in_vertex = false;
      }
      seen_element = true;
    } else if (keyword == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw ParseError(path.string() + ": list properties on vertices are unsupported");
      ls >> name;
      type_size(type);
      props.push_back({name, type});
    } else if (keyword == "end_header") {
      break;
    }
  }
  if (count < 0) throw ParseError(path.string() + ": no vertex element");

  std::map<std::string, std::size_t> column;
  for (std::size_t k = 0; k < props.size(); ++k) column[props[k].name] = k;
  for (const char* name : {"x", "y", "z"})
    if (!column.count(name)) throw ParseError(path.string() + ": missing property " + name);
  const bool color = column.count("red") && column.count("green") && column.count("blue");
  const std::vector<std::string> wanted =
      color ? std::vector<std::string>{"x", "y", "z", "red", "green", "blue"} : std::vector<std::string>{"x", "y", "z"};

  PointSet out(count, static_cast<Eigen::Index>(wanted.size()));
  std::vector<double> values(props.size());
  if (format == "binary_little_endian") {
    std::vector<std::size_t> offsets(props.size());
    std::size_t stride = 0;
    for (std::size_t k = 0; k < props.size(); ++k) {
      offsets[k] = stride;
      stride += static_cast<std::size_t>(type_size(props[k].type));
    }
    std::vector<char> buffer(stride);
    for (long i = 0; i < count; ++i) {
      if (!in.read(buffer.data(), static_cast<std::streamsize>(stride)))
        throw ParseError(path.string() + ": truncated vertex data");
      for (std::size_t k = 0; k < props.size(); ++k) values[k] = decode(buffer.data() + offsets[k], props[k].type);
      for (std::size_t c = 0; c < wanted.size(); ++c) out(i, static_cast<Eigen::Index>(c)) = values[column[wanted[c]]];
    }
  } else if (format == "ascii") {
    for (long i = 0; i < count; ++i) {
      for (std::size_t k = 0; k < props.size(); ++k)
        if (!(in >> values[k])) throw ParseError(path.string() + ": truncated vertex data");
      for (std::size_t c = 0; c < wanted.size(); ++c) out(i, static_cast<Eigen::Index>(c)) = values[column[wanted[c]]];
    }
  } else {
    throw ParseError(path.string() + ": unsupported PLY format '" + format + "'");
  }
  if (color && is_integer_type(props[column["red"]].type)) out.rightCols<3>() /= 255.0;
  return out;
}

void write_xyz(const std::filesystem::path& path, const PointSet& points, const std::vector<std::string>& comments) {
  auto out = open_for_write(path);
  for (const auto& c : comments) out << "# " << c << '\n';
  out << std::setprecision(9);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index k = 0; k < points.cols(); ++k) out << (k ? " " : "") << points(i, k);
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

PointSet read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<double> values;
  Eigen::Index width = -1;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Eigen::Index n = 0;
    double v = 0.0;
    while (ls >> v) {
      values.push_back(v);
      ++n;
    }
    if (!ls.eof()) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number");
    if (n == 0) continue;
    if (width < 0) width = n;
    if (n != width || (n != 3 && n != 6))
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 3 or 6 values per row");
  }
  if (width < 0) return PointSet(0, 3);
  return Eigen::Map<const PointSet>(values.data(), static_cast<Eigen::Index>(values.size()) / width, width);
}

void write_points(const std::filesystem::path& path, const PointSet& points, const std::vector<std::string>& comments) {
  if (path.extension() == ".ply")
    write_ply(path, points, comments);
  else
    write_xyz(path, points, comments);
}

PointSet read_points(const std::filesystem::path& path) {
  return path.extension() == ".ply" ? read_ply(path) : read_xyz(path);
}

}  // namespace geodist
