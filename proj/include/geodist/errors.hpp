#pragma once

#include <stdexcept>
#include <string>

namespace geodist {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file contents (OBJ, PLY, XYZ, checkpoint).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// File system failures: missing files, failed writes.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid or degenerate geometry.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Incompatible tensor or matrix shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or unknown configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's domain (e.g. a nonpositive noise level).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace geodist
