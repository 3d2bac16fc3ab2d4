#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace boxalign {

/// A point (or cuboid corner) at or behind the camera plane. Carries the
/// corner index when the failure came from projecting a box.
class BehindCameraError : public std::runtime_error {
 public:
  explicit BehindCameraError(double z, int corner_index = -1)
      : std::runtime_error(make_message(z, corner_index)),
        corner_index_(corner_index) {}

  int corner_index() const noexcept { return corner_index_; }

 private:
  static std::string make_message(double z, int corner_index) {
    std::string msg = "point behind camera (z = " + std::to_string(z) + ")";
    if (corner_index >= 0) {
      msg += ", corner " + std::to_string(corner_index);
    }
    return msg;
  }

  int corner_index_;
};

/// Malformed text input (label file, calibration file, CSV). Line is 1-based.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : std::runtime_error(message + " (line " + std::to_string(line) + ")"),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Inconsistent or incomplete configuration: missing loss term, bad task
/// graph, unknown config key, impossible scene ranges.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem-level failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace boxalign
