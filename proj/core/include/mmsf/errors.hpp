#pragma once

#include <stdexcept>
#include <string>

namespace mmsf {

// Base for all library errors. Subtypes distinguish failure classes so the
// CLI can emit distinct diagnostics.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape: " + msg) {}
};

struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& msg)
      : Error("degenerate input: " + msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

// Bag file failure classes kept distinct per format contract.
struct BadMagicError : IoError {
  explicit BadMagicError(const std::string& msg) : IoError("bad magic: " + msg) {}
};

struct TruncatedFileError : IoError {
  explicit TruncatedFileError(const std::string& msg)
      : IoError("truncated file: " + msg) {}
};

struct VersionMismatchError : IoError {
  explicit VersionMismatchError(const std::string& msg)
      : IoError("version mismatch: " + msg) {}
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& msg) : Error("schema: " + msg) {}
};

struct DataError : Error {
  explicit DataError(const std::string& msg) : Error("data: " + msg) {}
};

}  // namespace mmsf
