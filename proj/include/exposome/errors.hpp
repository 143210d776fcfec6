#pragma once

#include <stdexcept>
#include <string>

namespace exposome {

// Error taxonomy shared across modules. The CLI maps these onto exit codes:
// ConfigError -> 2, IoError/UpstreamError -> 3, DegenerateError -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem and local-data problems (missing files, malformed rows).
class IoError : public Error {
 public:
  using Error::Error;
};

// Remote-endpoint problems: transport failures after retries, HTTP error
// statuses, unusable payloads.
class UpstreamError : public Error {
 public:
  using Error::Error;
};

// Statistical degeneracy: rank-deficient designs, zero variance, too few
// groups.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

}  // namespace exposome
