#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ase {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Bad user-supplied configuration (ranges, schema, incompatible pieces).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Unknown entry in a named catalog (exit schedules).
class CatalogError : public std::runtime_error {
 public:
  explicit CatalogError(const std::string& what) : std::runtime_error(what) {}
};

// Exit schedule incompatible with the architecture it is bound to.
class ScheduleBindingError : public ConfigError {
 public:
  explicit ScheduleBindingError(const std::string& what)
      : ConfigError(what) {}
};

// Training diverged or could not proceed.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

// File-level failures (missing inputs, corrupt checkpoints).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ase
