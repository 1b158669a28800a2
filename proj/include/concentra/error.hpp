#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace concentra {

/// Failure categories; each maps onto one CLI exit code.
enum class ErrorKind { config, data, numeric, contract };

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::contract: return 2;
  }
  return 1;
}

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::contract: return "contract";
  }
  return "unknown";
}

/// Base exception. Carries the module that raised it, the region involved
/// (if any) and a short remediation hint for the CLI error report.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& message,
        std::string region_id = {}, std::string hint = {})
      : std::runtime_error(message),
        kind_(kind),
        module_(std::move(module)),
        region_id_(std::move(region_id)),
        hint_(std::move(hint)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }
  const std::string& region_id() const noexcept { return region_id_; }
  const std::string& hint() const noexcept { return hint_; }

 private:
  ErrorKind kind_;
  std::string module_;
  std::string region_id_;
  std::string hint_;
};

class ParseError : public Error {
 public:
  ParseError(std::string module, const std::string& message, std::string region_id = {})
      : Error(ErrorKind::data, std::move(module), message, std::move(region_id),
              "check the input file format") {}
};

class GeometryError : public Error {
 public:
  GeometryError(const std::string& message, std::string region_id = {})
      : Error(ErrorKind::data, "geo", message, std::move(region_id),
              "rings must be closed and have at least 4 vertices") {}
};

class ConflictError : public Error {
 public:
  ConflictError(std::string module, const std::string& message, std::string region_id = {})
      : Error(ErrorKind::data, std::move(module), message, std::move(region_id),
              "identifiers must be unique") {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message, std::string hint = {})
      : Error(ErrorKind::config, "cli", message, {}, std::move(hint)) {}
};

class ContractViolation : public Error {
 public:
  ContractViolation(std::string module, const std::string& message)
      : Error(ErrorKind::contract, std::move(module), message) {}
};

class NumericError : public Error {
 public:
  NumericError(std::string module, const std::string& message, std::string region_id = {},
               std::string hint = {})
      : Error(ErrorKind::numeric, std::move(module), message, std::move(region_id),
              std::move(hint)) {}
};

class DataConsistencyError : public Error {
 public:
  DataConsistencyError(std::string module, const std::string& message,
                       std::string region_id = {})
      : Error(ErrorKind::data, std::move(module), message, std::move(region_id)) {}
};

}  // namespace concentra
