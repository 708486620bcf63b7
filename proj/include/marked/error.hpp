#pragma once

#include <stdexcept>
#include <string>

namespace marked {

/// Failure classes. The CLI maps each to a distinct exit code.
enum class ErrorClass { config, network, analysis };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

/// Bad input files, schema violations, invalid configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorClass::config, what) {}
};

/// Transport failures and authentication failures of the generation client.
class NetworkError : public Error {
 public:
  explicit NetworkError(const std::string& what) : Error(ErrorClass::network, what) {}
};

/// Statistics that are undefined on the given data (empty partitions etc).
class AnalysisError : public Error {
 public:
  explicit AnalysisError(const std::string& what) : Error(ErrorClass::analysis, what) {}
};

}  // namespace marked
