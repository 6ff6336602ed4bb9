#pragma once

#include <stdexcept>
#include <string>

namespace wce {

enum class ErrorKind {
  config,
  shape,
  parameter,
  domain,
  structural,
  capacity,
  numerical,
  rank_deficient,
  conditioning,
  degenerate_ensemble,
  empty_data,
  undefined_metric,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "configuration error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::domain: return "domain error";
    case ErrorKind::structural: return "structural error";
    case ErrorKind::capacity: return "capacity error";
    case ErrorKind::numerical: return "numerical error";
    case ErrorKind::rank_deficient: return "rank-deficiency error";
    case ErrorKind::conditioning: return "conditioning error";
    case ErrorKind::degenerate_ensemble: return "degenerate-ensemble error";
    case ErrorKind::empty_data: return "empty-data error";
    case ErrorKind::undefined_metric: return "undefined-metric error";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

// Single exception type carrying a machine-readable kind; callers that care
// about the category (the CLI exit code, tests) switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit status for an error category (0 is reserved for success).
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::capacity:
      return 4;
    case ErrorKind::numerical:
    case ErrorKind::rank_deficient:
    case ErrorKind::conditioning:
    case ErrorKind::degenerate_ensemble:
    case ErrorKind::undefined_metric:
      return 3;
    case ErrorKind::io:
      return 1;
    default:
      return 2;
  }
}

}  // namespace wce
