#pragma once

#include <stdexcept>
#include <string>

namespace nlm {

/// Failure raised by numerical kernels and model guards.
///
/// `kind()` is a stable machine-readable tag ("domain-exit", "no-return",
/// "indefinite-metric", ...). For domain exits `detail()` names the guard.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, std::string detail = {})
      : std::runtime_error(detail.empty() ? kind : kind + ": " + detail),
        kind_(std::move(kind)),
        detail_(std::move(detail)) {}

  const std::string& kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string kind_;
  std::string detail_;
};

/// Thrown from right-hand sides when a model guard is violated.
class DomainExit : public Error {
 public:
  explicit DomainExit(std::string guard) : Error("domain-exit", std::move(guard)) {}
  const std::string& guard() const noexcept { return detail(); }
};

}  // namespace nlm
