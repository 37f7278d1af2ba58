#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvh {

/// Violated precondition of an operation (bad input, wrong grid mode, mask violation).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid scenario or rule configuration, reported with the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative solver hit its cap. Carries the residual history for diagnostics.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : std::runtime_error(what + format_tail(history)), history_(std::move(history)) {}

  const std::vector<double>& history() const noexcept { return history_; }

 private:
  static std::string format_tail(const std::vector<double>& h) {
    std::ostringstream os;
    os << " (" << h.size() << " iterations";
    if (!h.empty()) {
      os << ", residuals:";
      const std::size_t first = h.size() > 6 ? h.size() - 6 : 0;
      if (first > 0) os << " ...";
      for (std::size_t i = first; i < h.size(); ++i) os << ' ' << h[i];
    }
    os << ')';
    return os.str();
  }

  std::vector<double> history_;
};

}  // namespace cvh
