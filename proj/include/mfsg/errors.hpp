#pragma once

#include <stdexcept>
#include <string>

namespace mfsg {

// Bad user input: dimensions, grids, scenario keys, missing callbacks.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A drift or generator produced NaN/Inf while integrating.
class NumericalBlowupError : public std::runtime_error {
 public:
  NumericalBlowupError(const std::string& what, int node)
      : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_(node) {}
  int node() const { return node_; }

 private:
  int node_;
};

// An iterative solver ran out of iterations without meeting its tolerance.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double last_factor, int stage = -1)
      : std::runtime_error(what), last_factor_(last_factor), stage_(stage) {}
  double last_contraction_factor() const { return last_factor_; }
  int stage() const { return stage_; }

 private:
  double last_factor_;
  int stage_;
};

// A requested simulation exceeds the configured work budget.
class BudgetError : public std::runtime_error {
 public:
  BudgetError(const std::string& what, double estimated, double budget)
      : std::runtime_error(what), estimated_(estimated), budget_(budget) {}
  double estimated_cost() const { return estimated_; }
  double budget() const { return budget_; }

 private:
  double estimated_;
  double budget_;
};

// A validation oracle left its domain of validity (e.g. Riccati blowup).
class OracleDomainError : public std::runtime_error {
 public:
  explicit OracleDomainError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mfsg
