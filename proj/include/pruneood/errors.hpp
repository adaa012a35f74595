#pragma once

#include <stdexcept>
#include <string>

namespace pruneood {

// Violated precondition or API contract (bad argument combination, empty input, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// A Graph failed one of its structural invariants.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed dataset, checkpoint or config text.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric is undefined for the given input (e.g. AUC with a single class).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace pruneood
