#pragma once

#include <stdexcept>
#include <string>

namespace raudit {

/// Faults in user-supplied data or configuration (bad files, broken invariants).
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A registered design that cannot be bound to the supplied units.
class DesignError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Requests the engine cannot honour for the given inputs (odd B with antithetic, etc.).
class EngineError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace raudit
