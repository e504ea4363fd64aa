// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared by every module. Each class maps to one CLI exit
// code (see harness.hpp).

#pragma once

#include <stdexcept>
#include <string>

namespace ticketlab {

/// A caller broke a documented precondition (shape mismatch, k > n, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or inconsistent run configuration, unknown task ids, bad files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf appeared where finite values are required.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exhaustive enumeration would exceed the configured cap.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
[[noreturn]] inline void contract_fail(const std::string& what) {
  throw ContractViolation(what);
}
}  // namespace detail

#define TICKETLAB_REQUIRE(cond, msg)                      \
  do {                                                    \
    if (!(cond)) ::ticketlab::detail::contract_fail(msg); \
  } while (0)

}  // namespace ticketlab
