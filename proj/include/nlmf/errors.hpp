#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace nlmf {

/// Malformed or out-of-contract input (bad file, unsorted grid, non-finite value).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the support of a density or formula.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Sampler or optimizer state violated one of its invariants.
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace log {

inline bool& quiet() {
  static bool q = false;
  return q;
}

inline void warn(const std::string& msg) {
  if (!quiet()) std::clog << "[nlmf] warning: " << msg << '\n';
}

}  // namespace log

}  // namespace nlmf
