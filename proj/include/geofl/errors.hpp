#pragma once

#include <stdexcept>
#include <string>

namespace geofl {

// Invalid configuration or arguments. The CLI maps this to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or unreadable input files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while a federation is running; carries the round it happened in.
class RoundError : public std::runtime_error {
 public:
  RoundError(std::size_t round, const std::string& what)
      : std::runtime_error("round " + std::to_string(round) + ": " + what), round_(round) {}

  [[nodiscard]] std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

}  // namespace geofl
