#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lvprune {

// Base for every error raised by the library. The CLI maps these to exit
// code 2 (invalid input) unless a more specific handler applies.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

class NoTextError : public Error {
 public:
  NoTextError() : Error("decision modules require at least one text token") {}
};

class ScheduleInfeasibleError : public Error {
 public:
  using Error::Error;
};

class DegenerateLossError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : Error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace lvprune
