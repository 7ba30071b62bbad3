#pragma once

#include <stdexcept>
#include <string>

namespace sgone {

// Base error. Subclasses carry a stable category tag that the CLI prints
// as the stderr prefix ("error: <category>: <message>").
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
  virtual const char* category() const noexcept { return "internal"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "shape"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "data"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

class CheckpointError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "checkpoint"; }
};

class TapeError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "tape"; }
};

class TrainError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "train"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

}  // namespace sgone
