#pragma once

#include <stdexcept>
#include <string>

namespace ccm {

// Base of every error thrown by the library. Callers that only care about
// "something in ccm failed" catch this; the subclasses carry the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class SimulationDiverged : public Error {
 public:
  SimulationDiverged(const std::string& what, long step)
      : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class CflViolation : public Error {
 public:
  using Error::Error;
};

class PositivityError : public Error {
 public:
  using Error::Error;
};

class NonFiniteActivation : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, long step)
      : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class SchemaMismatch : public Error {
 public:
  using Error::Error;
};

class LineageMismatch : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpoint : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

class DigestMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace ccm
