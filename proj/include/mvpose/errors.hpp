#pragma once

#include <stdexcept>
#include <string>

namespace mvpose {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A 3D point lies at or behind a camera's optical centre.
class DegenerateDepth : public Error {
 public:
  using Error::Error;
};

// Two back-projected rays are too close to parallel for a stable midpoint.
class NearParallel : public Error {
 public:
  using Error::Error;
};

// Camera parameters violate the pinhole-model invariants.
class InvalidCamera : public Error {
 public:
  using Error::Error;
};

// Tensor shapes are incompatible with the requested operation.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// A graph node is missing the self-loop required by attention layers.
class MissingSelfLoop : public Error {
 public:
  using Error::Error;
};

// backward() invoked twice on the same graph without a reset.
class BackwardTwice : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries the line number (1-based, 0 if not
// line-oriented) and the path of the offending field.
class SchemaError : public Error {
 public:
  SchemaError(int line, std::string field, const std::string& what)
      : Error("schema error at line " + std::to_string(line) + ", field '" +
              field + "': " + what),
        line_(line),
        field_(std::move(field)) {}

  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

// Configuration value out of range or missing. Carries the field path.
class InvalidConfig : public Error {
 public:
  InvalidConfig(std::string field, const std::string& what)
      : Error("invalid config field '" + field + "': " + what),
        field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// A frame with no detections cannot be turned into a matching graph.
class EmptyFrame : public Error {
 public:
  using Error::Error;
};

// A person group with no views cannot be lifted.
class EmptyGroup : public Error {
 public:
  using Error::Error;
};

// Training loss became NaN or infinite.
class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

// Checkpoint architecture does not match the constructed network.
class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

// A prediction fed to average_precision lacks a confidence value.
class MissingConfidence : public Error {
 public:
  using Error::Error;
};

// MPJPE requested on an assignment with no matched pairs.
class NoMatches : public Error {
 public:
  using Error::Error;
};

}  // namespace mvpose
