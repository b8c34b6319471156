#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vinedmp {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied an argument that violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DegenerateDemo : public Error {
 public:
  using Error::Error;
};

/// A component of (learned goal - learned start) is too small to rescale.
class DegenerateScaling : public Error {
 public:
  DegenerateScaling(std::size_t axis, double span)
      : Error("degenerate spatial scaling on axis " + std::to_string(axis) +
              " (learned span " + std::to_string(span) + ")"),
        axis_(axis) {}
  std::size_t axis() const noexcept { return axis_; }

 private:
  std::size_t axis_;
};

class NonFiniteState : public Error {
 public:
  using Error::Error;
};

class RayParallelToPlane : public Error {
 public:
  using Error::Error;
};

class PointBehindCamera : public Error {
 public:
  using Error::Error;
};

class DegenerateDirection : public Error {
 public:
  using Error::Error;
};

/// Raised by trajectory-wide operations; carries the index of the failing point.
template <class Base>
class AtIndex : public Base {
 public:
  AtIndex(std::size_t index, const std::string& what)
      : Base("point " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class ExhaustedAttempts : public Error {
 public:
  using Error::Error;
};

class OutOfBounds : public Error {
 public:
  OutOfBounds(std::size_t index, const std::string& what)
      : Error("trajectory point " + std::to_string(index) + " out of bounds: " + what),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class NoOccludingLeaf : public Error {
 public:
  using Error::Error;
};

/// The scripted demonstrator could not find a successful sweep.
class OracleFailed : public Error {
 public:
  using Error::Error;
};

class DegenerateHomography : public Error {
 public:
  using Error::Error;
};

class ImageTooSmall : public Error {
 public:
  using Error::Error;
};

class NonFiniteActivation : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace vinedmp
