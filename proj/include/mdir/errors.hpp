#pragma once

#include <stdexcept>
#include <string>

namespace mdir {

// Base class for all library errors; the CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// --- container / model loading ---
class MalformedHeader : public Error {
 public:
  using Error::Error;
};
class UnsupportedDtype : public Error {
 public:
  using Error::Error;
};
class MissingTensor : public Error {
 public:
  MissingTensor(const std::string& role, int layer, const std::string& key)
      : Error("missing tensor: role=" + role + " layer=" + std::to_string(layer) +
              " key=" + key),
        role_(role),
        layer_(layer) {}
  const std::string& role() const { return role_; }
  int layer() const { return layer_; }  // -1 for non-layer tensors

 private:
  std::string role_;
  int layer_;
};
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};
class NonFiniteValue : public Error {
 public:
  using Error::Error;
};
class LengthMismatch : public Error {
 public:
  using Error::Error;
};

// --- numerics ---
class IndexOutOfRange : public Error {
 public:
  using Error::Error;
};
class RowCountMismatch : public Error {
 public:
  using Error::Error;
};
class ConvergenceFailure : public Error {
 public:
  using Error::Error;
};
class NonSquare : public Error {
 public:
  using Error::Error;
};

// --- statistics ---
class InvalidDim : public Error {
 public:
  using Error::Error;
};
class InvalidThreshold : public Error {
 public:
  using Error::Error;
};

// --- detection pipeline ---
class DimMismatch : public Error {
 public:
  using Error::Error;
};
class InsufficientOverlap : public Error {
 public:
  using Error::Error;
};

// --- I/O ---
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdir
