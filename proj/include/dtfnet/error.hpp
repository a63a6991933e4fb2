#pragma once

#include <stdexcept>
#include <string>

namespace dtfnet {

// Base class for every error this library throws on contract violations.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};
struct InvalidPermutation : Error {
  using Error::Error;
};
struct EmptySignal : Error {
  using Error::Error;
};
struct SpectrumSizeMismatch : Error {
  using Error::Error;
};
struct NonScalarLoss : Error {
  using Error::Error;
};
struct DetachedNode : Error {
  using Error::Error;
};
struct NonFiniteValue : Error {
  using Error::Error;
};
struct LabelOutOfRange : Error {
  using Error::Error;
};
struct EvenKernel : Error {
  using Error::Error;
};
struct GroupMismatch : Error {
  using Error::Error;
};
struct InvalidConfig : Error {
  using Error::Error;
};
struct InvalidClass : Error {
  using Error::Error;
};
struct CheckpointCorrupt : Error {
  using Error::Error;
};
struct VariantMismatch : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct OutOfRange : Error {
  using Error::Error;
};

}  // namespace dtfnet
