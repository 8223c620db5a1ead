#pragma once

#include <stdexcept>
#include <string>

namespace holobyte {

/// Broad failure classes. The CLI maps these onto exit codes.
enum class ErrorKind {
  InvalidArgument,
  InvalidDimension,
  Shape,
  Index,
  ZeroVector,
  DegenerateRow,
  NumericalFault,
  IncompleteGradient,
  ConfigMismatch,
  Checksum,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when a forward pass produces a non-finite value. `tensor_id` names the
/// offending tensor (e.g. "logits", "loss.latent").
class NumericalFault : public Error {
 public:
  NumericalFault(std::string tensor_id, const std::string& what)
      : Error(ErrorKind::NumericalFault, what), tensor_id_(std::move(tensor_id)) {}

  const std::string& tensor_id() const noexcept { return tensor_id_; }

 private:
  std::string tensor_id_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace holobyte
