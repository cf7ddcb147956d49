#pragma once

#include <stdexcept>
#include <string>

namespace emoformer {

// Base of all toolkit errors. `kind` drives the CLI exit code:
// validation problems exit 1, runtime faults exit 2.
class Error : public std::runtime_error {
 public:
  enum class Kind { validation, runtime };

  Error(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Bad arguments, configs, manifests, shapes: caller mistakes.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(Kind::validation, what) {}
};

// Malformed input files. Carries the byte offset where parsing failed when
// one is known (0 means the problem is structural, not positional).
class FormatError : public ValidationError {
 public:
  explicit FormatError(const std::string& what)
      : ValidationError(what), byte_offset_(0) {}

  FormatError(const std::string& what, size_t byte_offset)
      : ValidationError(what + " (at byte offset " +
                        std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  size_t byte_offset() const { return byte_offset_; }

 private:
  size_t byte_offset_;
};

class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& what) : ValidationError(what) {}
};

// I/O failures and numeric faults encountered mid-run.
class RuntimeFault : public Error {
 public:
  explicit RuntimeFault(const std::string& what)
      : Error(Kind::runtime, what) {}
};

// NaN/Inf detected in a computation.
class NumericFault : public RuntimeFault {
 public:
  explicit NumericFault(const std::string& what) : RuntimeFault(what) {}
};

class IoError : public RuntimeFault {
 public:
  explicit IoError(const std::string& what) : RuntimeFault(what) {}
};

}  // namespace emoformer
