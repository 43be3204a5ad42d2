#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bpct {

// Base for every library error. CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument or configuration value.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrc {
  BadMagic,
  Truncated,
  DimOverflow,
  BadViewCode,
  TrailingBytes,
  BadManifest,
};

inline std::string_view to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::BadMagic: return "bad magic";
    case FormatErrc::Truncated: return "truncated payload";
    case FormatErrc::DimOverflow: return "dimension overflow";
    case FormatErrc::BadViewCode: return "bad view code";
    case FormatErrc::TrailingBytes: return "trailing bytes";
    case FormatErrc::BadManifest: return "bad manifest";
  }
  return "unknown format error";
}

class FormatError : public Error {
 public:
  FormatError(FormatErrc code, const std::string& where)
      : Error(where + ": " + std::string(to_string(code))), code_(code) {}

  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

// Raised by the training loop when a loss goes NaN/Inf.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace bpct
