#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stoodx {

enum class Errc {
  ShapeMismatch,
  ZeroRow,
  MalformedHeader,
  UnknownLabel,
  MissingField,
  DimMismatch,
  DuplicateSampleId,
  EmptyScope,
  ZeroVector,
  LengthMismatch,
  EmptyTrainSplit,
  UnknownClass,
  DegeneratePool,
  TooLarge,
  SingularCovariance,
  ConfigMismatch,
  InvalidArgument,
  IoError,
  NotFound,
  Conflict,
  BindError,
  StoreWriteError,
};

std::string_view errc_name(Errc code);

/// Error raised by every module. `module()` names the origin ("featurestore",
/// "knn", ...) so the CLI can report where a data error came from.
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string module, const std::string& message)
      : std::runtime_error(message), code_(code), module_(std::move(module)) {}

  Errc code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  Errc code_;
  std::string module_;
};

// Warnings go through a process-wide sink (stderr by default). Tests swap the
// sink to count clamp and drop notices.
using WarningSink = std::function<void(std::string_view module, std::string_view message)>;

void warn(std::string_view module, std::string_view message);
WarningSink set_warning_sink(WarningSink sink);

class ScopedWarningCapture {
 public:
  ScopedWarningCapture();
  ~ScopedWarningCapture();
  ScopedWarningCapture(const ScopedWarningCapture&) = delete;
  ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

  std::size_t count() const;
  bool contains(std::string_view needle) const;

 private:
  struct Impl;
  Impl* impl_;
  WarningSink previous_;
};

}  // namespace stoodx
