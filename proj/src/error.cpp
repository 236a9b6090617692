#include "stoodx/error.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <mutex>

#include "stoodx/util.hpp"

namespace stoodx {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::ZeroRow: return "ZeroRow";
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::MissingField: return "MissingField";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::DuplicateSampleId: return "DuplicateSampleId";
    case Errc::EmptyScope: return "EmptyScope";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyTrainSplit: return "EmptyTrainSplit";
    case Errc::UnknownClass: return "UnknownClass";
    case Errc::DegeneratePool: return "DegeneratePool";
    case Errc::TooLarge: return "TooLarge";
    case Errc::SingularCovariance: return "SingularCovariance";
    case Errc::ConfigMismatch: return "ConfigMismatch";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
    case Errc::NotFound: return "NotFound";
    case Errc::Conflict: return "Conflict";
    case Errc::BindError: return "BindError";
    case Errc::StoreWriteError: return "StoreWriteError";
  }
  return "Unknown";
}

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningSink& sink_slot() {
  static WarningSink sink = [](std::string_view module, std::string_view message) {
    std::cerr << "warning [" << module << "]: " << message << '\n';
  };
  return sink;
}

}  // namespace

void warn(std::string_view module, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (sink_slot()) sink_slot()(module, message);
}

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(sink_mutex());
  std::swap(sink_slot(), sink);
  return sink;
}

struct ScopedWarningCapture::Impl {
  std::vector<std::string> messages;
};

ScopedWarningCapture::ScopedWarningCapture() : impl_(new Impl) {
  previous_ = set_warning_sink([impl = impl_](std::string_view module, std::string_view message) {
    impl->messages.push_back(std::string(module) + ": " + std::string(message));
  });
}

ScopedWarningCapture::~ScopedWarningCapture() {
  set_warning_sink(std::move(previous_));
  delete impl_;
}

std::size_t ScopedWarningCapture::count() const {
  std::lock_guard lock(sink_mutex());
  return impl_->messages.size();
}

bool ScopedWarningCapture::contains(std::string_view needle) const {
  std::lock_guard lock(sink_mutex());
  for (const auto& m : impl_->messages)
    if (m.find(needle) != std::string::npos) return true;
  return false;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

}  // namespace stoodx
