#pragma once
// Process-wide warning sink. Defaults to stderr; runs redirect it to events.log.

#include <functional>
#include <iostream>
#include <mutex>
#include <string>

namespace gauda {

using WarningSink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}
}  // namespace detail

/// Replaces the sink and returns the previous one.
inline WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(detail::log_mutex());
  auto old = std::move(detail::warning_sink());
  detail::warning_sink() = std::move(sink);
  return old;
}

inline void log_warning(const std::string& msg) {
  std::lock_guard lock(detail::log_mutex());
  if (detail::warning_sink()) detail::warning_sink()(msg);
}

}  // namespace gauda
