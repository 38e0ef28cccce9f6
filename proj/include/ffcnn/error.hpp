#pragma once

#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace ffcnn {

// Error categories map one-to-one onto the CLI exit codes.
enum class ErrorKind { config, data, numeric };

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numeric: return 4;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename... Args>
void require(bool cond, ErrorKind kind, Args&&... args) {
  if (!cond) throw Error(kind, detail::concat(std::forward<Args>(args)...));
}

namespace log {

enum class Level { debug, info, warn };

using Sink = std::function<void(Level, const std::string&)>;

inline Sink& sink() {
  static Sink s = [](Level level, const std::string& msg) {
    if (level == Level::debug) return;
    std::cerr << (level == Level::warn ? "[warn] " : "[info] ") << msg << '\n';
  };
  return s;
}

// Returns the previous sink so callers can restore it.
inline Sink set_sink(Sink s) { return std::exchange(sink(), std::move(s)); }

template <typename... Args>
void info(Args&&... args) { sink()(Level::info, detail::concat(std::forward<Args>(args)...)); }

template <typename... Args>
void warn(Args&&... args) { sink()(Level::warn, detail::concat(std::forward<Args>(args)...)); }

template <typename... Args>
void debug(Args&&... args) { sink()(Level::debug, detail::concat(std::forward<Args>(args)...)); }

}  // namespace log
}  // namespace ffcnn
