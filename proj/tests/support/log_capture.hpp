#pragma once

#include <string>
#include <vector>

#include "ffcnn/error.hpp"

namespace ffcnn::testing {

/// Collects log lines for the lifetime of the object, restoring the previous
/// sink afterwards.
class LogCapture {
 public:
  LogCapture()
      : previous_(log::set_sink([this](log::Level level, const std::string& msg) {
          (level == log::Level::warn ? warnings : infos).push_back(msg);
        })) {}
  ~LogCapture() { log::set_sink(std::move(previous_)); }
  LogCapture(const LogCapture&) = delete;
  LogCapture& operator=(const LogCapture&) = delete;

  std::vector<std::string> warnings;
  std::vector<std::string> infos;

 private:
  log::Sink previous_;
};

}  // namespace ffcnn::testing
