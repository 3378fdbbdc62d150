#include "pdeco/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

namespace pdeco::logging {

namespace {

std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::stderr_color_mt("pdeco");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    switch (level_from_env()) {
      case Level::error: l->set_level(spdlog::level::err); break;
      case Level::info: l->set_level(spdlog::level::info); break;
      case Level::debug: l->set_level(spdlog::level::debug); break;
    }
    return l;
  }();
  return instance;
}

}  // namespace

Level level_from_env() {
  const char* env = std::getenv("PDECO_LOG");
  if (!env) return Level::info;
  const std::string value(env);
  if (value == "error") return Level::error;
  if (value == "debug") return Level::debug;
  return Level::info;
}

void set_level(Level level) {
  switch (level) {
    case Level::error: logger()->set_level(spdlog::level::err); break;
    case Level::info: logger()->set_level(spdlog::level::info); break;
    case Level::debug: logger()->set_level(spdlog::level::debug); break;
  }
}

void error(std::string_view message) { logger()->error("{}", message); }
void info(std::string_view message) { logger()->info("{}", message); }
void debug(std::string_view message) { logger()->debug("{}", message); }

}  // namespace pdeco::logging
