#include "tpld/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <string>

namespace tpld::log {
namespace {

Level level_from_env() {
  const char* env = std::getenv("TPLD_LOG_LEVEL");
  if (!env) return Level::kWarn;
  const std::string v(env);
  if (v == "debug") return Level::kDebug;
  if (v == "info") return Level::kInfo;
  if (v == "error") return Level::kError;
  if (v == "off") return Level::kOff;
  return Level::kWarn;
}

std::atomic<Level>& threshold() {
  static std::atomic<Level> t{level_from_env()};
  return t;
}

}  // namespace

void set_level(Level l) { threshold().store(l); }
Level level() { return threshold().load(); }

void write(Level l, std::string_view message) {
  if (l < threshold().load()) return;
  static const char* names[] = {"debug", "info", "warn", "error"};
  std::cerr << "[tpld " << names[static_cast<int>(l)] << "] " << message << '\n';
}

}  // namespace tpld::log
