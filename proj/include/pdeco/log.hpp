#pragma once

#include <string_view>

namespace pdeco::logging {

enum class Level { error = 0, info = 1, debug = 2 };

/// Reads PDECO_LOG (error | info | debug); defaults to info.
Level level_from_env();
void set_level(Level level);

void error(std::string_view message);
void info(std::string_view message);
void debug(std::string_view message);

}  // namespace pdeco::logging
