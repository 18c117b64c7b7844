#pragma once

#include <cstdio>
#include <utility>

#include <fmt/format.h>

namespace pestnet::log {

/// Set by the CLI's --quiet flag.
inline bool& quiet() {
  static bool q = false;
  return q;
}

template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
  if (quiet()) return;
  std::fputs(("[info] " + fmt::format(f, std::forward<Args>(args)...) + "\n").c_str(), stderr);
}

template <typename... Args>
void warn(fmt::format_string<Args...> f, Args&&... args) {
  std::fputs(("[warn] " + fmt::format(f, std::forward<Args>(args)...) + "\n").c_str(), stderr);
}

}  // namespace pestnet::log
