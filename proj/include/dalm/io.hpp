#pragma once

#include <charconv>
#include <ostream>
#include <string>
#include <system_error>

#include "dalm/bench.hpp"
#include "dalm/core.hpp"

namespace dalm {

/// Shortest round-trip decimal form of x.
inline std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), x);
  if (r.ec != std::errc{}) throw NumericError("format_double: conversion failed", std::nullopt);
  return std::string(buf, r.ptr);
}

inline constexpr const char* kStatsCsvHeader = "budget,tolerance,fraction,instances";

/// One row per (budget, tolerance), budgets outermost.
inline void write_stats_csv(std::ostream& os, const RunStats& stats) {
  os << kStatsCsvHeader << '\n';
  for (std::size_t b = 0; b < stats.budgets.size(); ++b)
    for (std::size_t t = 0; t < stats.tolerances.size(); ++t)
      os << stats.budgets[b] << ',' << format_double(stats.tolerances[t]) << ','
         << format_double(stats.fraction[b][t]) << ',' << stats.instances << '\n';
}

}  // namespace dalm
