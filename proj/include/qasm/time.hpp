#pragma once

#include <chrono>

namespace qasm {

/// Monotonic timestamp as an offset from an arbitrary epoch. The simulator
/// drives it from a virtual clock, the loopback tools from steady_clock.
using TimePoint = std::chrono::nanoseconds;
using Duration = std::chrono::nanoseconds;

inline TimePoint steady_now() {
  return std::chrono::duration_cast<TimePoint>(std::chrono::steady_clock::now().time_since_epoch());
}

inline double to_seconds(Duration d) { return std::chrono::duration<double>(d).count(); }
inline double to_micros(Duration d) { return std::chrono::duration<double, std::micro>(d).count(); }

inline Duration from_seconds(double s) {
  return std::chrono::duration_cast<Duration>(std::chrono::duration<double>(s));
}

}  // namespace qasm
