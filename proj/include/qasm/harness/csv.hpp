#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "qasm/harness/metrics.hpp"

namespace qasm::harness {

namespace detail {

inline std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

inline void close_csv(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace detail

/// Writes latency.csv, throughput.csv, tables.csv and summary.csv into `dir`
/// (created if missing). Numbers use fixed three-decimal formatting so runs
/// with the same seed produce identical files in virtual-clock mode. The
/// t_out_us column is empty for packets that never left the pipeline.
inline void emit_csv(const MetricsReport& report, const std::filesystem::path& dir) {
  using detail::fixed3;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  auto path = dir / "latency.csv";
  auto out = detail::open_csv(path);
  out << "packet_id,t_in_us,t_out_us,phase_lookup_us,phase_create_us,phase_update_us\n";
  for (const auto& p : report.packets) {
    out << p.id << ',' << fixed3(to_micros(p.t_in)) << ',' << (p.t_out ? fixed3(to_micros(*p.t_out)) : "") << ','
        << fixed3(to_micros(p.lookup)) << ',' << fixed3(to_micros(p.create)) << ',' << fixed3(to_micros(p.update))
        << '\n';
  }
  detail::close_csv(out, path);

  path = dir / "throughput.csv";
  out = detail::open_csv(path);
  out << "second,pkts,bytes\n";
  for (const auto& b : report.throughput) out << b.second << ',' << b.pkts << ',' << b.bytes << '\n';
  detail::close_csv(out, path);

  path = dir / "tables.csv";
  out = detail::open_csv(path);
  out << "t,middlebox_id,entries\n";
  for (const auto& t : report.tables) out << fixed3(to_seconds(t.t)) << ',' << t.middlebox << ',' << t.entries << '\n';
  detail::close_csv(out, path);

  path = dir / "summary.csv";
  out = detail::open_csv(path);
  out << "metric,value\n";
  for (const auto& [k, v] : report.summary) out << k << ',' << fixed3(v) << '\n';
  detail::close_csv(out, path);
}

}  // namespace qasm::harness
