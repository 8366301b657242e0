#pragma once

// Trace serialisation. Trace lines and CSV rows are written by hand so every
// double carries 17 significant digits and the key order is fixed.

#include <nlohmann/json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rrm/diagnostics.hpp"
#include "rrm/error.hpp"

namespace rrm::harness {

inline std::string format_double(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Shortest text that parses back to `v`; for labels and log lines.
inline std::string short_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : "null";
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// One JSON object, keys in TraceRecord declaration order.
inline std::string trace_line(const TraceRecord& r) {
  std::string s;
  s.reserve(512);
  s += "{\"k\":" + std::to_string(r.k);
  s += ",\"alpha_k\":" + format_double(r.alpha_k);
  s += ",\"f_x\":" + format_double(r.f_x);
  s += ",\"grad_x\":" + format_double(r.grad_x);
  s += ",\"f_z\":" + format_optional(r.f_z);
  s += ",\"grad_z\":" + format_optional(r.grad_z);
  s += ",\"R_k\":" + format_optional(r.R_k);
  s += ",\"dist_zx\":" + format_double(r.dist_zx);
  s += ",\"sum_d\":";
  if (r.sum_d.size() == 0) {
    s += "null";
  } else {
    s += '[';
    for (Eigen::Index c = 0; c < r.sum_d.size(); ++c) {
      if (c) s += ',';
      s += format_double(r.sum_d(c));
    }
    s += ']';
  }
  s += ",\"sigma2\":" + format_optional(r.sigma2);
  s += ",\"z_step_sq\":" + format_double(r.z_step_sq);
  s += ",\"residual_telescoping\":" + format_double(r.residual_telescoping);
  s += ",\"residual_descent\":" + format_optional(r.residual_descent);
  s += ",\"residual_b3\":" + format_optional(r.residual_b3);
  s += ",\"residual_b4\":" + format_optional(r.residual_b4);
  s += ",\"min_grad_sq_so_far\":" + format_double(r.min_grad_sq_so_far);
  s += '}';
  return s;
}

inline std::optional<double> optional_number(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

inline TraceRecord record_from_json(const nlohmann::json& j) {
  TraceRecord r;
  r.k = j.at("k").get<std::size_t>();
  r.alpha_k = j.at("alpha_k").get<double>();
  r.f_x = j.at("f_x").get<double>();
  r.grad_x = j.at("grad_x").get<double>();
  r.f_z = optional_number(j, "f_z");
  r.grad_z = optional_number(j, "grad_z");
  r.R_k = optional_number(j, "R_k");
  r.dist_zx = j.at("dist_zx").get<double>();
  if (j.contains("sum_d") && j["sum_d"].is_array()) {
    r.sum_d.resize(static_cast<Eigen::Index>(j["sum_d"].size()));
    for (Eigen::Index c = 0; c < r.sum_d.size(); ++c)
      r.sum_d(c) = j["sum_d"][static_cast<std::size_t>(c)].get<double>();
  }
  r.sigma2 = optional_number(j, "sigma2");
  r.z_step_sq = j.at("z_step_sq").get<double>();
  r.residual_telescoping = j.at("residual_telescoping").get<double>();
  r.residual_descent = optional_number(j, "residual_descent");
  r.residual_b3 = optional_number(j, "residual_b3");
  r.residual_b4 = optional_number(j, "residual_b4");
  r.min_grad_sq_so_far = j.at("min_grad_sq_so_far").get<double>();
  return r;
}

inline nlohmann::json record_to_json(const TraceRecord& r) {
  return nlohmann::json::parse(trace_line(r));
}

inline const char* kCsvHeader = "k,alpha_k,grad_x_sq,min_grad_sq_so_far,R_k,dist_zx";

inline std::string csv_row(const TraceRecord& r) {
  std::string s = std::to_string(r.k);
  s += ',' + format_double(r.alpha_k);
  s += ',' + format_double(r.grad_x * r.grad_x);
  s += ',' + format_double(r.min_grad_sq_so_far);
  s += ',' + (r.R_k ? format_double(*r.R_k) : std::string());
  s += ',' + format_double(r.dist_zx);
  return s;
}

/// Epochs kept at thinning factor r: k = 1, 1 + r, 1 + 2r, ... and k = T.
inline bool recorded(std::size_t k, std::size_t T, std::size_t every) {
  return (k - 1) % every == 0 || k == T;
}

inline void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << body;
  if (!out) throw Error("write failed for " + path);
}

inline void write_trace_files(const Trace& trace, std::size_t every,
                              const std::string& jsonl_path, const std::string& csv_path) {
  std::ostringstream jsonl, csv;
  csv << kCsvHeader << '\n';
  const std::size_t T = trace.config.epochs;
  for (const auto& r : trace.records) {
    if (!recorded(r.k, T, every)) continue;
    jsonl << trace_line(r) << '\n';
    csv << csv_row(r) << '\n';
  }
  write_text(jsonl_path, jsonl.str());
  write_text(csv_path, csv.str());
}

inline void write_permutations(const Trace& trace, const std::string& path) {
  std::ostringstream out;
  for (std::size_t k = 0; k < trace.permutations.size(); ++k) {
    out << k + 1 << ':';
    for (auto idx : trace.permutations[k]) out << ' ' << idx;
    out << '\n';
  }
  write_text(path, out.str());
}

inline std::vector<TraceRecord> read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::vector<TraceRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace rrm::harness
