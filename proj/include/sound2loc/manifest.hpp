#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sound2loc/binio.hpp"
#include "sound2loc/error.hpp"
#include "sound2loc/geodesy.hpp"

namespace s2l {

// Calendar timestamp in UTC; manifests carry ISO-8601 "YYYY-MM-DDTHH:MM:SSZ".
struct UtcTime {
  int year = 1970, month = 1, day = 1;
  int hour = 0, minute = 0, second = 0;

  bool operator==(const UtcTime&) const = default;
};

inline bool parse_utc(const std::string& s, UtcTime& out) {
  UtcTime t;
  char z = '\0';
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &t.year, &t.month, &t.day, &t.hour,
                  &t.minute, &t.second, &z) != 7 ||
      z != 'Z' || s.size() != 20)
    return false;
  if (t.month < 1 || t.month > 12 || t.day < 1 || t.day > 31 || t.hour > 23 || t.minute > 59 ||
      t.second > 60)
    return false;
  out = t;
  return true;
}

inline std::string format_utc(const UtcTime& t) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", t.year, t.month, t.day, t.hour,
                t.minute, t.second);
  return buf;
}

// Local solar hour of day: UTC clock plus longitude/15 as the offset.
inline double local_solar_hour(const UtcTime& t, double lon_deg) {
  double h = t.hour + t.minute / 60.0 + t.second / 3600.0 + lon_deg / 15.0;
  h = std::fmod(h, 24.0);
  return h < 0.0 ? h + 24.0 : h;
}

struct ManifestEntry {
  std::uint64_t id = 0;
  std::string audio;       // empty means null
  std::string embeddings;  // empty means null
  GeoCoordinate location;
  UtcTime timestamp;
  double duration_s = 0.0;
  std::optional<std::vector<std::uint32_t>> species;
};

using Manifest = std::vector<ManifestEntry>;

namespace detail {

inline void field_problem(std::vector<std::string>& problems, const nlohmann::json& row,
                          const std::string& what) {
  std::string id = row.contains("id") && row["id"].is_number() ? row["id"].dump() : "<no id>";
  problems.push_back(id + ": " + what);
}

}  // namespace detail

// One JSON object per line. A row that is not JSON at all is file corruption;
// rows with missing or malformed fields are collected and reported together
// as a ManifestFieldError naming each offending id.
inline Manifest parse_manifest(std::istream& in, const std::string& origin) {
  Manifest entries;
  std::vector<std::string> problems;
  std::set<std::uint64_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw CorruptFile(origin + " line " + std::to_string(line_no) + " is not valid JSON");
    }
    if (!row.is_object()) {
      throw CorruptFile(origin + " line " + std::to_string(line_no) + " is not an object");
    }
    ManifestEntry e;
    bool ok = true;
    auto need = [&](const char* key, bool cond, const char* what) {
      if (!cond) {
        detail::field_problem(problems, row, std::string(key) + " " + what);
        ok = false;
      }
      return cond;
    };
    if (need("id", row.contains("id") && row["id"].is_number_unsigned(), "missing or not a u64"))
      e.id = row["id"].get<std::uint64_t>();
    const bool has_audio = row.contains("audio") && row["audio"].is_string();
    const bool has_emb = row.contains("embeddings") && row["embeddings"].is_string();
    if (need("audio/embeddings", has_audio != has_emb, "exactly one must be set")) {
      if (has_audio) e.audio = row["audio"].get<std::string>();
      if (has_emb) e.embeddings = row["embeddings"].get<std::string>();
    }
    if (need("lat/lon", row.contains("lat") && row["lat"].is_number() && row.contains("lon") &&
                            row["lon"].is_number(),
             "missing or not numbers")) {
      e.location = {row["lat"].get<double>(), row["lon"].get<double>()};
      need("lat/lon", coordinate_valid(e.location), "out of range");
    }
    if (need("timestamp", row.contains("timestamp") && row["timestamp"].is_string(), "missing"))
      need("timestamp", parse_utc(row["timestamp"].get<std::string>(), e.timestamp),
           "is not ISO-8601 UTC");
    if (need("duration_s", row.contains("duration_s") && row["duration_s"].is_number(),
             "missing or not a number")) {
      e.duration_s = row["duration_s"].get<double>();
      need("duration_s", e.duration_s >= 0.0, "negative");
    }
    if (row.contains("species") && !row["species"].is_null()) {
      if (need("species", row["species"].is_array(), "not a list")) {
        e.species.emplace();
        for (const auto& s : row["species"]) {
          if (!need("species", s.is_number_unsigned(), "entries must be non-negative ids")) break;
          e.species->push_back(s.get<std::uint32_t>());
        }
      }
    }
    if (ok && !seen.insert(e.id).second)
      detail::field_problem(problems, row, "duplicate id");
    entries.push_back(std::move(e));
  }
  if (!problems.empty()) {
    std::string msg = origin + " has invalid entries:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ManifestFieldError(msg);
  }
  return entries;
}

inline Manifest load_manifest(const std::string& path) {
  auto in = open_in(path);
  return parse_manifest(in, path);
}

inline void write_manifest(const Manifest& entries, std::ostream& os) {
  for (const auto& e : entries) {
    nlohmann::json row;
    row["id"] = e.id;
    row["audio"] = e.audio.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.audio);
    row["embeddings"] = e.embeddings.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.embeddings);
    row["lat"] = e.location.lat_deg;
    row["lon"] = e.location.lon_deg;
    row["timestamp"] = format_utc(e.timestamp);
    row["duration_s"] = e.duration_s;
    if (e.species) row["species"] = *e.species;
    os << row.dump() << '\n';
  }
}

inline void save_manifest(const Manifest& entries, const std::string& path) {
  auto os = open_out(path);
  write_manifest(entries, os);
  if (!os) throw IoError("failed writing manifest: " + path);
}

}  // namespace s2l
