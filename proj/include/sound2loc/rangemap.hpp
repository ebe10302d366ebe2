#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sound2loc/binio.hpp"
#include "sound2loc/error.hpp"
#include "sound2loc/geodesy.hpp"
#include "sound2loc/rng.hpp"

namespace s2l {

// Species presence as a mixture of geodesic Gaussian bumps. Only the
// thresholded checklist and relative likelihoods are consumed downstream,
// so the bump shape is a free choice.

struct RangeBump {
  GeoCoordinate center;
  double sigma_km = 1.0;
  double weight = 1.0;  // presence score at the bump center
};

struct SyntheticRangeModel {
  std::vector<std::vector<RangeBump>> species;  // 1..3 bumps each

  std::size_t n_species() const { return species.size(); }
};

using ScoreVector = std::vector<double>;
using Checklist = std::vector<std::uint8_t>;

inline constexpr double kPresenceThreshold = 0.1;

inline double presence_score(const std::vector<RangeBump>& bumps, const GeoCoordinate& p) {
  double best = 0.0;
  for (const auto& b : bumps) {
    const double d = haversine_km(p, b.center);
    best = std::max(best, b.weight * std::exp(-d * d / (2.0 * b.sigma_km * b.sigma_km)));
  }
  return best;
}

inline ScoreVector presence_scores(const SyntheticRangeModel& m, const GeoCoordinate& p) {
  ScoreVector out(m.n_species());
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = presence_score(m.species[s], p);
  return out;
}

// Inclusive threshold: a score exactly at the boundary counts as present.
inline Checklist oracle_checklist(const ScoreVector& scores, double threshold = kPresenceThreshold) {
  Checklist c(scores.size());
  for (std::size_t s = 0; s < scores.size(); ++s) c[s] = scores[s] >= threshold ? 1 : 0;
  return c;
}

inline std::vector<std::size_t> present_indices(const Checklist& c) {
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < c.size(); ++s)
    if (c[s]) idx.push_back(s);
  return idx;
}

// Flips exactly floor(fraction * n_present) present bits to absent. The full
// permutation is drawn before taking the prefix, so equal seeds give nested
// flip sets across fractions (higher corruption only removes more).
inline Checklist corrupt_checklist(const Checklist& c, double fraction, Rng& rng) {
  if (fraction < 0.0 || fraction > 1.0) throw DataError("corruption fraction outside [0, 1]");
  auto idx = present_indices(c);
  rng.shuffle(idx);
  const auto n_flip = static_cast<std::size_t>(fraction * static_cast<double>(idx.size()));
  Checklist out = c;
  for (std::size_t i = 0; i < n_flip; ++i) out[idx[i]] = 0;
  return out;
}

// Retains at most k present bits, uniformly at random; checklists at or
// below k species pass through untouched.
inline Checklist keep_random_k(const Checklist& c, std::size_t k, Rng& rng) {
  auto idx = present_indices(c);
  if (idx.size() <= k) return c;
  rng.shuffle(idx);
  Checklist out(c.size(), 0);
  for (std::size_t i = 0; i < k; ++i) out[idx[i]] = 1;
  return out;
}

// Weighted arithmetic mean of the per-species presence maps. An all-zero
// weight vector falls back to the unweighted mean (uniform-weights fallback)
// rather than failing, so fully corrupted checklists still yield a map.
inline std::vector<double> likelihood_map(const SyntheticRangeModel& m, const ScoreVector& weights,
                                          const std::vector<GeoCoordinate>& grid_points) {
  if (weights.size() != m.n_species())
    throw ShapeError("weight vector length does not match species count");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("weights must be finite non-negative");
    total += w;
  }
  std::vector<double> out(grid_points.size(), 0.0);
  for (std::size_t i = 0; i < grid_points.size(); ++i) {
    double acc = 0.0;
    for (std::size_t s = 0; s < m.n_species(); ++s) {
      const double w = total > 0.0 ? weights[s] : 1.0;
      if (w == 0.0) continue;
      acc += w * presence_score(m.species[s], grid_points[i]);
    }
    out[i] = acc / (total > 0.0 ? total : static_cast<double>(m.n_species()));
  }
  return out;
}

// Distance out to which a bump keeps a species above the checklist
// threshold; zero when the bump peaks below it.
inline double containment_radius_km(const RangeBump& b, double threshold = kPresenceThreshold) {
  if (b.weight < threshold) return 0.0;
  return b.sigma_km * std::sqrt(2.0 * std::log(b.weight / threshold));
}

// ---------------------------------------------------------------------------
// JSON serialization: object keyed by species id ("0".."S-1"), each a list
// of {lat, lon, sigma_km, weight}.

inline void save_range_model(const SyntheticRangeModel& m, const std::string& path) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t s = 0; s < m.n_species(); ++s) {
    nlohmann::json bumps = nlohmann::json::array();
    for (const auto& b : m.species[s])
      bumps.push_back({{"lat", b.center.lat_deg},
                       {"lon", b.center.lon_deg},
                       {"sigma_km", b.sigma_km},
                       {"weight", b.weight}});
    j[std::to_string(s)] = std::move(bumps);
  }
  auto os = open_out(path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing range model: " + path);
}

inline SyntheticRangeModel load_range_model(const std::string& path) {
  auto in = open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("range model is not valid JSON: " + path + " (" + e.what() + ")");
  }
  if (!j.is_object()) throw CorruptFile("range model root must be an object: " + path);
  SyntheticRangeModel m;
  m.species.resize(j.size());
  for (const auto& [key, bumps] : j.items()) {
    std::size_t s = 0;
    try {
      s = std::stoul(key);
    } catch (const std::exception&) {
      throw CorruptFile("range model species key is not an index: " + key);
    }
    if (s >= m.species.size()) throw CorruptFile("range model species ids are not 0..S-1");
    if (!bumps.is_array() || bumps.empty() || bumps.size() > 3)
      throw CorruptFile("species " + key + " must list 1 to 3 range bumps");
    for (const auto& b : bumps) {
      try {
        m.species[s].push_back(RangeBump{GeoCoordinate{b.at("lat").get<double>(),
                                                       b.at("lon").get<double>()},
                                         b.at("sigma_km").get<double>(),
                                         b.at("weight").get<double>()});
      } catch (const nlohmann::json::exception& e) {
        throw CorruptFile("malformed range bump for species " + key + ": " + e.what());
      }
    }
  }
  for (const auto& sp : m.species)
    if (sp.empty()) throw CorruptFile("range model species ids are not 0..S-1");
  return m;
}

}  // namespace s2l
