#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "sound2loc/binio.hpp"
#include "sound2loc/error.hpp"

namespace s2l {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kSphereAreaKm2 = 4.0 * M_PI * kEarthRadiusKm * kEarthRadiusKm;

struct GeoCoordinate {
  double lat_deg = 0.0;
  double lon_deg = 0.0;
};

inline bool coordinate_valid(const GeoCoordinate& p) {
  return std::isfinite(p.lat_deg) && std::isfinite(p.lon_deg) && p.lat_deg >= -90.0 &&
         p.lat_deg <= 90.0 && p.lon_deg >= -180.0 && p.lon_deg < 180.0;
}

// lon wrapped modulo 360 into [-180, 180); lat clamped to [-90, 90]
inline GeoCoordinate wrap_coordinate(double lat_raw, double lon_raw) {
  if (!std::isfinite(lat_raw) || !std::isfinite(lon_raw))
    throw InvalidCoordinate("non-finite coordinate");
  double lon = std::fmod(lon_raw + 180.0, 360.0);
  if (lon < 0.0) lon += 360.0;
  lon -= 180.0;
  if (lon >= 180.0) lon = -180.0;  // fmod rounding at the seam
  return {std::clamp(lat_raw, -90.0, 90.0), lon};
}

inline double haversine_km(const GeoCoordinate& a, const GeoCoordinate& b) {
  const double deg = M_PI / 180.0;
  const double p1 = a.lat_deg * deg, p2 = b.lat_deg * deg;
  const double dp = (b.lat_deg - a.lat_deg) * deg;
  const double dl = (b.lon_deg - a.lon_deg) * deg;
  const double sp = std::sin(dp / 2.0), sl = std::sin(dl / 2.0);
  const double h = sp * sp + std::cos(p1) * std::cos(p2) * sl * sl;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

struct GridCell {
  int level = 0;
  std::int64_t cell_id = 0;
  GeoCoordinate center;
  double area_km2 = 0.0;
};

// Closed-on-the-low-side bounds of a band-grid cell. A cell claims
// sin(lat) in (sin_lo, sin_hi] and lon in (lon_lo, lon_hi], except that the
// southernmost band claims sin_lo = -1 and the first arc claims lon = -180
// (boundary ties go to the lower cell_id).
struct CellBounds {
  double sin_lo = 0.0, sin_hi = 0.0;
  double lon_lo = 0.0, lon_hi = 0.0;
  bool first_band = false, first_arc = false;
};

// One resolution level: latitude bands of exactly equal-area trapezoid cells.
// Band i spans sin_edges[i]..sin_edges[i+1] and holds arcs[i] equal
// longitude arcs starting at -180. Cell ids run south to north, west to east.
struct GridLevel {
  std::vector<double> sin_edges;           // n_bands + 1, from -1 to 1
  std::vector<std::int64_t> arcs;          // cells per band
  std::vector<std::int64_t> offset;        // prefix sums, n_bands + 1
  std::vector<std::int32_t> parent_band;   // levels > 0: parent band index
  std::vector<std::int64_t> arcs_per_parent;  // levels > 0: children per parent arc
  double area_km2 = 0.0;                   // exact, identical for every cell

  std::int64_t n_cells() const { return offset.back(); }
  std::size_t n_bands() const { return arcs.size(); }
};

struct HierarchicalGrid {
  std::vector<double> target_areas_km2;
  std::vector<GridLevel> levels;
};

namespace detail {

// Round `ideal` (summing to `total`) to integers >= 1 summing to `total`;
// mirrors largest-remainder apportionment, deterministic ties by index.
inline std::vector<std::int64_t> apportion(const std::vector<double>& ideal, std::int64_t total) {
  const std::size_t n = ideal.size();
  std::vector<std::int64_t> m(n);
  std::vector<double> want(n);
  for (std::size_t i = 0; i < n; ++i) {
    want[i] = std::max(ideal[i], 1e-12);
    m[i] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(want[i])));
  }
  auto sum = [&] {
    std::int64_t s = 0;
    for (const auto v : m) s += v;
    return s;
  };
  while (sum() < total) {
    std::size_t best = 0;
    double best_frac = -2.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double frac =
          (static_cast<double>(m[i]) > want[i]) ? -1.0 : want[i] - std::floor(want[i]);
      if (frac > best_frac) {
        best_frac = frac;
        best = i;
      }
    }
    ++m[best];
  }
  while (sum() > total) {
    std::size_t best = n;
    double best_slack = -1e18;
    for (std::size_t i = 0; i < n; ++i) {
      if (m[i] <= 1) continue;
      const double slack = static_cast<double>(m[i]) - want[i];
      if (slack > best_slack) {
        best_slack = slack;
        best = i;
      }
    }
    if (best == n) throw InvalidGridSpec("cannot apportion band cells");
    --m[best];
  }
  return m;
}

}  // namespace detail

inline HierarchicalGrid build_grid(const std::vector<double>& target_areas_km2) {
  if (target_areas_km2.empty()) throw InvalidGridSpec("no target areas");
  for (std::size_t i = 0; i < target_areas_km2.size(); ++i) {
    if (!(target_areas_km2[i] > 0.0)) throw InvalidGridSpec("target areas must be positive");
    if (i > 0 && !(target_areas_km2[i] < target_areas_km2[i - 1]))
      throw InvalidGridSpec("target areas must be strictly decreasing");
  }
  if (target_areas_km2[0] > kSphereAreaKm2 / 2.0)
    throw InvalidGridSpec("coarsest target exceeds half the sphere");

  const double R2 = kEarthRadiusKm * kEarthRadiusKm;
  HierarchicalGrid grid;
  grid.target_areas_km2 = target_areas_km2;

  for (std::size_t li = 0; li < target_areas_km2.size(); ++li) {
    GridLevel lv;
    if (li == 0) {
      const double tgt = target_areas_km2[0];
      const auto n_total =
          std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(kSphereAreaKm2 / tgt)));
      lv.area_km2 = kSphereAreaKm2 / static_cast<double>(n_total);
      auto nb = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::llround(M_PI * kEarthRadiusKm / std::sqrt(lv.area_km2))));
      nb = std::min(nb, n_total);
      std::vector<double> ideal(static_cast<std::size_t>(nb));
      for (std::int64_t b = 0; b < nb; ++b) {
        const double p0 = -M_PI / 2.0 + M_PI * static_cast<double>(b) / static_cast<double>(nb);
        const double p1 = -M_PI / 2.0 + M_PI * static_cast<double>(b + 1) / static_cast<double>(nb);
        ideal[static_cast<std::size_t>(b)] =
            (std::sin(p1) - std::sin(p0)) / 2.0 * static_cast<double>(n_total);
      }
      lv.arcs = detail::apportion(ideal, n_total);
      lv.sin_edges.push_back(-1.0);
      double s = -1.0;
      for (const auto m : lv.arcs) {
        s += static_cast<double>(m) * lv.area_km2 / (2.0 * M_PI * R2);
        lv.sin_edges.push_back(std::min(s, 1.0));
      }
      lv.sin_edges.back() = 1.0;
    } else {
      const GridLevel& up = grid.levels[li - 1];
      const double rho = up.area_km2 / target_areas_km2[li];
      const auto c = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(rho)));
      lv.area_km2 = up.area_km2 / static_cast<double>(c);
      lv.sin_edges.push_back(-1.0);
      for (std::size_t b = 0; b < up.n_bands(); ++b) {
        const double slo = up.sin_edges[b], shi = up.sin_edges[b + 1];
        const double plo = std::asin(std::clamp(slo, -1.0, 1.0));
        const double phi = std::asin(std::clamp(shi, -1.0, 1.0));
        const auto k_lat = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::llround((phi - plo) * kEarthRadiusKm / std::sqrt(lv.area_km2))),
            1, c);
        std::vector<double> ideal(static_cast<std::size_t>(k_lat));
        for (std::int64_t j = 0; j < k_lat; ++j) {
          const double q0 = plo + (phi - plo) * static_cast<double>(j) / static_cast<double>(k_lat);
          const double q1 =
              plo + (phi - plo) * static_cast<double>(j + 1) / static_cast<double>(k_lat);
          ideal[static_cast<std::size_t>(j)] =
              (std::sin(q1) - std::sin(q0)) / (shi - slo) * static_cast<double>(c);
        }
        const auto m = detail::apportion(ideal, c);
        const double dlam = 2.0 * M_PI / static_cast<double>(up.arcs[b]);
        double s = slo;
        for (std::int64_t j = 0; j < k_lat; ++j) {
          s += static_cast<double>(m[static_cast<std::size_t>(j)]) * lv.area_km2 / (R2 * dlam);
          lv.sin_edges.push_back(std::min(s, 1.0));
          lv.arcs.push_back(m[static_cast<std::size_t>(j)] * up.arcs[b]);
          lv.parent_band.push_back(static_cast<std::int32_t>(b));
          lv.arcs_per_parent.push_back(m[static_cast<std::size_t>(j)]);
        }
      }
      lv.sin_edges.back() = 1.0;
    }
    lv.offset.resize(lv.arcs.size() + 1);
    lv.offset[0] = 0;
    for (std::size_t b = 0; b < lv.arcs.size(); ++b) lv.offset[b + 1] = lv.offset[b] + lv.arcs[b];
    grid.levels.push_back(std::move(lv));
  }
  return grid;
}

namespace detail {

inline void check_level(const HierarchicalGrid& g, int level) {
  if (level < 0 || static_cast<std::size_t>(level) >= g.levels.size())
    throw InvalidLevel("grid level out of range: " + std::to_string(level));
}

inline std::size_t band_of_sin(const GridLevel& lv, double s) {
  // southernmost band whose upper edge >= s: boundary ties -> lower id
  const auto first = lv.sin_edges.begin() + 1;
  const auto last = lv.sin_edges.end() - 1;
  return static_cast<std::size_t>(std::lower_bound(first, last, s) - first);
}

inline std::int64_t arc_of_lon(double lon, std::int64_t n) {
  auto k = static_cast<std::int64_t>(std::floor((lon + 180.0) / 360.0 * static_cast<double>(n)));
  k = std::clamp<std::int64_t>(k, 0, n - 1);
  const auto edge = [n](std::int64_t j) {
    return -180.0 + static_cast<double>(j) * 360.0 / static_cast<double>(n);
  };
  while (k > 0 && lon <= edge(k)) --k;          // boundary tie -> lower id
  while (k < n - 1 && lon > edge(k + 1)) ++k;   // floor rounding guard
  return k;
}

struct BandArc {
  std::size_t band;
  std::int64_t arc;
};

inline BandArc locate_id(const GridLevel& lv, std::int64_t cell_id) {
  const auto it = std::upper_bound(lv.offset.begin() + 1, lv.offset.end(), cell_id);
  const auto band = static_cast<std::size_t>(it - (lv.offset.begin() + 1));
  return {band, cell_id - lv.offset[band]};
}

inline GeoCoordinate band_arc_center(const GridLevel& lv, std::size_t band, std::int64_t arc) {
  const double slo = lv.sin_edges[band], shi = lv.sin_edges[band + 1];
  const double plo = std::asin(std::clamp(slo, -1.0, 1.0));
  const double phi = std::asin(std::clamp(shi, -1.0, 1.0));
  // area-centroid latitude of the band: mean of phi under cos(phi) weight
  const double lat =
      (std::cos(phi) - std::cos(plo) + phi * shi - plo * slo) / (shi - slo) * 180.0 / M_PI;
  const double lon = -180.0 + (static_cast<double>(arc) + 0.5) * 360.0 /
                                  static_cast<double>(lv.arcs[band]);
  return {lat, lon};
}

}  // namespace detail

inline GridCell cell_of(const HierarchicalGrid& g, int level, const GeoCoordinate& p) {
  detail::check_level(g, level);
  const GridLevel& lv = g.levels[static_cast<std::size_t>(level)];
  const double s = std::sin(p.lat_deg * M_PI / 180.0);
  const auto band = detail::band_of_sin(lv, s);
  const auto arc = detail::arc_of_lon(p.lon_deg, lv.arcs[band]);
  const auto id = lv.offset[band] + arc;
  return {level, id, detail::band_arc_center(lv, band, arc), lv.area_km2};
}

inline GridCell cell_at(const HierarchicalGrid& g, int level, std::int64_t cell_id) {
  detail::check_level(g, level);
  const GridLevel& lv = g.levels[static_cast<std::size_t>(level)];
  if (cell_id < 0 || cell_id >= lv.n_cells()) throw InvalidLevel("cell id out of range");
  const auto [band, arc] = detail::locate_id(lv, cell_id);
  return {level, cell_id, detail::band_arc_center(lv, band, arc), lv.area_km2};
}

inline CellBounds cell_bounds(const HierarchicalGrid& g, int level, std::int64_t cell_id) {
  detail::check_level(g, level);
  const GridLevel& lv = g.levels[static_cast<std::size_t>(level)];
  const auto [band, arc] = detail::locate_id(lv, cell_id);
  const double w = 360.0 / static_cast<double>(lv.arcs[band]);
  CellBounds b;
  b.sin_lo = lv.sin_edges[band];
  b.sin_hi = lv.sin_edges[band + 1];
  b.lon_lo = -180.0 + static_cast<double>(arc) * w;
  b.lon_hi = -180.0 + static_cast<double>(arc + 1) * w;
  b.first_band = band == 0;
  b.first_arc = arc == 0;
  return b;
}

// containing cell at level-1 for a cell at `level` (levels nest by construction)
inline std::int64_t parent_of(const HierarchicalGrid& g, int level, std::int64_t cell_id) {
  detail::check_level(g, level);
  if (level == 0) throw InvalidLevel("level 0 has no parent");
  const GridLevel& lv = g.levels[static_cast<std::size_t>(level)];
  const GridLevel& up = g.levels[static_cast<std::size_t>(level - 1)];
  const auto [band, arc] = detail::locate_id(lv, cell_id);
  const auto pb = static_cast<std::size_t>(lv.parent_band[band]);
  return up.offset[pb] + arc / lv.arcs_per_parent[band];
}

inline std::vector<std::int64_t> children_of(const HierarchicalGrid& g, int level,
                                             std::int64_t cell_id) {
  detail::check_level(g, level);
  if (static_cast<std::size_t>(level + 1) >= g.levels.size())
    throw InvalidLevel("finest level has no children");
  const GridLevel& up = g.levels[static_cast<std::size_t>(level)];
  const GridLevel& lo = g.levels[static_cast<std::size_t>(level + 1)];
  const auto pa = detail::locate_id(up, cell_id);
  std::vector<std::int64_t> out;
  for (std::size_t b = 0; b < lo.n_bands(); ++b) {
    if (lo.parent_band[b] != static_cast<std::int32_t>(pa.band)) continue;
    const auto m = lo.arcs_per_parent[b];
    for (std::int64_t j = 0; j < m; ++j) out.push_back(lo.offset[b] + pa.arc * m + j);
  }
  return out;
}

inline void export_grid_csv(const HierarchicalGrid& g, std::ostream& os) {
  os << "level,cell_id,center_lat,center_lon,area_km2\n";
  char buf[160];
  for (std::size_t li = 0; li < g.levels.size(); ++li) {
    const GridLevel& lv = g.levels[li];
    for (std::size_t b = 0; b < lv.n_bands(); ++b) {
      for (std::int64_t k = 0; k < lv.arcs[b]; ++k) {
        const auto c = detail::band_arc_center(lv, b, k);
        std::snprintf(buf, sizeof(buf), "%zu,%lld,%.10g,%.10g,%.10g\n", li,
                      static_cast<long long>(lv.offset[b] + k), c.lat_deg, c.lon_deg, lv.area_km2);
        os << buf;
      }
    }
  }
}

inline void export_grid_csv(const HierarchicalGrid& g, const std::string& path) {
  auto os = open_out(path, false);
  export_grid_csv(g, os);
}

}  // namespace s2l
