#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sound2loc/binio.hpp"
#include "sound2loc/error.hpp"
#include "sound2loc/geodesy.hpp"
#include "sound2loc/manifest.hpp"

namespace s2l {

inline constexpr double kAccThresholdsKm[4] = {25.0, 200.0, 750.0, 2500.0};

struct MetricsReport {
  double median_km = 0.0;
  double acc_25 = 0.0;    // street level
  double acc_200 = 0.0;   // region
  double acc_750 = 0.0;   // country
  double acc_2500 = 0.0;  // continent
};

inline std::vector<double> pairwise_errors_km(const std::vector<GeoCoordinate>& pred,
                                              const std::vector<GeoCoordinate>& truth) {
  if (pred.size() != truth.size())
    throw LengthMismatch("prediction and truth lists differ in length");
  if (pred.empty()) throw EmptyDataset("no prediction/truth pairs");
  std::vector<double> err(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) err[i] = haversine_km(pred[i], truth[i]);
  return err;
}

// Median is the lower of the two middle values for even n, so the reported
// number is always an observed error. Threshold accuracies are inclusive.
inline MetricsReport metrics_from_errors(std::vector<double> err) {
  if (err.empty()) throw EmptyDataset("no errors to summarize");
  std::sort(err.begin(), err.end());
  MetricsReport r;
  r.median_km = err[(err.size() - 1) / 2];
  double* accs[4] = {&r.acc_25, &r.acc_200, &r.acc_750, &r.acc_2500};
  for (int k = 0; k < 4; ++k) {
    const auto n_ok = std::upper_bound(err.begin(), err.end(), kAccThresholdsKm[k]) - err.begin();
    *accs[k] = static_cast<double>(n_ok) / static_cast<double>(err.size());
  }
  return r;
}

inline MetricsReport metrics(const std::vector<GeoCoordinate>& pred,
                             const std::vector<GeoCoordinate>& truth) {
  return metrics_from_errors(pairwise_errors_km(pred, truth));
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  return {{"median_km", r.median_km},
          {"acc_25", r.acc_25},
          {"acc_200", r.acc_200},
          {"acc_750", r.acc_750},
          {"acc_2500", r.acc_2500}};
}

// Right-continuous empirical CDF over a fixed error sample.
struct ErrorCdf {
  std::vector<double> sorted_errors;

  double operator()(double t) const {
    const auto n_le =
        std::upper_bound(sorted_errors.begin(), sorted_errors.end(), t) - sorted_errors.begin();
    return static_cast<double>(n_le) / static_cast<double>(sorted_errors.size());
  }
};

inline ErrorCdf cdf(std::vector<double> errors) {
  if (errors.empty()) throw EmptyDataset("cannot build a CDF from no errors");
  std::sort(errors.begin(), errors.end());
  return ErrorCdf{std::move(errors)};
}

inline void export_cdf_csv(const ErrorCdf& c, std::ostream& os) {
  os << "error_km,cdf\n";
  const auto n = c.sorted_errors.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i + 1 < n && c.sorted_errors[i + 1] == c.sorted_errors[i]) continue;  // keep last of ties
    os << c.sorted_errors[i] << ',' << static_cast<double>(i + 1) / static_cast<double>(n) << '\n';
  }
}

struct SpatialErrorMap {
  int level = 2;
  std::map<std::int64_t, double> median_km;      // only occupied cells appear
  std::map<std::int64_t, std::size_t> n_samples;
};

inline SpatialErrorMap spatial_error_map(const std::vector<GeoCoordinate>& pred,
                                         const std::vector<GeoCoordinate>& truth,
                                         const HierarchicalGrid& grid, int level = 2) {
  const auto err = pairwise_errors_km(pred, truth);
  std::map<std::int64_t, std::vector<double>> bins;
  for (std::size_t i = 0; i < truth.size(); ++i)
    bins[cell_of(grid, level, truth[i]).cell_id].push_back(err[i]);
  SpatialErrorMap m;
  m.level = level;
  for (auto& [id, v] : bins) {
    std::sort(v.begin(), v.end());
    m.median_km[id] = v[(v.size() - 1) / 2];
    m.n_samples[id] = v.size();
  }
  return m;
}

inline void export_spatial_csv(const SpatialErrorMap& m, const HierarchicalGrid& grid,
                               std::ostream& os) {
  os << "cell_id,lat,lon,median_km,n\n";
  for (const auto& [id, med] : m.median_km) {
    const auto cell = cell_at(grid, m.level, id);
    os << id << ',' << cell.center.lat_deg << ',' << cell.center.lon_deg << ',' << med << ','
       << m.n_samples.at(id) << '\n';
  }
}

// Month window is inclusive on calendar months and may wrap the year end
// (e.g. {11, 2} covers Nov-Feb); hour window is half-open [lo, hi) on the
// local solar clock and may wrap midnight.
struct SpeciesRichFilter {
  double min_duration_s = 180.0;
  std::size_t min_species = 10;
  std::optional<std::pair<int, int>> month_window;
  std::optional<std::pair<double, double>> hour_window;
};

inline bool in_month_window(int month, const std::pair<int, int>& w) {
  if (w.first <= w.second) return month >= w.first && month <= w.second;
  return month >= w.first || month <= w.second;
}

inline bool in_hour_window(double hour, const std::pair<double, double>& w) {
  if (w.first <= w.second) return hour >= w.first && hour < w.second;
  return hour >= w.first || hour < w.second;
}

inline Manifest filter_species_rich(const Manifest& manifest, const SpeciesRichFilter& f = {}) {
  std::vector<std::uint64_t> missing;
  for (const auto& e : manifest)
    if (!e.species) missing.push_back(e.id);
  if (!missing.empty()) {
    std::string msg = "entries lack species lists:";
    for (auto id : missing) msg += ' ' + std::to_string(id);
    throw ManifestFieldError(msg);
  }
  Manifest kept;
  for (const auto& e : manifest) {
    if (e.duration_s < f.min_duration_s) continue;
    const std::set<std::uint32_t> distinct(e.species->begin(), e.species->end());
    if (distinct.size() < f.min_species) continue;
    if (f.month_window && !in_month_window(e.timestamp.month, *f.month_window)) continue;
    if (f.hour_window &&
        !in_hour_window(local_solar_hour(e.timestamp, e.location.lon_deg), *f.hour_window))
      continue;
    kept.push_back(e);
  }
  return kept;
}

}  // namespace s2l
