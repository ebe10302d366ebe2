#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sound2loc/binio.hpp"
#include "sound2loc/encoders.hpp"
#include "sound2loc/error.hpp"
#include "sound2loc/geodesy.hpp"
#include "sound2loc/manifest.hpp"
#include "sound2loc/matrix.hpp"
#include "sound2loc/numkit.hpp"
#include "sound2loc/rangemap.hpp"
#include "sound2loc/rng.hpp"

namespace s2l {

// Inference-time machinery: location galleries, exact retrieval, clip
// pooling, species-range argmax, spatiotemporal aggregation, naive baseline.

enum class GalleryKind { uniform, land, dataset, neighbors, custom };

struct LocationGallery {
  GalleryKind kind = GalleryKind::custom;
  std::vector<GeoCoordinate> points;
  Matrix embeddings;  // N x 512, unit-norm rows

  std::size_t size() const { return points.size(); }
};

using SimilarityMap = std::vector<double>;

namespace detail {

// rows encoded in chunks so the 65K-point uniform gallery never needs a
// second full-size temporary
inline void encode_into(const FourierLocationEncoder& enc,
                        const std::vector<GeoCoordinate>& pts, Matrix& out) {
  constexpr std::size_t chunk = 8192;
  out = Matrix(pts.size(), kLocationEmbeddingDim);
  for (std::size_t base = 0; base < pts.size(); base += chunk) {
    const auto n = std::min(chunk, pts.size() - base);
    const std::vector<GeoCoordinate> slice(pts.begin() + static_cast<std::ptrdiff_t>(base),
                                           pts.begin() + static_cast<std::ptrdiff_t>(base + n));
    const Matrix e = enc.encode(slice);
    std::copy(e.data.begin(), e.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(base * kLocationEmbeddingDim));
  }
}

inline LocationGallery finish_gallery(GalleryKind kind, std::vector<GeoCoordinate> pts,
                                      const FourierLocationEncoder& enc, const char* what) {
  if (pts.empty()) throw EmptyGallery(std::string("empty gallery: ") + what);
  LocationGallery g;
  g.kind = kind;
  g.points = std::move(pts);
  encode_into(enc, g.points, g.embeddings);
  return g;
}

}  // namespace detail

// Binary land raster: row 0 spans lat [90-dlat, 90], rows go north to south,
// columns west to east from -180. Bits are row-major, most significant first.
struct LandMask {
  std::uint32_t rows = 0, cols = 0;
  std::vector<std::uint8_t> bits;  // ceil(rows*cols/8) bytes

  bool at(std::uint32_t r, std::uint32_t c) const {
    const std::size_t i = static_cast<std::size_t>(r) * cols + c;
    return (bits[i / 8] >> (7 - i % 8)) & 1;
  }
  bool contains(const GeoCoordinate& p) const {
    if (rows == 0 || cols == 0) return false;
    auto r = static_cast<std::int64_t>(std::floor((90.0 - p.lat_deg) / 180.0 *
                                                  static_cast<double>(rows)));
    auto c = static_cast<std::int64_t>(std::floor((p.lon_deg + 180.0) / 360.0 *
                                                  static_cast<double>(cols)));
    r = std::clamp<std::int64_t>(r, 0, rows - 1);
    c = std::clamp<std::int64_t>(c, 0, cols - 1);
    return at(static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c));
  }
};

inline void save_land_mask(const LandMask& m, const std::string& path) {
  auto os = open_out(path);
  os.write("S2LR", 4);
  write_le<std::uint32_t>(os, m.rows);
  write_le<std::uint32_t>(os, m.cols);
  os.write(reinterpret_cast<const char*>(m.bits.data()),
           static_cast<std::streamsize>(m.bits.size()));
  if (!os) throw IoError("failed writing land mask: " + path);
}

inline LandMask load_land_mask(const std::string& path) {
  auto in = open_in(path);
  expect_magic(in, "S2LR", path.c_str());
  LandMask m;
  m.rows = read_le<std::uint32_t>(in, "land mask rows");
  m.cols = read_le<std::uint32_t>(in, "land mask cols");
  const std::size_t n = (static_cast<std::size_t>(m.rows) * m.cols + 7) / 8;
  m.bits.resize(n);
  in.read(reinterpret_cast<char*>(m.bits.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw CorruptFile("land mask truncated: " + path);
  return m;
}

// lat in {-90..90} and lon in {-180..180-step}, both on a `step`-degree
// lattice; step 1 gives the 181 x 360 = 65160-point gallery.
inline std::vector<GeoCoordinate> uniform_lattice(double step_deg) {
  if (!(step_deg > 0.0)) throw DataError("gallery degree step must be positive");
  std::vector<GeoCoordinate> pts;
  const auto n_lat = static_cast<std::int64_t>(std::floor(180.0 / step_deg + 1e-9)) + 1;
  const auto n_lon = static_cast<std::int64_t>(std::floor(360.0 / step_deg + 1e-9));
  for (std::int64_t i = 0; i < n_lat; ++i)
    for (std::int64_t j = 0; j < n_lon; ++j)
      pts.push_back({-90.0 + static_cast<double>(i) * step_deg,
                     -180.0 + static_cast<double>(j) * step_deg});
  return pts;
}

inline LocationGallery build_uniform_gallery(const FourierLocationEncoder& enc,
                                             double step_deg = 1.0) {
  return detail::finish_gallery(GalleryKind::uniform, uniform_lattice(step_deg), enc, "uniform");
}

inline LocationGallery build_land_gallery(const FourierLocationEncoder& enc, const LandMask& mask,
                                          double step_deg = 1.0) {
  std::vector<GeoCoordinate> pts;
  for (const auto& p : uniform_lattice(step_deg))
    if (mask.contains(p)) pts.push_back(p);
  return detail::finish_gallery(GalleryKind::land, std::move(pts), enc, "land");
}

inline LocationGallery build_dataset_gallery(const FourierLocationEncoder& enc,
                                             const std::vector<GeoCoordinate>& train_locations) {
  return detail::finish_gallery(GalleryKind::dataset, train_locations, enc, "dataset");
}

// 0.5-degree lattice restricted to grid cells holding at least one training
// recording
inline LocationGallery build_neighbors_gallery(const FourierLocationEncoder& enc,
                                               const std::vector<GeoCoordinate>& train_locations,
                                               const HierarchicalGrid& grid, int level,
                                               double step_deg = 0.5) {
  std::vector<std::int64_t> occupied;
  for (const auto& p : train_locations) occupied.push_back(cell_of(grid, level, p).cell_id);
  std::sort(occupied.begin(), occupied.end());
  occupied.erase(std::unique(occupied.begin(), occupied.end()), occupied.end());
  std::vector<GeoCoordinate> pts;
  for (const auto& p : uniform_lattice(step_deg))
    if (std::binary_search(occupied.begin(), occupied.end(), cell_of(grid, level, p).cell_id))
      pts.push_back(p);
  return detail::finish_gallery(GalleryKind::neighbors, std::move(pts), enc, "neighbors");
}

inline LocationGallery custom_gallery(std::vector<GeoCoordinate> points, Matrix embeddings) {
  if (points.empty()) throw EmptyGallery("empty gallery: custom");
  if (embeddings.rows != points.size() || embeddings.cols != kLocationEmbeddingDim)
    throw DimensionMismatch("gallery embeddings must be N x 512");
  LocationGallery g;
  g.kind = GalleryKind::custom;
  g.points = std::move(points);
  g.embeddings = std::move(embeddings);
  return g;
}

// ---------------------------------------------------------------------------
// Retrieval

struct RetrievalResult {
  std::size_t index = 0;
  GeoCoordinate location;
  SimilarityMap similarity;
};

inline SimilarityMap similarity_map(const std::vector<double>& query,
                                    const LocationGallery& g) {
  if (query.size() != kLocationEmbeddingDim)
    throw DimensionMismatch("query embedding must have 512 dims");
  SimilarityMap sim(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    double acc = 0.0;
    const double* row = g.embeddings.data.data() + i * kLocationEmbeddingDim;
    for (std::size_t k = 0; k < kLocationEmbeddingDim; ++k) acc += query[k] * row[k];
    sim[i] = acc;
  }
  return sim;
}

// exhaustive argmax; equal scores keep the lowest entry index
inline RetrievalResult retrieve(const std::vector<double>& query, const LocationGallery& g) {
  if (g.size() == 0) throw EmptyGallery("retrieve on an empty gallery");
  RetrievalResult r;
  r.similarity = similarity_map(query, g);
  for (std::size_t i = 1; i < r.similarity.size(); ++i)
    if (r.similarity[i] > r.similarity[r.index]) r.index = i;
  r.location = g.points[r.index];
  return r;
}

// ---------------------------------------------------------------------------
// Clip pooling

enum class PoolMode { average, max, cluster };

namespace detail {

inline void renormalize(std::vector<double>& v) {
  double n2 = 0.0;
  for (const double x : v) n2 += x * x;
  if (n2 > 0.0) {
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
  }
}

// Lloyd iterations from the k lowest-index distinct embeddings of the
// canonically sorted input. Point-to-centroid ties and largest-cluster ties
// both resolve to the lowest index, so the whole procedure is deterministic
// and permutation-invariant.
inline std::vector<double> cluster_pool(std::vector<std::vector<double>> pts) {
  std::sort(pts.begin(), pts.end());
  std::vector<std::vector<double>> centroids;
  for (const auto& p : pts) {
    if (centroids.size() == 5) break;
    if (std::find(centroids.begin(), centroids.end(), p) == centroids.end()) centroids.push_back(p);
  }
  const std::size_t k = centroids.size();
  const std::size_t dim = pts[0].size();
  std::vector<std::size_t> assign(pts.size(), 0);
  for (int iter = 0; iter < 50; ++iter) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t c = 0; c < k; ++c) {
        double d = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double t = pts[i][j] - centroids[c][j];
          d += t * t;
        }
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[i] = best;
    }
    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ++count[assign[i]];
      for (std::size_t j = 0; j < dim; ++j) next[assign[i]][j] += pts[i][j];
    }
    bool moved = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < dim; ++j) next[c][j] /= static_cast<double>(count[c]);
      if (next[c] != centroids[c]) {
        centroids[c] = std::move(next[c]);
        moved = true;
      }
    }
    if (!moved) break;
  }
  std::vector<std::size_t> count(k, 0);
  for (const auto a : assign) ++count[a];
  std::size_t largest = 0;
  for (std::size_t c = 1; c < k; ++c)
    if (count[c] > count[largest]) largest = c;
  std::vector<double> out = centroids[largest];
  renormalize(out);
  return out;
}

}  // namespace detail

inline std::vector<double> pool_clips(const std::vector<std::vector<double>>& clip_embeddings,
                                      PoolMode mode) {
  if (clip_embeddings.empty()) throw EmptyClipList("pooling needs at least one clip embedding");
  const std::size_t dim = clip_embeddings[0].size();
  for (const auto& e : clip_embeddings)
    if (e.size() != dim) throw DimensionMismatch("clip embeddings differ in dimension");
  if (mode == PoolMode::cluster) return detail::cluster_pool(clip_embeddings);
  std::vector<double> out(dim, mode == PoolMode::max ? -1e300 : 0.0);
  for (const auto& e : clip_embeddings)
    for (std::size_t j = 0; j < dim; ++j)
      out[j] = mode == PoolMode::max ? std::max(out[j], e[j])
                                     : out[j] + e[j] / static_cast<double>(clip_embeddings.size());
  detail::renormalize(out);
  return out;
}

// ---------------------------------------------------------------------------
// Species-range geolocation and the naive baseline

// argmax of the weighted range likelihood over the candidate grid; ties keep
// the lowest index, and positive rescaling of the weights cannot change the
// winner because the map is weight-normalized
inline GeoCoordinate species_range_geolocate(const ScoreVector& weights,
                                             const SyntheticRangeModel& model,
                                             const std::vector<GeoCoordinate>& grid_points) {
  if (grid_points.empty()) throw DataError("species-range geolocation needs grid points");
  const auto map = likelihood_map(model, weights, grid_points);
  std::size_t best = 0;
  for (std::size_t i = 1; i < map.size(); ++i)
    if (map[i] > map[best]) best = i;
  return grid_points[best];
}

inline std::vector<GeoCoordinate> naive_baseline(const std::vector<GeoCoordinate>& train_locations,
                                                 Rng& rng, std::size_t n_predictions) {
  if (train_locations.empty()) throw EmptyDataset("naive baseline needs training locations");
  std::vector<GeoCoordinate> out;
  out.reserve(n_predictions);
  for (std::size_t i = 0; i < n_predictions; ++i)
    out.push_back(train_locations[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(train_locations.size()) - 1))]);
  return out;
}

// ---------------------------------------------------------------------------
// Spatiotemporal aggregation

enum class TimePeriod { year, month, week };

struct GroupKey {
  std::int64_t cell_id = 0;
  int period_index = 0;  // year number, month 1-12, or ISO week 1-52

  auto operator<=>(const GroupKey&) const = default;
};

namespace detail {

// days since 1970-01-01 (Gregorian, proleptic)
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<std::uint32_t>(y - era * 400);
  const auto doy = static_cast<std::uint32_t>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const std::uint32_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

}  // namespace detail

// ISO-8601 week number, folded into 1..52 (the occasional week 53 counts as
// 52 so every scheme has a fixed key range).
inline int iso_week(const UtcTime& t) {
  const std::int64_t days = detail::days_from_civil(t.year, t.month, t.day);
  const auto weekday_of = [](std::int64_t d) {  // Mon=1 .. Sun=7
    return static_cast<int>(((d + 3) % 7 + 7) % 7) + 1;
  };
  const std::int64_t jan1 = detail::days_from_civil(t.year, 1, 1);
  const int ordinal = static_cast<int>(days - jan1) + 1;
  const int week = (ordinal - weekday_of(days) + 10) / 7;
  if (week < 1) return 52;  // tail days belonging to the previous ISO year
  if (week > 52) {
    const bool leap = (t.year % 4 == 0 && t.year % 100 != 0) || t.year % 400 == 0;
    const bool has_53 = weekday_of(jan1) == 4 || (leap && weekday_of(jan1) == 3);
    return has_53 ? 52 : 1;  // real week 53 clamps; otherwise it is next year's week 1
  }
  return week;
}

inline GroupKey group_key(const HierarchicalGrid& grid, int level, TimePeriod period,
                          const GeoCoordinate& location, const UtcTime& time) {
  GroupKey key;
  key.cell_id = cell_of(grid, level, location).cell_id;
  switch (period) {
    case TimePeriod::year:
      key.period_index = time.year;
      break;
    case TimePeriod::month:
      key.period_index = time.month;
      break;
    case TimePeriod::week:
      key.period_index = iso_week(time);
      break;
  }
  return key;
}

// deterministic grouping: keys ascending, members in input order
inline std::vector<std::pair<GroupKey, std::vector<std::size_t>>> group_recordings(
    const std::vector<GeoCoordinate>& locations, const std::vector<UtcTime>& times,
    const HierarchicalGrid& grid, int level, TimePeriod period) {
  if (locations.size() != times.size())
    throw LengthMismatch("grouping needs one timestamp per location");
  std::map<GroupKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < locations.size(); ++i)
    groups[group_key(grid, level, period, locations[i], times[i])].push_back(i);
  return {groups.begin(), groups.end()};
}

// mean of the group's similarity maps, then argmax; the one aggregated
// location is assigned to every member
inline GeoCoordinate aggregate_group(const std::vector<SimilarityMap>& maps,
                                     const LocationGallery& g) {
  if (maps.empty()) throw EmptyClipList("aggregation needs at least one similarity map");
  SimilarityMap mean(g.size(), 0.0);
  for (const auto& m : maps) {
    if (m.size() != g.size())
      throw GalleryMismatch("similarity map does not match the gallery size");
    for (std::size_t i = 0; i < m.size(); ++i) mean[i] += m[i];
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < mean.size(); ++i)
    if (mean[i] > mean[best]) best = i;
  return g.points[best];
}

// ---------------------------------------------------------------------------
// Gallery export/import: CSV of coordinates plus an "S2LE" embedding file
// (dim 512, record ids are row indices).

inline void export_gallery(const LocationGallery& g, const std::string& csv_path,
                           const std::string& emb_path) {
  auto os = open_out(csv_path, false);
  os << "lat,lon\n";
  char buf[64];
  for (const auto& p : g.points) {
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g\n", p.lat_deg, p.lon_deg);
    os << buf;
  }
  if (!os) throw IoError("failed writing gallery csv: " + csv_path);
  std::vector<EmbeddingRecord> recs(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    recs[i].recording_id = i;
    recs[i].clip_index = 0;
    const double* row = g.embeddings.data.data() + i * kLocationEmbeddingDim;
    recs[i].embedding.assign(row, row + kLocationEmbeddingDim);
  }
  save_embeddings(emb_path, recs, kLocationEmbeddingDim);
}

inline LocationGallery import_gallery(const std::string& csv_path, const std::string& emb_path) {
  auto in = open_in(csv_path);
  std::string line;
  if (!std::getline(in, line) || line != "lat,lon")
    throw CorruptFile("gallery csv must start with a lat,lon header: " + csv_path);
  std::vector<GeoCoordinate> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    GeoCoordinate p;
    if (std::sscanf(line.c_str(), "%lf,%lf", &p.lat_deg, &p.lon_deg) != 2)
      throw CorruptFile("gallery csv row is not lat,lon: " + csv_path);
    pts.push_back(p);
  }
  const auto recs = load_embeddings(emb_path);
  if (recs.size() != pts.size())
    throw GalleryMismatch("gallery csv and embedding file disagree on entry count");
  Matrix emb(pts.size(), kLocationEmbeddingDim);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].embedding.size() != kLocationEmbeddingDim)
      throw DimensionMismatch("gallery embeddings must have 512 dims");
    std::copy(recs[i].embedding.begin(), recs[i].embedding.end(),
              emb.data.begin() + static_cast<std::ptrdiff_t>(i * kLocationEmbeddingDim));
  }
  return custom_gallery(std::move(pts), std::move(emb));
}

}  // namespace s2l
