#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>

#include "sound2loc/geodesy.hpp"
#include "sound2loc/rng.hpp"

using namespace s2l;

namespace {

// Independent great-circle oracle: law-of-cosines family evaluated through
// atan2 in extended precision. Shares no code with haversine_km.
long double great_circle_oracle_km(const GeoCoordinate& a, const GeoCoordinate& b) {
  const long double deg = 3.14159265358979323846264338327950288L / 180.0L;
  const long double p1 = static_cast<long double>(a.lat_deg) * deg;
  const long double p2 = static_cast<long double>(b.lat_deg) * deg;
  const long double dl = static_cast<long double>(b.lon_deg - a.lon_deg) * deg;
  const long double x = std::cos(p2) * std::sin(dl);
  const long double y = std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dl);
  const long double z = std::sin(p1) * std::sin(p2) + std::cos(p1) * std::cos(p2) * std::cos(dl);
  return 6371.0L * std::atan2(std::sqrt(x * x + y * y), z);
}

GeoCoordinate random_point(Rng& rng) {
  const double lat = std::asin(rng.uniform(-1.0, 1.0)) * 180.0 / M_PI;
  return {lat, rng.uniform(-180.0, 180.0)};
}

// true iff the cell claims p under the documented tie convention
bool bounds_claim(const CellBounds& b, double sin_lat, double lon) {
  const bool lat_ok =
      (b.first_band ? sin_lat >= b.sin_lo : sin_lat > b.sin_lo) && sin_lat <= b.sin_hi;
  const bool lon_ok = (b.first_arc ? lon >= b.lon_lo : lon > b.lon_lo) && lon <= b.lon_hi;
  return lat_ok && lon_ok;
}

double circumradius_km(const HierarchicalGrid& g, int level, std::int64_t id) {
  const auto cell = cell_at(g, level, id);
  const auto b = cell_bounds(g, level, id);
  const double lat_lo = std::asin(std::clamp(b.sin_lo, -1.0, 1.0)) * 180.0 / M_PI;
  const double lat_hi = std::asin(std::clamp(b.sin_hi, -1.0, 1.0)) * 180.0 / M_PI;
  double worst = 0.0;
  const int n = 8;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double lon = b.lon_lo + (b.lon_hi - b.lon_lo) * t;
    const double lat = lat_lo + (lat_hi - lat_lo) * t;
    for (const double la : {lat_lo, lat_hi})
      worst = std::max(worst, haversine_km(cell.center, {la, std::clamp(lon, -180.0, 180.0 - 1e-12)}));
    for (const double lo : {b.lon_lo, b.lon_hi})
      worst = std::max(worst, haversine_km(cell.center, {lat, std::clamp(lo, -180.0, 180.0 - 1e-12)}));
  }
  return worst;
}

}  // namespace

TEST_CASE("haversine pinned values", "[geodesy]") {
  CHECK(haversine_km({10, 20}, {10, 20}) == 0.0);
  CHECK_THAT(haversine_km({0, 0}, {0, 179.9999999}), Catch::Matchers::WithinAbs(20015.0868, 0.01));
  CHECK_THAT(haversine_km({0, -180}, {0, 0}), Catch::Matchers::WithinAbs(M_PI * 6371.0, 1e-6));
  // Berlin -> Paris
  const double d = haversine_km({52.5200, 13.4050}, {48.8566, 2.3522});
  CHECK_THAT(d, Catch::Matchers::WithinAbs(877.4633259175, 1e-6));
  CHECK_THAT(d, Catch::Matchers::WithinAbs(877.46, 0.01));
}

TEST_CASE("haversine matches extended-precision oracle", "[geodesy]") {
  Rng rng(20240811);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const auto a = random_point(rng);
    const auto b = random_point(rng);
    const double got = haversine_km(a, b);
    const double want = static_cast<double>(great_circle_oracle_km(a, b));
    const double rel = std::abs(got - want) / std::max(1e-300, want);
    if (want > 1e-9) worst = std::max(worst, rel);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("haversine symmetry and triangle inequality", "[geodesy]") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_point(rng);
    const auto b = random_point(rng);
    const auto c = random_point(rng);
    const double ab = haversine_km(a, b), ba = haversine_km(b, a);
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab <= M_PI * 6371.0 + 1e-9);
    CHECK(haversine_km(a, c) <= ab + haversine_km(b, c) + 1e-9);
  }
}

TEST_CASE("wrap_coordinate", "[geodesy]") {
  auto p = wrap_coordinate(45, 190);
  CHECK(p.lat_deg == 45.0);
  CHECK(p.lon_deg == -170.0);
  p = wrap_coordinate(95, 0);
  CHECK(p.lat_deg == 90.0);
  CHECK(p.lon_deg == 0.0);
  p = wrap_coordinate(0, -180);
  CHECK(p.lat_deg == 0.0);
  CHECK(p.lon_deg == -180.0);
  p = wrap_coordinate(-95.5, -181);
  CHECK(p.lat_deg == -90.0);
  CHECK(p.lon_deg == 179.0);
  p = wrap_coordinate(0, 180);
  CHECK(p.lon_deg == -180.0);
  p = wrap_coordinate(0, 720.25);
  CHECK_THAT(p.lon_deg, Catch::Matchers::WithinAbs(0.25, 1e-12));
  CHECK_THROWS_AS(wrap_coordinate(std::nan(""), 0), InvalidCoordinate);
  CHECK_THROWS_AS(wrap_coordinate(0, INFINITY), InvalidCoordinate);
  for (int i = 0; i < 1000; ++i) {
    Rng rng(i);
    CHECK(coordinate_valid(wrap_coordinate(rng.uniform(-500, 500), rng.uniform(-1000, 1000))));
  }
}

TEST_CASE("build_grid cell counts and areas", "[geodesy]") {
  const auto g = build_grid({4.36e6, 6.1e5, 9.0e4});
  REQUIRE(g.levels.size() == 3);
  // enumerated counts for this construction; ~4*pi*R^2/target
  CHECK(g.levels[0].n_cells() == 117);
  CHECK(g.levels[1].n_cells() == 819);
  CHECK(g.levels[2].n_cells() == 5733);
  for (std::size_t li = 0; li < 3; ++li) {
    const double tgt = g.target_areas_km2[li];
    CHECK(std::abs(g.levels[li].area_km2 - tgt) / tgt <= 0.20);
    const double ideal_count = kSphereAreaKm2 / tgt;
    CHECK(std::abs(static_cast<double>(g.levels[li].n_cells()) - ideal_count) / ideal_count <= 0.10);
    // cells tile the sphere exactly: count * area = sphere area
    CHECK_THAT(static_cast<double>(g.levels[li].n_cells()) * g.levels[li].area_km2,
               Catch::Matchers::WithinRel(kSphereAreaKm2, 1e-12));
  }

  const auto half = build_grid({2.55e8});
  CHECK(half.levels[0].n_cells() == 2);

  const auto agg = build_grid({253.0, 36.0});
  CHECK(std::abs(agg.levels[0].area_km2 - 253.0) / 253.0 <= 0.20);
  CHECK(std::abs(agg.levels[1].area_km2 - 36.0) / 36.0 <= 0.20);
}

TEST_CASE("build_grid rejects bad specs", "[geodesy]") {
  CHECK_THROWS_AS(build_grid({}), InvalidGridSpec);
  CHECK_THROWS_AS(build_grid({1e6, 1e6}), InvalidGridSpec);
  CHECK_THROWS_AS(build_grid({1e5, 1e6}), InvalidGridSpec);
  CHECK_THROWS_AS(build_grid({-5.0}), InvalidGridSpec);
  CHECK_THROWS_AS(build_grid({4e8}), InvalidGridSpec);
  const auto g = build_grid({4.36e6});
  CHECK_THROWS_AS(cell_of(g, 1, {0, 0}), InvalidLevel);
  CHECK_THROWS_AS(cell_of(g, -1, {0, 0}), InvalidLevel);
}

TEST_CASE("every cell center maps back to its own cell", "[geodesy]") {
  for (const auto& g : {build_grid({4.36e6, 6.1e5, 9.0e4}), build_grid({2.55e8, 3.2e7})}) {
    for (std::size_t li = 0; li < g.levels.size(); ++li) {
      for (std::int64_t id = 0; id < g.levels[li].n_cells(); ++id) {
        const auto c = cell_at(g, static_cast<int>(li), id);
        CHECK(cell_of(g, static_cast<int>(li), c.center).cell_id == id);
      }
    }
  }
}

TEST_CASE("nesting: parent of fine cell is the coarse cell", "[geodesy]") {
  const auto g = build_grid({4.36e6, 6.1e5, 9.0e4});
  Rng rng(99);
  for (int i = 0; i < 100000; ++i) {
    const auto p = random_point(rng);
    const auto c2 = cell_of(g, 2, p);
    const auto c1 = cell_of(g, 1, p);
    const auto c0 = cell_of(g, 0, p);
    REQUIRE(parent_of(g, 2, c2.cell_id) == c1.cell_id);
    REQUIRE(parent_of(g, 1, c1.cell_id) == c0.cell_id);
  }
}

TEST_CASE("child centers lie inside their parents", "[geodesy]") {
  const auto g = build_grid({4.36e6, 6.1e5, 9.0e4});
  for (int li = 1; li < 3; ++li) {
    for (std::int64_t id = 0; id < g.levels[static_cast<std::size_t>(li)].n_cells(); ++id) {
      const auto c = cell_at(g, li, id);
      REQUIRE(cell_of(g, li - 1, c.center).cell_id == parent_of(g, li, id));
    }
  }
}

TEST_CASE("children_of enumerates exactly the nested cells", "[geodesy]") {
  const auto g = build_grid({4.36e6, 6.1e5, 9.0e4});
  Rng rng(3);
  for (int li = 0; li < 2; ++li) {
    std::int64_t total = 0;
    for (std::int64_t id = 0; id < g.levels[static_cast<std::size_t>(li)].n_cells(); ++id) {
      const auto kids = children_of(g, li, id);
      total += static_cast<std::int64_t>(kids.size());
      for (const auto k : kids) REQUIRE(parent_of(g, li + 1, k) == id);
    }
    CHECK(total == g.levels[static_cast<std::size_t>(li) + 1].n_cells());
  }
}

TEST_CASE("partition: exactly one cell claims each point", "[geodesy]") {
  const auto g = build_grid({4.36e6, 6.1e5, 9.0e4});
  Rng rng(41);
  for (int i = 0; i < 100000; ++i) {
    const auto p = random_point(rng);
    const double s = std::sin(p.lat_deg * M_PI / 180.0);
    for (int li = 0; li < 3; ++li) {
      const auto got = cell_of(g, li, p);
      // candidate cells: the one found plus all 8 neighbours in (band, arc)
      // space; claims must be unique among them and include the found cell
      int claims = 0;
      const auto& lv = g.levels[static_cast<std::size_t>(li)];
      const auto ba = detail::locate_id(lv, got.cell_id);
      for (int db = -1; db <= 1; ++db) {
        const auto b = static_cast<std::ptrdiff_t>(ba.band) + db;
        if (b < 0 || b >= static_cast<std::ptrdiff_t>(lv.n_bands())) continue;
        const auto n = lv.arcs[static_cast<std::size_t>(b)];
        const auto mid = detail::arc_of_lon(p.lon_deg, n);
        for (std::int64_t a = std::max<std::int64_t>(0, mid - 1);
             a <= std::min<std::int64_t>(n - 1, mid + 1); ++a) {
          const auto id = lv.offset[static_cast<std::size_t>(b)] + a;
          if (bounds_claim(cell_bounds(g, li, id), s, p.lon_deg)) ++claims;
        }
      }
      REQUIRE(claims == 1);
      REQUIRE(bounds_claim(cell_bounds(g, li, got.cell_id), s, p.lon_deg));
    }
  }
}

TEST_CASE("boundary ties pick the lower cell id", "[geodesy]") {
  const auto g = build_grid({4.36e6, 6.1e5, 9.0e4});
  const auto& lv = g.levels[1];
  // a latitude exactly on an interior band edge belongs to the southern band
  const double edge_sin = lv.sin_edges[3];
  const double lat = std::asin(edge_sin) * 180.0 / M_PI;
  const auto cell = cell_of(g, 1, {lat, 0.0});
  const auto b = cell_bounds(g, 1, cell.cell_id);
  CHECK(b.sin_hi == edge_sin);
  // a longitude exactly on an arc edge belongs to the western arc
  const auto n = lv.arcs[3];
  const double lon_edge = -180.0 + 2.0 * 360.0 / static_cast<double>(n);
  const double mid_lat =
      std::asin((lv.sin_edges[3] + lv.sin_edges[4]) / 2.0) * 180.0 / M_PI;
  const auto cell2 = cell_of(g, 1, {mid_lat, lon_edge});
  CHECK(cell_bounds(g, 1, cell2.cell_id).lon_hi == lon_edge);
  // longitude -180 belongs to the first arc of its band
  const auto cell3 = cell_of(g, 1, {mid_lat, -180.0});
  CHECK(cell_bounds(g, 1, cell3.cell_id).first_arc);
}

TEST_CASE("points stay within their cell's boundary-sampled circumradius", "[geodesy]") {
  const auto g = build_grid({4.36e6, 6.1e5, 9.0e4});
  std::vector<std::vector<double>> radius(3);
  for (int li = 0; li < 3; ++li) {
    radius[static_cast<std::size_t>(li)].resize(
        static_cast<std::size_t>(g.levels[static_cast<std::size_t>(li)].n_cells()));
    for (std::int64_t id = 0; id < g.levels[static_cast<std::size_t>(li)].n_cells(); ++id)
      radius[static_cast<std::size_t>(li)][static_cast<std::size_t>(id)] =
          circumradius_km(g, li, id);
  }
  Rng rng(55);
  for (int i = 0; i < 10000; ++i) {
    const auto p = random_point(rng);
    for (int li = 0; li < 3; ++li) {
      const auto c = cell_of(g, li, p);
      // 1.02: the oracle samples the boundary at finite resolution
      REQUIRE(haversine_km(p, c.center) <=
              radius[static_cast<std::size_t>(li)][static_cast<std::size_t>(c.cell_id)] * 1.02);
    }
  }
}

TEST_CASE("grid csv export", "[geodesy]") {
  const auto g = build_grid({2.55e8, 3.2e7});
  std::ostringstream os;
  export_grid_csv(g, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "level,cell_id,center_lat,center_lon,area_km2");
  std::int64_t rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == g.levels[0].n_cells() + g.levels[1].n_cells());
  CHECK(os.str().find("0,0,") != std::string::npos);
}
