#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <vector>

#include "sound2loc/rangemap.hpp"
#include "sound2loc/rng.hpp"

using namespace s2l;

namespace {

GeoCoordinate random_point(Rng& rng) {
  const double lat = std::asin(rng.uniform(-1.0, 1.0)) * 180.0 / M_PI;
  return {lat, rng.uniform(-180.0, 180.0)};
}

SyntheticRangeModel random_model(Rng& rng, std::size_t n_species) {
  SyntheticRangeModel m;
  m.species.resize(n_species);
  for (auto& sp : m.species) {
    const auto n_bumps = static_cast<std::size_t>(rng.uniform_int(1, 3));
    for (std::size_t b = 0; b < n_bumps; ++b)
      sp.push_back(RangeBump{random_point(rng), rng.uniform(50.0, 1500.0), rng.uniform(0.05, 1.0)});
  }
  return m;
}

Checklist make_checklist(std::size_t size, const std::vector<std::size_t>& present) {
  Checklist c(size, 0);
  for (auto s : present) c[s] = 1;
  return c;
}

std::set<std::size_t> present_set(const Checklist& c) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i]) s.insert(i);
  return s;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("presence score closed forms", "[rangemap]") {
  SECTION("bump center returns the peak weight") {
    SyntheticRangeModel m;
    m.species = {{RangeBump{{40.0, -105.0}, 300.0, 0.9}}};
    const auto s = presence_scores(m, {40.0, -105.0});
    REQUIRE(s.size() == 1);
    REQUIRE(s[0] == 0.9);
  }

  SECTION("one sigma out decays to exp(-1/2)") {
    const double sigma = 200.0;
    SyntheticRangeModel m;
    m.species = {{RangeBump{{0.0, 0.0}, sigma, 1.0}}};
    // Along a meridian the haversine distance is exactly R * delta_lat.
    const double dlat = sigma / kEarthRadiusKm * 180.0 / M_PI;
    const auto s = presence_scores(m, {dlat, 0.0});
    REQUIRE(std::abs(s[0] - std::exp(-0.5)) < 1e-9);
  }

  SECTION("antipodal points score numerically zero") {
    Rng rng(3);
    SyntheticRangeModel m;
    m.species.resize(20);
    for (auto& sp : m.species)
      sp.push_back(RangeBump{{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)},
                             rng.uniform(50.0, 500.0), 1.0});
    const auto s = presence_scores(m, {0.0, -180.0});
    for (double v : s) REQUIRE(v < 1e-100);
  }

  SECTION("max over bumps, not sum") {
    SyntheticRangeModel m;
    m.species = {{RangeBump{{10.0, 10.0}, 100.0, 0.6}, RangeBump{{10.0, 10.0}, 100.0, 0.8}}};
    REQUIRE(presence_scores(m, {10.0, 10.0})[0] == 0.8);
  }
}

TEST_CASE("checklist thresholding is inclusive", "[rangemap]") {
  REQUIRE(oracle_checklist({0.05, 0.10, 0.50}) == Checklist{0, 1, 1});
  REQUIRE(oracle_checklist({0.0, 0.0, 0.0}) == Checklist{0, 0, 0});
  REQUIRE(oracle_checklist({1e-300, 0.02, 0.7}, 0.0) == Checklist{1, 1, 1});
}

TEST_CASE("checklist corruption flips an exact count of present bits", "[rangemap]") {
  SECTION("fraction 0 is the identity") {
    const auto c = make_checklist(20, {1, 4, 9, 16});
    Rng rng(5);
    REQUIRE(corrupt_checklist(c, 0.0, rng) == c);
  }

  SECTION("fraction 1 clears every present bit") {
    const auto c = make_checklist(30, {0, 3, 6, 9, 12, 15, 18});
    Rng rng(5);
    const auto out = corrupt_checklist(c, 1.0, rng);
    REQUIRE(present_set(out).empty());
  }

  SECTION("fraction 0.5 with 10 present keeps exactly 5") {
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < 10; ++i) present.push_back(i * 3);
    const auto c = make_checklist(40, present);
    Rng rng(17);
    const auto out = corrupt_checklist(c, 0.5, rng);
    REQUIRE(present_set(out).size() == 5);
  }

  SECTION("floor rule and no absent-to-present flips, random cases") {
    Rng rng(99);
    for (int rep = 0; rep < 200; ++rep) {
      const auto size = static_cast<std::size_t>(rng.uniform_int(1, 50));
      Checklist c(size, 0);
      for (auto& b : c) b = rng.uniform() < 0.4 ? 1 : 0;
      const double f = rng.uniform();
      const auto before = present_set(c);
      Rng corrupt_rng(rng.next_u64());
      const auto out = corrupt_checklist(c, f, corrupt_rng);
      const auto after = present_set(out);
      const auto expect_flipped = static_cast<std::size_t>(f * static_cast<double>(before.size()));
      REQUIRE(after.size() == before.size() - expect_flipped);
      for (auto s : after) REQUIRE(before.count(s) == 1);  // no new species appear
    }
  }

  SECTION("equal seeds give nested flip sets across fractions") {
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < 30; ++i) present.push_back(i);
    const auto c = make_checklist(30, present);
    const double fractions[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<std::set<std::size_t>> survivors;
    for (double f : fractions) {
      Rng rng(321);
      survivors.push_back(present_set(corrupt_checklist(c, f, rng)));
    }
    for (std::size_t i = 1; i < survivors.size(); ++i)
      for (auto s : survivors[i]) REQUIRE(survivors[i - 1].count(s) == 1);
  }

  SECTION("fraction outside [0,1] is rejected") {
    Rng rng(1);
    const auto c = make_checklist(5, {0});
    REQUIRE_THROWS_AS(corrupt_checklist(c, -0.1, rng), DataError);
    REQUIRE_THROWS_AS(corrupt_checklist(c, 1.5, rng), DataError);
  }
}

TEST_CASE("keep_random_k retains at most k species", "[rangemap]") {
  SECTION("under k passes through unchanged") {
    const auto c = make_checklist(20, {2, 7, 11});
    Rng rng(8);
    REQUIRE(keep_random_k(c, 10, rng) == c);
  }

  SECTION("50 present, k=10 keeps exactly 10 originally-present species") {
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < 50; ++i) present.push_back(i * 2);
    const auto c = make_checklist(100, present);
    Rng rng(8);
    const auto out = keep_random_k(c, 10, rng);
    const auto kept = present_set(out);
    REQUIRE(kept.size() == 10);
    for (auto s : kept) REQUIRE(c[s] == 1);
  }

  SECTION("k=0 clears the checklist") {
    const auto c = make_checklist(10, {1, 2, 3});
    Rng rng(8);
    REQUIRE(present_set(keep_random_k(c, 0, rng)).empty());
  }

  SECTION("different seeds pick different subsets") {
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < 40; ++i) present.push_back(i);
    const auto c = make_checklist(40, present);
    Rng r1(1), r2(2);
    REQUIRE(keep_random_k(c, 10, r1) != keep_random_k(c, 10, r2));
  }
}

TEST_CASE("likelihood map combines species maps linearly", "[rangemap]") {
  Rng rng(14);
  const auto m = random_model(rng, 8);
  std::vector<GeoCoordinate> grid;
  for (int i = 0; i < 50; ++i) grid.push_back(random_point(rng));

  SECTION("one-hot weights reproduce the species map") {
    ScoreVector w(8, 0.0);
    w[3] = 1.0;
    const auto map = likelihood_map(m, w, grid);
    for (std::size_t i = 0; i < grid.size(); ++i)
      REQUIRE(map[i] == presence_score(m.species[3], grid[i]));
  }

  SECTION("duplicated species with equal weights equals either map") {
    SyntheticRangeModel dup;
    dup.species = {m.species[0], m.species[0]};
    const auto map = likelihood_map(dup, {0.5, 0.5}, grid);
    for (std::size_t i = 0; i < grid.size(); ++i)
      REQUIRE(std::abs(map[i] - presence_score(m.species[0], grid[i])) < 1e-15);
  }

  SECTION("invariant to positive rescaling of weights") {
    ScoreVector w;
    for (int s = 0; s < 8; ++s) w.push_back(rng.uniform(0.0, 2.0));
    ScoreVector scaled = w;
    for (double& v : scaled) v *= 3.7;
    const auto a = likelihood_map(m, w, grid);
    const auto b = likelihood_map(m, scaled, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) < 1e-12);
  }

  SECTION("all-zero weights fall back to the unweighted mean") {
    const auto map = likelihood_map(m, ScoreVector(8, 0.0), grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      double mean = 0.0;
      for (const auto& sp : m.species) mean += presence_score(sp, grid[i]);
      mean /= 8.0;
      REQUIRE(std::abs(map[i] - mean) < 1e-15);
    }
  }

  SECTION("weight vector length must match") {
    REQUIRE_THROWS_AS(likelihood_map(m, ScoreVector(5, 1.0), grid), ShapeError);
  }

  SECTION("negative or non-finite weights are rejected") {
    ScoreVector w(8, 1.0);
    w[2] = -0.5;
    REQUIRE_THROWS_AS(likelihood_map(m, w, grid), DataError);
    w[2] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(likelihood_map(m, w, grid), DataError);
  }
}

TEST_CASE("single-species map peaks at the bump center", "[rangemap]") {
  SyntheticRangeModel m;
  m.species = {{RangeBump{{10.05, 20.05}, 150.0, 0.8}}};
  // Dense 0.1-degree grid around the bump; the argmax must land within one
  // grid step of the center.
  std::vector<GeoCoordinate> grid;
  for (int i = 0; i <= 100; ++i)
    for (int j = 0; j <= 100; ++j) grid.push_back({5.0 + 0.1 * i, 15.0 + 0.1 * j});
  const auto map = likelihood_map(m, {1.0}, grid);
  std::size_t best = 0;
  for (std::size_t i = 1; i < map.size(); ++i)
    if (map[i] > map[best]) best = i;
  REQUIRE(std::abs(grid[best].lat_deg - 10.05) < 0.1 + 1e-9);
  REQUIRE(std::abs(grid[best].lon_deg - 20.05) < 0.1 + 1e-9);
}

TEST_CASE("containment radius predicts checklist membership", "[rangemap]") {
  Rng rng(2024);
  const auto m = random_model(rng, 25);
  int checked = 0;
  while (checked < 1000) {
    const auto s = static_cast<std::size_t>(rng.uniform_int(0, 24));
    // Half global-uniform, half near a bump so both sides of the threshold
    // show up.
    GeoCoordinate x;
    if (rng.uniform() < 0.5) {
      x = random_point(rng);
    } else {
      const auto& b = m.species[s][static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(m.species[s].size()) - 1))];
      x = {std::clamp(b.center.lat_deg + rng.uniform(-10.0, 10.0), -90.0, 90.0),
           std::clamp(b.center.lon_deg + rng.uniform(-10.0, 10.0), -180.0, 179.999)};
    }
    const double score = presence_score(m.species[s], x);
    if (std::abs(score - kPresenceThreshold) < 1e-9) continue;  // skip knife-edge cases
    bool within = false;
    for (const auto& b : m.species[s])
      if (b.weight >= kPresenceThreshold &&
          haversine_km(x, b.center) <= containment_radius_km(b))
        within = true;
    const auto bit = oracle_checklist(presence_scores(m, x))[s];
    REQUIRE(bit == (within ? 1 : 0));
    ++checked;
  }
}

TEST_CASE("range model JSON round-trips", "[rangemap]") {
  const auto path = temp_file("s2l_range_test.json");
  Rng rng(77);
  const auto m = random_model(rng, 12);
  save_range_model(m, path.string());
  const auto back = load_range_model(path.string());
  REQUIRE(back.n_species() == m.n_species());
  for (std::size_t s = 0; s < m.n_species(); ++s) {
    REQUIRE(back.species[s].size() == m.species[s].size());
    for (std::size_t b = 0; b < m.species[s].size(); ++b) {
      REQUIRE(back.species[s][b].center.lat_deg == m.species[s][b].center.lat_deg);
      REQUIRE(back.species[s][b].center.lon_deg == m.species[s][b].center.lon_deg);
      REQUIRE(back.species[s][b].sigma_km == m.species[s][b].sigma_km);
      REQUIRE(back.species[s][b].weight == m.species[s][b].weight);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("range model JSON rejects malformed input", "[rangemap]") {
  const auto path = temp_file("s2l_range_bad.json");

  SECTION("not JSON at all") {
    std::ofstream(path) << "definitely not json {";
    REQUIRE_THROWS_AS(load_range_model(path.string()), CorruptFile);
  }

  SECTION("root must be an object") {
    std::ofstream(path) << "[1, 2, 3]";
    REQUIRE_THROWS_AS(load_range_model(path.string()), CorruptFile);
  }

  SECTION("species keys must be indices 0..S-1") {
    std::ofstream(path) << R"({"robin": [{"lat": 0, "lon": 0, "sigma_km": 10, "weight": 1}]})";
    REQUIRE_THROWS_AS(load_range_model(path.string()), CorruptFile);
    std::ofstream(path) << R"({"0": [{"lat": 0, "lon": 0, "sigma_km": 10, "weight": 1}],)"
                        << R"( "2": [{"lat": 0, "lon": 0, "sigma_km": 10, "weight": 1}]})";
    REQUIRE_THROWS_AS(load_range_model(path.string()), CorruptFile);
  }

  SECTION("bump count outside 1..3") {
    std::ofstream(path) << R"({"0": []})";
    REQUIRE_THROWS_AS(load_range_model(path.string()), CorruptFile);
    std::ofstream out(path);
    out << R"({"0": [)";
    for (int i = 0; i < 4; ++i)
      out << R"({"lat": 0, "lon": 0, "sigma_km": 10, "weight": 1})" << (i < 3 ? "," : "");
    out << "]}";
    out.close();
    REQUIRE_THROWS_AS(load_range_model(path.string()), CorruptFile);
  }

  SECTION("missing bump field") {
    std::ofstream(path) << R"({"0": [{"lat": 0, "lon": 0, "weight": 1}]})";
    REQUIRE_THROWS_AS(load_range_model(path.string()), CorruptFile);
  }

  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_range_model("/nonexistent/range.json"), IoError);
  }

  std::filesystem::remove(path);
}
