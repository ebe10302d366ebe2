#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "sound2loc/encoders.hpp"
#include "sound2loc/rng.hpp"

using namespace s2l;

namespace {

GeoCoordinate random_point(Rng& rng) {
  const double lat = std::asin(rng.uniform(-1.0, 1.0)) * 180.0 / M_PI;
  return {lat, rng.uniform(-180.0, 180.0)};
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

// Moves p roughly `km` kilometres along compass bearing `bearing_rad`.
GeoCoordinate offset_km(const GeoCoordinate& p, double km, double bearing_rad) {
  const double dlat = km / 111.194926644559 * std::cos(bearing_rad);
  const double coslat = std::cos(p.lat_deg * M_PI / 180.0);
  const double dlon = km / (111.194926644559 * coslat) * std::sin(bearing_rad);
  double lon = p.lon_deg + dlon;
  if (lon >= 180.0) lon -= 360.0;
  if (lon < -180.0) lon += 360.0;
  return {p.lat_deg + dlat, lon};
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

// Tone-burst clip in the style of the synthetic world generator: a handful
// of fixed sinusoids per species plus white noise at 10 dB SNR.
Waveform species_clip(const std::vector<double>& freqs, Rng& rng, double seconds = 3.0) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * kCanonicalRateHz));
  Waveform w;
  w.sample_rate = kCanonicalRateHz;
  w.samples.assign(n, 0.0);
  for (double f : freqs) {
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (std::size_t i = 0; i < n; ++i)
      w.samples[i] += 0.7 * std::sin(2.0 * M_PI * f * static_cast<double>(i) / kCanonicalRateHz + phase);
  }
  double power = 0.0;
  for (double v : w.samples) power += v * v;
  power /= static_cast<double>(n);
  const double sigma = std::sqrt(power / 10.0);  // 10 dB SNR
  for (auto& v : w.samples) v += rng.normal(0.0, sigma);
  return w;
}

}  // namespace

TEST_CASE("location embeddings are unit-norm for random coordinates", "[encoders]") {
  FourierLocationEncoder enc(31);
  Rng rng(7);
  std::vector<GeoCoordinate> pts;
  for (int i = 0; i < 10000; ++i) pts.push_back(random_point(rng));
  const Matrix y = enc.encode(pts);
  REQUIRE(y.rows == pts.size());
  REQUIRE(y.cols == kLocationEmbeddingDim);
  for (std::size_t i = 0; i < y.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) s += y(i, j) * y(i, j);
    REQUIRE(std::abs(std::sqrt(s) - 1.0) < 1e-9);
  }
}

TEST_CASE("location encoder frequency matrix is scale-blocked", "[encoders]") {
  FourierLocationEncoder enc(5);
  REQUIRE(enc.freq.rows == 64);
  REQUIRE(enc.freq.cols == 3);
  // Blocks of 16 rows share a scale in {1, 4, 16, 64}: the per-block RMS of
  // the entries should sit near the scale (48 N(0,1) draws per block).
  for (int blk = 0; blk < 4; ++blk) {
    double ms = 0.0;
    for (int i = blk * 16; i < (blk + 1) * 16; ++i)
      for (int j = 0; j < 3; ++j) ms += enc.freq(i, j) * enc.freq(i, j);
    const double rms = std::sqrt(ms / 48.0);
    const double scale = std::pow(4.0, blk);
    REQUIRE(rms > 0.6 * scale);
    REQUIRE(rms < 1.5 * scale);
  }
}

TEST_CASE("longitude wrap-around maps to the same embedding", "[encoders]") {
  FourierLocationEncoder enc(11);
  const auto a = enc.encode_one({47.3769, 8.5417});
  const auto b = enc.encode_one({47.3769, 8.5417 - 360.0});
  for (std::size_t j = 0; j < a.size(); ++j) REQUIRE(std::abs(a[j] - b[j]) < 1e-9);
}

TEST_CASE("location encoder is deterministic in its seed", "[encoders]") {
  FourierLocationEncoder a(123), b(123), c(124);
  const GeoCoordinate p{-12.5, 130.25};
  REQUIRE(a.encode_one(p) == b.encode_one(p));
  REQUIRE(a.encode_one(p) != c.encode_one(p));
}

TEST_CASE("nearby points embed closer than distant points on average", "[encoders]") {
  double near_sum = 0.0, far_sum = 0.0;
  Rng rng(202);
  for (int seed = 0; seed < 100; ++seed) {
    FourierLocationEncoder enc(1000 + static_cast<std::uint64_t>(seed));
    GeoCoordinate base{rng.uniform(-60.0, 60.0), rng.uniform(-180.0, 180.0)};
    const GeoCoordinate near = offset_km(base, 1.0, rng.uniform(0.0, 2.0 * M_PI));
    GeoCoordinate far = random_point(rng);
    while (haversine_km(base, far) < 10000.0) far = random_point(rng);
    const auto e0 = enc.encode_one(base);
    near_sum += dot(e0, enc.encode_one(near));
    far_sum += dot(e0, enc.encode_one(far));
  }
  REQUIRE(near_sum / 100.0 > far_sum / 100.0);
}

TEST_CASE("location encoder checkpoints round-trip", "[encoders]") {
  const auto path = temp_file("s2l_locenc_test.bin");
  FourierLocationEncoder enc(77);
  enc.save(path.string());
  const auto back = FourierLocationEncoder::load(path.string());
  REQUIRE(back.seed == enc.seed);
  REQUIRE(back.freq.data == enc.freq.data);
  const GeoCoordinate p{51.4778, -0.0015};
  REQUIRE(back.encode_one(p) == enc.encode_one(p));
  std::filesystem::remove(path);
}

TEST_CASE("summary stats match hand-computed values", "[encoders]") {
  SECTION("ramp energy in a single mel column") {
    Matrix spec(4, kMelBins);
    for (std::size_t t = 0; t < 4; ++t) spec(t, 0) = static_cast<double>(t);
    const auto s = summary_stats(spec);
    REQUIRE(s.size() == kSummaryStatDim);
    REQUIRE(s[0] == 1.5);                               // mean of column 0
    REQUIRE(std::abs(s[128] - std::sqrt(1.25)) < 1e-12);  // population std
    REQUIRE(s[256] == 3.0);                             // max
    for (std::size_t j = 1; j < 128; ++j) {
      REQUIRE(s[j] == 0.0);
      REQUIRE(s[128 + j] == 0.0);
      REQUIRE(s[256 + j] == 0.0);
    }
    // Frame energies are 0,1,2,3, so the sorted interpolation at quantile q
    // is exactly 3q.
    for (int qi = 0; qi < 10; ++qi) {
      const double q = 0.05 + 0.1 * qi;
      REQUIRE(std::abs(s[384 + qi] - 3.0 * q) < 1e-12);
    }
    // Quartiles cover one frame each; every frame has all mass at bin 0, so
    // centroid and bandwidth are 0 everywhere (frame 0 is empty).
    for (int k = 0; k < 8; ++k) REQUIRE(s[394 + k] == 0.0);
  }

  SECTION("two-bin frame gives centroid and bandwidth in closed form") {
    Matrix spec(1, kMelBins);
    spec(0, 10) = 1.0;
    spec(0, 20) = 1.0;
    const auto s = summary_stats(spec);
    // One frame: quartiles 0-2 are empty, quartile 3 holds the frame.
    for (int k = 0; k < 6; ++k) REQUIRE(s[394 + k] == 0.0);
    REQUIRE(std::abs(s[394 + 6] - 15.0) < 1e-12);  // centroid
    REQUIRE(std::abs(s[394 + 7] - 5.0) < 1e-12);   // bandwidth
    for (int qi = 0; qi < 10; ++qi) REQUIRE(s[384 + qi] == 2.0);
  }

  SECTION("rejects non-mel shapes") {
    Matrix bad(4, 64);
    REQUIRE_THROWS_AS(summary_stats(bad), ShapeError);
    Matrix empty(0, kMelBins);
    REQUIRE_THROWS_AS(summary_stats(empty), ShapeError);
  }
}

TEST_CASE("silence featurizes to the projection bias row", "[encoders]") {
  BaselineFeaturizer b(42);
  Matrix silence(513, kMelBins);  // all zeros
  const auto emb = b.featurize(silence);
  REQUIRE(emb.size() == kAudioEmbeddingDim);
  for (std::size_t j = 0; j < kAudioEmbeddingDim; ++j)
    REQUIRE(emb[j] == b.projection(kSummaryStatDim, j));
}

TEST_CASE("featurization is deterministic", "[encoders]") {
  Rng rng(9);
  Matrix spec(513, kMelBins);
  for (double& v : spec.data) v = rng.uniform(0.0, 3.0);
  BaselineFeaturizer b1(7), b2(7), b3(8);
  REQUIRE(b1.featurize(spec) == b2.featurize(spec));
  REQUIRE(b1.featurize(spec) != b3.featurize(spec));
}

TEST_CASE("featurizer separates synthetic species signatures", "[encoders]") {
  // 20 synthetic species with fixed tone sets, 6 clips each; same-species
  // pairs must be closer in cosine than cross-species pairs on average.
  Rng rng(4242);
  const int n_species = 20, n_clips = 6;
  BaselineFeaturizer feat(1);
  std::vector<std::vector<std::vector<double>>> embs(n_species);
  for (int s = 0; s < n_species; ++s) {
    std::vector<double> freqs;
    const auto nf = static_cast<int>(rng.uniform_int(3, 5));
    for (int k = 0; k < nf; ++k)
      freqs.push_back(std::exp(rng.uniform(std::log(300.0), std::log(8000.0))));
    for (int c = 0; c < n_clips; ++c) {
      const auto clips = slice_windows(species_clip(freqs, rng));
      embs[s].push_back(feat.featurize(clips.front().spec));
    }
  }
  double same = 0.0, cross = 0.0;
  int n_same = 0, n_cross = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s1 = static_cast<int>(rng.uniform_int(0, n_species - 1));
    const auto c1 = static_cast<int>(rng.uniform_int(0, n_clips - 1));
    auto c2 = static_cast<int>(rng.uniform_int(0, n_clips - 1));
    while (c2 == c1) c2 = static_cast<int>(rng.uniform_int(0, n_clips - 1));
    same += cosine(embs[s1][c1], embs[s1][c2]);
    ++n_same;
    auto s2 = static_cast<int>(rng.uniform_int(0, n_species - 1));
    while (s2 == s1) s2 = static_cast<int>(rng.uniform_int(0, n_species - 1));
    cross += cosine(embs[s1][c1], embs[s2][c2]);
    ++n_cross;
  }
  REQUIRE(same / n_same > cross / n_cross);
}

TEST_CASE("embedding files round-trip", "[encoders]") {
  const auto path = temp_file("s2l_emb_test.bin");
  std::vector<EmbeddingRecord> recs;
  Rng rng(11);
  for (int i = 0; i < 5; ++i) {
    EmbeddingRecord r;
    r.recording_id = 1000 + static_cast<std::uint64_t>(i);
    r.clip_index = static_cast<std::uint32_t>(i % 3);
    for (std::size_t j = 0; j < kAudioEmbeddingDim; ++j)
      r.embedding.push_back(static_cast<double>(static_cast<float>(rng.normal())));
    recs.push_back(std::move(r));
  }
  save_embeddings(path.string(), recs);
  const auto back = load_embeddings(path.string());
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    REQUIRE(back[i].recording_id == recs[i].recording_id);
    REQUIRE(back[i].clip_index == recs[i].clip_index);
    REQUIRE(back[i].embedding == recs[i].embedding);  // f32-exact values
  }
  std::filesystem::remove(path);
}

TEST_CASE("embedding file edge cases", "[encoders]") {
  const auto path = temp_file("s2l_emb_edge.bin");

  SECTION("count 0 loads as an empty list") {
    save_embeddings(path.string(), {});
    REQUIRE(load_embeddings(path.string()).empty());
  }

  SECTION("header dim overrides the default") {
    EmbeddingRecord r;
    r.recording_id = 1;
    r.embedding.assign(512, 0.25);
    save_embeddings(path.string(), {r}, 512);
    const auto back = load_embeddings(path.string());
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].embedding.size() == 512);
  }

  SECTION("record dimension must match the header") {
    EmbeddingRecord r;
    r.embedding.assign(100, 0.0);
    REQUIRE_THROWS_AS(save_embeddings(path.string(), {r}), DimensionMismatch);
  }

  SECTION("bad magic") {
    std::ofstream(path) << "NOPExxxxxxxxxxxx";
    REQUIRE_THROWS_AS(load_embeddings(path.string()), CorruptEmbeddingFile);
  }

  SECTION("truncated payload") {
    EmbeddingRecord r;
    r.recording_id = 1;
    r.embedding.assign(kAudioEmbeddingDim, 1.0);
    save_embeddings(path.string(), {r});
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    REQUIRE_THROWS_AS(load_embeddings(path.string()), CorruptEmbeddingFile);
  }

  std::filesystem::remove(path);
}
