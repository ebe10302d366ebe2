#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "sound2loc/audio.hpp"
#include "sound2loc/binio.hpp"
#include "sound2loc/error.hpp"
#include "sound2loc/geodesy.hpp"
#include "sound2loc/matrix.hpp"
#include "sound2loc/numkit.hpp"
#include "sound2loc/rng.hpp"

namespace s2l {

inline constexpr std::size_t kAudioEmbeddingDim = 1280;
inline constexpr std::size_t kLocationEmbeddingDim = 512;
inline constexpr std::size_t kFourierFrequencies = 64;  // 16 per scale

// ---------------------------------------------------------------------------
// Location encoder: unit-sphere lift -> random Fourier features -> MLP ->
// L2 normalization. Frozen after construction; the lift makes the encoder
// continuous across the 180° longitude seam.

struct FourierLocationEncoder {
  Matrix freq;  // 64 x 3 Gaussian rows, 16 at each scale in {1, 4, 16, 64}
  MlpHead head;
  std::uint64_t seed = 0;

  explicit FourierLocationEncoder(std::uint64_t seed_val) : seed(seed_val) {
    Rng rng(seed_val);
    freq = Matrix(kFourierFrequencies, 3);
    const double scales[4] = {1.0, 4.0, 16.0, 64.0};
    for (std::size_t i = 0; i < kFourierFrequencies; ++i)
      for (std::size_t j = 0; j < 3; ++j) freq(i, j) = scales[i / 16] * rng.normal();
    head = MlpHead(2 * kFourierFrequencies, kLocationEmbeddingDim, rng);
  }

  // [sin(F x); cos(F x)] for the unit-sphere lift of p; trig keeps the map
  // periodic in longitude, so no wrapping is applied.
  Matrix fourier_features(const std::vector<GeoCoordinate>& pts) const {
    const double deg = M_PI / 180.0;
    Matrix x(pts.size(), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double lat = pts[i].lat_deg * deg, lon = pts[i].lon_deg * deg;
      x(i, 0) = std::cos(lat) * std::cos(lon);
      x(i, 1) = std::cos(lat) * std::sin(lon);
      x(i, 2) = std::sin(lat);
    }
    Matrix fx = matmul(x, freq, false, /*trans_b=*/true);
    Matrix feats(pts.size(), 2 * kFourierFrequencies);
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t k = 0; k < kFourierFrequencies; ++k) {
        feats(i, k) = std::sin(fx(i, k));
        feats(i, kFourierFrequencies + k) = std::cos(fx(i, k));
      }
    return feats;
  }

  Matrix encode(const std::vector<GeoCoordinate>& pts) const {
    Matrix y = mlp_forward(head, fourier_features(pts));
    l2_normalize_rows(y);
    return y;
  }

  std::vector<double> encode_one(const GeoCoordinate& p) const {
    Matrix y = encode({p});
    return y.data;
  }

  void save(const std::string& path) const {
    Matrix seed_m(1, 1);
    seed_m(0, 0) = static_cast<double>(seed);
    save_checkpoint(path, {{"loc.seed", &seed_m},
                           {"loc.freq", &freq},
                           {"loc.w1", &head.l1.w},
                           {"loc.b1", &head.l1.b},
                           {"loc.w2", &head.l2.w},
                           {"loc.b2", &head.l2.b}});
  }

  static FourierLocationEncoder load(const std::string& path) {
    auto params = load_checkpoint(path);
    std::uint64_t seed = 0;
    for (const auto& [name, m] : params)
      if (name == "loc.seed") seed = static_cast<std::uint64_t>(m(0, 0));
    FourierLocationEncoder enc(seed);
    for (const auto& [name, m] : params)
      if (name == "loc.freq") {
        if (!m.same_shape(enc.freq)) throw ShapeError("frequency matrix shape mismatch");
        enc.freq = m;
      }
    assign_head(enc.head, "loc.", params);
    return enc;
  }
};

inline std::vector<double> encode_location(const FourierLocationEncoder& enc,
                                           const GeoCoordinate& p) {
  return enc.encode_one(p);
}

// ---------------------------------------------------------------------------
// Baseline audio featurizer: summary statistics of the pre-resize mel
// spectrogram, standardized per clip, then a fixed seeded Gaussian
// projection with a trailing bias row. Stands in for a learned backbone.

inline constexpr std::size_t kSummaryStatDim = 402;  // 3*128 + 10 + 8

// mean/std/max per mel row, 10 frame-energy quantiles, spectral centroid and
// bandwidth per frame-quartile. `spec` is time-major n_frames x 128.
inline std::vector<double> summary_stats(const Matrix& spec) {
  if (spec.cols != kMelBins || spec.rows == 0)
    throw ShapeError("summary stats expect n_frames x 128 mel frames");
  const std::size_t n = spec.rows;
  std::vector<double> out;
  out.reserve(kSummaryStatDim);
  std::vector<double> mean(kMelBins), sq(kMelBins), mx(kMelBins, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < kMelBins; ++j) {
      const double v = spec(t, j);
      mean[j] += v;
      sq[j] += v * v;
      mx[j] = std::max(mx[j], v);
    }
  for (std::size_t j = 0; j < kMelBins; ++j) mean[j] /= static_cast<double>(n);
  for (double m : mean) out.push_back(m);
  for (std::size_t j = 0; j < kMelBins; ++j) {
    const double var = sq[j] / static_cast<double>(n) - mean[j] * mean[j];
    out.push_back(std::sqrt(std::max(0.0, var)));
  }
  for (double m : mx) out.push_back(m);

  std::vector<double> energy(n, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < kMelBins; ++j) energy[t] += spec(t, j);
  std::vector<double> sorted = energy;
  std::sort(sorted.begin(), sorted.end());
  for (int qi = 0; qi < 10; ++qi) {
    const double q = 0.05 + 0.1 * qi;
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, n - 1);
    out.push_back(sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]));
  }

  for (std::size_t quart = 0; quart < 4; ++quart) {
    const std::size_t t0 = n * quart / 4, t1 = n * (quart + 1) / 4;
    std::vector<double> avg(kMelBins, 0.0);
    for (std::size_t t = t0; t < t1; ++t)
      for (std::size_t j = 0; j < kMelBins; ++j) avg[j] += spec(t, j);
    double tot = 0.0;
    for (double v : avg) tot += v;
    if (tot > 1e-12) {
      double cent = 0.0;
      for (std::size_t j = 0; j < kMelBins; ++j) cent += avg[j] * static_cast<double>(j);
      cent /= tot;
      double var = 0.0;
      for (std::size_t j = 0; j < kMelBins; ++j) {
        const double d = static_cast<double>(j) - cent;
        var += avg[j] * d * d;
      }
      out.push_back(cent);
      out.push_back(std::sqrt(var / tot));
    } else {
      out.push_back(0.0);
      out.push_back(0.0);
    }
  }
  return out;
}

struct BaselineFeaturizer {
  Matrix projection;  // (402 stats + 1 bias) x 1280
  std::uint64_t seed = 0;

  explicit BaselineFeaturizer(std::uint64_t seed_val) : seed(seed_val) {
    Rng rng(seed_val);
    projection = Matrix(kSummaryStatDim + 1, kAudioEmbeddingDim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kSummaryStatDim + 1));
    for (double& v : projection.data) v = scale * rng.normal();
  }

  // Standardization runs per stat group so no group dominates the projection:
  // frame-energy quantiles sit two orders of magnitude above the per-bin
  // statistics and would otherwise swamp every clip with the same common mode.
  // An all-zero (silent) stats vector stays zero, leaving only the bias row.
  std::vector<double> featurize(const Matrix& pre_resize_spec) const {
    std::vector<double> stats = summary_stats(pre_resize_spec);
    static constexpr std::pair<std::size_t, std::size_t> groups[] = {
        {0, 128}, {128, 256}, {256, 384}, {384, 394}, {394, kSummaryStatDim}};
    for (const auto& [lo, hi] : groups) {
      const double n = static_cast<double>(hi - lo);
      double mean = 0.0;
      for (std::size_t k = lo; k < hi; ++k) mean += stats[k];
      mean /= n;
      double var = 0.0;
      for (std::size_t k = lo; k < hi; ++k) var += (stats[k] - mean) * (stats[k] - mean);
      double sd = std::sqrt(var / n);
      if (sd <= 1e-12) sd = 1.0;
      for (std::size_t k = lo; k < hi; ++k) stats[k] = (stats[k] - mean) / sd;
    }
    std::vector<double> emb(kAudioEmbeddingDim, 0.0);
    for (std::size_t k = 0; k < stats.size(); ++k) {
      const double s = stats[k];
      if (s == 0.0) continue;
      for (std::size_t j = 0; j < kAudioEmbeddingDim; ++j) emb[j] += s * projection(k, j);
    }
    for (std::size_t j = 0; j < kAudioEmbeddingDim; ++j)
      emb[j] += projection(kSummaryStatDim, j);  // bias row
    return emb;
  }
};

inline std::vector<double> featurize(const BaselineFeaturizer& b, const ClipWindow& clip) {
  return b.featurize(clip.spec);
}

// ---------------------------------------------------------------------------
// Embedding files: magic "S2LE", u32 count, u32 dim, then per record a u64
// recording id, u32 clip index, and f32 data.

struct EmbeddingRecord {
  std::uint64_t recording_id = 0;
  std::uint32_t clip_index = 0;
  std::vector<double> embedding;
};

inline void save_embeddings(const std::string& path, const std::vector<EmbeddingRecord>& recs,
                            std::uint32_t dim = kAudioEmbeddingDim) {
  auto os = open_out(path);
  os.write("S2LE", 4);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(recs.size()));
  write_le<std::uint32_t>(os, dim);
  for (const auto& r : recs) {
    if (r.embedding.size() != dim)
      throw DimensionMismatch("embedding record does not match file dimension");
    write_le<std::uint64_t>(os, r.recording_id);
    write_le<std::uint32_t>(os, r.clip_index);
    for (double v : r.embedding) write_le<float>(os, static_cast<float>(v));
  }
  if (!os) throw IoError("failed writing embeddings: " + path);
}

inline std::vector<EmbeddingRecord> load_embeddings(const std::string& path) {
  auto in = open_in(path);
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, "S2LE", 4) != 0)
    throw CorruptEmbeddingFile("bad magic in embedding file: " + path);
  try {
    const auto count = read_le<std::uint32_t>(in, "embedding count");
    const auto dim = read_le<std::uint32_t>(in, "embedding dim");
    std::vector<EmbeddingRecord> recs(count);
    for (auto& r : recs) {
      r.recording_id = read_le<std::uint64_t>(in, "recording id");
      r.clip_index = read_le<std::uint32_t>(in, "clip index");
      r.embedding.resize(dim);
      for (double& v : r.embedding) v = static_cast<double>(read_le<float>(in, "embedding data"));
    }
    return recs;
  } catch (const CorruptFile& e) {
    throw CorruptEmbeddingFile(e.what());
  }
}

}  // namespace s2l
