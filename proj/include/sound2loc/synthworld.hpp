#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sound2loc/audio.hpp"
#include "sound2loc/encoders.hpp"
#include "sound2loc/error.hpp"
#include "sound2loc/geodesy.hpp"
#include "sound2loc/manifest.hpp"
#include "sound2loc/rangemap.hpp"
#include "sound2loc/rng.hpp"

namespace s2l {

// Deterministic synthetic planet: Gaussian-bump species ranges plus a tone
// signature per species. Recordings are tone bursts over white noise, so a
// plain FFT can oracle-check what the featurizer is supposed to hear.

struct WorldSpec {
  std::uint64_t seed = 0;
  std::size_t n_species = 500;

  // range bumps (1..3 per species)
  double sigma_lo_km = 100.0;
  double sigma_hi_km = 2000.0;
  double weight_lo = 0.5;
  double weight_hi = 1.0;

  // tone signatures: 3..5 log-uniform frequencies, uniform amplitudes
  double freq_lo_hz = 300.0;
  double freq_hi_hz = 8000.0;
  double amp_lo = 0.5;
  double amp_hi = 1.0;

  double snr_db = 10.0;

  // bursts per audible species per recording; few bursts keep any one 3 s
  // window spectrally sparse while the whole clip still covers every species
  int bursts_lo = 1;
  int bursts_hi = 2;
  double burst_lo_s = 0.3;
  double burst_hi_s = 1.0;

  // observation sites: recordings cluster around density-sampled sites with
  // Zipf popularity. n_sites = 0 samples straight from the presence density.
  std::size_t n_sites = 100;
  double site_zipf = 0.7;
  double site_scatter_km = 1.5;
};

struct ToneSignature {
  std::vector<double> freq_hz;
  std::vector<double> amp;
};

struct ObservationSite {
  GeoCoordinate location;
  double weight = 0.0;
};

struct SyntheticWorld {
  WorldSpec spec;
  SyntheticRangeModel ranges;
  std::vector<ToneSignature> tones;
  std::vector<ObservationSite> sites;  // empty when spec.n_sites == 0
  double density_bound = 0.0;          // rejection envelope for the aggregate density
};

struct SyntheticRecording {
  std::uint64_t id = 0;
  GeoCoordinate location;
  UtcTime timestamp;
  std::vector<std::uint32_t> audible;  // ascending species ids
  Waveform waveform;
  double duration_s = 0.0;
};

inline constexpr std::size_t kMaxRejections = 10000;

namespace detail {

inline double aggregate_density(const SyntheticWorld& w, const GeoCoordinate& p) {
  double total = 0.0;
  for (const auto& sp : w.ranges.species) total += presence_score(sp, p);
  return total;
}

// area-uniform point: sin(lat) uniform in [-1, 1]
inline GeoCoordinate sphere_uniform(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  return {std::asin(z) * 180.0 / M_PI, rng.uniform(-180.0, 180.0)};
}

inline GeoCoordinate scatter_around(const GeoCoordinate& c, double scatter_km, Rng& rng) {
  const double dy = rng.normal(0.0, scatter_km);
  const double dx = rng.normal(0.0, scatter_km);
  double lat = c.lat_deg + dy / kEarthRadiusKm * 180.0 / M_PI;
  lat = std::clamp(lat, -90.0, 90.0);
  const double cos_lat = std::max(std::cos(lat * M_PI / 180.0), 1e-6);
  double lon = c.lon_deg + dx / (kEarthRadiusKm * cos_lat) * 180.0 / M_PI;
  lon = std::fmod(lon + 180.0, 360.0);
  if (lon < 0.0) lon += 360.0;
  return {lat, lon - 180.0};
}

inline UtcTime draw_timestamp(Rng& rng) {
  // one observation year, uniform in time
  static constexpr int days_in_month[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int day = static_cast<int>(rng.uniform_int(0, 364));
  UtcTime t;
  t.year = 2021;
  for (int m = 0; m < 12; ++m) {
    if (day < days_in_month[m]) {
      t.month = m + 1;
      t.day = day + 1;
      break;
    }
    day -= days_in_month[m];
  }
  t.hour = static_cast<int>(rng.uniform_int(0, 23));
  t.minute = static_cast<int>(rng.uniform_int(0, 59));
  t.second = static_cast<int>(rng.uniform_int(0, 59));
  return t;
}

}  // namespace detail

inline SyntheticWorld generate_world(const WorldSpec& spec) {
  if (spec.n_species < 1) throw DataError("world needs at least one species");
  if (spec.bursts_lo < 1 || spec.bursts_hi < spec.bursts_lo)
    throw DataError("burst count range is invalid");
  SyntheticWorld w;
  w.spec = spec;
  Rng rng(spec.seed);

  w.ranges.species.resize(spec.n_species);
  for (auto& bumps : w.ranges.species) {
    const auto n_bumps = rng.uniform_int(1, 3);
    for (std::int64_t b = 0; b < n_bumps; ++b)
      bumps.push_back(RangeBump{detail::sphere_uniform(rng),
                                rng.uniform(spec.sigma_lo_km, spec.sigma_hi_km),
                                rng.uniform(spec.weight_lo, spec.weight_hi)});
  }

  w.tones.resize(spec.n_species);
  const double log_lo = std::log(spec.freq_lo_hz), log_hi = std::log(spec.freq_hi_hz);
  for (auto& tone : w.tones) {
    const auto n_freq = rng.uniform_int(3, 5);
    for (std::int64_t f = 0; f < n_freq; ++f) {
      tone.freq_hz.push_back(std::exp(rng.uniform(log_lo, log_hi)));
      tone.amp.push_back(rng.uniform(spec.amp_lo, spec.amp_hi));
    }
  }

  // rejection envelope: max aggregate density over a probe sample, padded
  double peak = 0.0;
  for (int i = 0; i < 4000; ++i)
    peak = std::max(peak, detail::aggregate_density(w, detail::sphere_uniform(rng)));
  w.density_bound = peak * 1.5;

  for (std::size_t s = 0; s < spec.n_sites; ++s) {
    for (std::size_t tries = 0;; ++tries) {
      if (tries >= kMaxRejections)
        throw SamplingExhausted("could not place observation sites in the presence density");
      const GeoCoordinate p = detail::sphere_uniform(rng);
      if (rng.uniform(0.0, w.density_bound) < detail::aggregate_density(w, p)) {
        const double zipf =
            1.0 / std::pow(static_cast<double>(s + 1), spec.site_zipf);
        w.sites.push_back(ObservationSite{p, zipf});
        break;
      }
    }
  }
  double total = 0.0;
  for (const auto& s : w.sites) total += s.weight;
  for (auto& s : w.sites) s.weight /= total > 0.0 ? total : 1.0;
  return w;
}

// Location, timestamp, and audible set of one recording; everything but the
// waveform. Audible species are drawn without replacement proportional to
// presence from the species above threshold, truncated at k_audible.
struct Observation {
  GeoCoordinate location;
  UtcTime timestamp;
  std::vector<std::uint32_t> audible;
};

inline Observation sample_observation(const SyntheticWorld& w, Rng& rng, std::size_t k_audible) {
  if (k_audible < 1) throw DataError("k_audible must be at least 1");
  Observation obs;
  ScoreVector scores;
  for (std::size_t tries = 0;; ++tries) {
    if (tries >= kMaxRejections)
      throw SamplingExhausted("no location with audible species found");
    GeoCoordinate p;
    if (!w.sites.empty()) {
      double r = rng.uniform();
      std::size_t pick = w.sites.size() - 1;
      for (std::size_t s = 0; s < w.sites.size(); ++s) {
        r -= w.sites[s].weight;
        if (r < 0.0) {
          pick = s;
          break;
        }
      }
      p = detail::scatter_around(w.sites[pick].location, w.spec.site_scatter_km, rng);
    } else {
      p = detail::sphere_uniform(rng);
      if (!(rng.uniform(0.0, std::max(w.density_bound, 1e-300)) <
            detail::aggregate_density(w, p)))
        continue;
    }
    scores = presence_scores(w.ranges, p);
    if (*std::max_element(scores.begin(), scores.end()) >= kPresenceThreshold) {
      obs.location = p;
      break;
    }
  }
  obs.timestamp = detail::draw_timestamp(rng);

  std::vector<std::size_t> candidates;
  std::vector<double> weights;
  for (std::size_t s = 0; s < scores.size(); ++s)
    if (scores[s] >= kPresenceThreshold) {
      candidates.push_back(s);
      weights.push_back(scores[s]);
    }
  const auto picks =
      rng.weighted_sample_without_replacement(weights, std::min(k_audible, candidates.size()));
  for (const auto i : picks) obs.audible.push_back(static_cast<std::uint32_t>(candidates[i]));
  std::sort(obs.audible.begin(), obs.audible.end());
  return obs;
}

// Tone bursts at random onsets, then white noise at the spec SNR, then a
// 0.9 peak normalization so PCM16 export never clips.
inline Waveform synthesize_waveform(const SyntheticWorld& w,
                                    const std::vector<std::uint32_t>& audible, Rng& rng,
                                    double duration_s) {
  if (duration_s <= 0.0) throw DataError("recording duration must be positive");
  Waveform wav;
  wav.sample_rate = kCanonicalRateHz;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * kCanonicalRateHz));
  wav.samples.assign(n, 0.0);
  for (const auto s : audible) {
    if (s >= w.tones.size()) throw DataError("audible species id outside the tone table");
    const auto& tone = w.tones[s];
    const auto n_bursts = rng.uniform_int(w.spec.bursts_lo, w.spec.bursts_hi);
    for (std::int64_t b = 0; b < n_bursts; ++b) {
      const double len = std::min(rng.uniform(w.spec.burst_lo_s, w.spec.burst_hi_s), duration_s);
      const double onset = rng.uniform(0.0, duration_s - len);
      const auto i0 = static_cast<std::size_t>(onset * kCanonicalRateHz);
      const auto i1 =
          std::min(n, static_cast<std::size_t>((onset + len) * kCanonicalRateHz));
      for (std::size_t f = 0; f < tone.freq_hz.size(); ++f) {
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        const double omega = 2.0 * M_PI * tone.freq_hz[f] / kCanonicalRateHz;
        for (std::size_t i = i0; i < i1; ++i)
          wav.samples[i] += tone.amp[f] * std::sin(omega * static_cast<double>(i) + phase);
      }
    }
  }
  double power = 0.0;
  for (const double v : wav.samples) power += v * v;
  power /= static_cast<double>(n);
  const double sigma =
      power > 0.0 ? std::sqrt(power / std::pow(10.0, w.spec.snr_db / 10.0)) : 1e-4;
  for (double& v : wav.samples) v += sigma * rng.normal();
  double peak = 0.0;
  for (const double v : wav.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : wav.samples) v *= 0.9 / peak;
  return wav;
}

inline SyntheticRecording sample_recording(const SyntheticWorld& w, Rng& rng, double duration_s,
                                           std::size_t k_audible) {
  Observation obs = sample_observation(w, rng, k_audible);
  SyntheticRecording rec;
  rec.location = obs.location;
  rec.timestamp = obs.timestamp;
  rec.audible = std::move(obs.audible);
  rec.waveform = synthesize_waveform(w, rec.audible, rng, duration_s);
  rec.duration_s = duration_s;
  return rec;
}

// ---------------------------------------------------------------------------
// Dataset generation

enum class DatasetMode { audio, embeddings };

struct DatasetOutput {
  Manifest train;
  Manifest test;
};

namespace detail {

struct RecordingProduct {
  ManifestEntry entry;
  Waveform waveform;                     // audio mode
  std::vector<EmbeddingRecord> windows;  // embeddings mode
};

inline RecordingProduct produce_recording(const SyntheticWorld& w, std::uint64_t dataset_seed,
                                          std::uint64_t id, double duration_s,
                                          std::size_t k_audible, DatasetMode mode,
                                          const BaselineFeaturizer& feat) {
  Rng rng(derive_seed(dataset_seed, id));
  SyntheticRecording rec = sample_recording(w, rng, duration_s, k_audible);
  RecordingProduct out;
  out.entry.id = id;
  out.entry.location = rec.location;
  out.entry.timestamp = rec.timestamp;
  out.entry.duration_s = rec.duration_s;
  out.entry.species.emplace(rec.audible);
  if (mode == DatasetMode::audio) {
    out.waveform = std::move(rec.waveform);
  } else {
    const auto windows = slice_windows(rec.waveform);
    for (std::size_t c = 0; c < windows.size(); ++c)
      out.windows.push_back(EmbeddingRecord{id, static_cast<std::uint32_t>(c),
                                            feat.featurize(windows[c].spec)});
  }
  return out;
}

}  // namespace detail

// Writes manifests plus per-recording WAVs (audio mode) or one embedding file
// per split (embeddings mode) under out_dir. Per-recording seeds are derived
// from (dataset_seed, id), and results are committed in id order, so the job
// count changes wall time but never a single output byte.
inline DatasetOutput generate_dataset(const SyntheticWorld& w, std::size_t n_train,
                                      std::size_t n_test, std::uint64_t dataset_seed,
                                      const std::string& out_dir, DatasetMode mode,
                                      double duration_s, std::size_t k_audible,
                                      std::uint64_t featurizer_seed, std::size_t jobs = 1) {
  if (n_train < 1 || n_test < 1) throw DataError("train and test counts must be at least 1");
  if (jobs < 1) jobs = 1;
  std::filesystem::create_directories(out_dir);
  if (mode == DatasetMode::audio) std::filesystem::create_directories(out_dir + "/audio");
  const BaselineFeaturizer feat(featurizer_seed);
  const std::size_t total = n_train + n_test;
  DatasetOutput out;
  std::vector<EmbeddingRecord> train_emb, test_emb;

  const std::size_t batch = std::max<std::size_t>(jobs, 16);
  std::vector<detail::RecordingProduct> products;
  for (std::size_t base = 0; base < total; base += batch) {
    const std::size_t count = std::min(batch, total - base);
    products.assign(count, {});
    if (jobs == 1) {
      for (std::size_t i = 0; i < count; ++i)
        products[i] = detail::produce_recording(w, dataset_seed, base + i, duration_s, k_audible,
                                                mode, feat);
    } else {
      std::vector<std::thread> pool;
      std::atomic<std::size_t> next{0};
      for (std::size_t t = 0; t < std::min(jobs, count); ++t)
        pool.emplace_back([&] {
          for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1))
            products[i] = detail::produce_recording(w, dataset_seed, base + i, duration_s,
                                                    k_audible, mode, feat);
        });
      for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < count; ++i) {
      auto& p = products[i];
      const bool is_train = p.entry.id < n_train;
      if (mode == DatasetMode::audio) {
        const std::string rel = "audio/" + std::to_string(p.entry.id) + ".wav";
        save_wav(out_dir + "/" + rel, p.waveform);
        p.entry.audio = rel;
      } else {
        p.entry.embeddings = is_train ? "train.embeddings" : "test.embeddings";
        auto& sink = is_train ? train_emb : test_emb;
        for (auto& r : p.windows) sink.push_back(std::move(r));
      }
      (is_train ? out.train : out.test).push_back(std::move(p.entry));
    }
  }
  if (mode == DatasetMode::embeddings) {
    save_embeddings(out_dir + "/train.embeddings", train_emb);
    save_embeddings(out_dir + "/test.embeddings", test_emb);
  }
  save_manifest(out.train, out_dir + "/train.jsonl");
  save_manifest(out.test, out_dir + "/test.jsonl");
  return out;
}

// ---------------------------------------------------------------------------
// World serialization: one JSON file with the spec, ranges, tone table, and
// sites, so later commands can rebuild oracles without regenerating.

inline void save_world(const SyntheticWorld& w, const std::string& path) {
  nlohmann::json j;
  j["spec"] = {{"seed", w.spec.seed},
               {"n_species", w.spec.n_species},
               {"sigma_lo_km", w.spec.sigma_lo_km},
               {"sigma_hi_km", w.spec.sigma_hi_km},
               {"weight_lo", w.spec.weight_lo},
               {"weight_hi", w.spec.weight_hi},
               {"freq_lo_hz", w.spec.freq_lo_hz},
               {"freq_hi_hz", w.spec.freq_hi_hz},
               {"amp_lo", w.spec.amp_lo},
               {"amp_hi", w.spec.amp_hi},
               {"snr_db", w.spec.snr_db},
               {"bursts_lo", w.spec.bursts_lo},
               {"bursts_hi", w.spec.bursts_hi},
               {"burst_lo_s", w.spec.burst_lo_s},
               {"burst_hi_s", w.spec.burst_hi_s},
               {"n_sites", w.spec.n_sites},
               {"site_zipf", w.spec.site_zipf},
               {"site_scatter_km", w.spec.site_scatter_km}};
  nlohmann::json ranges = nlohmann::json::object();
  for (std::size_t s = 0; s < w.ranges.n_species(); ++s) {
    nlohmann::json bumps = nlohmann::json::array();
    for (const auto& b : w.ranges.species[s])
      bumps.push_back({{"lat", b.center.lat_deg},
                       {"lon", b.center.lon_deg},
                       {"sigma_km", b.sigma_km},
                       {"weight", b.weight}});
    ranges[std::to_string(s)] = std::move(bumps);
  }
  j["ranges"] = std::move(ranges);
  nlohmann::json tones = nlohmann::json::array();
  for (const auto& t : w.tones) tones.push_back({{"freq_hz", t.freq_hz}, {"amp", t.amp}});
  j["tones"] = std::move(tones);
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : w.sites)
    sites.push_back(
        {{"lat", s.location.lat_deg}, {"lon", s.location.lon_deg}, {"weight", s.weight}});
  j["sites"] = std::move(sites);
  j["density_bound"] = w.density_bound;
  auto os = open_out(path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing world: " + path);
}

inline SyntheticWorld load_world(const std::string& path) {
  auto in = open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("world file is not valid JSON: " + path + " (" + e.what() + ")");
  }
  SyntheticWorld w;
  try {
    const auto& sp = j.at("spec");
    w.spec.seed = sp.at("seed").get<std::uint64_t>();
    w.spec.n_species = sp.at("n_species").get<std::size_t>();
    w.spec.sigma_lo_km = sp.at("sigma_lo_km").get<double>();
    w.spec.sigma_hi_km = sp.at("sigma_hi_km").get<double>();
    w.spec.weight_lo = sp.at("weight_lo").get<double>();
    w.spec.weight_hi = sp.at("weight_hi").get<double>();
    w.spec.freq_lo_hz = sp.at("freq_lo_hz").get<double>();
    w.spec.freq_hi_hz = sp.at("freq_hi_hz").get<double>();
    w.spec.amp_lo = sp.at("amp_lo").get<double>();
    w.spec.amp_hi = sp.at("amp_hi").get<double>();
    w.spec.snr_db = sp.at("snr_db").get<double>();
    w.spec.bursts_lo = sp.at("bursts_lo").get<int>();
    w.spec.bursts_hi = sp.at("bursts_hi").get<int>();
    w.spec.burst_lo_s = sp.at("burst_lo_s").get<double>();
    w.spec.burst_hi_s = sp.at("burst_hi_s").get<double>();
    w.spec.n_sites = sp.at("n_sites").get<std::size_t>();
    w.spec.site_zipf = sp.at("site_zipf").get<double>();
    w.spec.site_scatter_km = sp.at("site_scatter_km").get<double>();

    const auto& ranges = j.at("ranges");
    if (!ranges.is_object() || ranges.size() != w.spec.n_species)
      throw CorruptFile("world ranges do not match the species count: " + path);
    w.ranges.species.resize(w.spec.n_species);
    for (const auto& [key, bumps] : ranges.items()) {
      const auto s = static_cast<std::size_t>(std::stoul(key));
      if (s >= w.spec.n_species) throw CorruptFile("world species ids are not 0..S-1: " + path);
      for (const auto& b : bumps)
        w.ranges.species[s].push_back(
            RangeBump{GeoCoordinate{b.at("lat").get<double>(), b.at("lon").get<double>()},
                      b.at("sigma_km").get<double>(), b.at("weight").get<double>()});
    }
    for (const auto& t : j.at("tones"))
      w.tones.push_back(ToneSignature{t.at("freq_hz").get<std::vector<double>>(),
                                      t.at("amp").get<std::vector<double>>()});
    if (w.tones.size() != w.spec.n_species)
      throw CorruptFile("world tone table does not match the species count: " + path);
    for (const auto& s : j.at("sites"))
      w.sites.push_back(
          ObservationSite{GeoCoordinate{s.at("lat").get<double>(), s.at("lon").get<double>()},
                          s.at("weight").get<double>()});
    w.density_bound = j.at("density_bound").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("malformed world file: " + path + " (" + e.what() + ")");
  } catch (const std::invalid_argument&) {
    throw CorruptFile("world species keys are not indices: " + path);
  }
  return w;
}

}  // namespace s2l
