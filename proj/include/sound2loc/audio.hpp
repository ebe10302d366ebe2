#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <string>
#include <vector>

#include <fftw3.h>

#include "sound2loc/binio.hpp"
#include "sound2loc/error.hpp"
#include "sound2loc/matrix.hpp"

namespace s2l {

inline constexpr double kCanonicalRateHz = 22050.0;
inline constexpr std::size_t kStftWindow = 512;
inline constexpr std::size_t kStftHop = 128;
inline constexpr std::size_t kMelBins = 128;
inline constexpr double kMelLoHz = 50.0;
inline constexpr double kMelHiHz = 11025.0;
inline constexpr double kClipSeconds = 3.0;
inline constexpr double kClipStrideSeconds = 1.5;
inline constexpr std::size_t kResizedEdge = 224;

struct Waveform {
  std::vector<double> samples;  // mono, in [-1, 1]
  double sample_rate = kCanonicalRateHz;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// log(1+power) mel frames, time-major n_frames x 128.
struct MelSpectrogram {
  Matrix frames;
};

struct ClipWindow {
  double start_s = 0.0;
  Matrix spec;     // unresized mel frames of the 3 s slice
  Matrix resized;  // 224 x 224
};

// ---------------------------------------------------------------------------
// WAV ingestion (PCM 8/16/32-bit int and 32-bit float, any channel count)

namespace detail {

inline std::uint32_t read_u32_buf(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16_buf(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline Waveform load_audio(const std::string& path) {
  auto in = open_in(path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw UnsupportedAudio("not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t chunk_len = detail::read_u32_buf(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_len > bytes.size())
      throw UnsupportedAudio("truncated WAV chunk in " + path);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw UnsupportedAudio("malformed fmt chunk in " + path);
      format = detail::read_u16_buf(bytes.data() + body);
      channels = detail::read_u16_buf(bytes.data() + body + 2);
      rate = detail::read_u32_buf(bytes.data() + body + 4);
      bits = detail::read_u16_buf(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_off = body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (!have_fmt || data_off == 0) throw UnsupportedAudio("missing fmt/data chunk in " + path);
  if (channels == 0 || rate == 0) throw UnsupportedAudio("degenerate WAV header in " + path);
  const bool pcm_ok = format == 1 && (bits == 8 || bits == 16 || bits == 32);
  const bool float_ok = format == 3 && bits == 32;
  if (!pcm_ok && !float_ok)
    throw UnsupportedAudio("unsupported or compressed WAV encoding in " + path);

  const std::size_t bytes_per = bits / 8;
  const std::size_t frame_bytes = bytes_per * channels;
  const std::size_t n_frames = data_len / frame_bytes;
  Waveform w;
  w.sample_rate = static_cast<double>(rate);
  w.samples.resize(n_frames);
  const unsigned char* d = bytes.data() + data_off;
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = d + i * frame_bytes + c * bytes_per;
      double v = 0.0;
      if (format == 3) {
        float f;
        std::memcpy(&f, p, 4);
        v = static_cast<double>(f);
      } else if (bits == 8) {
        v = (static_cast<double>(*p) - 128.0) / 128.0;
      } else if (bits == 16) {
        const auto s = static_cast<std::int16_t>(detail::read_u16_buf(p));
        v = static_cast<double>(s) / 32768.0;
      } else {
        const auto s = static_cast<std::int32_t>(detail::read_u32_buf(p));
        v = static_cast<double>(s) / 2147483648.0;
      }
      acc += v;
    }
    w.samples[i] = acc / static_cast<double>(channels);
  }
  return w;
}

enum class WavEncoding { pcm16, float32 };

inline void save_wav(const std::string& path, const Waveform& w,
                     WavEncoding enc = WavEncoding::pcm16) {
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t data_len = n * (bits / 8u);
  auto os = open_out(path);
  os.write("RIFF", 4);
  write_le<std::uint32_t>(os, 36 + data_len);
  os.write("WAVEfmt ", 8);
  write_le<std::uint32_t>(os, 16);
  write_le<std::uint16_t>(os, enc == WavEncoding::pcm16 ? 1 : 3);
  write_le<std::uint16_t>(os, 1);  // mono
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(std::lround(w.sample_rate)));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(std::lround(w.sample_rate)) * (bits / 8u));
  write_le<std::uint16_t>(os, bits / 8u);
  write_le<std::uint16_t>(os, bits);
  os.write("data", 4);
  write_le<std::uint32_t>(os, data_len);
  for (double v : w.samples) {
    if (enc == WavEncoding::pcm16) {
      const auto q = std::clamp(std::lround(v * 32768.0), -32768L, 32767L);
      write_le<std::int16_t>(os, static_cast<std::int16_t>(q));
    } else {
      write_le<float>(os, static_cast<float>(v));
    }
  }
  if (!os) throw IoError("failed writing WAV: " + path);
}

// ---------------------------------------------------------------------------
// Resampling

// Linear interpolation onto round(n * target / rate) samples; bit-identical
// pass-through when the rates already match.
inline Waveform resample_linear(const Waveform& w, double target_hz) {
  if (target_hz <= 0.0) throw DataError("resample target rate must be positive");
  if (w.sample_rate == target_hz) return w;
  const std::size_t n = w.samples.size();
  Waveform out;
  out.sample_rate = target_hz;
  if (n == 0) return out;
  const auto m = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_hz / w.sample_rate));
  out.samples.resize(m);
  const double step = w.sample_rate / target_hz;
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = std::min(static_cast<std::size_t>(pos), n - 1);
    const auto hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    out.samples[i] = w.samples[lo] * (1.0 - frac) + w.samples[hi] * frac;
  }
  return out;
}

// ---------------------------------------------------------------------------
// STFT + mel filterbank

namespace detail {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// 128 unit-peak triangles from 130 mel-spaced edges, sampled at FFT bin
// centers. Narrow low-frequency triangles may miss every bin center; those
// rows stay zero rather than being renormalized.
struct MelBank {
  // per filter: first bin index and the weights from there on
  std::vector<std::size_t> start;
  std::vector<std::vector<double>> weight;

  explicit MelBank(double sample_rate) : start(kMelBins), weight(kMelBins) {
    const std::size_t n_bins = kStftWindow / 2 + 1;
    const double mel_lo = hz_to_mel(kMelLoHz), mel_hi = hz_to_mel(kMelHiHz);
    std::vector<double> edge(kMelBins + 2);
    for (std::size_t j = 0; j < edge.size(); ++j)
      edge[j] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(j) /
                                       static_cast<double>(kMelBins + 1));
    for (std::size_t j = 0; j < kMelBins; ++j) {
      const double lo = edge[j], mid = edge[j + 1], hi = edge[j + 2];
      bool open = false;
      for (std::size_t k = 0; k < n_bins; ++k) {
        const double f = static_cast<double>(k) * sample_rate / static_cast<double>(kStftWindow);
        const double up = (f - lo) / (mid - lo);
        const double down = (hi - f) / (hi - mid);
        const double v = std::max(0.0, std::min(up, down));
        if (v > 0.0 && !open) {
          start[j] = k;
          open = true;
        }
        if (open) {
          if (v <= 0.0) break;
          weight[j].push_back(v);
        }
      }
    }
  }
};

inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

// RAII around one r2c plan; FFTW plan create/destroy is not thread-safe,
// execution on private buffers is.
struct RealFft {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  RealFft() {
    in = fftw_alloc_real(kStftWindow);
    out = fftw_alloc_complex(kStftWindow / 2 + 1);
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(kStftWindow), in, out, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard<std::mutex> lock(fftw_plan_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
};

}  // namespace detail

// Pre-compression mel power: Hann(512)/hop-128 power STFT through the
// unit-peak mel bank. Inputs shorter than one window are zero-padded to 512.
inline Matrix mel_power_spectrogram(const Waveform& w) {
  std::vector<double> x = w.samples;
  if (x.size() < kStftWindow) x.resize(kStftWindow, 0.0);
  const std::size_t n_frames = (x.size() - kStftWindow) / kStftHop + 1;
  const std::size_t n_bins = kStftWindow / 2 + 1;

  static thread_local std::vector<double> hann;
  if (hann.empty()) {
    hann.resize(kStftWindow);
    for (std::size_t k = 0; k < kStftWindow; ++k)
      hann[k] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(k) /
                                      static_cast<double>(kStftWindow)));
  }
  const detail::MelBank bank(w.sample_rate);
  detail::RealFft fft;
  std::vector<double> power(n_bins);
  Matrix mel(n_frames, kMelBins);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const double* src = x.data() + t * kStftHop;
    for (std::size_t k = 0; k < kStftWindow; ++k) fft.in[k] = src[k] * hann[k];
    fftw_execute(fft.plan);
    for (std::size_t k = 0; k < n_bins; ++k)
      power[k] = fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
    for (std::size_t j = 0; j < kMelBins; ++j) {
      double acc = 0.0;
      const auto& wj = bank.weight[j];
      for (std::size_t k = 0; k < wj.size(); ++k) acc += wj[k] * power[bank.start[j] + k];
      mel(t, j) = acc;
    }
  }
  return mel;
}

// log(1+P) keeps silence at exactly zero.
inline MelSpectrogram mel_spectrogram(const Waveform& w) {
  MelSpectrogram s;
  s.frames = mel_power_spectrogram(w);
  for (double& v : s.frames.data) v = std::log1p(v);
  return s;
}

// ---------------------------------------------------------------------------
// Resize + windowing

// Corner-aligned bilinear resize (dst corners sample src corners exactly).
inline Matrix bilinear_resize(const Matrix& src, std::size_t rows, std::size_t cols) {
  if (src.rows == 0 || src.cols == 0) throw ShapeError("resize: empty source");
  Matrix dst(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double sy = rows > 1 ? static_cast<double>(i) * static_cast<double>(src.rows - 1) /
                                     static_cast<double>(rows - 1)
                               : 0.0;
    const auto y0 = std::min(static_cast<std::size_t>(sy), src.rows - 1);
    const auto y1 = std::min(y0 + 1, src.rows - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < cols; ++j) {
      const double sx = cols > 1 ? static_cast<double>(j) * static_cast<double>(src.cols - 1) /
                                       static_cast<double>(cols - 1)
                                 : 0.0;
      const auto x0 = std::min(static_cast<std::size_t>(sx), src.cols - 1);
      const auto x1 = std::min(x0 + 1, src.cols - 1);
      const double fx = sx - static_cast<double>(x0);
      dst(i, j) = src(y0, x0) * (1.0 - fy) * (1.0 - fx) + src(y0, x1) * (1.0 - fy) * fx +
                  src(y1, x0) * fy * (1.0 - fx) + src(y1, x1) * fy * fx;
    }
  }
  return dst;
}

// 3 s windows strided by 1.5 s in integer samples; sub-3 s input yields one
// zero-padded window. Trailing audio shorter than a full window is dropped.
inline std::vector<ClipWindow> slice_windows(const Waveform& w) {
  if (w.samples.empty()) throw EmptyAudio("cannot window an empty waveform");
  const auto win = static_cast<std::size_t>(std::llround(kClipSeconds * w.sample_rate));
  const auto stride = static_cast<std::size_t>(std::llround(kClipStrideSeconds * w.sample_rate));
  const std::size_t n = w.samples.size();
  const std::size_t count = n >= win ? (n - win) / stride + 1 : 1;
  std::vector<ClipWindow> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t begin = i * stride;
    Waveform slice;
    slice.sample_rate = w.sample_rate;
    slice.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                         w.samples.begin() + static_cast<std::ptrdiff_t>(std::min(begin + win, n)));
    slice.samples.resize(win, 0.0);
    ClipWindow cw;
    cw.start_s = static_cast<double>(begin) / w.sample_rate;
    cw.spec = mel_spectrogram(slice).frames;
    cw.resized = bilinear_resize(cw.spec, kResizedEdge, kResizedEdge);
    out.push_back(std::move(cw));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectrogram dump: magic "S2LM", u32 rows, u32 cols, f32 row-major.

inline void save_spectrogram(const std::string& path, const Matrix& m) {
  auto os = open_out(path);
  os.write("S2LM", 4);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) write_le<float>(os, static_cast<float>(v));
  if (!os) throw IoError("failed writing spectrogram: " + path);
}

inline Matrix load_spectrogram(const std::string& path) {
  auto in = open_in(path);
  expect_magic(in, "S2LM", path.c_str());
  const auto rows = read_le<std::uint32_t>(in, "spectrogram rows");
  const auto cols = read_le<std::uint32_t>(in, "spectrogram cols");
  Matrix m(rows, cols);
  for (double& v : m.data) v = static_cast<double>(read_le<float>(in, "spectrogram data"));
  return m;
}

}  // namespace s2l
