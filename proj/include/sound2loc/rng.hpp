#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sound2loc/error.hpp"

namespace s2l {

// splitmix64 finalizer; also the seed-derivation hash so that per-item
// streams (seed = derive_seed(root, id)) are stable under parallel order.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t id) {
  return mix64(mix64(root) ^ mix64(id + 0x632be59bd9b4e019ULL));
}

// mt19937_64 engine with explicitly coded distributions: the standard pins
// the engine but not the distributions, and training/generation must be
// bit-reproducible, so the few draws we need are spelled out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds, rejection-free modulo bias removal
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(eng_());  // full range
    const std::uint64_t limit = (~std::uint64_t{0} / span) * span;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return lo + static_cast<std::int64_t>(x % span);
  }

  // Box-Muller with cached spare
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k indices from {0..n-1} without replacement, uniform (prefix of a
  // Fisher-Yates permutation)
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = static_cast<std::size_t>(
          uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  // weighted draw of k distinct indices, probability proportional to w
  std::vector<std::size_t> weighted_sample_without_replacement(const std::vector<double>& w,
                                                              std::size_t k) {
    std::vector<std::size_t> alive(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) alive[i] = i;
    std::vector<std::size_t> out;
    k = std::min(k, w.size());
    out.reserve(k);
    while (out.size() < k) {
      double total = 0.0;
      for (const auto i : alive) total += w[i];
      if (total <= 0.0) throw DataError("weighted sample: non-positive total weight");
      double r = uniform() * total;
      std::size_t pick = alive.size() - 1;
      for (std::size_t j = 0; j < alive.size(); ++j) {
        r -= w[alive[j]];
        if (r < 0.0) {
          pick = j;
          break;
        }
      }
      out.push_back(alive[pick]);
      alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return out;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace s2l
