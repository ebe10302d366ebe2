#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sound2loc/binio.hpp"
#include "sound2loc/error.hpp"
#include "sound2loc/geodesy.hpp"
#include "sound2loc/matrix.hpp"
#include "sound2loc/rng.hpp"

namespace s2l {

// ---------------------------------------------------------------------------
// Layers

inline void init_xavier(Matrix& w, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
  for (double& v : w.data) v = rng.uniform(-bound, bound);
}

struct Linear {
  Matrix w;  // in x out
  Matrix b;  // 1 x out

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) : w(in, out), b(1, out) {
    init_xavier(w, rng);
  }
};

inline Matrix linear_forward(const Linear& l, const Matrix& x) {
  if (x.cols != l.w.rows) throw ShapeError("linear: input width does not match weight rows");
  Matrix y = matmul(x, l.w);
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) y(i, j) += l.b(0, j);
  return y;
}

// Two affine layers around a ReLU; hidden width defaults to 128.
struct MlpHead {
  Linear l1, l2;

  MlpHead() = default;
  MlpHead(std::size_t in, std::size_t out, Rng& rng, std::size_t hidden = 128)
      : l1(in, hidden, rng), l2(hidden, out, rng) {}

  std::size_t param_count() const { return l1.w.size() + l1.b.size() + l2.w.size() + l2.b.size(); }
  std::vector<Matrix*> params() { return {&l1.w, &l1.b, &l2.w, &l2.b}; }
};

struct MlpGrads {
  Matrix w1, b1, w2, b2;
  std::vector<const Matrix*> list() const { return {&w1, &b1, &w2, &b2}; }
};

struct MlpBackward {
  Matrix y;
  MlpGrads grads;
  Matrix x_grad;
};

inline Matrix mlp_forward(const MlpHead& head, const Matrix& x) {
  Matrix h = linear_forward(head.l1, x);
  for (double& v : h.data) v = std::max(0.0, v);
  return linear_forward(head.l2, h);
}

// One reverse-mode sweep through affine/ReLU/affine. `upstream` is dL/dy.
inline MlpBackward mlp_forward_backward(const MlpHead& head, const Matrix& x,
                                        const Matrix& upstream) {
  Matrix h_pre = linear_forward(head.l1, x);
  Matrix h = h_pre;
  for (double& v : h.data) v = std::max(0.0, v);
  Matrix y = linear_forward(head.l2, h);
  if (!upstream.same_shape(y)) throw ShapeError("mlp backward: upstream shape does not match output");

  MlpBackward out;
  out.grads.w2 = matmul(h, upstream, /*trans_a=*/true);
  out.grads.b2 = Matrix(1, y.cols);
  for (std::size_t i = 0; i < upstream.rows; ++i)
    for (std::size_t j = 0; j < upstream.cols; ++j) out.grads.b2(0, j) += upstream(i, j);

  Matrix dh = matmul(upstream, head.l2.w, false, /*trans_b=*/true);
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (h_pre.data[i] <= 0.0) dh.data[i] = 0.0;

  out.grads.w1 = matmul(x, dh, /*trans_a=*/true);
  out.grads.b1 = Matrix(1, dh.cols);
  for (std::size_t i = 0; i < dh.rows; ++i)
    for (std::size_t j = 0; j < dh.cols; ++j) out.grads.b1(0, j) += dh(i, j);
  out.x_grad = matmul(dh, head.l1.w, false, /*trans_b=*/true);
  out.y = std::move(y);
  return out;
}

// ---------------------------------------------------------------------------
// Row normalization (shared by the contrastive paths)

// Normalizes rows in place and returns the pre-normalization norms.
// Zero rows are left as zeros and their norm recorded as 0.
inline std::vector<double> l2_normalize_rows(Matrix& m) {
  std::vector<double> norms(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += m(i, j) * m(i, j);
    const double n = std::sqrt(s);
    norms[i] = n;
    if (n > 0.0)
      for (std::size_t j = 0; j < m.cols; ++j) m(i, j) /= n;
  }
  return norms;
}

// Backprop through y = u / ||u||: du = (dy - (dy.y) y) / ||u||.
// `normalized` and `norms` come from l2_normalize_rows.
inline Matrix l2_normalize_rows_backward(const Matrix& normalized, const std::vector<double>& norms,
                                         const Matrix& upstream) {
  if (!normalized.same_shape(upstream) || norms.size() != normalized.rows)
    throw ShapeError("normalize backward: shapes disagree");
  Matrix du(normalized.rows, normalized.cols);
  for (std::size_t i = 0; i < normalized.rows; ++i) {
    if (norms[i] <= 0.0) continue;  // zero row: stays zero, no gradient
    double dot = 0.0;
    for (std::size_t j = 0; j < normalized.cols; ++j) dot += upstream(i, j) * normalized(i, j);
    for (std::size_t j = 0; j < normalized.cols; ++j)
      du(i, j) = (upstream(i, j) - dot * normalized(i, j)) / norms[i];
  }
  return du;
}

// ---------------------------------------------------------------------------
// Losses

struct LossResult {
  double loss = 0.0;
  Matrix grad;
};

// Mean L2 distance in degree space.
inline LossResult loss_euclidean(const Matrix& pred_deg, const std::vector<GeoCoordinate>& target) {
  if (pred_deg.cols != 2 || pred_deg.rows != target.size())
    throw ShapeError("euclidean loss: predictions must be n x 2 matching targets");
  const std::size_t n = pred_deg.rows;
  LossResult r;
  r.grad = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double dlat = pred_deg(i, 0) - target[i].lat_deg;
    const double dlon = pred_deg(i, 1) - target[i].lon_deg;
    const double d = std::sqrt(dlat * dlat + dlon * dlon);
    r.loss += d;
    if (d > 0.0) {
      r.grad(i, 0) = dlat / (d * static_cast<double>(n));
      r.grad(i, 1) = dlon / (d * static_cast<double>(n));
    }
  }
  r.loss /= static_cast<double>(n);
  return r;
}

// Mean great-circle distance in km, differentiable in the predicted degrees.
// The loss value uses the raw haversine argument; the gradient clamps it to
// [1e-12, 1-1e-12] so coincident and antipodal pairs stay finite, and the
// gradient at exactly-coincident points is 0 by construction.
inline LossResult loss_haversine(const Matrix& pred_deg, const std::vector<GeoCoordinate>& target) {
  if (pred_deg.cols != 2 || pred_deg.rows != target.size())
    throw ShapeError("haversine loss: predictions must be n x 2 matching targets");
  const std::size_t n = pred_deg.rows;
  const double deg = M_PI / 180.0;
  LossResult r;
  r.grad = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double pp = pred_deg(i, 0) * deg, lp = pred_deg(i, 1) * deg;
    const double pt = target[i].lat_deg * deg, lt = target[i].lon_deg * deg;
    const double u = std::sin((pp - pt) / 2.0), v = std::sin((lp - lt) / 2.0);
    const double cp = std::cos(pp), ct = std::cos(pt);
    const double a = u * u + cp * ct * v * v;
    r.loss += 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::clamp(a, 0.0, 1.0)));
    const double ac = std::clamp(a, 1e-12, 1.0 - 1e-12);
    const double dd_da = kEarthRadiusKm / std::sqrt(ac * (1.0 - ac));
    const double da_dpp = u * std::cos((pp - pt) / 2.0) - std::sin(pp) * ct * v * v;
    const double da_dlp = cp * ct * v * std::cos((lp - lt) / 2.0);
    r.grad(i, 0) = dd_da * da_dpp * deg / static_cast<double>(n);
    r.grad(i, 1) = dd_da * da_dlp * deg / static_cast<double>(n);
  }
  r.loss /= static_cast<double>(n);
  return r;
}

// Row-stable log softmax helper: fills `probs` and returns mean CE on labels.
inline LossResult loss_softmax_ce(const Matrix& logits, const std::vector<std::size_t>& labels) {
  if (logits.rows != labels.size())
    throw ShapeError("softmax ce: one label per logit row required");
  const std::size_t n = logits.rows, c = logits.cols;
  for (std::size_t lab : labels)
    if (lab >= c) throw LabelError("softmax ce: label out of range");
  LossResult r;
  r.grad = Matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits(i, j) - mx);
    const double log_z = mx + std::log(z);
    r.loss += log_z - logits(i, labels[i]);
    for (std::size_t j = 0; j < c; ++j)
      r.grad(i, j) = (std::exp(logits(i, j) - log_z) - (j == labels[i] ? 1.0 : 0.0)) /
                     static_cast<double>(n);
  }
  r.loss /= static_cast<double>(n);
  return r;
}

// Binary cross-entropy on logits, mean over every entry, log-sum-exp form so
// large logits cannot overflow.
inline LossResult loss_bce_logits(const Matrix& logits, const Matrix& targets) {
  if (!logits.same_shape(targets)) throw ShapeError("bce: logits and targets differ in shape");
  const double m = static_cast<double>(logits.size());
  LossResult r;
  r.grad = Matrix(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits.data[i], t = targets.data[i];
    r.loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    const double sig = 1.0 / (1.0 + std::exp(-x));
    r.grad.data[i] = (sig - t) / m;
  }
  r.loss /= m;
  return r;
}

struct InfoNceResult {
  double loss = 0.0;
  Matrix audio_grad;
  Matrix loc_grad;
};

// Symmetric InfoNCE over in-batch negatives: mean of row-wise and column-wise
// cross-entropy on the similarity matrix audio·locᵀ/τ, diagonal as the
// positives. Callers pass L2-normalized rows.
inline InfoNceResult loss_info_nce(const Matrix& audio_emb, const Matrix& loc_emb,
                                   double temperature = 0.07) {
  if (!audio_emb.same_shape(loc_emb) || audio_emb.cols == 0)
    throw ShapeError("info nce: embedding matrices must share an n x d shape");
  const std::size_t n = audio_emb.rows;
  if (n < 2) throw BatchTooSmall("info nce: need at least 2 pairs for in-batch negatives");

  Matrix sim = matmul(audio_emb, loc_emb, false, /*trans_b=*/true);
  for (double& v : sim.data) v /= temperature;

  // Row and column softmax with the usual max-shift.
  Matrix p_row(n, n), p_col(n, n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = sim(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, sim(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(sim(i, j) - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) p_row(i, j) = std::exp(sim(i, j) - log_z);
    loss += 0.5 * (log_z - sim(i, i));
  }
  for (std::size_t j = 0; j < n; ++j) {
    double mx = sim(0, j);
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, sim(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(sim(i, j) - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) p_col(i, j) = std::exp(sim(i, j) - log_z);
    loss += 0.5 * (log_z - sim(j, j));
  }

  // dL/dsim = (0.5 (p_row + p_col) - I) / n, then through sim = A Lᵀ / τ.
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      g(i, j) = (0.5 * (p_row(i, j) + p_col(i, j)) - (i == j ? 1.0 : 0.0)) /
                (static_cast<double>(n) * temperature);

  InfoNceResult r;
  r.loss = loss / static_cast<double>(n);
  r.audio_grad = matmul(g, loc_emb);
  r.loc_grad = matmul(g, audio_emb, /*trans_a=*/true);
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

struct SgdState {
  double momentum = 0.9;
  double weight_decay = 1e-5;
  bool nesterov = true;
  std::vector<Matrix> buffers;  // allocated on first step
};

// Nesterov SGD with weight decay folded into the gradient (not decoupled):
//   d   = g + wd·θ
//   buf = μ·buf + d
//   θ  -= lr · (nesterov ? d + μ·buf : buf)
inline void sgd_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
                     SgdState& state, double lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd: one gradient per parameter required");
  if (state.buffers.empty())
    for (const Matrix* p : params) state.buffers.emplace_back(p->rows, p->cols);
  if (state.buffers.size() != params.size()) throw ShapeError("sgd: state built for another head");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = *grads[k];
    Matrix& buf = state.buffers[k];
    if (!p.same_shape(g) || !p.same_shape(buf))
      throw ShapeError("sgd: parameter, gradient and buffer shapes disagree");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = g.data[i] + state.weight_decay * p.data[i];
      buf.data[i] = state.momentum * buf.data[i] + d;
      p.data[i] -= lr * (state.nesterov ? d + state.momentum * buf.data[i] : buf.data[i]);
    }
  }
}

// Linear warmup then cosine decay, evaluated at fractional epochs so
// per-batch stepping lands exactly on the pinned boundary values.
struct LrSchedule {
  double lr_start = 1e-3;
  double lr_peak = 1e-2;
  double lr_end = 1e-3;
  double warmup_epochs = 5.0;
  double total_epochs = 50.0;

  double at(double epoch) const {
    const double e = std::clamp(epoch, 0.0, total_epochs);
    if (e <= warmup_epochs)
      return lr_start + (lr_peak - lr_start) * (warmup_epochs > 0.0 ? e / warmup_epochs : 1.0);
    const double t = (e - warmup_epochs) / (total_epochs - warmup_epochs);
    return lr_end + (lr_peak - lr_end) * 0.5 * (1.0 + std::cos(M_PI * t));
  }
};

// ---------------------------------------------------------------------------
// Gradient verification

// Central finite differences against an analytic gradient; returns the max
// relative error |a-n| / max(1, |a|, |n|) over all coordinates.
inline double grad_check(const std::function<double(const std::vector<double>&)>& f,
                         const std::vector<double>& theta, const std::vector<double>& analytic,
                         double h = 1e-5) {
  if (theta.size() != analytic.size())
    throw ShapeError("grad check: gradient size must match parameter size");
  std::vector<double> probe = theta;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + h;
    const double up = f(probe);
    probe[i] = theta[i] - h;
    const double down = f(probe);
    probe[i] = theta[i];
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, err);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "S2LW", u32 count, then per parameter a u32 name
// length, the name bytes, u32 rows, u32 cols, and f64 row-major data.

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, const Matrix*>>& params) {
  auto out = open_out(path);
  out.write("S2LW", 4);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, m] : params) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m->rows));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m->cols));
    for (double v : m->data) write_le<double>(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline std::vector<std::pair<std::string, Matrix>> load_checkpoint(const std::string& path) {
  auto in = open_in(path);
  expect_magic(in, "S2LW", path.c_str());
  const auto count = read_le<std::uint32_t>(in, "checkpoint count");
  std::vector<std::pair<std::string, Matrix>> params;
  params.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = read_le<std::uint32_t>(in, "checkpoint name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw CorruptFile("truncated checkpoint: " + path);
    const auto rows = read_le<std::uint32_t>(in, "checkpoint dims");
    const auto cols = read_le<std::uint32_t>(in, "checkpoint dims");
    Matrix m(rows, cols);
    for (double& v : m.data) v = read_le<double>(in, "checkpoint data");
    params.emplace_back(std::move(name), std::move(m));
  }
  return params;
}

// Restores a head from named checkpoint entries, shape-checked.
inline void assign_head(MlpHead& head, const std::string& prefix,
                        const std::vector<std::pair<std::string, Matrix>>& params) {
  auto take = [&](const std::string& name, Matrix& dst) {
    for (const auto& [n, m] : params)
      if (n == prefix + name) {
        if (!m.same_shape(dst)) throw ShapeError("checkpoint shape mismatch for " + n);
        dst = m;
        return;
      }
    throw CorruptFile("checkpoint missing parameter " + prefix + name);
  };
  take("w1", head.l1.w);
  take("b1", head.l1.b);
  take("w2", head.l2.w);
  take("b2", head.l2.b);
}

}  // namespace s2l
