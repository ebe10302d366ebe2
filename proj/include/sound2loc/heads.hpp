#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "sound2loc/encoders.hpp"
#include "sound2loc/error.hpp"
#include "sound2loc/geodesy.hpp"
#include "sound2loc/numkit.hpp"
#include "sound2loc/rangemap.hpp"
#include "sound2loc/rng.hpp"

namespace s2l {

// ---------------------------------------------------------------------------
// Head families. Each maps frozen 1280-d audio embeddings (or checklists, for
// the probe) to a location prediction; only the head parameters train.

// One recording as the training loops see it: every clip embedding plus the
// ground-truth location and, when the auxiliary loss wants it, the checklist.
struct HeadSample {
  std::vector<std::vector<double>> clips;
  GeoCoordinate location;
  Checklist checklist;
};
using HeadDataset = std::vector<HeadSample>;

enum class RegressionLoss { euclidean, haversine };

// Linear 1280 -> 2, outputs raw degrees; wrapping happens only at prediction.
struct RegressionHead {
  Linear lin;
  RegressionLoss loss = RegressionLoss::haversine;

  RegressionHead() = default;
  RegressionHead(RegressionLoss kind, Rng& rng)
      : lin(kAudioEmbeddingDim, 2, rng), loss(kind) {}
};

// Linear 1280 -> C over one grid level's cells.
struct ClassificationHead {
  Linear lin;
  int level = 0;

  ClassificationHead() = default;
  ClassificationHead(const HierarchicalGrid& g, int level_, Rng& rng) : level(level_) {
    detail::check_level(g, level_);
    const auto c = static_cast<std::size_t>(g.levels[static_cast<std::size_t>(level_)].n_cells());
    lin = Linear(kAudioEmbeddingDim, c, rng);
  }
};

// Contrastive head: an MLP decoding audio into the location-embedding space,
// plus an auxiliary MLP predicting the species checklist from the same input.
struct RetrievalHead {
  MlpHead loc_decoder;        // 1280 -> 512
  MlpHead checklist_decoder;  // 1280 -> S
  double bce_weight = 0.01;

  RetrievalHead() = default;
  RetrievalHead(std::size_t n_species, Rng& rng, double bce_weight_ = 0.01)
      : loc_decoder(kAudioEmbeddingDim, kLocationEmbeddingDim, rng),
        checklist_decoder(kAudioEmbeddingDim, n_species, rng),
        bce_weight(bce_weight_) {}
};

// Linear S -> 512 mapping a species checklist straight into the
// location-embedding space; the geolocation-from-species upper bound.
struct ChecklistProbe {
  Linear lin;

  ChecklistProbe() = default;
  ChecklistProbe(std::size_t n_species, Rng& rng)
      : lin(n_species, kLocationEmbeddingDim, rng) {}
};

// ---------------------------------------------------------------------------
// Training configuration and the per-epoch loss log.

struct TrainOptions {
  std::uint64_t seed = 0;
  std::size_t batch_size = 128;
  LrSchedule schedule;
  std::size_t patience = 10;     // epochs without val improvement before stopping
  double val_fraction = 0.1;
  double temperature = 0.07;     // contrastive losses
};

struct LossLogRow {
  std::size_t epoch = 0;         // 1-based
  double lr = 0.0;               // at the start of the epoch
  double train_loss = 0.0;       // mean over the epoch's batches
  double val_median_km = 0.0;
};

struct TrainLog {
  std::vector<LossLogRow> rows;
  double best_val_median_km = std::numeric_limits<double>::infinity();
};

inline void write_loss_log(const TrainLog& log, std::ostream& os) {
  os << "epoch,lr,train_loss,val_median_km\n";
  for (const auto& r : log.rows)
    os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.val_median_km << '\n';
}

// ---------------------------------------------------------------------------
// Recording-level prediction. Training is clip-level; at inference a
// recording's clips are combined per head family: regression averages raw
// degree outputs, classification averages per-clip softmax rows, and the
// contrastive heads average unit decodings (renormalized).

namespace detail {

inline Matrix clips_matrix(const std::vector<std::vector<double>>& clips, std::size_t dim) {
  if (clips.empty()) throw EmptyDataset("recording has no clip embeddings");
  Matrix x(clips.size(), dim);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].size() != dim) throw ShapeError("clip embedding width does not match head input");
    std::copy(clips[i].begin(), clips[i].end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return x;
}

inline void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double mx = m(i, 0);
    for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, m(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) z += (m(i, j) = std::exp(m(i, j) - mx));
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) /= z;
  }
}

inline std::vector<double> mean_rows(const Matrix& m) {
  std::vector<double> out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += m(i, j);
  for (double& v : out) v /= static_cast<double>(m.rows);
  return out;
}

inline void normalize_in_place(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

}  // namespace detail

inline GeoCoordinate predict_regression(const RegressionHead& head,
                                        const std::vector<std::vector<double>>& clips) {
  Matrix x = detail::clips_matrix(clips, head.lin.w.rows);
  const std::vector<double> mean = detail::mean_rows(linear_forward(head.lin, x));
  return wrap_coordinate(mean[0], mean[1]);
}

// Mean of per-clip softmax distributions over the head's cells.
inline std::vector<double> classification_probs(const ClassificationHead& head,
                                                const std::vector<std::vector<double>>& clips) {
  Matrix logits = linear_forward(head.lin, detail::clips_matrix(clips, head.lin.w.rows));
  detail::softmax_rows(logits);
  return detail::mean_rows(logits);
}

inline std::int64_t argmax_cell(const std::vector<double>& probs) {
  return static_cast<std::int64_t>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// Flat decoding: center of the most probable cell at the head's level.
inline GeoCoordinate predict_flat(const ClassificationHead& head, const HierarchicalGrid& g,
                                  const std::vector<std::vector<double>>& clips) {
  return cell_at(g, head.level, argmax_cell(classification_probs(head, clips))).center;
}

// Coarse-to-fine decoding: each level's argmax is restricted to the children
// of the previously chosen cell. Returns the chosen cell id per level.
inline std::vector<std::int64_t> hierarchical_cells(
    const std::vector<ClassificationHead>& heads, const HierarchicalGrid& g,
    const std::vector<std::vector<double>>& clips) {
  if (heads.empty() || heads.size() > g.levels.size())
    throw InvalidLevel("hierarchical decoding needs one trained head per grid level");
  for (std::size_t l = 0; l < heads.size(); ++l)
    if (heads[l].level != static_cast<int>(l))
      throw InvalidLevel("hierarchical decoding needs heads ordered level 0..L-1");

  std::vector<std::int64_t> chain(heads.size());
  chain[0] = argmax_cell(classification_probs(heads[0], clips));
  for (std::size_t l = 1; l < heads.size(); ++l) {
    const std::vector<double> probs = classification_probs(heads[l], clips);
    const std::vector<std::int64_t> kids = children_of(g, static_cast<int>(l) - 1, chain[l - 1]);
    std::int64_t pick = kids.front();
    for (std::int64_t id : kids)
      if (probs[static_cast<std::size_t>(id)] > probs[static_cast<std::size_t>(pick)]) pick = id;
    chain[l] = pick;
  }
  return chain;
}

inline GeoCoordinate predict_hierarchical(const std::vector<ClassificationHead>& heads,
                                          const HierarchicalGrid& g,
                                          const std::vector<std::vector<double>>& clips) {
  const std::vector<std::int64_t> chain = hierarchical_cells(heads, g, clips);
  return cell_at(g, static_cast<int>(chain.size()) - 1, chain.back()).center;
}

// Unit-norm location-space decoding of a single clip embedding.
inline std::vector<double> retrieval_embed(const RetrievalHead& head,
                                           const std::vector<double>& emb) {
  Matrix x(1, emb.size());
  std::copy(emb.begin(), emb.end(), x.data.begin());
  Matrix y = mlp_forward(head.loc_decoder, x);
  l2_normalize_rows(y);
  return y.data;
}

// Recording-level decoding: mean of the unit per-clip decodings, renormalized.
inline std::vector<double> retrieval_embed(const RetrievalHead& head,
                                           const std::vector<std::vector<double>>& clips) {
  Matrix y = mlp_forward(head.loc_decoder,
                         detail::clips_matrix(clips, head.loc_decoder.l1.w.rows));
  l2_normalize_rows(y);
  std::vector<double> mean = detail::mean_rows(y);
  detail::normalize_in_place(mean);
  return mean;
}

inline std::vector<double> probe_embed(const ChecklistProbe& probe, const Checklist& checklist) {
  if (checklist.size() != probe.lin.w.rows)
    throw DimensionMismatch("checklist length does not match probe input");
  Matrix x(1, checklist.size());
  for (std::size_t i = 0; i < checklist.size(); ++i) x.data[i] = checklist[i] ? 1.0 : 0.0;
  Matrix y = linear_forward(probe.lin, x);
  l2_normalize_rows(y);
  return y.data;
}

// ---------------------------------------------------------------------------
// Shared training skeleton: seeded validation split, per-batch cosine lr,
// early stopping on validation median error, best-weights restore.

namespace detail {

struct TrainHooks {
  // Runs one optimizer step; returns the batch loss, or NaN if skipped.
  std::function<double(const std::vector<std::size_t>&, double lr)> step;
  std::function<double(const std::vector<std::size_t>&)> val_median;
  std::function<void()> snapshot;
  std::function<void()> restore;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

inline TrainLog run_training(std::size_t n, const TrainOptions& opt, Rng& rng,
                             const TrainHooks& hooks) {
  if (n == 0) throw EmptyDataset("training requires at least one example");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  const auto nv = static_cast<std::size_t>(static_cast<double>(n) * opt.val_fraction);
  std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nv));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(nv), perm.end());
  if (train.empty()) throw EmptyDataset("validation split consumed every example");
  if (val.empty()) val = train;  // tiny datasets validate on the training rows

  const auto total_epochs = static_cast<std::size_t>(opt.schedule.total_epochs);
  const std::size_t nb = (train.size() + opt.batch_size - 1) / opt.batch_size;
  TrainLog log;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad = 0;
  for (std::size_t ep = 0; ep < total_epochs; ++ep) {
    rng.shuffle(train);
    double loss_sum = 0.0;
    std::size_t loss_rows = 0;
    for (std::size_t bi = 0; bi < nb; ++bi) {
      const std::size_t lo = bi * opt.batch_size;
      const std::size_t hi = std::min(lo + opt.batch_size, train.size());
      const std::vector<std::size_t> rows(train.begin() + static_cast<std::ptrdiff_t>(lo),
                                          train.begin() + static_cast<std::ptrdiff_t>(hi));
      const double lr = opt.schedule.at(static_cast<double>(ep) +
                                        static_cast<double>(bi) / static_cast<double>(nb));
      const double loss = hooks.step(rows, lr);
      if (!std::isnan(loss)) {
        loss_sum += loss * static_cast<double>(rows.size());
        loss_rows += rows.size();
      }
    }
    const double med = hooks.val_median(val);
    log.rows.push_back({ep + 1, opt.schedule.at(static_cast<double>(ep)),
                        loss_rows > 0 ? loss_sum / static_cast<double>(loss_rows)
                                      : std::numeric_limits<double>::quiet_NaN(),
                        med});
    if (med < best - 1e-9) {
      best = med;
      bad = 0;
      hooks.snapshot();
    } else {
      // On a tied median the later weights win: the training loss keeps
      // falling while the median sits still (e.g. every validation point
      // already lands in the right cell), so the freshest tie is sharpest.
      if (med <= best + 1e-9) hooks.snapshot();
      if (++bad > opt.patience) break;
    }
  }
  hooks.restore();
  log.best_val_median_km = best;
  return log;
}

inline void check_dataset(const HeadDataset& data, std::size_t dim) {
  if (data.empty()) throw EmptyDataset("training requires at least one example");
  for (const auto& s : data) {
    if (s.clips.empty()) throw EmptyDataset("recording has no clip embeddings");
    for (const auto& c : s.clips)
      if (c.size() != dim) throw ShapeError("clip embedding width does not match head input");
  }
}

// One uniformly chosen clip per listed recording, in row order.
inline Matrix gather_clips(const HeadDataset& data, const std::vector<std::size_t>& rows,
                           Rng& rng, std::size_t dim) {
  Matrix x(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& clips = data[rows[i]].clips;
    const auto pick = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(clips.size()) - 1));
    std::copy(clips[pick].begin(), clips[pick].end(),
              x.data.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return x;
}

inline Matrix column_sums(const Matrix& m) {
  Matrix s(1, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) s(0, j) += m(i, j);
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training loops. All deterministic per seed: batch 128, Nesterov SGD with
// the LrSchedule defaults, one clip per recording per epoch.

inline TrainLog train_regression(RegressionHead& head, const HeadDataset& data,
                                 const TrainOptions& opt = {}) {
  detail::check_dataset(data, head.lin.w.rows);
  Rng rng(opt.seed);
  SgdState sgd;
  Linear best = head.lin;

  detail::TrainHooks hooks;
  hooks.step = [&](const std::vector<std::size_t>& rows, double lr) {
    Matrix x = detail::gather_clips(data, rows, rng, head.lin.w.rows);
    Matrix pred = linear_forward(head.lin, x);
    std::vector<GeoCoordinate> target(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) target[i] = data[rows[i]].location;
    const LossResult res = head.loss == RegressionLoss::euclidean
                               ? loss_euclidean(pred, target)
                               : loss_haversine(pred, target);
    Matrix gw = matmul(x, res.grad, /*trans_a=*/true);
    Matrix gb = detail::column_sums(res.grad);
    sgd_step({&head.lin.w, &head.lin.b}, {&gw, &gb}, sgd, lr);
    return res.loss;
  };
  hooks.val_median = [&](const std::vector<std::size_t>& rows) {
    std::vector<double> err(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      err[i] = haversine_km(predict_regression(head, data[rows[i]].clips),
                            data[rows[i]].location);
    return detail::median_of(std::move(err));
  };
  hooks.snapshot = [&] { best = head.lin; };
  hooks.restore = [&] { head.lin = best; };
  return detail::run_training(data.size(), opt, rng, hooks);
}

inline TrainLog train_classification(ClassificationHead& head, const HeadDataset& data,
                                     const HierarchicalGrid& g, const TrainOptions& opt = {}) {
  detail::check_dataset(data, head.lin.w.rows);
  const auto cells = static_cast<std::size_t>(
      g.levels[static_cast<std::size_t>(head.level)].n_cells());
  if (head.lin.w.cols != cells)
    throw ShapeError("classification head width does not match grid level cell count");
  std::vector<std::size_t> label(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    label[i] = static_cast<std::size_t>(cell_of(g, head.level, data[i].location).cell_id);

  Rng rng(opt.seed);
  SgdState sgd;
  Linear best = head.lin;

  detail::TrainHooks hooks;
  hooks.step = [&](const std::vector<std::size_t>& rows, double lr) {
    Matrix x = detail::gather_clips(data, rows, rng, head.lin.w.rows);
    Matrix logits = linear_forward(head.lin, x);
    std::vector<std::size_t> lab(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) lab[i] = label[rows[i]];
    const LossResult res = loss_softmax_ce(logits, lab);
    Matrix gw = matmul(x, res.grad, /*trans_a=*/true);
    Matrix gb = detail::column_sums(res.grad);
    sgd_step({&head.lin.w, &head.lin.b}, {&gw, &gb}, sgd, lr);
    return res.loss;
  };
  hooks.val_median = [&](const std::vector<std::size_t>& rows) {
    std::vector<double> err(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      err[i] = haversine_km(predict_flat(head, g, data[rows[i]].clips),
                            data[rows[i]].location);
    return detail::median_of(std::move(err));
  };
  hooks.snapshot = [&] { best = head.lin; };
  hooks.restore = [&] { head.lin = best; };
  return detail::run_training(data.size(), opt, rng, hooks);
}

// InfoNCE against the frozen location encoder's embeddings of the true
// locations, plus bce_weight times BCE from the checklist decoder. With
// bce_weight 0 the checklist decoder is left untouched, making the run
// exactly the plain contrastive baseline.
inline TrainLog train_retrieval(RetrievalHead& head, const HeadDataset& data,
                                const FourierLocationEncoder& enc, const TrainOptions& opt = {}) {
  detail::check_dataset(data, head.loc_decoder.l1.w.rows);
  const std::size_t n_species = head.checklist_decoder.l2.w.cols;
  if (head.bce_weight != 0.0)
    for (const auto& s : data)
      if (s.checklist.size() != n_species)
        throw DimensionMismatch("checklist length does not match checklist decoder width");

  std::vector<GeoCoordinate> locs(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) locs[i] = data[i].location;
  const Matrix loc_emb = enc.encode(locs);

  Rng rng(opt.seed);
  SgdState sgd_loc, sgd_chk;
  RetrievalHead best = head;

  detail::TrainHooks hooks;
  hooks.step = [&](const std::vector<std::size_t>& rows, double lr) {
    if (rows.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    Matrix x = detail::gather_clips(data, rows, rng, head.loc_decoder.l1.w.rows);
    Matrix y = mlp_forward(head.loc_decoder, x);
    const std::vector<double> norms = l2_normalize_rows(y);
    Matrix lb(rows.size(), loc_emb.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < loc_emb.cols; ++j) lb(i, j) = loc_emb(rows[i], j);
    const InfoNceResult nce = loss_info_nce(y, lb, opt.temperature);
    const Matrix du = l2_normalize_rows_backward(y, norms, nce.audio_grad);
    const MlpBackward bk = mlp_forward_backward(head.loc_decoder, x, du);
    sgd_step(head.loc_decoder.params(), bk.grads.list(), sgd_loc, lr);
    double loss = nce.loss;

    if (head.bce_weight != 0.0) {
      Matrix target(rows.size(), n_species);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < n_species; ++j)
          target(i, j) = data[rows[i]].checklist[j] ? 1.0 : 0.0;
      Matrix logits = mlp_forward(head.checklist_decoder, x);
      LossResult bce = loss_bce_logits(logits, target);
      for (double& v : bce.grad.data) v *= head.bce_weight;
      const MlpBackward bk2 = mlp_forward_backward(head.checklist_decoder, x, bce.grad);
      sgd_step(head.checklist_decoder.params(), bk2.grads.list(), sgd_chk, lr);
      loss += head.bce_weight * bce.loss;
    }
    return loss;
  };
  hooks.val_median = [&](const std::vector<std::size_t>& rows) {
    Matrix q(rows.size(), loc_emb.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::vector<double> e = retrieval_embed(head, data[rows[i]].clips);
      std::copy(e.begin(), e.end(), q.data.begin() + static_cast<std::ptrdiff_t>(i * q.cols));
    }
    const Matrix sim = matmul(q, loc_emb, false, /*trans_b=*/true);
    std::vector<double> err(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < sim.cols; ++j)
        if (sim(i, j) > sim(i, arg)) arg = j;
      err[i] = haversine_km(locs[arg], data[rows[i]].location);
    }
    return detail::median_of(std::move(err));
  };
  hooks.snapshot = [&] { best = head; };
  hooks.restore = [&] { head = best; };
  return detail::run_training(data.size(), opt, rng, hooks);
}

// InfoNCE between probe outputs on oracle checklists and the frozen location
// encoder's embeddings of the true locations.
inline TrainLog train_checklist_probe(ChecklistProbe& probe,
                                      const std::vector<Checklist>& checklists,
                                      const std::vector<GeoCoordinate>& locations,
                                      const FourierLocationEncoder& enc,
                                      const TrainOptions& opt = {}) {
  if (checklists.size() != locations.size())
    throw LengthMismatch("one location per checklist required");
  if (checklists.empty()) throw EmptyDataset("training requires at least one example");
  const std::size_t n_species = probe.lin.w.rows;
  for (const auto& c : checklists)
    if (c.size() != n_species)
      throw DimensionMismatch("checklist length does not match probe input");

  Matrix x_all(checklists.size(), n_species);
  for (std::size_t i = 0; i < checklists.size(); ++i)
    for (std::size_t j = 0; j < n_species; ++j)
      x_all(i, j) = checklists[i][j] ? 1.0 : 0.0;
  const Matrix loc_emb = enc.encode(locations);

  Rng rng(opt.seed);
  SgdState sgd;
  Linear best = probe.lin;

  auto embed_rows = [&](const std::vector<std::size_t>& rows) {
    Matrix x(rows.size(), n_species);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < n_species; ++j) x(i, j) = x_all(rows[i], j);
    return x;
  };

  detail::TrainHooks hooks;
  hooks.step = [&](const std::vector<std::size_t>& rows, double lr) {
    if (rows.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    Matrix x = embed_rows(rows);
    Matrix y = linear_forward(probe.lin, x);
    const std::vector<double> norms = l2_normalize_rows(y);
    Matrix lb(rows.size(), loc_emb.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < loc_emb.cols; ++j) lb(i, j) = loc_emb(rows[i], j);
    const InfoNceResult nce = loss_info_nce(y, lb, opt.temperature);
    const Matrix du = l2_normalize_rows_backward(y, norms, nce.audio_grad);
    Matrix gw = matmul(x, du, /*trans_a=*/true);
    Matrix gb = detail::column_sums(du);
    sgd_step({&probe.lin.w, &probe.lin.b}, {&gw, &gb}, sgd, lr);
    return nce.loss;
  };
  hooks.val_median = [&](const std::vector<std::size_t>& rows) {
    Matrix y = linear_forward(probe.lin, embed_rows(rows));
    l2_normalize_rows(y);
    const Matrix sim = matmul(y, loc_emb, false, /*trans_b=*/true);
    std::vector<double> err(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < sim.cols; ++j)
        if (sim(i, j) > sim(i, arg)) arg = j;
      err[i] = haversine_km(locations[arg], locations[rows[i]]);
    }
    return detail::median_of(std::move(err));
  };
  hooks.snapshot = [&] { best = probe.lin; };
  hooks.restore = [&] { probe.lin = best; };
  return detail::run_training(checklists.size(), opt, rng, hooks);
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing: fixed parameter names per head family.

inline void assign_linear(Linear& lin, const std::string& prefix,
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
  take("w", lin.w);
  take("b", lin.b);
}

inline void save_head(const std::string& path, const RegressionHead& head) {
  save_checkpoint(path, {{"reg.w", &head.lin.w}, {"reg.b", &head.lin.b}});
}

inline void load_head(const std::string& path, RegressionHead& head) {
  assign_linear(head.lin, "reg.", load_checkpoint(path));
}

// All levels of a hierarchical classifier stack live in one checkpoint.
inline void save_heads(const std::string& path, const std::vector<ClassificationHead>& heads) {
  std::vector<std::pair<std::string, const Matrix*>> params;
  for (std::size_t l = 0; l < heads.size(); ++l) {
    const std::string prefix = "cls" + std::to_string(heads[l].level) + ".";
    params.emplace_back(prefix + "w", &heads[l].lin.w);
    params.emplace_back(prefix + "b", &heads[l].lin.b);
  }
  save_checkpoint(path, params);
}

inline void load_heads(const std::string& path, std::vector<ClassificationHead>& heads) {
  const auto params = load_checkpoint(path);
  for (auto& head : heads)
    assign_linear(head.lin, "cls" + std::to_string(head.level) + ".", params);
}

inline void save_head(const std::string& path, const RetrievalHead& head) {
  save_checkpoint(path, {{"ret.loc.w1", &head.loc_decoder.l1.w},
                         {"ret.loc.b1", &head.loc_decoder.l1.b},
                         {"ret.loc.w2", &head.loc_decoder.l2.w},
                         {"ret.loc.b2", &head.loc_decoder.l2.b},
                         {"ret.chk.w1", &head.checklist_decoder.l1.w},
                         {"ret.chk.b1", &head.checklist_decoder.l1.b},
                         {"ret.chk.w2", &head.checklist_decoder.l2.w},
                         {"ret.chk.b2", &head.checklist_decoder.l2.b}});
}

inline void load_head(const std::string& path, RetrievalHead& head) {
  const auto params = load_checkpoint(path);
  assign_head(head.loc_decoder, "ret.loc.", params);
  assign_head(head.checklist_decoder, "ret.chk.", params);
}

inline void save_head(const std::string& path, const ChecklistProbe& probe) {
  save_checkpoint(path, {{"probe.w", &probe.lin.w}, {"probe.b", &probe.lin.b}});
}

inline void load_head(const std::string& path, ChecklistProbe& probe) {
  assign_linear(probe.lin, "probe.", load_checkpoint(path));
}

}  // namespace s2l
