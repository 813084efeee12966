#include "obfrev/scas.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "obfrev/nn.hpp"
#include "obfrev/params.hpp"
#include "obfrev/rng.hpp"

namespace obfrev {

namespace {

// Three log-scale features, the hit rate, and three scale-invariant log
// ratios (per-element cost, read/write ratio, cache-corrected read/write
// ratio). All are functions of the four trace columns.
constexpr int kFeatures = 7;

std::array<double, kFeatures> raw_features(const TraceRow& r) {
  double lc = std::log1p(r.cycles);
  double lr = std::log1p(r.dram_reads);
  double lw = std::log1p(r.dram_writes);
  double lu = std::log(std::max(1e-9, 1.0 - r.cache_hit_rate));
  return {lc, lr, lw, r.cache_hit_rate, lc - lw, lr - lw, lr - lu - lw};
}

template <typename S>
struct Tagger {
  int hidden = 0;
  nn::ParamStore<S> store;
  int w_ih = -1, w_hh = -1, bias = -1, w_out = -1, b_out = -1;

  void build(int h) {
    hidden = h;
    w_ih = store.add("w_ih", kFeatures, 4 * h);
    w_hh = store.add("w_hh", h, 4 * h);
    bias = store.add("bias", 1, 4 * h);
    w_out = store.add("w_out", h, kNumOpKinds);
    b_out = store.add("b_out", 1, kNumOpKinds);
  }
};

template <typename S>
struct Net {
  std::vector<Tagger<S>> taggers;
  std::array<double, kFeatures> mean{};
  std::array<double, kFeatures> stddev{};

  std::array<double, kFeatures> normalized(const TraceRow& r) const {
    std::array<double, kFeatures> f = raw_features(r);
    for (int i = 0; i < kFeatures; ++i) f[i] = (f[i] - mean[i]) / stddev[i];
    return f;
  }
};

/// Padded batch view over a set of traces.
template <typename S>
struct Batch {
  Eigen::Index B = 0;
  Eigen::Index T = 0;
  std::vector<ad::Mat<S>> x;      // per step, B x 4
  std::vector<ad::Mat<S>> mask;   // per step, B x 1
  std::vector<std::vector<int>> labels;  // per step, B (only valid where mask)
  std::vector<std::vector<int>> imask;
  int tokens = 0;

  template <typename TraceIt>
  static Batch build(const Net<S>& net, TraceIt begin, TraceIt end, bool with_labels) {
    Batch batch;
    std::vector<const RuntimeTrace*> traces(begin, end);
    batch.B = static_cast<Eigen::Index>(traces.size());
    for (const RuntimeTrace* t : traces) {
      batch.T = std::max(batch.T, static_cast<Eigen::Index>(t->rows.size()));
    }
    batch.x.resize(static_cast<size_t>(batch.T));
    batch.mask.resize(static_cast<size_t>(batch.T));
    batch.labels.resize(static_cast<size_t>(batch.T));
    batch.imask.resize(static_cast<size_t>(batch.T));
    for (Eigen::Index t = 0; t < batch.T; ++t) {
      auto& xt = batch.x[static_cast<size_t>(t)];
      auto& mt = batch.mask[static_cast<size_t>(t)];
      xt.setZero(batch.B, kFeatures);
      mt.setZero(batch.B, 1);
      batch.labels[static_cast<size_t>(t)].assign(static_cast<size_t>(batch.B), 0);
      batch.imask[static_cast<size_t>(t)].assign(static_cast<size_t>(batch.B), 0);
      for (Eigen::Index b = 0; b < batch.B; ++b) {
        const RuntimeTrace& tr = *traces[static_cast<size_t>(b)];
        if (static_cast<size_t>(t) >= tr.rows.size()) continue;
        auto f = net.normalized(tr.rows[static_cast<size_t>(t)]);
        for (int i = 0; i < kFeatures; ++i) xt(b, i) = static_cast<S>(f[i]);
        mt(b, 0) = S(1);
        batch.imask[static_cast<size_t>(t)][static_cast<size_t>(b)] = 1;
        if (with_labels) {
          batch.labels[static_cast<size_t>(t)][static_cast<size_t>(b)] =
              static_cast<int>(tr.labels[static_cast<size_t>(t)].kind);
        }
        ++batch.tokens;
      }
    }
    return batch;
  }
};

/// Per-step tagging loss over one batch. The optimized objective is the
/// token NLL summed per sequence and averaged over the batch (the usual
/// sequence-training normalization); the returned value is the per-token
/// mean, which is what the logs report.
template <typename S>
double tagger_loss(Tagger<S>& tg, const Batch<S>& batch, std::vector<ad::Mat<S>>* grads) {
  ad::Tape<S> tape(&tg.store.values);
  auto h = tape.constant(ad::Mat<S>::Zero(batch.B, tg.hidden));
  auto c = tape.constant(ad::Mat<S>::Zero(batch.B, tg.hidden));
  int loss_id = -1;
  int total_tokens = 0;
  for (Eigen::Index t = 0; t < batch.T; ++t) {
    auto hc = tape.lstm(tape.constant(batch.x[static_cast<size_t>(t)]), h, c, tg.w_ih, tg.w_hh,
                        tg.bias, batch.mask[static_cast<size_t>(t)]);
    h = tape.slice_cols(hc, 0, tg.hidden);
    c = tape.slice_cols(hc, tg.hidden, tg.hidden);
    auto logits = tape.linear(h, tg.w_out, tg.b_out);
    int tokens = 0;
    auto nll = tape.nll_log_softmax(logits, batch.labels[static_cast<size_t>(t)],
                                    batch.imask[static_cast<size_t>(t)], &tokens);
    total_tokens += tokens;
    loss_id = loss_id < 0 ? nll : tape.add(loss_id, nll);
  }
  if (loss_id < 0 || total_tokens == 0) return 0.0;
  auto loss = tape.scale(loss_id, 1.0 / static_cast<double>(batch.B));
  if (grads) tape.backward(loss, *grads);
  return static_cast<double>(tape.value(loss)(0, 0)) * static_cast<double>(batch.B) /
         static_cast<double>(total_tokens);
}

/// Plain forward returning per-step class probabilities, accumulated into a
/// caller-provided (step, sequence) probability table.
template <typename S>
void accumulate_probabilities(const Tagger<S>& tg, const Net<S>& net,
                              const std::vector<const RuntimeTrace*>& traces,
                              std::vector<std::vector<std::array<double, kNumOpKinds>>>& acc) {
  Batch<S> batch = Batch<S>::build(net, traces.begin(), traces.end(), false);
  ad::Mat<S> h = ad::Mat<S>::Zero(batch.B, tg.hidden);
  ad::Mat<S> c = ad::Mat<S>::Zero(batch.B, tg.hidden);
  ad::Mat<S> gates, c_raw, tanh_c, h_raw;
  const auto& W_out = tg.store.values[static_cast<size_t>(tg.w_out)];
  const auto& b_out = tg.store.values[static_cast<size_t>(tg.b_out)];
  for (Eigen::Index t = 0; t < batch.T; ++t) {
    ad::lstm_gates(batch.x[static_cast<size_t>(t)], h, tg.store.values[static_cast<size_t>(tg.w_ih)],
                   tg.store.values[static_cast<size_t>(tg.w_hh)],
                   tg.store.values[static_cast<size_t>(tg.bias)], gates);
    ad::lstm_state(gates, c, c_raw, tanh_c, h_raw);
    h = h_raw;
    c = c_raw;
    ad::Mat<S> logits = h * W_out;
    logits.rowwise() += b_out.row(0);
    for (Eigen::Index b = 0; b < batch.B; ++b) {
      if (!batch.imask[static_cast<size_t>(t)][static_cast<size_t>(b)]) continue;
      double mx = -1e300;
      for (int k = 0; k < kNumOpKinds; ++k) mx = std::max(mx, static_cast<double>(logits(b, k)));
      double z = 0.0;
      std::array<double, kNumOpKinds> p{};
      for (int k = 0; k < kNumOpKinds; ++k) {
        p[static_cast<size_t>(k)] = std::exp(static_cast<double>(logits(b, k)) - mx);
        z += p[static_cast<size_t>(k)];
      }
      for (int k = 0; k < kNumOpKinds; ++k) {
        acc[static_cast<size_t>(b)][static_cast<size_t>(t)][static_cast<size_t>(k)] +=
            p[static_cast<size_t>(k)] / z;
      }
    }
  }
}

int argmax_lowest(const std::array<double, kNumOpKinds>& p) {
  int best = 0;
  for (int k = 1; k < kNumOpKinds; ++k) {
    if (p[static_cast<size_t>(k)] > p[static_cast<size_t>(best)]) best = k;
  }
  return best;
}

}  // namespace

struct ScasModel::Impl {
  Precision precision = Precision::kF64;
  Net<double> f64;
  Net<float> f32;
  std::vector<ScasEpochLog> log;
  std::vector<int> widths;

  template <typename Fn>
  auto visit(Fn&& fn) const {
    return precision == Precision::kF64 ? fn(f64) : fn(f32);
  }
};

namespace {

template <typename S>
std::vector<std::vector<std::array<double, kNumOpKinds>>> ensemble_probs(
    const Net<S>& net, const std::vector<const RuntimeTrace*>& traces) {
  std::vector<std::vector<std::array<double, kNumOpKinds>>> acc(traces.size());
  for (size_t b = 0; b < traces.size(); ++b) {
    acc[b].assign(traces[b]->rows.size(), std::array<double, kNumOpKinds>{});
  }
  // acc rows are indexed (sequence, step); padded steps are never touched.
  std::vector<std::vector<std::array<double, kNumOpKinds>>> padded(traces.size());
  size_t maxT = 0;
  for (const RuntimeTrace* t : traces) maxT = std::max(maxT, t->rows.size());
  for (size_t b = 0; b < traces.size(); ++b) {
    padded[b].assign(maxT, std::array<double, kNumOpKinds>{});
  }
  for (const Tagger<S>& tg : net.taggers) {
    accumulate_probabilities(tg, net, traces, padded);
  }
  double denom = static_cast<double>(net.taggers.size());
  for (size_t b = 0; b < traces.size(); ++b) {
    for (size_t t = 0; t < acc[b].size(); ++t) {
      for (int k = 0; k < kNumOpKinds; ++k) {
        acc[b][t][static_cast<size_t>(k)] = padded[b][t][static_cast<size_t>(k)] / denom;
      }
    }
  }
  return acc;
}

template <typename S>
double ensemble_accuracy(const Net<S>& net, const std::vector<RuntimeTrace>& traces) {
  if (traces.empty()) return 0.0;
  std::vector<const RuntimeTrace*> ptrs;
  for (const RuntimeTrace& t : traces) ptrs.push_back(&t);
  auto probs = ensemble_probs(net, ptrs);
  int64_t hit = 0, total = 0;
  for (size_t b = 0; b < ptrs.size(); ++b) {
    for (size_t t = 0; t < probs[b].size(); ++t) {
      hit += argmax_lowest(probs[b][t]) == static_cast<int>(ptrs[b]->labels[t].kind);
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

template <typename S>
void train_net(Net<S>& net, const std::vector<RuntimeTrace>& train,
               const std::vector<RuntimeTrace>& val, const ScasConfig& config,
               std::vector<ScasEpochLog>& log) {
  // Normalization constants from the training split only.
  std::array<double, kFeatures> sum{}, sumsq{};
  int64_t count = 0;
  for (const RuntimeTrace& t : train) {
    for (const TraceRow& r : t.rows) {
      auto f = raw_features(r);
      for (int i = 0; i < kFeatures; ++i) {
        sum[i] += f[i];
        sumsq[i] += f[i] * f[i];
      }
      ++count;
    }
  }
  for (int i = 0; i < kFeatures; ++i) {
    net.mean[i] = sum[i] / static_cast<double>(count);
    double var = sumsq[i] / static_cast<double>(count) - net.mean[i] * net.mean[i];
    net.stddev[i] = std::sqrt(std::max(var, 1e-12));
  }

  net.taggers.resize(config.hidden_widths.size());
  for (size_t m = 0; m < net.taggers.size(); ++m) {
    net.taggers[m].build(config.hidden_widths[m]);
    Rng rng(derive_seed(config.seed, "scas-init", m));
    net.taggers[m].store.init_uniform(rng, 0.1);
  }

  std::vector<std::vector<double>> member_loss(net.taggers.size());

#pragma omp parallel for schedule(dynamic)
  for (size_t m = 0; m < net.taggers.size(); ++m) {
    Tagger<S>& tg = net.taggers[m];
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(config.seed, "scas-shuffle", m));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1],
                  order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
      }
      double epoch_loss = 0.0;
      int batches = 0;
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch)) {
        size_t stop = std::min(order.size(), start + static_cast<size_t>(config.batch));
        std::vector<const RuntimeTrace*> chunk;
        for (size_t i = start; i < stop; ++i) chunk.push_back(&train[order[i]]);
        Batch<S> batch = Batch<S>::build(net, chunk.begin(), chunk.end(), true);

        auto grads = tg.store.zero_grads();
        epoch_loss += tagger_loss(tg, batch, &grads);
        ++batches;
        nn::clip_grads(grads, config.clip);
        nn::sgd_step(tg.store, grads, config.lr);
      }
      member_loss[m].push_back(batches ? epoch_loss / batches : 0.0);
    }
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    ScasEpochLog entry;
    entry.epoch = epoch;
    for (const auto& ml : member_loss) entry.loss += ml[static_cast<size_t>(epoch)];
    entry.loss /= static_cast<double>(member_loss.size());
    log.push_back(entry);
  }
  if (!log.empty()) {
    log.back().train_acc = ensemble_accuracy(net, train);
    log.back().val_acc = ensemble_accuracy(net, val);
  }
}

}  // namespace

ScasModel train_scas(const std::vector<RuntimeTrace>& train, const std::vector<RuntimeTrace>& val,
                     const ScasConfig& config) {
  if (train.size() < 2) throw ScasError("train_scas: need at least two labeled traces");
  for (const RuntimeTrace& t : train) {
    if (t.rows.empty()) throw ScasError("train_scas: empty trace in the training set");
    if (t.labels.size() != t.rows.size()) {
      throw ScasError("train_scas: label/trace length mismatch");
    }
  }
  for (const RuntimeTrace& t : val) {
    if (t.labels.size() != t.rows.size()) {
      throw ScasError("train_scas: label/trace length mismatch in validation set");
    }
  }
  if (config.hidden_widths.empty()) throw ScasError("train_scas: no ensemble members");

  auto impl = std::make_shared<ScasModel::Impl>();
  impl->precision = config.precision;
  impl->widths = config.hidden_widths;
  if (config.precision == Precision::kF64) {
    train_net(impl->f64, train, val, config, impl->log);
  } else {
    train_net(impl->f32, train, val, config, impl->log);
  }
  ScasModel model;
  model.impl_ = std::move(impl);
  return model;
}

std::vector<std::array<double, kNumOpKinds>> ScasModel::predict_distributions(
    const RuntimeTrace& trace) const {
  if (!impl_) throw ScasError("SCAS model is untrained");
  if (trace.rows.empty()) throw ScasError("predict: empty trace");
  std::vector<const RuntimeTrace*> one{&trace};
  return impl_->visit([&](const auto& net) { return ensemble_probs(net, one)[0]; });
}

std::vector<OpKind> ScasModel::predict_sequence(const RuntimeTrace& trace) const {
  auto probs = predict_distributions(trace);
  std::vector<OpKind> kinds;
  kinds.reserve(probs.size());
  for (const auto& p : probs) kinds.push_back(static_cast<OpKind>(argmax_lowest(p)));
  return kinds;
}

std::vector<std::vector<OpKind>> ScasModel::predict_sequences(
    const std::vector<const RuntimeTrace*>& traces) const {
  if (!impl_) throw ScasError("SCAS model is untrained");
  for (const RuntimeTrace* t : traces) {
    if (!t || t->rows.empty()) throw ScasError("predict: empty trace");
  }
  auto probs =
      impl_->visit([&](const auto& net) { return ensemble_probs(net, traces); });
  std::vector<std::vector<OpKind>> out(traces.size());
  for (size_t b = 0; b < traces.size(); ++b) {
    out[b].reserve(probs[b].size());
    for (const auto& p : probs[b]) out[b].push_back(static_cast<OpKind>(argmax_lowest(p)));
  }
  return out;
}

std::vector<OpKind> ScasModel::predict_sequence_member(int member,
                                                       const RuntimeTrace& trace) const {
  if (!impl_) throw ScasError("SCAS model is untrained");
  if (trace.rows.empty()) throw ScasError("predict: empty trace");
  std::vector<const RuntimeTrace*> one{&trace};
  std::vector<std::vector<std::array<double, kNumOpKinds>>> acc(1);
  acc[0].assign(trace.rows.size(), std::array<double, kNumOpKinds>{});
  impl_->visit([&](const auto& net) {
    accumulate_probabilities(net.taggers.at(static_cast<size_t>(member)), net, one, acc);
    return 0;
  });
  std::vector<OpKind> kinds;
  for (const auto& p : acc[0]) kinds.push_back(static_cast<OpKind>(argmax_lowest(p)));
  return kinds;
}

const std::vector<ScasEpochLog>& ScasModel::log() const {
  if (!impl_) throw ScasError("SCAS model is untrained");
  return impl_->log;
}

const std::vector<int>& ScasModel::hidden_widths() const {
  if (!impl_) throw ScasError("SCAS model is untrained");
  return impl_->widths;
}

namespace {

template <typename S>
void save_net(const Net<S>& net, const char* dtype, const std::vector<ScasEpochLog>& log,
              const std::string& path) {
  Container c;
  nlohmann::ordered_json meta;
  meta["kind"] = "scas";
  meta["dtype"] = dtype;
  meta["widths"] = nlohmann::json::array();
  for (const auto& tg : net.taggers) meta["widths"].push_back(tg.hidden);
  meta["feature_transform"] = "log1p(cycles,reads,writes),hit; z-score";
  meta["feat_mean"] = std::vector<double>(net.mean.begin(), net.mean.end());
  meta["feat_std"] = std::vector<double>(net.stddev.begin(), net.stddev.end());
  if (!log.empty()) {
    meta["train_acc"] = log.back().train_acc;
    meta["val_acc"] = log.back().val_acc;
  }
  c.meta_json = meta.dump();
  for (size_t m = 0; m < net.taggers.size(); ++m) {
    const auto& store = net.taggers[m].store;
    for (size_t s = 0; s < store.values.size(); ++s) {
      const auto& mat = store.values[s];
      std::string name = "tagger" + std::to_string(m) + "/" + store.names[s];
      if constexpr (std::is_same_v<S, double>) {
        std::vector<double> data(mat.data(), mat.data() + mat.size());
        c.blobs.push_back(ContainerBlob::from_f64(name, {mat.rows(), mat.cols()}, data));
      } else {
        std::vector<float> data(mat.data(), mat.data() + mat.size());
        c.blobs.push_back(ContainerBlob::from_f32(name, {mat.rows(), mat.cols()}, data));
      }
    }
  }
  c.save(path);
}

template <typename S>
void load_net(Net<S>& net, const Container& c, const std::vector<int>& widths) {
  nlohmann::json meta = nlohmann::json::parse(c.meta_json);
  auto mean = meta.at("feat_mean").get<std::vector<double>>();
  auto stddev = meta.at("feat_std").get<std::vector<double>>();
  for (int i = 0; i < kFeatures; ++i) {
    net.mean[static_cast<size_t>(i)] = mean.at(static_cast<size_t>(i));
    net.stddev[static_cast<size_t>(i)] = stddev.at(static_cast<size_t>(i));
  }
  net.taggers.resize(widths.size());
  for (size_t m = 0; m < widths.size(); ++m) {
    net.taggers[m].build(widths[m]);
    auto& store = net.taggers[m].store;
    for (size_t s = 0; s < store.values.size(); ++s) {
      std::string name = "tagger" + std::to_string(m) + "/" + store.names[s];
      const ContainerBlob* blob = c.find(name);
      if (!blob) throw ScasError("scas checkpoint: missing blob " + name);
      auto& mat = store.values[s];
      if (blob->shape.size() != 2 || blob->shape[0] != mat.rows() || blob->shape[1] != mat.cols()) {
        throw ScasError("scas checkpoint: blob " + name + " has the wrong shape");
      }
      if constexpr (std::is_same_v<S, double>) {
        auto data = blob->as_f64();
        std::copy(data.begin(), data.end(), mat.data());
      } else {
        auto data = blob->as_f32();
        std::copy(data.begin(), data.end(), mat.data());
      }
    }
  }
}

}  // namespace

void ScasModel::save(const std::string& path) const {
  if (!impl_) throw ScasError("SCAS model is untrained");
  if (impl_->precision == Precision::kF64) {
    save_net(impl_->f64, "f64", impl_->log, path);
  } else {
    save_net(impl_->f32, "f32", impl_->log, path);
  }
}

ScasModel ScasModel::load(const std::string& path) {
  Container c = Container::load(path);
  nlohmann::json meta = nlohmann::json::parse(c.meta_json);
  if (meta.value("kind", "") != "scas") throw ScasError(path + ": not a scas checkpoint");
  auto impl = std::make_shared<Impl>();
  impl->widths = meta.at("widths").get<std::vector<int>>();
  std::string dtype = meta.at("dtype").get<std::string>();
  ScasEpochLog final;
  final.train_acc = meta.value("train_acc", 0.0);
  final.val_acc = meta.value("val_acc", 0.0);
  impl->log.push_back(final);
  if (dtype == "f64") {
    impl->precision = Precision::kF64;
    load_net(impl->f64, c, impl->widths);
  } else {
    impl->precision = Precision::kF32;
    load_net(impl->f32, c, impl->widths);
  }
  ScasModel model;
  model.impl_ = std::move(impl);
  return model;
}

// ---------------------------------------------------------------------------
// Dimension recovery
// ---------------------------------------------------------------------------

namespace {

std::vector<int> with_halves(const std::vector<int>& base) {
  std::vector<int> out = base;
  for (int v : base) {
    out.push_back(v / 2);
    out.push_back(v - v / 2);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  out.erase(std::remove_if(out.begin(), out.end(), [](int v) { return v < 1; }), out.end());
  return out;
}

struct Snapped {
  int value = 0;
  bool flagged = false;
};

Snapped snap(double raw, const std::vector<int>& legal, double threshold) {
  Snapped s;
  double best = 1e300;
  for (int v : legal) {
    double d = std::abs(raw - v);
    if (d < best) {
      best = d;
      s.value = v;
    }
  }
  double denom = std::max(1.0, static_cast<double>(s.value));
  s.flagged = best / denom > threshold;
  return s;
}

}  // namespace

LayerSequence recover_dimensions(const std::vector<OpKind>& kinds, const RuntimeTrace& trace,
                                 const DimRecoveryConfig& config) {
  if (kinds.size() != trace.rows.size()) {
    throw ScasError("recover_dimensions: kinds not aligned with trace rows");
  }
  const double bpe = config.bytes_per_element;
  std::vector<int> conv_set = with_halves(config.conv_channel_choices);
  std::vector<int> fc_set = with_halves(config.fc_dim_choices);
  fc_set.push_back(config.classes);
  fc_set.push_back(config.classes / 2);
  fc_set.push_back(config.classes - config.classes / 2);
  std::sort(fc_set.begin(), fc_set.end());
  fc_set.erase(std::unique(fc_set.begin(), fc_set.end()), fc_set.end());
  std::vector<int> any_set = conv_set;
  any_set.insert(any_set.end(), fc_set.begin(), fc_set.end());
  std::sort(any_set.begin(), any_set.end());
  any_set.erase(std::unique(any_set.begin(), any_set.end()), any_set.end());

  int ch = config.input_shape[0];
  int h = config.input_shape[1];
  int w = config.input_shape[2];
  bool spatial = true;

  LayerSequence out;
  for (size_t i = 0; i < kinds.size(); ++i) {
    const TraceRow& row = trace.rows[i];
    double out_vol = row.dram_writes / bpe;
    double plane = spatial ? static_cast<double>(h) * w : 1.0;

    LayerWord word;
    word.kind = kinds[i];
    switch (kinds[i]) {
      case OpKind::kConv2d: {
        Snapped oc = snap(out_vol / plane, conv_set, config.flag_threshold);
        word.in_ch = ch;
        word.out_ch = oc.value;
        int kernel = 3;
        if (row.cache_hit_rate < 0.999 && oc.value > 0) {
          double read_elems = row.dram_reads / (bpe * (1.0 - row.cache_hit_rate));
          double weight_elems = read_elems - static_cast<double>(ch) * plane;
          double k2 = weight_elems / (static_cast<double>(ch) * oc.value);
          kernel = std::abs(k2 - 1.0) < std::abs(k2 - 9.0) ? 1 : 3;
        }
        word.kernel = kernel;
        word.stride = 1;
        word.padding = (kernel - 1) / 2;
        if (oc.flagged) {
          word.in_ch = word.out_ch = LayerWord::kUnknownDim;
        } else {
          ch = oc.value;
        }
        break;
      }
      case OpKind::kFc: {
        int in_features = spatial ? ch * h * w : ch;
        Snapped of = snap(out_vol, fc_set, config.flag_threshold);
        word.in_ch = in_features;
        word.out_ch = of.value;
        if (of.flagged) {
          word.in_ch = word.out_ch = LayerWord::kUnknownDim;
        } else {
          ch = of.value;
          spatial = false;
          h = w = 1;
        }
        break;
      }
      case OpKind::kMaxPool:
      case OpKind::kAvgPool: {
        word.in_ch = word.out_ch = ch;
        word.kernel = 2;
        word.stride = 2;
        word.padding = 0;
        h = std::max(1, h / 2);
        w = std::max(1, w / 2);
        break;
      }
      case OpKind::kSoftmax: {
        Snapped oc = snap(out_vol / plane, fc_set, config.flag_threshold);
        if (!oc.flagged) ch = oc.value;
        word.in_ch = word.out_ch = oc.flagged ? LayerWord::kUnknownDim : ch;
        break;
      }
      default: {  // relu, bn, add, concat, identity: volume resync
        Snapped oc = snap(out_vol / plane, spatial ? conv_set : any_set, config.flag_threshold);
        if (!oc.flagged) ch = oc.value;
        word.in_ch = word.out_ch = oc.flagged ? LayerWord::kUnknownDim : ch;
        break;
      }
    }
    word.canonicalize();
    out.words.push_back(word);
  }
  return out;
}

LayerSequence scas_extract(const ScasModel& model, const RuntimeTrace& trace,
                           const DimRecoveryConfig& config) {
  return recover_dimensions(model.predict_sequence(trace), trace, config);
}

std::vector<LayerSequence> scas_extract_many(const ScasModel& model,
                                             const std::vector<const RuntimeTrace*>& traces,
                                             const DimRecoveryConfig& config) {
  std::vector<std::vector<OpKind>> kinds = model.predict_sequences(traces);
  std::vector<LayerSequence> out(traces.size());
  for (size_t i = 0; i < traces.size(); ++i) {
    out[i] = recover_dimensions(kinds[i], *traces[i], config);
  }
  return out;
}

}  // namespace obfrev
