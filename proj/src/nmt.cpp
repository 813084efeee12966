#include "obfrev/nmt.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "obfrev/nn.hpp"
#include "obfrev/params.hpp"
#include "obfrev/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace obfrev {

namespace {

using ad::Mat;

struct LstmSlots {
  int w_ih = -1, w_hh = -1, bias = -1;
};

template <typename S>
struct NmtNet {
  nn::ParamStore<S> store;
  int emb = -1;
  LstmSlots enc1, enc2, dec1, dec2;
  int attn_w = -1, attn_b = -1, out_w = -1, out_b = -1;
  Vocabulary vocab;
  int emb_dim = 0;
  int hidden = 0;

  LstmSlots add_lstm(const std::string& name, int in_dim, int h) {
    LstmSlots s;
    s.w_ih = store.add(name + "/w_ih", in_dim, 4 * h);
    s.w_hh = store.add(name + "/w_hh", h, 4 * h);
    s.bias = store.add(name + "/bias", 1, 4 * h);
    return s;
  }

  void init_matrix(Rng& rng, int slot, double range) {
    auto& m = store.values[static_cast<size_t>(slot)];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = static_cast<S>(rng.uniform(-range, range));
      }
    }
  }

  void init_lstm(Rng& rng, const LstmSlots& s, int in_dim, int h) {
    init_matrix(rng, s.w_ih, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    init_matrix(rng, s.w_hh, 1.0 / std::sqrt(static_cast<double>(h)));
    // Zero biases except the forget gate, which starts open.
    auto& b = store.values[static_cast<size_t>(s.bias)];
    b.setZero();
    b.row(0).middleCols(h, h).setConstant(S(1));
  }

  void build(const Vocabulary& v, int e, int h, uint64_t seed) {
    vocab = v;
    emb_dim = e;
    hidden = h;
    emb = store.add("emb", v.size(), e);
    enc1 = add_lstm("enc1", e, h);
    enc2 = add_lstm("enc2", h, h);
    dec1 = add_lstm("dec1", e, h);
    dec2 = add_lstm("dec2", h, h);
    attn_w = store.add("attn/w", 2 * h, h);
    attn_b = store.add("attn/b", 1, h);
    out_w = store.add("out/w", h, v.size());
    out_b = store.add("out/b", 1, v.size());

    Rng rng(derive_seed(seed, "nmt-init"));
    init_matrix(rng, emb, 0.5);
    init_lstm(rng, enc1, e, h);
    init_lstm(rng, enc2, h, h);
    init_lstm(rng, dec1, e, h);
    init_lstm(rng, dec2, h, h);
    init_matrix(rng, attn_w, 1.0 / std::sqrt(2.0 * h));
    store.values[static_cast<size_t>(attn_b)].setZero();
    init_matrix(rng, out_w, 1.0 / std::sqrt(static_cast<double>(h)));
    store.values[static_cast<size_t>(out_b)].setZero();
    freeze_pad_row();
  }

  void freeze_pad_row() {
    store.values[static_cast<size_t>(emb)].row(Vocabulary::kPad).setZero();
  }
};

struct TokenPair {
  std::vector<int> src;  // framed with <start>/<end>
  std::vector<int> tgt;
};

/// Padded sub-batch over a contiguous pair range.
template <typename S>
struct TrainBatch {
  Eigen::Index B = 0, Ts = 0, Tt = 0;
  std::vector<std::vector<int>> src_ids;   // per source step
  std::vector<Mat<S>> src_mask;            // per source step, B x 1
  Mat<S> att_mask;                         // B x Ts
  std::vector<std::vector<int>> dec_in;    // per target step
  std::vector<std::vector<int>> dec_out;
  std::vector<std::vector<int>> dec_mask;
  std::vector<Mat<S>> dec_mask_m;
  int tokens = 0;

  static TrainBatch build(const std::vector<const TokenPair*>& pairs) {
    TrainBatch b;
    b.B = static_cast<Eigen::Index>(pairs.size());
    for (const TokenPair* p : pairs) {
      b.Ts = std::max(b.Ts, static_cast<Eigen::Index>(p->src.size()));
      b.Tt = std::max(b.Tt, static_cast<Eigen::Index>(p->tgt.size()) - 1);
    }
    b.src_ids.assign(static_cast<size_t>(b.Ts), std::vector<int>(static_cast<size_t>(b.B), Vocabulary::kPad));
    b.src_mask.assign(static_cast<size_t>(b.Ts), Mat<S>::Zero(b.B, 1));
    b.att_mask = Mat<S>::Zero(b.B, b.Ts);
    b.dec_in.assign(static_cast<size_t>(b.Tt), std::vector<int>(static_cast<size_t>(b.B), Vocabulary::kPad));
    b.dec_out = b.dec_in;
    b.dec_mask.assign(static_cast<size_t>(b.Tt), std::vector<int>(static_cast<size_t>(b.B), 0));
    b.dec_mask_m.assign(static_cast<size_t>(b.Tt), Mat<S>::Zero(b.B, 1));
    for (Eigen::Index r = 0; r < b.B; ++r) {
      const TokenPair& p = *pairs[static_cast<size_t>(r)];
      for (size_t t = 0; t < p.src.size(); ++t) {
        b.src_ids[t][static_cast<size_t>(r)] = p.src[t];
        b.src_mask[t](r, 0) = S(1);
        b.att_mask(r, static_cast<Eigen::Index>(t)) = S(1);
      }
      for (size_t t = 0; t + 1 < p.tgt.size(); ++t) {
        b.dec_in[t][static_cast<size_t>(r)] = p.tgt[t];
        b.dec_out[t][static_cast<size_t>(r)] = p.tgt[t + 1];
        b.dec_mask[t][static_cast<size_t>(r)] = 1;
        b.dec_mask_m[t](r, 0) = S(1);
        ++b.tokens;
      }
    }
    return b;
  }
};

struct BatchOutcome {
  double loss_sum = 0.0;  // objective value (token NLL summed / B)
  int tokens = 0;
  int correct = 0;
  int seqs = 0;
  int exact_seqs = 0;
};

/// Teacher-forced forward (and optionally backward) over one sub-batch.
template <typename S>
BatchOutcome run_batch(NmtNet<S>& net, const TrainBatch<S>& batch,
                       std::vector<Mat<S>>* grads) {
  ad::Tape<S> tape(&net.store.values);
  const Eigen::Index B = batch.B, H = net.hidden;

  auto zero = tape.constant(Mat<S>::Zero(B, H));
  int h1 = zero, c1 = zero, h2 = zero, c2 = zero;
  std::vector<int> enc_tops;
  enc_tops.reserve(static_cast<size_t>(batch.Ts));
  for (Eigen::Index t = 0; t < batch.Ts; ++t) {
    auto x = tape.gather(net.emb, batch.src_ids[static_cast<size_t>(t)]);
    auto hc1 = tape.lstm(x, h1, c1, net.enc1.w_ih, net.enc1.w_hh, net.enc1.bias,
                         batch.src_mask[static_cast<size_t>(t)]);
    h1 = tape.slice_cols(hc1, 0, static_cast<int>(H));
    c1 = tape.slice_cols(hc1, static_cast<int>(H), static_cast<int>(H));
    auto hc2 = tape.lstm(h1, h2, c2, net.enc2.w_ih, net.enc2.w_hh, net.enc2.bias,
                         batch.src_mask[static_cast<size_t>(t)]);
    h2 = tape.slice_cols(hc2, 0, static_cast<int>(H));
    c2 = tape.slice_cols(hc2, static_cast<int>(H), static_cast<int>(H));
    enc_tops.push_back(h2);
  }
  auto enc_stack = tape.stack_rows(enc_tops);

  int dh1 = h1, dc1 = c1, dh2 = h2, dc2 = c2;
  BatchOutcome out;
  out.seqs = static_cast<int>(B);
  std::vector<int> wrong(static_cast<size_t>(B), 0);
  int loss_id = -1;
  for (Eigen::Index t = 0; t < batch.Tt; ++t) {
    auto x = tape.gather(net.emb, batch.dec_in[static_cast<size_t>(t)]);
    auto hc1 = tape.lstm(x, dh1, dc1, net.dec1.w_ih, net.dec1.w_hh, net.dec1.bias,
                         batch.dec_mask_m[static_cast<size_t>(t)]);
    dh1 = tape.slice_cols(hc1, 0, static_cast<int>(H));
    dc1 = tape.slice_cols(hc1, static_cast<int>(H), static_cast<int>(H));
    auto hc2 = tape.lstm(dh1, dh2, dc2, net.dec2.w_ih, net.dec2.w_hh, net.dec2.bias,
                         batch.dec_mask_m[static_cast<size_t>(t)]);
    dh2 = tape.slice_cols(hc2, 0, static_cast<int>(H));
    dc2 = tape.slice_cols(hc2, static_cast<int>(H), static_cast<int>(H));

    auto ctx = tape.attend(enc_stack, dh2, batch.att_mask);
    auto comb = tape.tanh(tape.linear(tape.concat_cols(ctx, dh2), net.attn_w, net.attn_b));
    auto logits = tape.linear(comb, net.out_w, net.out_b);

    int tokens = 0;
    auto nll = tape.nll_log_softmax(logits, batch.dec_out[static_cast<size_t>(t)],
                                    batch.dec_mask[static_cast<size_t>(t)], &tokens);
    out.tokens += tokens;
    loss_id = loss_id < 0 ? nll : tape.add(loss_id, nll);

    const Mat<S>& lv = tape.value(logits);
    for (Eigen::Index r = 0; r < B; ++r) {
      if (!batch.dec_mask[static_cast<size_t>(t)][static_cast<size_t>(r)]) continue;
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < lv.cols(); ++k) {
        if (lv(r, k) > lv(r, best)) best = k;
      }
      if (best == batch.dec_out[static_cast<size_t>(t)][static_cast<size_t>(r)]) {
        ++out.correct;
      } else {
        wrong[static_cast<size_t>(r)] = 1;
      }
    }
  }
  if (loss_id < 0) return out;
  out.loss_sum = static_cast<double>(tape.value(loss_id)(0, 0));
  for (int w : wrong) out.exact_seqs += w == 0;
  if (grads) tape.backward(loss_id, *grads);  // gradients of the raw token-NLL sum
  return out;
}

template <typename S>
struct PlainLstm {
  const Mat<S>&w_ih, &w_hh, &bias;
  Mat<S> h, c, gates, c_raw, tanh_c, h_raw;

  PlainLstm(const NmtNet<S>& net, const LstmSlots& s, Eigen::Index hidden)
      : w_ih(net.store.values[static_cast<size_t>(s.w_ih)]),
        w_hh(net.store.values[static_cast<size_t>(s.w_hh)]),
        bias(net.store.values[static_cast<size_t>(s.bias)]),
        h(Mat<S>::Zero(1, hidden)),
        c(Mat<S>::Zero(1, hidden)) {}

  void step(const Mat<S>& x) {
    ad::lstm_gates(x, h, w_ih, w_hh, bias, gates);
    ad::lstm_state(gates, c, c_raw, tanh_c, h_raw);
    h = h_raw;
    c = c_raw;
  }
};

/// Greedy decode, plain matrices, batch of one.
template <typename S>
Translation translate_net(const NmtNet<S>& net, const LayerSequence& source, size_t max_tokens) {
  std::vector<int> src = net.vocab.encode(source, /*with_sentinels=*/true);
  const Eigen::Index H = net.hidden;

  PlainLstm<S> enc1(net, net.enc1, H), enc2(net, net.enc2, H);
  Mat<S> enc_states(static_cast<Eigen::Index>(src.size()), H);
  const auto& emb = net.store.values[static_cast<size_t>(net.emb)];
  for (size_t t = 0; t < src.size(); ++t) {
    Mat<S> x = emb.row(src[t]);
    enc1.step(x);
    enc2.step(enc1.h);
    enc_states.row(static_cast<Eigen::Index>(t)) = enc2.h;
  }

  PlainLstm<S> dec1(net, net.dec1, H), dec2(net, net.dec2, H);
  dec1.h = enc1.h;
  dec1.c = enc1.c;
  dec2.h = enc2.h;
  dec2.c = enc2.c;

  const auto& attn_w = net.store.values[static_cast<size_t>(net.attn_w)];
  const auto& attn_b = net.store.values[static_cast<size_t>(net.attn_b)];
  const auto& out_w = net.store.values[static_cast<size_t>(net.out_w)];
  const auto& out_b = net.store.values[static_cast<size_t>(net.out_b)];

  Translation result;
  int prev = Vocabulary::kStart;
  bool saw_end = false;
  while (result.tokens.size() < max_tokens) {
    Mat<S> x = emb.row(prev);
    dec1.step(x);
    dec2.step(dec1.h);

    // Dot attention over the encoder states.
    Eigen::Matrix<S, Eigen::Dynamic, 1> scores = enc_states * dec2.h.row(0).transpose();
    S mx = scores.maxCoeff();
    Eigen::Array<S, Eigen::Dynamic, 1> alpha = (scores.array() - mx).exp();
    alpha /= alpha.sum();
    Mat<S> ctx = (alpha.matrix().transpose() * enc_states);

    Mat<S> cat(1, 2 * H);
    cat.leftCols(H) = ctx;
    cat.rightCols(H) = dec2.h;
    Mat<S> comb = (cat * attn_w);
    comb.rowwise() += attn_b.row(0);
    comb = comb.array().tanh().matrix();
    Mat<S> logits = comb * out_w;
    logits.rowwise() += out_b.row(0);

    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(0, k) > logits(0, best)) best = k;
    }
    if (best == Vocabulary::kEnd) {
      saw_end = true;
      break;
    }
    result.tokens.push_back(net.vocab.token(static_cast<int>(best)));
    prev = static_cast<int>(best);
  }

  // Re-assemble words from the raw token stream; fixed arity 6.
  result.well_formed = saw_end && result.tokens.size() % kTokensPerWord == 0;
  for (size_t w = 0; w + kTokensPerWord <= result.tokens.size(); w += kTokensPerWord) {
    auto kind = op_kind_from_name(result.tokens[w]);
    if (!kind) {
      result.well_formed = false;
      continue;
    }
    LayerWord word;
    word.kind = *kind;
    int* fields[5] = {&word.in_ch, &word.out_ch, &word.kernel, &word.stride, &word.padding};
    bool ok = true;
    for (int f = 0; f < 5; ++f) {
      const std::string& tok = result.tokens[w + 1 + static_cast<size_t>(f)];
      if (tok == "<unk>") {
        *fields[f] = LayerWord::kUnknownDim;
        continue;
      }
      try {
        *fields[f] = std::stoi(tok);
      } catch (...) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      result.well_formed = false;
      continue;
    }
    word.canonicalize();
    result.sequence.words.push_back(word);
  }
  return result;
}

}  // namespace

struct Seq2SeqModel::Impl {
  Precision precision = Precision::kF64;
  NmtNet<double> f64;
  NmtNet<float> f32;
  std::vector<NmtEpochLog> log;
  NmtConfig config;

  const Vocabulary& vocab() const {
    return precision == Precision::kF64 ? f64.vocab : f32.vocab;
  }
};

namespace {

template <typename S>
void train_net(NmtNet<S>& net, const std::vector<TokenPair>& pairs, const NmtConfig& config,
               std::vector<NmtEpochLog>& log) {
  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(config.seed, "nmt-shuffle"));

  // Fixed two-way batch split: the arithmetic stays identical however many
  // threads actually run, so a rerun reproduces the model byte for byte.
  constexpr size_t kChunks = 2;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1],
                order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    }

    double loss_sum = 0.0;
    int64_t tokens = 0, correct = 0, seqs = 0, exact = 0;
    int batch_index = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch)) {
      size_t stop = std::min(order.size(), start + static_cast<size_t>(config.batch));
      size_t bsize = stop - start;

      size_t nchunks = std::min(kChunks, bsize);
      size_t chunk_len = (bsize + nchunks - 1) / nchunks;
      std::vector<std::vector<Mat<S>>> chunk_grads(nchunks);
      std::vector<BatchOutcome> chunk_out(nchunks);

#pragma omp parallel for schedule(static, 1)
      for (size_t chunk = 0; chunk < nchunks; ++chunk) {
        size_t lo = start + chunk * chunk_len;
        size_t hi = std::min(stop, lo + chunk_len);
        if (lo >= hi) continue;
        std::vector<const TokenPair*> view;
        for (size_t i = lo; i < hi; ++i) view.push_back(&pairs[order[i]]);
        TrainBatch<S> batch = TrainBatch<S>::build(view);
        chunk_grads[chunk] = net.store.zero_grads();
        chunk_out[chunk] = run_batch(net, batch, &chunk_grads[chunk]);
      }

      std::vector<Mat<S>> grads = net.store.zero_grads();
      double batch_loss = 0.0;
      for (size_t chunk = 0; chunk < nchunks; ++chunk) {
        if (chunk_grads[chunk].empty()) continue;
        nn::accumulate(grads, chunk_grads[chunk]);
        batch_loss += chunk_out[chunk].loss_sum;
        tokens += chunk_out[chunk].tokens;
        correct += chunk_out[chunk].correct;
        seqs += chunk_out[chunk].seqs;
        exact += chunk_out[chunk].exact_seqs;
      }
      if (!std::isfinite(batch_loss)) {
        throw NmtError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch_index));
      }
      // run_batch accumulates gradients of the raw token-NLL sum; normalize
      // once by the number of sequences in the batch.
      for (auto& g : grads) {
        if (g.size()) g *= static_cast<S>(1.0 / static_cast<double>(bsize));
      }
      loss_sum += batch_loss;

      nn::clip_grads(grads, config.clip);
      nn::sgd_step(net.store, grads, config.lr);
      net.freeze_pad_row();
      ++batch_index;
    }

    NmtEpochLog entry;
    entry.epoch = epoch;
    entry.loss = tokens ? loss_sum / static_cast<double>(tokens) : 0.0;
    entry.token_acc = tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
    entry.seq_acc = seqs ? static_cast<double>(exact) / static_cast<double>(seqs) : 0.0;
    log.push_back(entry);
    if (config.stop_at_token_acc > 0.0 && entry.token_acc >= config.stop_at_token_acc) break;
  }
}

std::vector<TokenPair> tokenize_pairs(
    const std::vector<std::pair<LayerSequence, LayerSequence>>& pairs, const Vocabulary& vocab,
    size_t max_tokens) {
  std::vector<TokenPair> out;
  out.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].first.token_count(true) > max_tokens ||
        pairs[i].second.token_count(true) > max_tokens) {
      throw NmtError("pair " + std::to_string(i) + " exceeds the " +
                     std::to_string(max_tokens) + "-token cap");
    }
    TokenPair tp;
    tp.src = vocab.encode(pairs[i].first, true);
    tp.tgt = vocab.encode(pairs[i].second, true);
    out.push_back(std::move(tp));
  }
  return out;
}

}  // namespace

Seq2SeqModel train_nmt(const std::vector<std::pair<LayerSequence, LayerSequence>>& pairs,
                       const Vocabulary& vocab, const NmtConfig& config) {
  if (pairs.empty()) throw NmtError("train_nmt: empty pair list");
  if (config.epochs < 1 || config.lr <= 0.0 || config.clip <= 0.0) {
    throw NmtError("train_nmt: epochs must be >= 1, lr and clip positive");
  }
  if (config.teacher_forcing != 1.0) {
    throw NmtError("train_nmt: only teacher forcing 1.0 is implemented");
  }
  std::vector<TokenPair> tokens = tokenize_pairs(pairs, vocab, config.max_tokens);

  auto impl = std::make_shared<Seq2SeqModel::Impl>();
  impl->precision = config.precision;
  impl->config = config;
  if (config.precision == Precision::kF64) {
    impl->f64.build(vocab, config.embedding_dim, config.hidden, config.seed);
    train_net(impl->f64, tokens, config, impl->log);
  } else {
    impl->f32.build(vocab, config.embedding_dim, config.hidden, config.seed);
    train_net(impl->f32, tokens, config, impl->log);
  }
  Seq2SeqModel model;
  model.impl_ = std::move(impl);
  return model;
}

Translation Seq2SeqModel::translate(const LayerSequence& source) const {
  if (!impl_) throw NmtError("translate: untrained model");
  if (source.token_count(true) > impl_->config.max_tokens) {
    throw NmtError("translate: source exceeds the token cap");
  }
  if (impl_->precision == Precision::kF64) {
    return translate_net(impl_->f64, source, impl_->config.max_tokens);
  }
  return translate_net(impl_->f32, source, impl_->config.max_tokens);
}

const Vocabulary& Seq2SeqModel::vocabulary() const {
  if (!impl_) throw NmtError("untrained model");
  return impl_->vocab();
}

const std::vector<NmtEpochLog>& Seq2SeqModel::log() const {
  if (!impl_) throw NmtError("untrained model");
  return impl_->log;
}

int Seq2SeqModel::hidden() const {
  if (!impl_) throw NmtError("untrained model");
  return impl_->config.hidden;
}

int Seq2SeqModel::embedding_dim() const {
  if (!impl_) throw NmtError("untrained model");
  return impl_->config.embedding_dim;
}

std::string Seq2SeqModel::training_log_csv() const {
  std::string out = "epoch,loss,token_acc,seq_acc\n";
  for (const NmtEpochLog& e : log()) {
    out += std::to_string(e.epoch);
    out += ',';
    out += std::to_string(e.loss);
    out += ',';
    out += std::to_string(e.token_acc);
    out += ',';
    out += std::to_string(e.seq_acc);
    out += '\n';
  }
  return out;
}

namespace {

template <typename S>
void save_net_blobs(const NmtNet<S>& net, Container& c) {
  for (size_t s = 0; s < net.store.values.size(); ++s) {
    const auto& mat = net.store.values[s];
    if constexpr (std::is_same_v<S, double>) {
      std::vector<double> data(mat.data(), mat.data() + mat.size());
      c.blobs.push_back(ContainerBlob::from_f64(net.store.names[s], {mat.rows(), mat.cols()}, data));
    } else {
      std::vector<float> data(mat.data(), mat.data() + mat.size());
      c.blobs.push_back(ContainerBlob::from_f32(net.store.names[s], {mat.rows(), mat.cols()}, data));
    }
  }
}

template <typename S>
void load_net_blobs(NmtNet<S>& net, const Container& c) {
  for (size_t s = 0; s < net.store.values.size(); ++s) {
    const ContainerBlob* blob = c.find(net.store.names[s]);
    if (!blob) throw NmtError("checkpoint: missing blob " + net.store.names[s]);
    auto& mat = net.store.values[s];
    if (blob->shape.size() != 2 || blob->shape[0] != mat.rows() || blob->shape[1] != mat.cols()) {
      throw NmtError("checkpoint: blob " + net.store.names[s] + " has the wrong shape");
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

char hex_digit(uint64_t v) { return static_cast<char>(v < 10 ? '0' + v : 'a' + v - 10); }

std::string hex64(uint64_t v) {
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = hex_digit(v & 0xf);
    v >>= 4;
  }
  return out;
}

}  // namespace

void Seq2SeqModel::save(const std::string& path) const {
  if (!impl_) throw NmtError("save: untrained model");
  Container c;
  nlohmann::ordered_json meta;
  meta["arch"] = "seq2seq";
  meta["emb"] = impl_->config.embedding_dim;
  meta["hidden"] = impl_->config.hidden;
  meta["layers"] = 2;
  meta["vocab_hash"] = hex64(impl_->vocab().hash());
  meta["dtype"] = impl_->precision == Precision::kF64 ? "f64" : "f32";
  meta["epochs"] = impl_->config.epochs;
  meta["lr"] = impl_->config.lr;
  meta["clip"] = impl_->config.clip;
  meta["batch"] = impl_->config.batch;
  meta["seed"] = impl_->config.seed;
  meta["vocab"] = impl_->vocab().serialize();
  c.meta_json = meta.dump();
  if (impl_->precision == Precision::kF64) {
    save_net_blobs(impl_->f64, c);
  } else {
    save_net_blobs(impl_->f32, c);
  }
  c.save(path);
}

Seq2SeqModel Seq2SeqModel::load(const std::string& path) {
  Container c = Container::load(path);
  nlohmann::json meta = nlohmann::json::parse(c.meta_json);
  if (meta.value("arch", "") != "seq2seq") throw NmtError(path + ": not a seq2seq checkpoint");

  auto impl = std::make_shared<Impl>();
  impl->config.embedding_dim = meta.at("emb").get<int>();
  impl->config.hidden = meta.at("hidden").get<int>();
  impl->config.epochs = meta.value("epochs", 25);
  impl->config.lr = meta.value("lr", 1.0);
  impl->config.clip = meta.value("clip", 5.0);
  impl->config.batch = meta.value("batch", 16);
  impl->config.seed = meta.value("seed", 0ull);

  Vocabulary vocab = Vocabulary::deserialize(meta.at("vocab").get<std::string>());
  if (hex64(vocab.hash()) != meta.at("vocab_hash").get<std::string>()) {
    throw NmtError(path + ": vocabulary hash mismatch");
  }
  std::string dtype = meta.at("dtype").get<std::string>();
  if (dtype == "f64") {
    impl->precision = Precision::kF64;
    impl->f64.build(vocab, impl->config.embedding_dim, impl->config.hidden, 0);
    load_net_blobs(impl->f64, c);
  } else {
    impl->precision = Precision::kF32;
    impl->f32.build(vocab, impl->config.embedding_dim, impl->config.hidden, 0);
    load_net_blobs(impl->f32, c);
  }
  Seq2SeqModel model;
  model.impl_ = std::move(impl);
  return model;
}

Seq2SeqModel Seq2SeqModel::load(const std::string& path, const Vocabulary& expected_vocab) {
  Seq2SeqModel model = load(path);
  if (model.vocabulary().hash() != expected_vocab.hash()) {
    throw NmtError(path + ": vocabulary hash mismatch");
  }
  return model;
}

std::vector<ComponentGradCheck> nmt_gradient_check(int hidden, int samples_per_component,
                                                   uint64_t seed) {
  if (hidden > 16) throw NmtError("gradient check is meant for small models (hidden <= 16)");

  // Tiny corpus fixing the vocabulary and one sample pair.
  LayerSequence src = parse_sequence(
      "conv2d 3 8 3 1 1, relu 8 8 0 0 0, conv2d 8 8 3 1 1, relu 8 8 0 0 0, fc 32 10 0 0 0");
  LayerSequence tgt = parse_sequence("conv2d 3 8 3 1 1, relu 8 8 0 0 0, fc 32 10 0 0 0");
  Vocabulary vocab = Vocabulary::build({src, tgt});

  NmtNet<double> net;
  net.build(vocab, 8, hidden, seed);

  TokenPair tp;
  tp.src = vocab.encode(src, true);
  tp.tgt = vocab.encode(tgt, true);
  std::vector<const TokenPair*> view{&tp};
  TrainBatch<double> batch = TrainBatch<double>::build(view);

  std::function<double()> loss_fn = [&]() {
    return run_batch<double>(net, batch, nullptr).loss_sum;
  };
  auto grads = net.store.zero_grads();
  run_batch<double>(net, batch, &grads);

  std::vector<std::pair<std::string, std::vector<int>>> components = {
      {"embedding", {net.emb}},
      {"encoder_layer1", {net.enc1.w_ih, net.enc1.w_hh, net.enc1.bias}},
      {"encoder_layer2", {net.enc2.w_ih, net.enc2.w_hh, net.enc2.bias}},
      {"decoder_layer1", {net.dec1.w_ih, net.dec1.w_hh, net.dec1.bias}},
      {"decoder_layer2", {net.dec2.w_ih, net.dec2.w_hh, net.dec2.bias}},
      {"attention", {net.attn_w, net.attn_b}},
      {"output_projection", {net.out_w, net.out_b}},
  };
  std::vector<ComponentGradCheck> out;
  for (size_t i = 0; i < components.size(); ++i) {
    auto report = nn::gradient_check<double>(net.store, components[i].second, grads, loss_fn,
                                             samples_per_component, derive_seed(seed, "gc", i));
    ComponentGradCheck entry;
    entry.component = components[i].first;
    entry.max_rel_err = report.max_rel_err;
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace obfrev
