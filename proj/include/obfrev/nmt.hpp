#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "obfrev/scas.hpp"  // Precision
#include "obfrev/vocab.hpp"
#include "obfrev/words.hpp"

namespace obfrev {

struct NmtError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NmtConfig {
  int epochs = 25;
  double lr = 1.0;  // plain SGD
  double clip = 5.0;
  double teacher_forcing = 1.0;
  int batch = 16;
  size_t max_tokens = kMaxSequenceTokens;
  int embedding_dim = 78;
  int hidden = 500;
  Precision precision = Precision::kF64;
  uint64_t seed = 0;
  /// When positive, training stops after the first epoch whose teacher-forced
  /// token accuracy reaches this value.
  double stop_at_token_acc = -1.0;
};

struct NmtEpochLog {
  int epoch = 0;
  double loss = 0.0;       // per-token NLL
  double token_acc = 0.0;  // teacher-forced
  double seq_acc = 0.0;    // all tokens right, teacher-forced
};

struct Translation {
  LayerSequence sequence;
  bool well_formed = true;  // saw <end>, word arity 6, known kinds
  std::vector<std::string> tokens;
};

/// Token-level encoder/decoder translator: embedding, two stacked recurrent
/// encoder layers, dot-product attention over the encoder states, two stacked
/// recurrent decoder layers initialized from the encoder's final state, and a
/// log-softmax output head. Immutable once trained; translation is pure.
class Seq2SeqModel {
 public:
  Seq2SeqModel() = default;

  bool trained() const { return impl_ != nullptr; }

  /// Greedy decode from <start> until <end> or the token cap. Never throws on
  /// malformed output; the flag reports whether it parsed cleanly.
  Translation translate(const LayerSequence& source) const;

  const Vocabulary& vocabulary() const;
  const std::vector<NmtEpochLog>& log() const;
  int hidden() const;
  int embedding_dim() const;

  void save(const std::string& path) const;
  static Seq2SeqModel load(const std::string& path);
  /// Loads and additionally refuses checkpoints whose vocabulary hash does
  /// not match the supplied vocabulary.
  static Seq2SeqModel load(const std::string& path, const Vocabulary& expected_vocab);

  std::string training_log_csv() const;  // epoch,loss,token_acc,seq_acc

  struct Impl;

 private:
  std::shared_ptr<const Impl> impl_;
  friend Seq2SeqModel train_nmt(const std::vector<std::pair<LayerSequence, LayerSequence>>&,
                                const Vocabulary&, const NmtConfig&);
  friend struct NmtGradCheckAccess;
};

/// Teacher-forced NLL training over (source, target) pairs. Every pair must
/// fit the token cap, sentinels included. Aborts with epoch/batch coordinates
/// on a non-finite loss.
Seq2SeqModel train_nmt(const std::vector<std::pair<LayerSequence, LayerSequence>>& pairs,
                       const Vocabulary& vocab, const NmtConfig& config);

struct ComponentGradCheck {
  std::string component;
  double max_rel_err = 0.0;
};

/// Central-difference validation of the analytic gradients on a small model
/// variant, one report per component (embedding, both encoder layers, both
/// decoder layers, attention, output projection).
std::vector<ComponentGradCheck> nmt_gradient_check(int hidden, int samples_per_component,
                                                   uint64_t seed);

}  // namespace obfrev
