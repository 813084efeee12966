#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "obfrev/generator.hpp"
#include "obfrev/trace.hpp"

namespace obfrev {

struct ScasError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Precision { kF64, kF32 };

struct ScasConfig {
  std::vector<int> hidden_widths{64, 96, 128, 256, 512};
  int epochs = 20;
  double lr = 0.2;
  int batch = 16;
  double clip = 5.0;
  Precision precision = Precision::kF64;
  uint64_t seed = 0;
};

struct ScasEpochLog {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

/// Average ensemble of recurrent per-step taggers over trace feature rows.
/// Immutable once trained; prediction is pure and thread-safe.
class ScasModel {
 public:
  ScasModel() = default;

  bool trained() const { return impl_ != nullptr; }

  /// Mean of the member distributions, one row per trace step; rows sum to 1.
  std::vector<std::array<double, kNumOpKinds>> predict_distributions(
      const RuntimeTrace& trace) const;

  /// Greedy per-step argmax over the averaged distribution; ties break toward
  /// the lowest kind index. Output length equals the trace row count.
  std::vector<OpKind> predict_sequence(const RuntimeTrace& trace) const;

  /// Batched variant, padding internally; one kind sequence per trace.
  std::vector<std::vector<OpKind>> predict_sequences(
      const std::vector<const RuntimeTrace*>& traces) const;

  /// Prediction of a single ensemble member, for paired comparisons.
  std::vector<OpKind> predict_sequence_member(int member, const RuntimeTrace& trace) const;

  const std::vector<ScasEpochLog>& log() const;
  const std::vector<int>& hidden_widths() const;

  void save(const std::string& path) const;
  static ScasModel load(const std::string& path);

  struct Impl;

 private:
  std::shared_ptr<const Impl> impl_;
  friend ScasModel train_scas(const std::vector<RuntimeTrace>&, const std::vector<RuntimeTrace>&,
                              const ScasConfig&);
};

/// Trains the ensemble on labeled traces (per-step cross entropy, SGD with
/// gradient clipping). Needs at least two labeled traces; every trace must
/// carry labels aligned with its rows. Feature normalization constants come
/// from the training set only.
ScasModel train_scas(const std::vector<RuntimeTrace>& train, const std::vector<RuntimeTrace>& val,
                     const ScasConfig& config);

/// Legal dimension values and deployment facts the attacker knows when
/// reconstructing layer words from volumes.
struct DimRecoveryConfig {
  std::array<int, 3> input_shape{3, 32, 32};
  int classes = 10;
  double bytes_per_element = 4.0;
  std::vector<int> conv_channel_choices{16, 32, 64, 128, 256, 512, 1024};
  std::vector<int> fc_dim_choices{16, 32, 64, 128, 256, 512};
  /// Snapped values farther than this relative deviation from the raw
  /// estimate mark the row's dimensions as unknown.
  double flag_threshold = 0.3;
};

/// Volume-based dimension recovery: feature-map volumes come from the write
/// column, channel sizes propagate forward, conv kernels fall out of the
/// weight-traffic estimate, everything snaps to the nearest legal value.
LayerSequence recover_dimensions(const std::vector<OpKind>& kinds, const RuntimeTrace& trace,
                                 const DimRecoveryConfig& config);

/// Full extraction: predicted kinds plus recovered dimensions.
LayerSequence scas_extract(const ScasModel& model, const RuntimeTrace& trace,
                           const DimRecoveryConfig& config);

std::vector<LayerSequence> scas_extract_many(const ScasModel& model,
                                             const std::vector<const RuntimeTrace*>& traces,
                                             const DimRecoveryConfig& config);

}  // namespace obfrev
