#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "obfrev/graph.hpp"

namespace obfrev {

struct GeneratorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GeneratorConfig {
  int conv_count_min = 4;
  int conv_count_max = 12;
  int fc_count_min = 1;
  int fc_count_max = 4;
  std::vector<int> conv_channel_choices = {16, 32, 64, 128, 256, 512, 1024};
  std::vector<int> fc_dim_choices = {16, 32, 64, 128, 256, 512};
  double block_substitution_prob = 0.16;
  /// Per eligible conv cell, the chance of turning into a pooling layer;
  /// capped so the spatial extent stays at least 2x2.
  double pool_prob = 0.25;
  std::array<int, 3> input_shape = {3, 32, 32};
  int output_classes = 10;
  /// Rendered-token budget for the encoded sequence (sentinels included);
  /// oversized draws are retried with a derived seed.
  size_t max_tokens = kMaxSequenceTokens;
  int max_retries = 16;
};

struct GenerationStats {
  int conv_cells = 0;  // drawn conv-cell count, before any conversion
  int fc_cells = 0;
  int eligible_cells = 0;  // cells that drew the block-substitution coin
  int block_cells = 0;
  int pool_cells = 0;
  int attempts = 1;
};

/// Random chain of conv cells (conv-relu-bn), occasional residual or
/// separable blocks, occasional pooling conversions, then the fc stack and a
/// softmax classifier. Deterministic per (config, seed). The result always
/// validates and fits the token budget.
ComputationGraph generate_random_dnn(const GeneratorConfig& config, uint64_t seed,
                                     GenerationStats* stats = nullptr);

/// Fixed benchmark chains: vgg11_like, vgg13_like, resnet20_like,
/// resnet32_like. Throws on unknown names.
ComputationGraph benchmark_graph(const std::string& name);
const std::vector<std::string>& benchmark_names();

enum class DatasetRole { kA, kB, kC };
char dataset_role_letter(DatasetRole role);

struct ManifestRow {
  std::string id;
  uint64_t seed = 0;
  char role = 'A';
  std::string graph_path;
  size_t n_words = 0;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;

  std::string to_csv() const;  // id,seed,role,graph_path,n_words
  static DatasetManifest from_csv(std::string_view text);
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

/// Writes graph JSON files plus the manifest under out_dir. Roles A/B draw n
/// random graphs (per-graph seeds derived from the master seed unless an
/// explicit list is given; duplicate seeds are rejected). Role C emits the
/// fixed benchmark chains.
DatasetManifest generate_dataset(DatasetRole role, int n, uint64_t seed,
                                 const std::string& out_dir, const GeneratorConfig& config = {},
                                 const std::vector<uint64_t>& explicit_seeds = {});

}  // namespace obfrev
