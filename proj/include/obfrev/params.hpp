#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "obfrev/graph.hpp"

namespace obfrev {

/// Inference-mode parameters for one node. Convolutions hold weight
/// (out*in*k*k) and bias (out); fc holds weight (out*in) and bias (out);
/// batch-norm nodes hold the four per-channel constant vectors.
struct NodeParams {
  std::vector<double> weight;
  std::vector<double> bias;
  std::vector<double> bn_scale;
  std::vector<double> bn_shift;
  std::vector<double> bn_mean;
  std::vector<double> bn_var;

  bool operator==(const NodeParams&) const = default;
};

struct ParamSet {
  std::map<int, NodeParams> by_node;

  bool operator==(const ParamSet&) const = default;
};

inline constexpr double kBnEpsilon = 1e-5;

/// Seeded uniform [-1, 1] weights/biases; bn variance uniform [0.1, 1.1] so
/// it stays strictly positive. Any nondegenerate distribution works for
/// function-preservation testing.
ParamSet random_params(const ComputationGraph& graph, uint64_t seed);

void save_params(const ParamSet& params, const std::string& path);
ParamSet load_params(const std::string& path);

// ---------------------------------------------------------------------------
// "NUPARAMS1" container: the shared binary format for parameter sets and
// model checkpoints. Layout: 9-byte magic, little-endian u64 header length,
// JSON header {"version", "meta", "blobs":[{"name","dtype","shape"}...]},
// then each blob's raw little-endian data in header order.
// ---------------------------------------------------------------------------

struct ContainerBlob {
  std::string name;
  std::string dtype;  // "f64" or "f32"
  std::vector<int64_t> shape;
  std::vector<char> raw;

  int64_t element_count() const;
  size_t element_size() const;

  static ContainerBlob from_f64(std::string name, std::vector<int64_t> shape,
                                const std::vector<double>& values);
  static ContainerBlob from_f32(std::string name, std::vector<int64_t> shape,
                                const std::vector<float>& values);
  std::vector<double> as_f64() const;
  std::vector<float> as_f32() const;
};

struct Container {
  std::string meta_json;  // free-form head, stored verbatim
  std::vector<ContainerBlob> blobs;

  const ContainerBlob* find(const std::string& name) const;
  void save(const std::string& path) const;

  /// Validates magic, header, and byte counts; truncated or mislabeled files
  /// raise without producing a partial result.
  static Container load(const std::string& path);
};

}  // namespace obfrev
