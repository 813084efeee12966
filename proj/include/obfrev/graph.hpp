#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "obfrev/words.hpp"

namespace obfrev {

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GraphNode {
  int id = 0;
  LayerWord word;

  bool operator==(const GraphNode&) const = default;
};

/// DAG of operator nodes. The (implicit) graph input feeds every node without
/// incoming edges; the single node without outgoing edges produces the graph
/// output. Node order is insertion order; execution order is the canonical
/// topological order (smallest ready id first).
struct ComputationGraph {
  std::vector<GraphNode> nodes;
  std::vector<std::pair<int, int>> edges;  // (producer, consumer), ordered
  std::array<int, 3> input_shape{3, 32, 32};  // channels, height, width
  int output_classes = 10;

  bool operator==(const ComputationGraph&) const = default;

  int add_node(const LayerWord& word);            // returns the fresh id
  void add_edge(int from, int to) { edges.emplace_back(from, to); }

  const GraphNode* find(int id) const;
  GraphNode* find(int id);
  int max_id() const;

  std::vector<int> producers(int id) const;  // in edge order
  std::vector<int> consumers(int id) const;  // in edge order
  std::vector<int> sources() const;          // nodes with no incoming edge
  std::vector<int> sinks() const;            // nodes with no outgoing edge
};

enum class ViolationCode {
  kDuplicateNodeId,
  kBadEdge,
  kCycle,
  kMultipleSources,
  kMultipleSinks,
  kNoSource,
  kNoSink,
  kDanglingNode,
  kChannelMismatch,
  kSpatialMismatch,
  kEvenKernel,
  kNonPositiveDim,
  kSpatialUnderflow,
  kBadSliceGroup,
  kBadArity,
};

const char* violation_code_name(ViolationCode code);

struct Violation {
  ViolationCode code;
  std::string message;
  std::vector<int> nodes;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

/// Shape of a value flowing along an edge. After an fc layer the tensor is a
/// flat feature vector, modeled as (features, 1, 1) with spatial == false.
struct TensorShape {
  int ch = 0;
  int h = 1;
  int w = 1;
  bool spatial = true;

  int64_t volume() const { return static_cast<int64_t>(ch) * h * w; }
  bool operator==(const TensorShape&) const = default;
};

/// Per-node shape information derived from input_shape. slice_offset holds
/// the starting channel for consumers that read a channel range of their
/// producer (see validate_graph on partial reads).
struct ShapeMap {
  std::unordered_map<int, TensorShape> in_shape;   // post-merge / post-flatten
  std::unordered_map<int, TensorShape> out_shape;
  std::unordered_map<int, int> slice_offset;
};

/// Structural validation. Violations are data, not failures. Channel
/// alignment: a consumer's in_ch must equal the sum (concat) or the common
/// value (add) of its producers' out_ch, or the single producer's out_ch.
/// The one sanctioned exception: conv2d/fc consumers of a common producer may
/// each read a disjoint channel range when their in_ch values, in node-id
/// order, exactly partition the producer's out_ch (this is how an
/// input-axis-branched operator pair consumes its sliced input).
ValidationReport validate_graph(const ComputationGraph& graph);

/// Validation plus the derived shapes; nullopt when validation fails.
std::optional<ShapeMap> propagate_shapes(const ComputationGraph& graph, ValidationReport* report);

/// Canonical execution order: Kahn's algorithm, smallest ready id first.
/// Incomplete (cyclic) graphs yield a partial order.
std::vector<int> topological_order(const ComputationGraph& graph);

/// One word per node in canonical topological order. Throws GraphError when
/// the graph does not validate.
LayerSequence encode_sequence(const ComputationGraph& graph);

std::string graph_to_json(const ComputationGraph& graph);
ComputationGraph graph_from_json(std::string_view text);
void save_graph(const ComputationGraph& graph, const std::string& path);
ComputationGraph load_graph(const std::string& path);

}  // namespace obfrev
