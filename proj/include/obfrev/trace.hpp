#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "obfrev/graph.hpp"

namespace obfrev {

struct TraceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TraceRow {
  int step = 0;
  double cycles = 0.0;
  double dram_reads = 0.0;   // bytes
  double dram_writes = 0.0;  // bytes
  double cache_hit_rate = 0.0;
};

/// Time-ordered per-operator feature rows. The ground-truth words ride in a
/// separate aligned vector and are written to a sidecar file, never into the
/// trace itself, so the attack path cannot leak them.
struct RuntimeTrace {
  std::vector<TraceRow> rows;
  std::vector<LayerWord> labels;

  size_t size() const { return rows.size(); }
};

struct CostModelConfig {
  double cycles_per_mac = 1.0;
  double launch_overhead = 8.0;  // cycles charged per issued operator
  double bytes_per_element = 4.0;
  double cache_capacity = 2.0 * 1024.0 * 1024.0;  // bytes
  double sigma = 0.05;  // lognormal noise scale on cycles and DRAM traffic
  uint64_t seed = 0;
};

/// Effective operation count driving the cycle cost. conv2d and fc are their
/// analytic MAC counts; relu/identity/add/concat cost one operation per
/// output element; bn, softmax and pooling carry fixed per-element factors.
int64_t effective_ops(const LayerWord& word, const TensorShape& in, const TensorShape& out,
                      int64_t read_elements);

/// One row per operator in canonical execution order. cycles = overhead +
/// cycles_per_mac * ops; reads cover inputs + weights discounted by the
/// cache-hit rate; writes cover the raw output volume (which is what makes
/// dimension recovery from write volumes possible); all three are multiplied
/// by exp(N(0, sigma^2)) noise, deterministic per (seed, row).
RuntimeTrace simulate_trace(const ComputationGraph& graph, const CostModelConfig& config);

/// Sum of the cycle column.
double latency_of(const RuntimeTrace& trace);

// CSV forms. Trace: "step,cycles,dram_reads,dram_writes,cache_hit_rate".
// Label sidecar: "step,kind,in_ch,out_ch,k,s,p".
std::string trace_to_csv(const RuntimeTrace& trace);
std::string labels_to_csv(const RuntimeTrace& trace);
RuntimeTrace trace_from_csv(std::string_view trace_csv, std::string_view labels_csv = {});

void save_trace(const RuntimeTrace& trace, const std::string& trace_path,
                const std::string& labels_path = {});
RuntimeTrace load_trace(const std::string& trace_path, const std::string& labels_path = {});

}  // namespace obfrev
