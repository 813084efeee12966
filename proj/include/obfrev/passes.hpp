#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "obfrev/graph.hpp"
#include "obfrev/params.hpp"

namespace obfrev {

struct PassError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class BranchAxis { kOutput, kInput };

// ---------------------------------------------------------------------------
// The three function-preserving rewrites. Each mutates the graph in place and,
// when a ParamSet is supplied, transforms the parameters so the rewritten
// network computes the same function.
// ---------------------------------------------------------------------------

/// Splits a conv2d/fc operator into two partial operators. Output axis: the
/// siblings produce floor(j/2) and j-floor(j/2) channels and are merged by
/// concat. Input axis: the siblings read the two halves of the input channel
/// range and are merged by add; the first sibling keeps the bias. The target
/// must not be the graph source and the split axis needs at least 2 channels.
void branch_layer(ComputationGraph& graph, ParamSet* params, int node, BranchAxis axis);

/// Adds a parallel all-zero conv2d (3x3, stride 1, padding 1) plus ReLU off
/// the target conv's activation output and merges it back with add. Requires
/// the target's activation to be a ReLU.
void skip_layer(ComputationGraph& graph, ParamSet* params, int node);

/// Inserts an identity-initialized conv2d (center tap 1 on matching channels)
/// followed by ReLU after the target conv's activation and before the
/// following batch norm. The kernel must be odd; the activation must be ReLU
/// or identity.
void deepen_layer(ComputationGraph& graph, ParamSet* params, int node, int kernel = 3);

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

enum class BranchChoice { kNone, kOutput, kInput };

struct PlanEntry {
  int node = 0;  // conv2d or fc target
  BranchChoice branch = BranchChoice::kNone;
  bool skip = false;
  bool deepen = false;

  bool operator==(const PlanEntry&) const = default;

  int enabled_ops() const {
    return (branch != BranchChoice::kNone ? 1 : 0) + (skip ? 1 : 0) + (deepen ? 1 : 0);
  }
};

/// Serializable, replayable description of one obfuscation: the same plan
/// applied to the same graph always yields the same output graph.
struct ObfuscationPlan {
  uint64_t seed = 0;
  std::vector<PlanEntry> entries;  // ascending target node id

  bool operator==(const ObfuscationPlan&) const = default;

  bool empty_plan() const {
    for (const PlanEntry& e : entries) {
      if (e.enabled_ops() > 0) return false;
    }
    return true;
  }

  std::string to_json() const;
  static ObfuscationPlan from_json(std::string_view text);
  void save(const std::string& path) const;
  static ObfuscationPlan load(const std::string& path);
};

/// conv2d/fc node ids in ascending order; the legal plan targets.
std::vector<int> plan_targets(const ComputationGraph& graph);

/// One plan entry per target; each of the three operation families is
/// independently enabled with probability 1/2, the branch axis uniform.
ObfuscationPlan sample_random_plan(const ComputationGraph& graph, uint64_t seed);

struct ApplyStats {
  int applied = 0;
  std::vector<std::string> skipped;  // ops whose structural preconditions failed
};

/// Applies a plan, entry by entry in target order; per entry the order is
/// branch, then skip, then deepen. Operations whose preconditions do not hold
/// at their site (e.g. skip on a conv without a ReLU activation) are recorded
/// in the stats and left out.
ApplyStats apply_plan(ComputationGraph& graph, ParamSet* params, const ObfuscationPlan& plan);

// ---------------------------------------------------------------------------
// Obfuscators. Both score candidates with a caller-supplied sequence
// extractor (trace simulation + sequence recovery live upstream) and a
// latency model, so they stay testable in isolation. The extractor takes a
// whole candidate batch at once, which lets a model-backed implementation
// batch its inference.
// ---------------------------------------------------------------------------

using SequenceExtractor =
    std::function<std::vector<LayerSequence>(const std::vector<ComputationGraph>&)>;
using LatencyModel = std::function<double(const ComputationGraph&)>;

/// Wraps a one-graph extractor into the batch form.
SequenceExtractor per_graph_extractor(std::function<LayerSequence(const ComputationGraph&)> fn);

struct CandidateScore {
  int index = 0;
  double ler = 0.0;
  double latency_ratio = 0.0;
  double fitness = 0.0;
  bool feasible = true;
  bool chosen = false;
};

struct ObfuscationReport {
  std::vector<CandidateScore> candidates;
  int chosen_index = -1;
  std::vector<double> best_fitness_per_generation;  // EA only

  std::string to_csv() const;  // candidate,ler,latency_ratio,chosen
};

struct ObfuscationOutcome {
  ComputationGraph graph;
  ObfuscationPlan plan;
  ObfuscationReport report;
};

struct RedlockConfig {
  int trials = 20;
  size_t max_tokens = kMaxSequenceTokens;
};

/// Samples `trials` random plans, scores each candidate by the LER of its
/// extracted sequence against the original sequence, and keeps the
/// highest-LER feasible candidate (ties break toward the lowest index).
ObfuscationOutcome redlock_obfuscate(const ComputationGraph& graph, uint64_t seed,
                                     const SequenceExtractor& extract,
                                     const LatencyModel& latency,
                                     const RedlockConfig& config = {});

struct EaConfig {
  int population = 16;
  int generations = 20;
  double mutation_rate = 0.1;
  int elitism = 2;
  double lambda = 0.5;
  double latency_budget = std::numeric_limits<double>::infinity();
  size_t max_tokens = kMaxSequenceTokens;
};

/// Evolutionary search over plans. Fitness is the extraction LER minus
/// lambda * max(0, latency_ratio - budget); generation 0 always contains the
/// empty plan; selection is elitist, so best-so-far fitness never decreases.
ObfuscationOutcome ea_obfuscate(const ComputationGraph& graph, uint64_t seed,
                                const SequenceExtractor& extract, const LatencyModel& latency,
                                const EaConfig& config = {});

}  // namespace obfrev
