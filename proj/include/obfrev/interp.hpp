#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "obfrev/params.hpp"
#include "obfrev/tensor.hpp"

namespace obfrev {

struct ForwardError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic forward pass over the canonical execution order. Per output
/// channel the accumulation order over (input channel, kernel row, kernel
/// column) is fixed, which is what makes output-axis branching bit-exact.
/// Throws ForwardError on shape mismatches (naming the node) and on
/// non-finite intermediate values.
Tensor forward(const ComputationGraph& graph, const ParamSet& params, const Tensor& input);

/// Uniform [-1, 1] input for the graph's input shape.
Tensor random_input(const ComputationGraph& graph, uint64_t seed);

struct EquivalenceReport {
  double max_rel_err = 0.0;
  bool pass = false;
  int trials = 0;
};

/// Runs both graphs on `trials` seeded random inputs and reports the worst
/// relative output error. Relative error of a pair is 0 when bit-equal, else
/// |a-b| / max(|a|, |b|).
EquivalenceReport equivalence_check(const ComputationGraph& a, const ParamSet& pa,
                                    const ComputationGraph& b, const ParamSet& pb, int trials,
                                    uint64_t seed, double tol);

}  // namespace obfrev
