#include "obfrev/passes.hpp"

#include "doctest.h"
#include "obfrev/interp.hpp"
#include "obfrev/ler.hpp"
#include "obfrev/rng.hpp"

using namespace obfrev;

namespace {

// conv(3->6) cell, conv(6->4) cell, maxpool, fc, softmax on a 6x6 input.
ComputationGraph test_net() {
  ComputationGraph g;
  g.input_shape = {3, 6, 6};
  g.output_classes = 10;
  int c1 = g.add_node(conv_word(3, 6, 3, 1, 1));
  int r1 = g.add_node(relu_word(6));
  int b1 = g.add_node(bn_word(6));
  int c2 = g.add_node(conv_word(6, 4, 3, 1, 1));
  int r2 = g.add_node(relu_word(4));
  int b2 = g.add_node(bn_word(4));
  int p = g.add_node(maxpool_word(4));
  int f = g.add_node(fc_word(4 * 3 * 3, 10));
  int s = g.add_node(softmax_word(10));
  int prev = c1;
  for (int id : {r1, b1, c2, r2, b2, p, f, s}) {
    g.add_edge(prev, id);
    prev = id;
  }
  return g;
}

EquivalenceReport check_against_original(const ComputationGraph& obf, const ParamSet& obf_params,
                                         double tol, int trials = 10) {
  ComputationGraph orig = test_net();
  ParamSet orig_params = random_params(orig, 11);
  return equivalence_check(orig, orig_params, obf, obf_params, trials, 5, tol);
}

}  // namespace

TEST_CASE("output-axis branching is bit-exact and splits floor/ceil") {
  ComputationGraph g = test_net();
  ParamSet params = random_params(g, 11);
  branch_layer(g, &params, 3, BranchAxis::kOutput);  // conv2: 6->4 becomes 6->2 | 6->2

  CHECK(validate_graph(g).ok());
  LayerSequence seq = encode_sequence(g);
  CHECK(seq.size() == test_net().nodes.size() + 2);

  EquivalenceReport rep = check_against_original(g, params, 0.0);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("odd output splits give the larger half to the second sibling") {
  ComputationGraph g;
  g.input_shape = {3, 4, 4};
  g.output_classes = 5 * 4 * 4;
  int c0 = g.add_node(conv_word(3, 4, 3, 1, 1));
  int c = g.add_node(conv_word(4, 5, 3, 1, 1));
  int r = g.add_node(relu_word(5));
  g.add_edge(c0, c);
  g.add_edge(c, r);
  ParamSet params = random_params(g, 3);
  branch_layer(g, &params, c, BranchAxis::kOutput);

  std::vector<int> outs;
  for (const GraphNode& n : g.nodes) {
    if (n.word.kind == OpKind::kConv2d && n.id != c0) outs.push_back(n.word.out_ch);
  }
  CHECK(outs == std::vector<int>{2, 3});
  CHECK(validate_graph(g).ok());
}

TEST_CASE("input-axis branching stays within 1e-12 relative error") {
  ComputationGraph g = test_net();
  ParamSet params = random_params(g, 11);
  branch_layer(g, &params, 3, BranchAxis::kInput);  // conv2 reads 3+3 sliced channels

  CHECK(validate_graph(g).ok());
  EquivalenceReport rep = check_against_original(g, params, 1e-12);
  CHECK(rep.pass);

  // Empirical reassociation bound across 100 seeds: stays far below 1e-12.
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ComputationGraph orig = test_net();
    ParamSet po = random_params(orig, seed);
    ComputationGraph obf = test_net();
    ParamSet pb = random_params(obf, seed);
    branch_layer(obf, &pb, 3, BranchAxis::kInput);
    EquivalenceReport r = equivalence_check(orig, po, obf, pb, 2, seed, 1e-12);
    worst = std::max(worst, r.max_rel_err);
    if (!r.pass) break;
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("branching rejects the graph source and tiny axes") {
  ComputationGraph g = test_net();
  ParamSet params = random_params(g, 11);
  CHECK_THROWS_AS(branch_layer(g, &params, 0, BranchAxis::kOutput), PassError);

  ComputationGraph g2;
  g2.input_shape = {1, 4, 4};
  g2.output_classes = 16;
  int a = g2.add_node(conv_word(1, 1, 3, 1, 1));
  int b = g2.add_node(conv_word(1, 1, 3, 1, 1));
  g2.add_edge(a, b);
  CHECK_THROWS_AS(branch_layer(g2, nullptr, b, BranchAxis::kInput), PassError);
  CHECK_THROWS_AS(branch_layer(g2, nullptr, b, BranchAxis::kOutput), PassError);
}

TEST_CASE("layer skipping adds an all-zero branch bit-exactly") {
  ComputationGraph g = test_net();
  ParamSet params = random_params(g, 11);
  skip_layer(g, &params, 3);

  CHECK(validate_graph(g).ok());
  CHECK(encode_sequence(g).size() == test_net().nodes.size() + 3);
  EquivalenceReport rep = check_against_original(g, params, 0.0);
  CHECK(rep.max_rel_err == 0.0);

  SUBCASE("applying twice yields two independent zero branches") {
    skip_layer(g, &params, 3);
    CHECK(validate_graph(g).ok());
    EquivalenceReport again = check_against_original(g, params, 0.0);
    CHECK(again.max_rel_err == 0.0);
  }
}

TEST_CASE("skipping requires a ReLU activation") {
  ComputationGraph g;
  g.input_shape = {3, 2, 2};
  g.output_classes = 12;
  int c = g.add_node(conv_word(3, 3, 3, 1, 1));
  int s = g.add_node(softmax_word(3));
  g.add_edge(c, s);
  CHECK_THROWS_AS(skip_layer(g, nullptr, c), PassError);

  ComputationGraph g2 = test_net();
  CHECK_THROWS_AS(skip_layer(g2, nullptr, 7), PassError);  // fc target
}

TEST_CASE("layer deepening inserts an identity conv + relu bit-exactly") {
  ComputationGraph g = test_net();
  ParamSet params = random_params(g, 11);
  size_t before = encode_sequence(g).size();
  deepen_layer(g, &params, 3);

  CHECK(validate_graph(g).ok());
  CHECK(encode_sequence(g).size() == before + 2);

  // The inserted operator is a shape-preserving 4->4 conv, kernel 3.
  bool found = false;
  for (const GraphNode& n : g.nodes) {
    if (n.id >= 9 && n.word.kind == OpKind::kConv2d) {
      CHECK(n.word.in_ch == 4);
      CHECK(n.word.out_ch == 4);
      CHECK(n.word.kernel == 3);
      CHECK(n.word.stride == 1);
      CHECK(n.word.padding == 1);
      found = true;
    }
  }
  CHECK(found);

  EquivalenceReport rep = check_against_original(g, params, 0.0);
  CHECK(rep.max_rel_err == 0.0);

  SUBCASE("1x1 deepening also holds") {
    ComputationGraph g1 = test_net();
    ParamSet p1 = random_params(g1, 11);
    deepen_layer(g1, &p1, 3, 1);
    CHECK(check_against_original(g1, p1, 0.0).max_rel_err == 0.0);
  }
}

TEST_CASE("deepening rejects even kernels and non-qualifying activations") {
  ComputationGraph g = test_net();
  CHECK_THROWS_AS(deepen_layer(g, nullptr, 3, 4), PassError);
  CHECK_THROWS_AS(deepen_layer(g, nullptr, 7), PassError);  // fc target
}

TEST_CASE("plans replay byte-identically and never shrink the sequence") {
  ComputationGraph g = test_net();
  ObfuscationPlan plan = sample_random_plan(g, 42);
  CHECK(plan.entries.size() == plan_targets(g).size());

  ComputationGraph a = test_net(), b = test_net();
  apply_plan(a, nullptr, plan);
  apply_plan(b, nullptr, plan);
  CHECK(graph_to_json(a) == graph_to_json(b));
  CHECK(validate_graph(a).ok());
  CHECK(encode_sequence(a).size() >= encode_sequence(test_net()).size());

  ObfuscationPlan back = ObfuscationPlan::from_json(plan.to_json());
  CHECK(back == plan);
}

TEST_CASE("plan application composes all three operations on one cell") {
  ComputationGraph g = test_net();
  ParamSet params = random_params(g, 11);
  ObfuscationPlan plan;
  plan.entries.push_back(PlanEntry{3, BranchChoice::kOutput, true, true});
  ApplyStats stats = apply_plan(g, &params, plan);
  CHECK(stats.applied == 3);
  CHECK(stats.skipped.empty());
  CHECK(validate_graph(g).ok());
  EquivalenceReport rep = check_against_original(g, params, 0.0);
  CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("redlock keeps the max-LER candidate and is seed-deterministic") {
  ComputationGraph g = test_net();
  SequenceExtractor extract =
      per_graph_extractor([](const ComputationGraph& og) { return encode_sequence(og); });
  LatencyModel latency = [](const ComputationGraph& og) {
    return 1.0 + static_cast<double>(og.nodes.size());
  };

  RedlockConfig cfg;
  cfg.trials = 20;
  ObfuscationOutcome o1 = redlock_obfuscate(g, 7, extract, latency, cfg);
  CHECK(o1.report.candidates.size() == 20);
  CHECK(o1.report.chosen_index >= 0);

  double best = -1.0;
  for (const CandidateScore& c : o1.report.candidates) {
    if (c.feasible) best = std::max(best, c.ler);
  }
  CHECK(o1.report.candidates[static_cast<size_t>(o1.report.chosen_index)].ler == best);

  ObfuscationOutcome o2 = redlock_obfuscate(g, 7, extract, latency, cfg);
  CHECK(o1.plan == o2.plan);
  CHECK(graph_to_json(o1.graph) == graph_to_json(o2.graph));
}

TEST_CASE("ea search starts from the empty plan and never regresses") {
  ComputationGraph g = test_net();
  SequenceExtractor extract =
      per_graph_extractor([](const ComputationGraph& og) { return encode_sequence(og); });
  LatencyModel latency = [](const ComputationGraph& og) {
    return 1.0 + static_cast<double>(og.nodes.size());
  };

  EaConfig cfg;
  cfg.population = 8;
  cfg.generations = 6;
  ObfuscationOutcome o = ea_obfuscate(g, 9, extract, latency, cfg);

  // Candidate 0 of generation 0 is the empty plan, whose extraction LER is 0
  // with this perfect extractor.
  CHECK(o.report.candidates[0].ler == 0.0);
  REQUIRE(o.report.best_fitness_per_generation.size() == 6);
  for (size_t i = 1; i < 6; ++i) {
    CHECK(o.report.best_fitness_per_generation[i] >=
          o.report.best_fitness_per_generation[i - 1]);
  }
  CHECK(validate_graph(o.graph).ok());

  ObfuscationOutcome o2 = ea_obfuscate(g, 9, extract, latency, cfg);
  CHECK(o.plan == o2.plan);
}

TEST_CASE("random plan op-count distribution matches the three fair coins") {
  ComputationGraph g = test_net();
  int counts[4] = {0, 0, 0, 0};
  int layers = 0;
  for (uint64_t s = 0; s < 4000; ++s) {
    ObfuscationPlan p = sample_random_plan(g, derive_seed(1, "histo", s));
    for (const PlanEntry& e : p.entries) {
      ++counts[e.enabled_ops()];
      ++layers;
    }
  }
  double expect[4] = {0.125, 0.375, 0.375, 0.125};
  for (int k = 0; k < 4; ++k) {
    double frac = static_cast<double>(counts[k]) / layers;
    CHECK(std::abs(frac - expect[k]) < 0.02);
  }
}
