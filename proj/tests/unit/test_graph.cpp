#include "obfrev/graph.hpp"

#include "doctest.h"

using namespace obfrev;

namespace {

// conv(3->64,k3,s1,p1) -> relu -> fc(256->10) on a 2x2 input, so the implied
// flatten in front of the fc sees 64*2*2 = 256 features.
ComputationGraph small_chain() {
  ComputationGraph g;
  g.input_shape = {3, 2, 2};
  g.output_classes = 10;
  int c = g.add_node(conv_word(3, 64, 3, 1, 1));
  int r = g.add_node(relu_word(64));
  int f = g.add_node(fc_word(256, 10));
  g.add_edge(c, r);
  g.add_edge(r, f);
  return g;
}

bool has_violation(const ValidationReport& r, ViolationCode code) {
  for (const auto& v : r.violations) {
    if (v.code == code) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("encode_sequence emits one word per node in execution order") {
  LayerSequence seq = encode_sequence(small_chain());
  REQUIRE(seq.size() == 3);
  CHECK(seq.words[0].render() == "conv2d 3 64 3 1 1");
  CHECK(seq.words[2].render() == "fc 256 10 0 0 0");
}

TEST_CASE("empty graph encodes to zero words") {
  ComputationGraph g;
  CHECK(validate_graph(g).ok());
  CHECK(encode_sequence(g).empty());
}

TEST_CASE("encode_sequence is deterministic for structurally equal graphs") {
  CHECK(encode_sequence(small_chain()) == encode_sequence(small_chain()));
}

TEST_CASE("channel mismatch names both nodes") {
  ComputationGraph g;
  g.input_shape = {3, 8, 8};
  int a = g.add_node(conv_word(3, 64, 3, 1, 1));
  int b = g.add_node(conv_word(32, 16, 3, 1, 1));
  g.add_edge(a, b);
  ValidationReport r = validate_graph(g);
  REQUIRE_FALSE(r.ok());
  CHECK(has_violation(r, ViolationCode::kChannelMismatch));
  bool names_both = false;
  for (const auto& v : r.violations) {
    if (v.code != ViolationCode::kChannelMismatch) continue;
    bool has_a = false, has_b = false;
    for (int id : v.nodes) {
      has_a |= id == a;
      has_b |= id == b;
    }
    names_both |= has_a && has_b;
  }
  CHECK(names_both);
}

TEST_CASE("add requires equal producer channel counts") {
  ComputationGraph g;
  g.input_shape = {3, 8, 8};
  int a = g.add_node(conv_word(3, 64, 3, 1, 1));
  int u = g.add_node(conv_word(64, 64, 3, 1, 1));
  int v = g.add_node(conv_word(64, 32, 3, 1, 1));
  int m = g.add_node(add_word(64));
  g.add_edge(a, u);
  g.add_edge(a, v);
  g.add_edge(u, m);
  g.add_edge(v, m);
  ValidationReport r = validate_graph(g);
  CHECK(has_violation(r, ViolationCode::kChannelMismatch));
}

TEST_CASE("even conv kernels are rejected") {
  ComputationGraph g;
  g.input_shape = {3, 8, 8};
  g.add_node(conv_word(3, 16, 4, 1, 1));
  CHECK(has_violation(validate_graph(g), ViolationCode::kEvenKernel));
}

TEST_CASE("cycles are reported") {
  ComputationGraph g;
  int a = g.add_node(relu_word(3));
  int b = g.add_node(relu_word(3));
  g.add_edge(a, b);
  g.add_edge(b, a);
  CHECK(has_violation(validate_graph(g), ViolationCode::kCycle));
}

TEST_CASE("second source and dangling nodes are reported") {
  ComputationGraph g;
  g.input_shape = {3, 4, 4};
  int a = g.add_node(conv_word(3, 8, 3, 1, 1));
  int b = g.add_node(relu_word(8));
  g.add_edge(a, b);
  g.add_node(conv_word(3, 8, 3, 1, 1));  // unconnected
  ValidationReport r = validate_graph(g);
  CHECK(has_violation(r, ViolationCode::kMultipleSources));
  CHECK(has_violation(r, ViolationCode::kMultipleSinks));
}

TEST_CASE("branch bodies flatten between their split and merge") {
  // 0: conv, 1: relu, 2: zero-branch conv, 3: its relu, 4: add taking (1, 3).
  ComputationGraph g;
  g.input_shape = {3, 4, 4};
  int c = g.add_node(conv_word(3, 8, 3, 1, 1));
  int r = g.add_node(relu_word(8));
  int z = g.add_node(conv_word(8, 8, 3, 1, 1));
  int zr = g.add_node(relu_word(8));
  int m = g.add_node(add_word(8));
  g.add_edge(c, r);
  g.add_edge(r, z);
  g.add_edge(z, zr);
  g.add_edge(r, m);
  g.add_edge(zr, m);
  g.output_classes = 8 * 4 * 4;
  std::vector<int> order = topological_order(g);
  CHECK(order == std::vector<int>{c, r, z, zr, m});
  CHECK(validate_graph(g).ok());
}

TEST_CASE("partial channel readers must exactly partition the producer") {
  ComputationGraph g;
  g.input_shape = {3, 4, 4};
  int a = g.add_node(conv_word(3, 8, 3, 1, 1));
  int u = g.add_node(conv_word(3, 16, 3, 1, 1));
  int v = g.add_node(conv_word(5, 16, 3, 1, 1));
  int m = g.add_node(add_word(16));
  g.add_edge(a, u);
  g.add_edge(a, v);
  g.add_edge(u, m);
  g.add_edge(v, m);

  ValidationReport r;
  auto shapes = propagate_shapes(g, &r);
  REQUIRE(r.ok());
  REQUIRE(shapes.has_value());
  CHECK(shapes->slice_offset.at(u) == 0);
  CHECK(shapes->slice_offset.at(v) == 3);

  // Shrinking one reader breaks the partition.
  g.find(v)->word.in_ch = 4;
  CHECK_FALSE(validate_graph(g).ok());
}

TEST_CASE("fc flattens spatial producers") {
  ComputationGraph g = small_chain();
  ValidationReport r;
  auto shapes = propagate_shapes(g, &r);
  REQUIRE(shapes.has_value());
  TensorShape out = shapes->out_shape.at(2);
  CHECK(out.ch == 10);
  CHECK_FALSE(out.spatial);
}

TEST_CASE("graph JSON round-trips byte-identically") {
  ComputationGraph g = small_chain();
  std::string j = graph_to_json(g);
  ComputationGraph back = graph_from_json(j);
  CHECK(back == g);
  CHECK(graph_to_json(back) == j);
  CHECK(j.find("\"input_shape\"") < j.find("\"classes\""));
  CHECK(j.find("\"classes\"") < j.find("\"nodes\""));
  CHECK(j.find("\"nodes\"") < j.find("\"edges\""));
}

TEST_CASE("malformed graph JSON raises GraphError") {
  CHECK_THROWS_AS(graph_from_json("{"), GraphError);
  CHECK_THROWS_AS(graph_from_json("{\"classes\": 10}"), GraphError);
}
