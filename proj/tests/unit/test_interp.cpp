#include "obfrev/interp.hpp"

#include <cstdio>

#include "doctest.h"
#include "obfrev/rng.hpp"

using namespace obfrev;

namespace {

// Identity-initialized conv kernel: center tap 1 on matching channels.
NodeParams identity_conv(int ch, int k) {
  NodeParams p;
  p.weight.assign(static_cast<size_t>(ch) * ch * k * k, 0.0);
  for (int c = 0; c < ch; ++c) {
    size_t idx = ((static_cast<size_t>(c) * ch + c) * k + k / 2) * k + k / 2;
    p.weight[idx] = 1.0;
  }
  p.bias.assign(static_cast<size_t>(ch), 0.0);
  return p;
}

}  // namespace

TEST_CASE("identity kernel conv reproduces its input exactly") {
  ComputationGraph g;
  g.input_shape = {4, 6, 6};
  g.output_classes = 4 * 6 * 6;
  int c = g.add_node(conv_word(4, 4, 3, 1, 1));
  (void)c;
  ParamSet params;
  params.by_node[0] = identity_conv(4, 3);

  Tensor in = random_input(g, 99);
  Tensor out = forward(g, params, in);
  CHECK(out.data == in.data);

  // 1x1 kernel variant: the weight matrix is the identity.
  ComputationGraph g1;
  g1.input_shape = {4, 6, 6};
  g1.output_classes = 4 * 6 * 6;
  g1.add_node(conv_word(4, 4, 1, 1, 0));
  ParamSet params1;
  params1.by_node[0] = identity_conv(4, 1);
  CHECK(forward(g1, params1, in).data == in.data);
}

TEST_CASE("relu clamps negatives") {
  ComputationGraph g;
  g.input_shape = {3, 1, 1};
  g.output_classes = 3;
  g.add_node(relu_word(3));
  Tensor in(TensorShape{3, 1, 1, true});
  in.data = {-1.0, 0.0, 2.0};
  Tensor out = forward(g, {}, in);
  CHECK(out.data == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("1x1 conv multiplies by its weight") {
  ComputationGraph g;
  g.input_shape = {1, 1, 1};
  g.output_classes = 1;
  g.add_node(conv_word(1, 1, 1, 1, 0));
  ParamSet params;
  params.by_node[0].weight = {2.0};
  params.by_node[0].bias = {0.0};
  Tensor in(TensorShape{1, 1, 1, true});
  in.data = {3.0};
  CHECK(forward(g, params, in).data[0] == 6.0);
}

TEST_CASE("forward is deterministic and equivalence of a graph with itself is exact") {
  ComputationGraph g;
  g.input_shape = {3, 8, 8};
  g.output_classes = 10;
  int c1 = g.add_node(conv_word(3, 8, 3, 1, 1));
  int r1 = g.add_node(relu_word(8));
  int b1 = g.add_node(bn_word(8));
  int p1 = g.add_node(maxpool_word(8));
  int f1 = g.add_node(fc_word(8 * 4 * 4, 10));
  int s1 = g.add_node(softmax_word(10));
  g.add_edge(c1, r1);
  g.add_edge(r1, b1);
  g.add_edge(b1, p1);
  g.add_edge(p1, f1);
  g.add_edge(f1, s1);

  ParamSet params = random_params(g, 7);
  Tensor in = random_input(g, 8);
  Tensor a = forward(g, params, in);
  Tensor b = forward(g, params, in);
  CHECK(a.data == b.data);

  EquivalenceReport rep = equivalence_check(g, params, g, params, 5, 3, 0.0);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err == 0.0);

  // Terminal softmax behaves like a distribution.
  double sum = 0.0;
  for (double v : a.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    sum += v;
  }
  CHECK(std::abs(sum - 1.0) <= 1e-9);
}

TEST_CASE("shape mismatches name the offending node") {
  ComputationGraph g;
  g.input_shape = {3, 4, 4};
  g.output_classes = 8 * 4 * 4;
  g.add_node(conv_word(3, 8, 3, 1, 1));
  ParamSet params;
  params.by_node[0].weight.assign(10, 0.0);  // wrong size
  params.by_node[0].bias.assign(8, 0.0);
  Tensor in = random_input(g, 1);
  try {
    forward(g, params, in);
    FAIL("expected ForwardError");
  } catch (const ForwardError& e) {
    CHECK(std::string(e.what()).find("node 0") != std::string::npos);
  }
}

TEST_CASE("average pooling averages its window") {
  ComputationGraph g;
  g.input_shape = {1, 2, 2};
  g.output_classes = 1;
  g.add_node(avgpool_word(1));
  Tensor in(TensorShape{1, 2, 2, true});
  in.data = {1.0, 2.0, 3.0, 6.0};
  CHECK(forward(g, {}, in).data[0] == 3.0);
}

TEST_CASE("param sets round-trip through the NUPARAMS1 container") {
  ComputationGraph g;
  g.input_shape = {3, 4, 4};
  int c = g.add_node(conv_word(3, 8, 3, 1, 1));
  int b = g.add_node(bn_word(8));
  g.add_edge(c, b);
  ParamSet params = random_params(g, 21);

  std::string path = "params_roundtrip.bin";
  save_params(params, path);
  ParamSet back = load_params(path);
  CHECK(back == params);

  // Truncation must be detected, with no partial result.
  FILE* f = fopen(path.c_str(), "rb");
  REQUIRE(f);
  fseek(f, 0, SEEK_END);
  long size = ftell(f);
  fseek(f, 0, SEEK_SET);
  std::vector<char> bytes(static_cast<size_t>(size));
  REQUIRE(fread(bytes.data(), 1, bytes.size(), f) == bytes.size());
  fclose(f);
  FILE* out = fopen(path.c_str(), "wb");
  REQUIRE(out);
  fwrite(bytes.data(), 1, bytes.size() / 2, out);
  fclose(out);
  CHECK_THROWS(load_params(path));

  // Wrong magic as well.
  out = fopen(path.c_str(), "wb");
  REQUIRE(out);
  fwrite("NOTAPARAM", 1, 9, out);
  fclose(out);
  CHECK_THROWS(load_params(path));
  remove(path.c_str());
}
