#include "obfrev/generator.hpp"

#include <filesystem>
#include <set>

#include "doctest.h"
#include "obfrev/rng.hpp"

using namespace obfrev;

TEST_CASE("draw ranges cover [4,12] convs and [1,4] fcs; layout is uniform enough") {
  GeneratorConfig cfg;
  std::set<int> conv_counts, fc_counts;
  int conv_hist[13] = {0};
  int64_t eligible = 0, blocks = 0;
  const int kDraws = 1000;
  for (int i = 0; i < kDraws; ++i) {
    GenerationStats stats;
    generate_random_dnn(cfg, derive_seed(4242, "gen-test", static_cast<uint64_t>(i)), &stats);
    conv_counts.insert(stats.conv_cells);
    fc_counts.insert(stats.fc_cells);
    ++conv_hist[stats.conv_cells];
    eligible += stats.eligible_cells;
    blocks += stats.block_cells;
  }
  CHECK(conv_counts == std::set<int>{4, 5, 6, 7, 8, 9, 10, 11, 12});
  CHECK(fc_counts == std::set<int>{1, 2, 3, 4});

  // Chi-square for uniformity over the 9 conv-count bins, 8 dof, alpha 0.01.
  double expectation = kDraws / 9.0;
  double chi2 = 0.0;
  for (int c = 4; c <= 12; ++c) {
    double d = conv_hist[c] - expectation;
    chi2 += d * d / expectation;
  }
  CHECK(chi2 < 20.09);

  double block_rate = static_cast<double>(blocks) / static_cast<double>(eligible);
  CHECK(block_rate == doctest::Approx(0.16).epsilon(0.125));  // 0.16 +/- 0.02
}

TEST_CASE("generation is deterministic per seed") {
  GeneratorConfig cfg;
  ComputationGraph a = generate_random_dnn(cfg, 77);
  ComputationGraph b = generate_random_dnn(cfg, 77);
  CHECK(graph_to_json(a) == graph_to_json(b));
  CHECK(graph_to_json(a) != graph_to_json(generate_random_dnn(cfg, 78)));
}

TEST_CASE("every conv output width comes from the choice set") {
  GeneratorConfig cfg;
  std::set<int> choices(cfg.conv_channel_choices.begin(), cfg.conv_channel_choices.end());
  for (uint64_t s = 0; s < 50; ++s) {
    ComputationGraph g = generate_random_dnn(cfg, derive_seed(5, "widths", s));
    for (const GraphNode& n : g.nodes) {
      if (n.word.kind == OpKind::kConv2d) CHECK(choices.count(n.word.out_ch) == 1);
    }
    CHECK(validate_graph(g).ok());
    CHECK(encode_sequence(g).token_count(true) <= kMaxSequenceTokens);
  }
}

TEST_CASE("datasets write one file per graph with a consistent manifest") {
  namespace fs = std::filesystem;
  std::string dir = "gen_test_out";
  fs::remove_all(dir);

  DatasetManifest m = generate_dataset(DatasetRole::kA, 100, 31337, dir);
  CHECK(m.rows.size() == 100);
  std::set<std::string> paths;
  for (const ManifestRow& r : m.rows) {
    CHECK(r.role == 'A');
    paths.insert(r.graph_path);
    ComputationGraph g = load_graph((fs::path(dir) / r.graph_path).string());
    CHECK(encode_sequence(g).size() == r.n_words);
  }
  CHECK(paths.size() == 100);

  DatasetManifest back = DatasetManifest::load((fs::path(dir) / "manifest.csv").string());
  CHECK(back.to_csv() == m.to_csv());
  fs::remove_all(dir);
}

TEST_CASE("role C emits the fixed benchmark chains") {
  namespace fs = std::filesystem;
  std::string dir = "gen_test_c";
  fs::remove_all(dir);
  DatasetManifest m = generate_dataset(DatasetRole::kC, 0, 0, dir);
  CHECK(m.rows.size() == 4);

  ComputationGraph vgg = load_graph((fs::path(dir) / "graphs/vgg11_like.json").string());
  int convs = 0, fcs = 0;
  for (const GraphNode& n : vgg.nodes) {
    convs += n.word.kind == OpKind::kConv2d;
    fcs += n.word.kind == OpKind::kFc;
  }
  CHECK(convs == 8);
  CHECK(fcs == 3);
  CHECK(validate_graph(vgg).ok());

  for (const ManifestRow& r : m.rows) {
    ComputationGraph g = load_graph((fs::path(dir) / r.graph_path).string());
    CHECK(validate_graph(g).ok());
    CHECK(encode_sequence(g).token_count(true) <= kMaxSequenceTokens);
  }
  fs::remove_all(dir);
}

TEST_CASE("duplicate explicit seeds are rejected") {
  CHECK_THROWS_AS(generate_dataset(DatasetRole::kB, 3, 1, "gen_test_dup", {}, {5, 6, 5}),
                  GeneratorError);
  std::filesystem::remove_all("gen_test_dup");
}
