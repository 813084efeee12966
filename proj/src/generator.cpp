#include "obfrev/generator.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "obfrev/rng.hpp"

namespace obfrev {

namespace {

/// Chain-builder that tracks the running channel count and spatial extent.
struct Builder {
  ComputationGraph g;
  int prev = -1;  // last node of the previous cell
  int ch;
  int h, w;

  explicit Builder(const GeneratorConfig& cfg) {
    g.input_shape = cfg.input_shape;
    g.output_classes = cfg.output_classes;
    ch = cfg.input_shape[0];
    h = cfg.input_shape[1];
    w = cfg.input_shape[2];
  }

  int attach(const LayerWord& word) {
    int id = g.add_node(word);
    if (prev >= 0) g.add_edge(prev, id);
    prev = id;
    return id;
  }

  void conv_cell(int out_ch) {
    attach(conv_word(ch, out_ch, 3, 1, 1));
    attach(relu_word(out_ch));
    attach(bn_word(out_ch));
    ch = out_ch;
  }

  // conv-bn-relu-conv-bn with the cell input added back in.
  void residual_block() {
    int entry = prev;
    attach(conv_word(ch, ch, 3, 1, 1));
    attach(bn_word(ch));
    attach(relu_word(ch));
    attach(conv_word(ch, ch, 3, 1, 1));
    attach(bn_word(ch));
    int merge = g.add_node(add_word(ch));
    g.add_edge(entry, merge);
    g.add_edge(prev, merge);
    prev = merge;
  }

  // 3x3 channel-preserving conv then a 1x1 projection.
  void separable_block(int out_ch) {
    attach(conv_word(ch, ch, 3, 1, 1));
    attach(relu_word(ch));
    attach(bn_word(ch));
    attach(conv_word(ch, out_ch, 1, 1, 0));
    attach(relu_word(out_ch));
    attach(bn_word(out_ch));
    ch = out_ch;
  }

  bool can_pool() const { return h / 2 >= 2 && w / 2 >= 2; }

  void pool_cell(bool is_max) {
    attach(is_max ? maxpool_word(ch) : avgpool_word(ch));
    h /= 2;
    w /= 2;
  }

  void fc_cell(int out_dim) {
    attach(fc_word(ch * h * w, out_dim));
    attach(relu_word(out_dim));
    attach(bn_word(out_dim));
    ch = out_dim;
    h = w = 1;
  }

  void classifier(int classes) {
    attach(fc_word(ch * h * w, classes));
    attach(softmax_word(classes));
    ch = classes;
    h = w = 1;
  }
};

ComputationGraph generate_attempt(const GeneratorConfig& cfg, uint64_t seed,
                                  GenerationStats& stats) {
  Rng rng(seed);
  Builder b(cfg);

  int n_conv = static_cast<int>(rng.uniform_int(cfg.conv_count_min, cfg.conv_count_max));
  int n_fc = static_cast<int>(rng.uniform_int(cfg.fc_count_min, cfg.fc_count_max));
  stats.conv_cells = n_conv;
  stats.fc_cells = n_fc;

  for (int i = 0; i < n_conv; ++i) {
    int out_ch = rng.choice(cfg.conv_channel_choices);
    if (i == 0) {
      // The first cell is always a plain conv so the chain starts from the
      // raw input channels with a choice-set output width.
      b.conv_cell(out_ch);
      continue;
    }
    ++stats.eligible_cells;
    if (rng.bernoulli(cfg.block_substitution_prob)) {
      ++stats.block_cells;
      if (rng.bernoulli(0.5)) {
        b.residual_block();
      } else {
        b.separable_block(out_ch);
      }
      continue;
    }
    if (rng.bernoulli(cfg.pool_prob) && b.can_pool()) {
      ++stats.pool_cells;
      b.pool_cell(rng.bernoulli(0.5));
      continue;
    }
    b.conv_cell(out_ch);
  }

  for (int j = 0; j < n_fc; ++j) {
    b.fc_cell(rng.choice(cfg.fc_dim_choices));
  }
  b.classifier(cfg.output_classes);
  return std::move(b.g);
}

}  // namespace

ComputationGraph generate_random_dnn(const GeneratorConfig& config, uint64_t seed,
                                     GenerationStats* stats_out) {
  if (config.conv_count_min > config.conv_count_max || config.conv_count_min < 1 ||
      config.fc_count_min > config.fc_count_max || config.fc_count_min < 1 ||
      config.conv_channel_choices.empty() || config.fc_dim_choices.empty() ||
      config.block_substitution_prob < 0.0 || config.block_substitution_prob > 1.0 ||
      config.pool_prob < 0.0 || config.pool_prob > 1.0) {
    throw GeneratorError("generator: invalid configuration");
  }
  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    GenerationStats stats;
    stats.attempts = attempt + 1;
    ComputationGraph g =
        generate_attempt(config, derive_seed(seed, "gen-attempt", static_cast<uint64_t>(attempt)),
                         stats);
    ValidationReport report = validate_graph(g);
    if (!report.ok()) {
      throw GeneratorError("generator produced an invalid graph (internal defect)\n" +
                           report.summary());
    }
    if (encode_sequence(g).token_count(true) <= config.max_tokens) {
      if (stats_out) *stats_out = stats;
      return g;
    }
  }
  throw GeneratorError("generator: exceeded " + std::to_string(config.max_retries) +
                       " retries under the token budget");
}

namespace {

ComputationGraph build_vgg_like(const std::vector<int>& channels, const std::set<int>& pool_after,
                                const std::vector<int>& fc_dims) {
  GeneratorConfig cfg;  // default 3x32x32, 10 classes
  Builder b(cfg);
  for (size_t i = 0; i < channels.size(); ++i) {
    b.conv_cell(channels[i]);
    if (pool_after.count(static_cast<int>(i))) b.pool_cell(true);
  }
  for (int d : fc_dims) b.fc_cell(d);
  b.classifier(cfg.output_classes);
  return std::move(b.g);
}

ComputationGraph build_residual_chain(int blocks_per_stage) {
  GeneratorConfig cfg;
  Builder b(cfg);
  b.conv_cell(16);  // stem
  const int stage_ch[3] = {16, 32, 64};
  for (int s = 0; s < 3; ++s) {
    if (s > 0) {
      b.conv_cell(stage_ch[s]);  // transition to the wider stage
      b.pool_cell(true);
    }
    for (int k = 0; k < blocks_per_stage; ++k) b.residual_block();
  }
  b.pool_cell(false);  // trailing average pool
  b.classifier(cfg.output_classes);
  return std::move(b.g);
}

const std::vector<std::string> kBenchmarkNames = {"vgg11_like", "vgg13_like", "resnet20_like",
                                                  "resnet32_like"};

}  // namespace

const std::vector<std::string>& benchmark_names() { return kBenchmarkNames; }

ComputationGraph benchmark_graph(const std::string& name) {
  if (name == "vgg11_like") {
    return build_vgg_like({64, 128, 256, 256, 512, 512, 512, 512}, {0, 1, 3, 5, 7}, {512, 512});
  }
  if (name == "vgg13_like") {
    return build_vgg_like({64, 64, 128, 128, 256, 256, 512, 512, 512, 512}, {1, 3, 5, 7, 9},
                          {512, 512});
  }
  if (name == "resnet20_like") return build_residual_chain(1);
  if (name == "resnet32_like") return build_residual_chain(2);
  throw GeneratorError("unknown benchmark graph: " + name);
}

char dataset_role_letter(DatasetRole role) {
  switch (role) {
    case DatasetRole::kA: return 'A';
    case DatasetRole::kB: return 'B';
    case DatasetRole::kC: return 'C';
  }
  return '?';
}

std::string DatasetManifest::to_csv() const {
  std::string out = "id,seed,role,graph_path,n_words\n";
  for (const ManifestRow& r : rows) {
    out += r.id;
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += r.role;
    out += ',';
    out += r.graph_path;
    out += ',';
    out += std::to_string(r.n_words);
    out += '\n';
  }
  return out;
}

DatasetManifest DatasetManifest::from_csv(std::string_view text) {
  DatasetManifest m;
  size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = nl == std::string_view::npos ? text.substr(pos) : text.substr(pos, nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    ManifestRow row;
    std::vector<std::string_view> fields;
    size_t fp = 0;
    while (true) {
      size_t comma = line.find(',', fp);
      fields.push_back(comma == std::string_view::npos ? line.substr(fp)
                                                       : line.substr(fp, comma - fp));
      if (comma == std::string_view::npos) break;
      fp = comma + 1;
    }
    if (fields.size() != 5) throw GeneratorError("manifest: malformed row");
    row.id = std::string(fields[0]);
    std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), row.seed);
    row.role = fields[2].empty() ? '?' : fields[2][0];
    row.graph_path = std::string(fields[3]);
    std::from_chars(fields[4].data(), fields[4].data() + fields[4].size(), row.n_words);
    m.rows.push_back(std::move(row));
  }
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw GeneratorError("cannot open " + path + " for writing");
  out << to_csv();
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GeneratorError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_csv(ss.str());
}

DatasetManifest generate_dataset(DatasetRole role, int n, uint64_t seed,
                                 const std::string& out_dir, const GeneratorConfig& config,
                                 const std::vector<uint64_t>& explicit_seeds) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "graphs");

  DatasetManifest manifest;
  char letter = dataset_role_letter(role);

  if (role == DatasetRole::kC) {
    for (const std::string& name : benchmark_names()) {
      ComputationGraph g = benchmark_graph(name);
      std::string rel = "graphs/" + name + ".json";
      save_graph(g, (fs::path(out_dir) / rel).string());
      manifest.rows.push_back({name, 0, letter, rel, encode_sequence(g).size()});
    }
    manifest.save((fs::path(out_dir) / "manifest.csv").string());
    return manifest;
  }

  if (n < 1) throw GeneratorError("dataset: n must be at least 1");
  std::vector<uint64_t> seeds(static_cast<size_t>(n));
  if (!explicit_seeds.empty()) {
    if (explicit_seeds.size() != static_cast<size_t>(n)) {
      throw GeneratorError("dataset: explicit seed list length must equal n");
    }
    seeds = explicit_seeds;
  } else {
    for (int i = 0; i < n; ++i) {
      seeds[static_cast<size_t>(i)] = derive_seed(seed, "dataset", static_cast<uint64_t>(i));
    }
  }
  std::set<uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw GeneratorError("dataset: duplicate seeds rejected");

  std::vector<ComputationGraph> graphs(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    graphs[static_cast<size_t>(i)] = generate_random_dnn(config, seeds[static_cast<size_t>(i)]);
  }

  char buf[16];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%c%05d", letter, i);
    std::string id(buf);
    std::string rel = "graphs/" + id + ".json";
    save_graph(graphs[static_cast<size_t>(i)], (fs::path(out_dir) / rel).string());
    manifest.rows.push_back(
        {id, seeds[static_cast<size_t>(i)], letter, rel, encode_sequence(graphs[static_cast<size_t>(i)]).size()});
  }
  manifest.save((fs::path(out_dir) / "manifest.csv").string());
  return manifest;
}

}  // namespace obfrev
