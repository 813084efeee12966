#include "obfrev/passes.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "obfrev/ler.hpp"
#include "obfrev/rng.hpp"

namespace obfrev {

namespace {

[[noreturn]] void fail(int node, const std::string& what) {
  throw PassError("node " + std::to_string(node) + ": " + what);
}

GraphNode& need_node(ComputationGraph& g, int id) {
  GraphNode* n = g.find(id);
  if (!n) throw PassError("node " + std::to_string(id) + ": no such node");
  return *n;
}

void erase_node(ComputationGraph& g, int id) {
  g.nodes.erase(std::remove_if(g.nodes.begin(), g.nodes.end(),
                               [&](const GraphNode& n) { return n.id == id; }),
                g.nodes.end());
}

/// Walks from a conv2d/fc node through at most one bn to its activation.
std::optional<int> find_activation(const ComputationGraph& g, int node_id) {
  int cur = node_id;
  for (int hops = 0; hops < 2; ++hops) {
    std::vector<int> cons = g.consumers(cur);
    if (cons.size() != 1) return std::nullopt;
    const GraphNode* next = g.find(cons[0]);
    if (!next) return std::nullopt;
    if (next->word.kind == OpKind::kRelu || next->word.kind == OpKind::kIdentity) {
      return next->id;
    }
    if (next->word.kind == OpKind::kBn) {
      cur = next->id;
      continue;
    }
    return std::nullopt;
  }
  return std::nullopt;
}

/// Insertions attach after everything already hanging off the activation: an
/// existing zero-branch merge (add fed by conv+relu off the port) carries the
/// same value as the activation itself, so it becomes the new port.
int advance_port(const ComputationGraph& g, int activation_id) {
  int port = activation_id;
  bool advanced = true;
  while (advanced) {
    advanced = false;
    for (int cid : g.consumers(port)) {
      const GraphNode* a = g.find(cid);
      if (!a || a->word.kind != OpKind::kAdd) continue;
      std::vector<int> prods = g.producers(cid);
      if (prods.size() != 2) continue;
      if (prods[0] != port && prods[1] != port) continue;
      int other = prods[0] == port ? prods[1] : prods[0];
      const GraphNode* e = g.find(other);
      if (!e || e->word.kind != OpKind::kRelu) continue;
      std::vector<int> eprods = g.producers(other);
      if (eprods.size() != 1) continue;
      const GraphNode* z = g.find(eprods[0]);
      if (!z || z->word.kind != OpKind::kConv2d) continue;
      std::vector<int> zprods = g.producers(eprods[0]);
      if (zprods.size() == 1 && zprods[0] == port) {
        port = cid;
        advanced = true;
        break;
      }
    }
  }
  return port;
}

void rewire_outputs(ComputationGraph& g, int from_old, int from_new) {
  for (auto& e : g.edges) {
    if (e.first == from_old) e.first = from_new;
  }
}

void skip_at_port(ComputationGraph& g, ParamSet* params, int port_id) {
  const GraphNode& port = need_node(g, port_id);
  int ch = port.word.out_ch;
  if (g.consumers(port_id).empty()) fail(port_id, "activation feeds nothing to merge back into");

  int z = g.add_node(conv_word(ch, ch, 3, 1, 1));
  int e = g.add_node(relu_word(ch));
  int a = g.add_node(add_word(ch));
  rewire_outputs(g, port_id, a);
  g.add_edge(port_id, z);
  g.add_edge(z, e);
  g.add_edge(port_id, a);  // sigma(X) enters the merge first
  g.add_edge(e, a);

  if (params) {
    NodeParams p;
    p.weight.assign(static_cast<size_t>(ch) * ch * 9, 0.0);
    p.bias.assign(static_cast<size_t>(ch), 0.0);
    params->by_node.emplace(z, std::move(p));
  }
}

void deepen_at_port(ComputationGraph& g, ParamSet* params, int port_id, int kernel) {
  const GraphNode& port = need_node(g, port_id);
  int ch = port.word.out_ch;

  int d = g.add_node(conv_word(ch, ch, kernel, 1, (kernel - 1) / 2));
  int dr = g.add_node(relu_word(ch));
  rewire_outputs(g, port_id, dr);  // old consumers now read the inserted ReLU
  g.add_edge(port_id, d);
  g.add_edge(d, dr);

  if (params) {
    NodeParams p;
    p.weight.assign(static_cast<size_t>(ch) * ch * kernel * kernel, 0.0);
    for (int c = 0; c < ch; ++c) {
      size_t idx = ((static_cast<size_t>(c) * ch + c) * kernel + kernel / 2) * kernel + kernel / 2;
      p.weight[idx] = 1.0;
    }
    p.bias.assign(static_cast<size_t>(ch), 0.0);
    params->by_node.emplace(d, std::move(p));
  }
}

}  // namespace

void branch_layer(ComputationGraph& g, ParamSet* params, int node, BranchAxis axis) {
  GraphNode& n = need_node(g, node);
  const LayerWord w = n.word;
  if (w.kind != OpKind::kConv2d && w.kind != OpKind::kFc) {
    fail(node, std::string("cannot branch a ") + op_kind_name(w.kind) + " operator");
  }
  std::vector<int> prods = g.producers(node);
  if (prods.empty()) fail(node, "cannot branch the graph source");
  if (prods.size() != 1) fail(node, "branch target must have exactly one producer");
  int producer = prods[0];

  const bool is_conv = w.kind == OpKind::kConv2d;
  const int kk = is_conv ? w.kernel * w.kernel : 1;

  int u, v, m;
  if (axis == BranchAxis::kOutput) {
    if (w.out_ch < 2) fail(node, "output axis needs at least 2 channels to split");
    int j1 = w.out_ch / 2, j2 = w.out_ch - j1;
    LayerWord uw = w, vw = w;
    uw.out_ch = j1;
    vw.out_ch = j2;
    u = g.add_node(uw);
    v = g.add_node(vw);
    m = g.add_node(concat_word(w.out_ch));

    if (params) {
      auto it = params->by_node.find(node);
      if (it != params->by_node.end()) {
        const NodeParams& p = it->second;
        size_t row = static_cast<size_t>(w.in_ch) * kk;  // weights per output channel
        NodeParams pu, pv;
        pu.weight.assign(p.weight.begin(), p.weight.begin() + static_cast<int64_t>(j1 * row));
        pv.weight.assign(p.weight.begin() + static_cast<int64_t>(j1 * row), p.weight.end());
        pu.bias.assign(p.bias.begin(), p.bias.begin() + j1);
        pv.bias.assign(p.bias.begin() + j1, p.bias.end());
        params->by_node.erase(it);
        params->by_node.emplace(u, std::move(pu));
        params->by_node.emplace(v, std::move(pv));
      }
    }
  } else {
    if (w.in_ch < 2) fail(node, "input axis needs at least 2 channels to split");
    int c1 = w.in_ch / 2, c2 = w.in_ch - c1;
    LayerWord uw = w, vw = w;
    uw.in_ch = c1;
    vw.in_ch = c2;
    u = g.add_node(uw);
    v = g.add_node(vw);
    m = g.add_node(add_word(w.out_ch));

    if (params) {
      auto it = params->by_node.find(node);
      if (it != params->by_node.end()) {
        const NodeParams& p = it->second;
        NodeParams pu, pv;
        pu.weight.resize(static_cast<size_t>(w.out_ch) * c1 * kk);
        pv.weight.resize(static_cast<size_t>(w.out_ch) * c2 * kk);
        for (int oc = 0; oc < w.out_ch; ++oc) {
          const double* src = p.weight.data() + static_cast<size_t>(oc) * w.in_ch * kk;
          std::copy_n(src, static_cast<size_t>(c1) * kk,
                      pu.weight.data() + static_cast<size_t>(oc) * c1 * kk);
          std::copy_n(src + static_cast<size_t>(c1) * kk, static_cast<size_t>(c2) * kk,
                      pv.weight.data() + static_cast<size_t>(oc) * c2 * kk);
        }
        pu.bias = p.bias;  // the first sibling carries the bias
        pv.bias.assign(static_cast<size_t>(w.out_ch), 0.0);
        params->by_node.erase(it);
        params->by_node.emplace(u, std::move(pu));
        params->by_node.emplace(v, std::move(pv));
      }
    }
  }

  // The merge takes the target's place in front of its consumers; the edge
  // from the producer is re-pointed at the siblings.
  rewire_outputs(g, node, m);
  g.edges.erase(std::remove(g.edges.begin(), g.edges.end(), std::pair<int, int>{producer, node}),
                g.edges.end());
  erase_node(g, node);
  g.add_edge(producer, u);
  g.add_edge(producer, v);
  g.add_edge(u, m);
  g.add_edge(v, m);
}

void skip_layer(ComputationGraph& g, ParamSet* params, int node) {
  const GraphNode& n = need_node(g, node);
  if (n.word.kind != OpKind::kConv2d) {
    fail(node, "layer skipping requires a conv2d activation output");
  }
  std::optional<int> act = find_activation(g, node);
  if (!act || g.find(*act)->word.kind != OpKind::kRelu) {
    fail(node, "no ReLU activation at the insertion point");
  }
  skip_at_port(g, params, advance_port(g, *act));
}

void deepen_layer(ComputationGraph& g, ParamSet* params, int node, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    fail(node, "deepening kernel must be odd, got " + std::to_string(kernel));
  }
  const GraphNode& n = need_node(g, node);
  if (n.word.kind != OpKind::kConv2d) {
    fail(node, "layer deepening requires a conv2d target");
  }
  std::optional<int> act = find_activation(g, node);
  if (!act) fail(node, "no qualifying activation (ReLU or identity) after the target");
  deepen_at_port(g, params, advance_port(g, *act), kernel);
}

std::vector<int> plan_targets(const ComputationGraph& g) {
  std::vector<int> ids;
  for (const GraphNode& n : g.nodes) {
    if (n.word.kind == OpKind::kConv2d || n.word.kind == OpKind::kFc) ids.push_back(n.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

ObfuscationPlan sample_random_plan(const ComputationGraph& g, uint64_t seed) {
  ObfuscationPlan plan;
  plan.seed = seed;
  Rng rng(seed);
  for (int id : plan_targets(g)) {
    PlanEntry e;
    e.node = id;
    if (rng.bernoulli(0.5)) {
      e.branch = rng.bernoulli(0.5) ? BranchChoice::kOutput : BranchChoice::kInput;
    }
    e.skip = rng.bernoulli(0.5);
    e.deepen = rng.bernoulli(0.5);
    plan.entries.push_back(e);
  }
  return plan;
}

ApplyStats apply_plan(ComputationGraph& g, ParamSet* params, const ObfuscationPlan& plan) {
  ApplyStats stats;
  auto note = [&](int node, const char* op, const std::string& why) {
    stats.skipped.push_back(std::string(op) + " @ node " + std::to_string(node) + ": " + why);
  };

  for (const PlanEntry& e : plan.entries) {
    const GraphNode* n = g.find(e.node);
    if (!n) {
      note(e.node, "entry", "no such node");
      continue;
    }
    const bool is_conv = n->word.kind == OpKind::kConv2d;

    // The activation survives branching, so resolve it up front.
    std::optional<int> act = is_conv ? find_activation(g, e.node) : std::nullopt;

    if (e.branch != BranchChoice::kNone) {
      try {
        branch_layer(g, params, e.node,
                     e.branch == BranchChoice::kOutput ? BranchAxis::kOutput : BranchAxis::kInput);
        ++stats.applied;
      } catch (const PassError& err) {
        note(e.node, "branch", err.what());
      }
    }
    if (e.skip) {
      if (is_conv && act && g.find(*act) && g.find(*act)->word.kind == OpKind::kRelu) {
        skip_at_port(g, params, advance_port(g, *act));
        ++stats.applied;
      } else {
        note(e.node, "skip", "no ReLU activation at the insertion point");
      }
    }
    if (e.deepen) {
      if (is_conv && act && g.find(*act)) {
        deepen_at_port(g, params, advance_port(g, *act), 3);
        ++stats.applied;
      } else {
        note(e.node, "deepen", "no qualifying activation after the target");
      }
    }
  }
  return stats;
}

std::string ObfuscationPlan::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["entries"] = nlohmann::ordered_json::array();
  for (const PlanEntry& e : entries) {
    nlohmann::ordered_json je;
    je["node"] = e.node;
    je["branch"] = e.branch == BranchChoice::kNone     ? "none"
                   : e.branch == BranchChoice::kOutput ? "output"
                                                       : "input";
    je["skip"] = e.skip;
    je["deepen"] = e.deepen;
    j["entries"].push_back(std::move(je));
  }
  return j.dump(1);
}

ObfuscationPlan ObfuscationPlan::from_json(std::string_view text) {
  ObfuscationPlan plan;
  nlohmann::json j = nlohmann::json::parse(text);
  plan.seed = j.at("seed").get<uint64_t>();
  for (const auto& je : j.at("entries")) {
    PlanEntry e;
    e.node = je.at("node").get<int>();
    std::string b = je.at("branch").get<std::string>();
    if (b == "none") e.branch = BranchChoice::kNone;
    else if (b == "output") e.branch = BranchChoice::kOutput;
    else if (b == "input") e.branch = BranchChoice::kInput;
    else throw PassError("plan: unknown branch choice " + b);
    e.skip = je.at("skip").get<bool>();
    e.deepen = je.at("deepen").get<bool>();
    plan.entries.push_back(e);
  }
  return plan;
}

void ObfuscationPlan::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PassError("cannot open " + path + " for writing");
  out << to_json();
}

ObfuscationPlan ObfuscationPlan::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PassError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string ObfuscationReport::to_csv() const {
  std::string out = "candidate,ler,latency_ratio,chosen\n";
  for (const CandidateScore& c : candidates) {
    out += std::to_string(c.index);
    out += ',';
    out += std::to_string(c.ler);
    out += ',';
    out += std::to_string(c.latency_ratio);
    out += ',';
    out += c.chosen ? '1' : '0';
    out += '\n';
  }
  return out;
}

SequenceExtractor per_graph_extractor(std::function<LayerSequence(const ComputationGraph&)> fn) {
  return [fn = std::move(fn)](const std::vector<ComputationGraph>& graphs) {
    std::vector<LayerSequence> out;
    out.reserve(graphs.size());
    for (const ComputationGraph& g : graphs) out.push_back(fn(g));
    return out;
  };
}

namespace {

struct Evaluated {
  ComputationGraph graph;
  double ler_score = -1.0;
  double latency_ratio = 0.0;
  bool feasible = false;
};

std::vector<Evaluated> evaluate_plans(const ComputationGraph& original,
                                      const LayerSequence& original_seq, double original_latency,
                                      const std::vector<ObfuscationPlan>& plans,
                                      const SequenceExtractor& extract,
                                      const LatencyModel& latency, size_t max_tokens) {
  std::vector<Evaluated> evals(plans.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < plans.size(); ++i) {
    Evaluated& ev = evals[i];
    ev.graph = original;
    apply_plan(ev.graph, nullptr, plans[i]);
    if (!validate_graph(ev.graph).ok()) continue;
    if (encode_sequence(ev.graph).token_count(true) > max_tokens) continue;
    ev.feasible = true;
    ev.latency_ratio = latency(ev.graph) / original_latency;
  }

  std::vector<ComputationGraph> feasible;
  std::vector<size_t> where;
  for (size_t i = 0; i < evals.size(); ++i) {
    if (evals[i].feasible) {
      feasible.push_back(evals[i].graph);
      where.push_back(i);
    }
  }
  if (!feasible.empty()) {
    std::vector<LayerSequence> extracted = extract(feasible);
    if (extracted.size() != feasible.size()) {
      throw PassError("extractor returned a mismatched batch");
    }
    for (size_t k = 0; k < where.size(); ++k) {
      evals[where[k]].ler_score = ler(extracted[k], original_seq);
    }
  }
  return evals;
}

}  // namespace

ObfuscationOutcome redlock_obfuscate(const ComputationGraph& graph, uint64_t seed,
                                     const SequenceExtractor& extract,
                                     const LatencyModel& latency, const RedlockConfig& config) {
  if (config.trials < 1) throw PassError("redlock: needs at least one trial");
  ValidationReport vr = validate_graph(graph);
  if (!vr.ok()) throw PassError("redlock: invalid input graph\n" + vr.summary());

  LayerSequence original_seq = encode_sequence(graph);
  double original_latency = latency(graph);

  std::vector<ObfuscationPlan> plans(static_cast<size_t>(config.trials));
  for (int i = 0; i < config.trials; ++i) {
    plans[static_cast<size_t>(i)] =
        sample_random_plan(graph, derive_seed(seed, "redlock-candidate", static_cast<uint64_t>(i)));
  }

  std::vector<Evaluated> evals = evaluate_plans(graph, original_seq, original_latency, plans,
                                                extract, latency, config.max_tokens);

  ObfuscationOutcome out;
  out.report.chosen_index = -1;
  double best = -1.0;
  for (size_t i = 0; i < evals.size(); ++i) {
    CandidateScore score;
    score.index = static_cast<int>(i);
    score.ler = evals[i].ler_score;
    score.latency_ratio = evals[i].latency_ratio;
    score.fitness = evals[i].ler_score;
    score.feasible = evals[i].feasible;
    out.report.candidates.push_back(score);
    if (evals[i].feasible && evals[i].ler_score > best) {
      best = evals[i].ler_score;
      out.report.chosen_index = static_cast<int>(i);
    }
  }
  if (out.report.chosen_index < 0) {
    // Nothing fits the token budget; the graph is left unobfuscated rather
    // than shipping a sequence the downstream 500-token pipeline cannot eat.
    out.graph = graph;
    out.plan.seed = seed;
    for (int t : plan_targets(graph)) {
      out.plan.entries.push_back(PlanEntry{t, BranchChoice::kNone, false, false});
    }
    return out;
  }
  out.report.candidates[static_cast<size_t>(out.report.chosen_index)].chosen = true;
  out.plan = plans[static_cast<size_t>(out.report.chosen_index)];
  out.graph = std::move(evals[static_cast<size_t>(out.report.chosen_index)].graph);
  return out;
}

namespace {

PlanEntry random_entry(Rng& rng, int node) {
  PlanEntry e;
  e.node = node;
  if (rng.bernoulli(0.5)) {
    e.branch = rng.bernoulli(0.5) ? BranchChoice::kOutput : BranchChoice::kInput;
  }
  e.skip = rng.bernoulli(0.5);
  e.deepen = rng.bernoulli(0.5);
  return e;
}

}  // namespace

ObfuscationOutcome ea_obfuscate(const ComputationGraph& graph, uint64_t seed,
                                const SequenceExtractor& extract, const LatencyModel& latency,
                                const EaConfig& config) {
  if (config.population < 2) throw PassError("ea: population must be at least 2");
  if (config.generations < 1) throw PassError("ea: needs at least one generation");
  ValidationReport vr = validate_graph(graph);
  if (!vr.ok()) throw PassError("ea: invalid input graph\n" + vr.summary());

  LayerSequence original_seq = encode_sequence(graph);
  double original_latency = latency(graph);
  std::vector<int> targets = plan_targets(graph);
  const size_t pop = static_cast<size_t>(config.population);

  Rng rng(derive_seed(seed, "ea"));
  std::vector<ObfuscationPlan> population(pop);
  population[0].seed = seed;  // the empty plan: one entry per target, all off
  for (int t : targets) population[0].entries.push_back(PlanEntry{t, BranchChoice::kNone, false, false});
  for (size_t i = 1; i < pop; ++i) {
    population[i] = sample_random_plan(graph, derive_seed(seed, "ea-init", i));
  }

  constexpr double kInfeasible = -1e18;
  ObfuscationOutcome out;
  double best_fitness = kInfeasible;

  std::vector<double> fitness(pop);
  for (int gen = 0; gen < config.generations; ++gen) {
    std::vector<Evaluated> evals = evaluate_plans(graph, original_seq, original_latency,
                                                  population, extract, latency, config.max_tokens);
    for (size_t i = 0; i < pop; ++i) {
      fitness[i] =
          evals[i].feasible
              ? evals[i].ler_score -
                    config.lambda * std::max(0.0, evals[i].latency_ratio - config.latency_budget)
              : kInfeasible;
    }

    for (size_t i = 0; i < pop; ++i) {
      CandidateScore score;
      score.index = gen * config.population + static_cast<int>(i);
      score.ler = evals[i].ler_score;
      score.latency_ratio = evals[i].latency_ratio;
      score.fitness = fitness[i];
      score.feasible = evals[i].feasible;
      out.report.candidates.push_back(score);
      if (fitness[i] > best_fitness) {
        best_fitness = fitness[i];
        out.report.chosen_index = score.index;
        out.plan = population[i];
        out.graph = evals[i].graph;
      }
    }
    out.report.best_fitness_per_generation.push_back(best_fitness);

    if (gen + 1 == config.generations) break;

    // Elitist selection then tournament-2 parents, single-point crossover,
    // per-gene-field mutation.
    std::vector<size_t> order(pop);
    for (size_t i = 0; i < pop; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (fitness[a] != fitness[b]) return fitness[a] > fitness[b];
      return a < b;
    });

    std::vector<ObfuscationPlan> next;
    next.reserve(pop);
    for (int e = 0; e < config.elitism && e < static_cast<int>(pop); ++e) {
      next.push_back(population[order[static_cast<size_t>(e)]]);
    }
    auto tournament = [&]() -> const ObfuscationPlan& {
      size_t a = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pop) - 1));
      size_t b = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pop) - 1));
      if (fitness[a] != fitness[b]) return population[fitness[a] > fitness[b] ? a : b];
      return population[std::min(a, b)];
    };
    while (next.size() < pop) {
      const ObfuscationPlan& p1 = tournament();
      const ObfuscationPlan& p2 = tournament();
      ObfuscationPlan child;
      child.seed = seed;
      size_t cut = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(targets.size())));
      for (size_t t = 0; t < targets.size(); ++t) {
        child.entries.push_back(t < cut ? p1.entries[t] : p2.entries[t]);
      }
      for (PlanEntry& e : child.entries) {
        if (rng.bernoulli(config.mutation_rate)) {
          int64_t pick = rng.uniform_int(0, 2);
          e.branch = pick == 0 ? BranchChoice::kNone
                               : (pick == 1 ? BranchChoice::kOutput : BranchChoice::kInput);
        }
        if (rng.bernoulli(config.mutation_rate)) e.skip = rng.bernoulli(0.5);
        if (rng.bernoulli(config.mutation_rate)) e.deepen = rng.bernoulli(0.5);
      }
      next.push_back(std::move(child));
    }
    population = std::move(next);
  }

  if (out.report.chosen_index < 0 || best_fitness == kInfeasible) {
    throw PassError("ea: no feasible candidate under the token budget");
  }
  for (CandidateScore& c : out.report.candidates) {
    c.chosen = c.index == out.report.chosen_index;
  }
  return out;
}

}  // namespace obfrev
