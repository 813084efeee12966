#include "obfrev/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include "json.hpp"

namespace obfrev {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string id_list(const std::vector<int>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(ids[i]);
  }
  return out;
}

}  // namespace

int ComputationGraph::add_node(const LayerWord& word) {
  int id = max_id() + 1;
  nodes.push_back({id, word});
  return id;
}

const GraphNode* ComputationGraph::find(int id) const {
  for (const GraphNode& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

GraphNode* ComputationGraph::find(int id) {
  for (GraphNode& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

int ComputationGraph::max_id() const {
  int m = -1;
  for (const GraphNode& n : nodes) m = std::max(m, n.id);
  return m;
}

std::vector<int> ComputationGraph::producers(int id) const {
  std::vector<int> out;
  for (const auto& [from, to] : edges) {
    if (to == id) out.push_back(from);
  }
  return out;
}

std::vector<int> ComputationGraph::consumers(int id) const {
  std::vector<int> out;
  for (const auto& [from, to] : edges) {
    if (from == id) out.push_back(to);
  }
  return out;
}

std::vector<int> ComputationGraph::sources() const {
  std::set<int> has_in;
  for (const auto& [from, to] : edges) has_in.insert(to);
  std::vector<int> out;
  for (const GraphNode& n : nodes) {
    if (!has_in.count(n.id)) out.push_back(n.id);
  }
  return out;
}

std::vector<int> ComputationGraph::sinks() const {
  std::set<int> has_out;
  for (const auto& [from, to] : edges) has_out.insert(from);
  std::vector<int> out;
  for (const GraphNode& n : nodes) {
    if (!has_out.count(n.id)) out.push_back(n.id);
  }
  return out;
}

const char* violation_code_name(ViolationCode code) {
  switch (code) {
    case ViolationCode::kDuplicateNodeId: return "duplicate-node-id";
    case ViolationCode::kBadEdge: return "bad-edge";
    case ViolationCode::kCycle: return "cycle";
    case ViolationCode::kMultipleSources: return "multiple-sources";
    case ViolationCode::kMultipleSinks: return "multiple-sinks";
    case ViolationCode::kNoSource: return "no-source";
    case ViolationCode::kNoSink: return "no-sink";
    case ViolationCode::kDanglingNode: return "dangling-node";
    case ViolationCode::kChannelMismatch: return "channel-mismatch";
    case ViolationCode::kSpatialMismatch: return "spatial-mismatch";
    case ViolationCode::kEvenKernel: return "even-kernel";
    case ViolationCode::kNonPositiveDim: return "non-positive-dim";
    case ViolationCode::kSpatialUnderflow: return "spatial-underflow";
    case ViolationCode::kBadSliceGroup: return "bad-slice-group";
    case ViolationCode::kBadArity: return "bad-arity";
  }
  return "unknown";
}

std::string ValidationReport::summary() const {
  if (ok()) return "ok";
  std::string out;
  for (const Violation& v : violations) {
    out += violation_code_name(v.code);
    out += " [";
    out += id_list(v.nodes);
    out += "]: ";
    out += v.message;
    out += '\n';
  }
  return out;
}

std::vector<int> topological_order(const ComputationGraph& graph) {
  std::map<int, int> in_degree;
  std::map<int, std::vector<int>> out_edges;
  for (const GraphNode& n : graph.nodes) in_degree[n.id] = 0;
  for (const auto& [from, to] : graph.edges) {
    auto f = in_degree.find(from);
    auto t = in_degree.find(to);
    if (f == in_degree.end() || t == in_degree.end()) continue;
    ++t->second;
    out_edges[from].push_back(to);
  }
  std::priority_queue<int, std::vector<int>, std::greater<int>> ready;
  for (const auto& [id, deg] : in_degree) {
    if (deg == 0) ready.push(id);
  }
  std::vector<int> order;
  order.reserve(graph.nodes.size());
  while (!ready.empty()) {
    int id = ready.top();
    ready.pop();
    order.push_back(id);
    for (int next : out_edges[id]) {
      if (--in_degree[next] == 0) ready.push(next);
    }
  }
  return order;
}

namespace {

struct Propagator {
  const ComputationGraph& g;
  ValidationReport& report;
  ShapeMap shapes;
  // producer id -> partial readers in node-id order
  std::map<int, std::vector<int>> partial_readers;

  void violate(ViolationCode code, std::vector<int> nodes, std::string message) {
    report.violations.push_back({code, std::move(message), std::move(nodes)});
  }

  void check_word(const GraphNode& n) {
    const LayerWord& w = n.word;
    if (w.in_ch < 1 || w.out_ch < 1) {
      violate(ViolationCode::kNonPositiveDim, {n.id},
              std::string(op_kind_name(w.kind)) + " needs positive channel sizes");
      return;
    }
    if (kind_has_spatial_params(w.kind)) {
      if (w.kernel < 1 || w.stride < 1 || w.padding < 0) {
        violate(ViolationCode::kNonPositiveDim, {n.id},
                std::string(op_kind_name(w.kind)) + " needs kernel>=1, stride>=1, padding>=0");
      }
      if (w.kind == OpKind::kConv2d && w.kernel % 2 == 0) {
        violate(ViolationCode::kEvenKernel, {n.id},
                "conv2d kernel must be odd, got " + std::to_string(w.kernel));
      }
    }
    if (w.kind != OpKind::kConv2d && w.kind != OpKind::kFc && w.in_ch != w.out_ch) {
      violate(ViolationCode::kChannelMismatch, {n.id},
              std::string(op_kind_name(w.kind)) + " must preserve channel count");
    }
  }

  // Returns false when the node's shapes cannot be derived.
  bool visit(const GraphNode& n) {
    const LayerWord& w = n.word;
    std::vector<int> prods = g.producers(n.id);
    for (int p : prods) {
      if (!shapes.out_shape.count(p)) return false;  // producer failed earlier
    }

    TensorShape in;
    bool partial = false;
    if (prods.empty()) {
      in = TensorShape{g.input_shape[0], g.input_shape[1], g.input_shape[2], true};
      if (in.ch < 1 || in.h < 1 || in.w < 1) {
        violate(ViolationCode::kNonPositiveDim, {n.id}, "graph input shape must be positive");
        return false;
      }
    } else if (w.kind == OpKind::kAdd || w.kind == OpKind::kConcat) {
      if (prods.size() < 2) {
        violate(ViolationCode::kBadArity, {n.id},
                std::string(op_kind_name(w.kind)) + " needs at least two producers");
        return false;
      }
      TensorShape first = shapes.out_shape[prods[0]];
      int ch_sum = 0;
      for (int p : prods) {
        TensorShape s = shapes.out_shape[p];
        if (s.h != first.h || s.w != first.w || s.spatial != first.spatial) {
          violate(ViolationCode::kSpatialMismatch, {n.id, prods[0], p},
                  "merge inputs disagree on spatial shape");
          return false;
        }
        if (w.kind == OpKind::kAdd && s.ch != first.ch) {
          violate(ViolationCode::kChannelMismatch, {n.id, prods[0], p},
                  "add inputs have channel counts " + std::to_string(first.ch) + " and " +
                      std::to_string(s.ch));
          return false;
        }
        ch_sum += s.ch;
      }
      in = first;
      if (w.kind == OpKind::kConcat) in.ch = ch_sum;
    } else {
      if (prods.size() != 1) {
        violate(ViolationCode::kBadArity, {n.id},
                std::string(op_kind_name(w.kind)) + " needs exactly one producer, has " +
                    std::to_string(prods.size()));
        return false;
      }
      in = shapes.out_shape[prods[0]];
    }

    // Channel alignment against the declared in_ch.
    int available = in.ch;
    if (w.kind == OpKind::kFc) available = static_cast<int>(in.volume());  // implied flatten
    if (w.in_ch == available) {
      // full read
    } else if ((w.kind == OpKind::kConv2d || w.kind == OpKind::kFc) && w.in_ch < available &&
               prods.size() == 1) {
      partial = true;
      partial_readers[prods[0]].push_back(n.id);
    } else {
      std::vector<int> involved{n.id};
      if (!prods.empty()) involved.push_back(prods[0]);
      violate(ViolationCode::kChannelMismatch, involved,
              std::string(op_kind_name(w.kind)) + " declares in_ch " + std::to_string(w.in_ch) +
                  " but receives " + std::to_string(available));
      return false;
    }

    TensorShape out = in;
    switch (w.kind) {
      case OpKind::kConv2d:
      case OpKind::kMaxPool:
      case OpKind::kAvgPool: {
        if (w.kernel < 1 || w.stride < 1 || w.padding < 0) return false;
        int eh = in.h + 2 * w.padding;
        int ew = in.w + 2 * w.padding;
        if (eh < w.kernel || ew < w.kernel) {
          violate(ViolationCode::kSpatialUnderflow, {n.id},
                  "kernel " + std::to_string(w.kernel) + " exceeds padded input " +
                      std::to_string(eh) + "x" + std::to_string(ew));
          return false;
        }
        out.h = (eh - w.kernel) / w.stride + 1;
        out.w = (ew - w.kernel) / w.stride + 1;
        out.ch = w.out_ch;
        break;
      }
      case OpKind::kFc:
        out = TensorShape{w.out_ch, 1, 1, false};
        break;
      default:
        out.ch = w.out_ch;  // equals in_ch for these kinds (checked in check_word)
        break;
    }
    shapes.in_shape[n.id] = partial ? TensorShape{w.in_ch, in.h, in.w, in.spatial} : in;
    shapes.out_shape[n.id] = out;
    return true;
  }

  void resolve_partial_reads() {
    for (auto& [producer, readers] : partial_readers) {
      std::sort(readers.begin(), readers.end());
      int total = shapes.out_shape.count(producer)
                      ? (g.find(readers[0])->word.kind == OpKind::kFc
                             ? static_cast<int>(shapes.out_shape[producer].volume())
                             : shapes.out_shape[producer].ch)
                      : 0;
      int offset = 0;
      std::vector<int> group = readers;
      group.push_back(producer);
      bool bad = false;
      for (int r : readers) {
        shapes.slice_offset[r] = offset;
        offset += g.find(r)->word.in_ch;
        if (offset > total) bad = true;
      }
      if (bad || offset != total) {
        violate(ViolationCode::kChannelMismatch, group,
                "partial readers of node " + std::to_string(producer) + " cover " +
                    std::to_string(offset) + " of " + std::to_string(total) + " channels");
        for (int r : readers) shapes.slice_offset.erase(r);
      }
    }
  }
};

void structural_checks(const ComputationGraph& g, ValidationReport& report,
                       std::vector<int>* order_out) {
  std::set<int> seen;
  for (const GraphNode& n : g.nodes) {
    if (!seen.insert(n.id).second) {
      report.violations.push_back({ViolationCode::kDuplicateNodeId,
                                   "node id " + std::to_string(n.id) + " appears more than once",
                                   {n.id}});
    }
  }
  for (const auto& [from, to] : g.edges) {
    if (!seen.count(from) || !seen.count(to) || from == to) {
      report.violations.push_back({ViolationCode::kBadEdge,
                                   "edge " + std::to_string(from) + "->" + std::to_string(to) +
                                       " references a missing node or itself",
                                   {from, to}});
    }
  }
  if (g.nodes.empty()) return;  // empty graph: input wired to output

  std::vector<int> srcs = g.sources();
  std::vector<int> snks = g.sinks();
  if (srcs.empty()) {
    report.violations.push_back({ViolationCode::kNoSource, "no source node", {}});
  } else if (srcs.size() > 1) {
    report.violations.push_back(
        {ViolationCode::kMultipleSources, "graph must have exactly one source", srcs});
  }
  if (snks.empty()) {
    report.violations.push_back({ViolationCode::kNoSink, "no sink node", {}});
  } else if (snks.size() > 1) {
    report.violations.push_back(
        {ViolationCode::kMultipleSinks, "graph must have exactly one sink", snks});
  }

  std::vector<int> order = topological_order(g);
  if (order.size() != g.nodes.size()) {
    std::set<int> emitted(order.begin(), order.end());
    std::vector<int> cyclic;
    for (const GraphNode& n : g.nodes) {
      if (!emitted.count(n.id)) cyclic.push_back(n.id);
    }
    report.violations.push_back({ViolationCode::kCycle, "cycle among listed nodes", cyclic});
  }
  if (order_out) *order_out = order;

  // Dangling analysis only makes sense once source/sink are unambiguous.
  if (srcs.size() == 1 && snks.size() == 1 && order.size() == g.nodes.size()) {
    std::set<int> fwd{srcs[0]};
    for (int id : order) {
      if (fwd.count(id)) {
        for (int c : g.consumers(id)) fwd.insert(c);
      }
    }
    std::set<int> bwd{snks[0]};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if (bwd.count(*it)) {
        for (int p : g.producers(*it)) bwd.insert(p);
      }
    }
    for (const GraphNode& n : g.nodes) {
      if (!fwd.count(n.id) || !bwd.count(n.id)) {
        report.violations.push_back({ViolationCode::kDanglingNode,
                                     "node " + std::to_string(n.id) +
                                         " is not on a path from source to sink",
                                     {n.id}});
      }
    }
  }
}

}  // namespace

ValidationReport validate_graph(const ComputationGraph& graph) {
  ValidationReport report;
  propagate_shapes(graph, &report);
  return report;
}

std::optional<ShapeMap> propagate_shapes(const ComputationGraph& graph, ValidationReport* report) {
  ValidationReport local;
  ValidationReport& rep = report ? *report : local;

  std::vector<int> order;
  structural_checks(graph, rep, &order);

  Propagator prop{graph, rep, {}, {}};
  for (int id : order) {
    const GraphNode* n = graph.find(id);
    prop.check_word(*n);
    prop.visit(*n);
  }
  prop.resolve_partial_reads();

  if (!rep.ok()) return std::nullopt;
  return std::move(prop.shapes);
}

LayerSequence encode_sequence(const ComputationGraph& graph) {
  ValidationReport report = validate_graph(graph);
  if (!report.ok()) {
    throw GraphError("encode_sequence: invalid graph\n" + report.summary());
  }
  LayerSequence seq;
  seq.words.reserve(graph.nodes.size());
  for (int id : topological_order(graph)) {
    LayerWord w = graph.find(id)->word;
    w.canonicalize();
    seq.words.push_back(w);
  }
  return seq;
}

std::string graph_to_json(const ComputationGraph& graph) {
  ordered_json j;
  j["input_shape"] = {graph.input_shape[0], graph.input_shape[1], graph.input_shape[2]};
  j["classes"] = graph.output_classes;
  j["nodes"] = ordered_json::array();
  for (const GraphNode& n : graph.nodes) {
    ordered_json jn;
    jn["id"] = n.id;
    jn["kind"] = op_kind_name(n.word.kind);
    jn["in"] = n.word.in_ch;
    jn["out"] = n.word.out_ch;
    jn["k"] = n.word.kernel;
    jn["s"] = n.word.stride;
    jn["p"] = n.word.padding;
    j["nodes"].push_back(std::move(jn));
  }
  j["edges"] = ordered_json::array();
  for (const auto& [from, to] : graph.edges) {
    j["edges"].push_back({from, to});
  }
  return j.dump(1);
}

ComputationGraph graph_from_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw GraphError(std::string("graph JSON parse failure: ") + e.what());
  }
  try {
    ComputationGraph g;
    auto shape = j.at("input_shape");
    g.input_shape = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
    g.output_classes = j.at("classes").get<int>();
    for (const auto& jn : j.at("nodes")) {
      GraphNode n;
      n.id = jn.at("id").get<int>();
      auto kind = op_kind_from_name(jn.at("kind").get<std::string>());
      if (!kind) throw GraphError("unknown node kind " + jn.at("kind").get<std::string>());
      n.word.kind = *kind;
      n.word.in_ch = jn.at("in").get<int>();
      n.word.out_ch = jn.at("out").get<int>();
      n.word.kernel = jn.at("k").get<int>();
      n.word.stride = jn.at("s").get<int>();
      n.word.padding = jn.at("p").get<int>();
      g.nodes.push_back(n);
    }
    for (const auto& je : j.at("edges")) {
      g.edges.emplace_back(je.at(0).get<int>(), je.at(1).get<int>());
    }
    return g;
  } catch (const GraphError&) {
    throw;
  } catch (const std::exception& e) {
    throw GraphError(std::string("graph JSON missing or mistyped field: ") + e.what());
  }
}

void save_graph(const ComputationGraph& graph, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw GraphError("cannot open " + path + " for writing");
  out << graph_to_json(graph);
}

ComputationGraph load_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GraphError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return graph_from_json(ss.str());
}

}  // namespace obfrev
