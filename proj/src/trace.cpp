#include "obfrev/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "obfrev/io.hpp"
#include "obfrev/rng.hpp"

namespace obfrev {

namespace {

int64_t weight_elements(const LayerWord& w) {
  switch (w.kind) {
    case OpKind::kConv2d:
      return static_cast<int64_t>(w.out_ch) * w.in_ch * w.kernel * w.kernel + w.out_ch;
    case OpKind::kFc:
      return static_cast<int64_t>(w.out_ch) * w.in_ch + w.out_ch;
    case OpKind::kBn:
      return 4ll * w.out_ch;
    default:
      return 0;
  }
}

}  // namespace

int64_t effective_ops(const LayerWord& w, const TensorShape& in, const TensorShape& out,
                      int64_t read_elements) {
  switch (w.kind) {
    case OpKind::kConv2d:
      return static_cast<int64_t>(out.h) * out.w * w.out_ch * w.in_ch * w.kernel * w.kernel;
    case OpKind::kFc:
      return static_cast<int64_t>(w.in_ch) * w.out_ch;
    case OpKind::kBn:
      return 4 * out.volume();
    case OpKind::kSoftmax:
      return 8 * out.volume();
    case OpKind::kMaxPool:
      return out.volume() * w.kernel * w.kernel;
    case OpKind::kAvgPool:
      return out.volume() * (w.kernel * w.kernel + 1);
    case OpKind::kAdd:
      return read_elements;  // one accumulation per element read
    case OpKind::kRelu:
    case OpKind::kConcat:
    case OpKind::kIdentity:
      return out.volume();
  }
  (void)in;
  return out.volume();
}

RuntimeTrace simulate_trace(const ComputationGraph& graph, const CostModelConfig& config) {
  ValidationReport report;
  auto shapes = propagate_shapes(graph, &report);
  if (!shapes) throw TraceError("simulate_trace: invalid graph\n" + report.summary());

  RuntimeTrace trace;
  int step = 0;
  for (int id : topological_order(graph)) {
    const GraphNode& n = *graph.find(id);
    LayerWord w = n.word;
    w.canonicalize();

    const TensorShape& out = shapes->out_shape.at(id);
    const TensorShape& in = shapes->in_shape.at(id);

    // Elements actually read: every producer's full output, except that a
    // channel-slice consumer only reads its slice.
    int64_t read_elements = 0;
    std::vector<int> prods = graph.producers(id);
    if (prods.empty()) {
      read_elements = TensorShape{graph.input_shape[0], graph.input_shape[1], graph.input_shape[2],
                                  true}
                          .volume();
    } else if (shapes->slice_offset.count(id)) {
      read_elements = in.volume();
    } else {
      for (int p : prods) read_elements += shapes->out_shape.at(p).volume();
    }

    int64_t ops = effective_ops(w, in, out, read_elements);
    int64_t weights = weight_elements(w);

    double working_set = config.bytes_per_element *
                         static_cast<double>(read_elements + out.volume() + weights);
    double hit = config.cache_capacity / (config.cache_capacity + working_set);
    hit = std::clamp(hit, 0.0, 1.0);

    TraceRow row;
    row.step = step;
    row.cycles = config.launch_overhead + config.cycles_per_mac * static_cast<double>(ops);
    row.dram_reads =
        config.bytes_per_element * static_cast<double>(read_elements + weights) * (1.0 - hit);
    row.dram_writes = config.bytes_per_element * static_cast<double>(out.volume());
    row.cache_hit_rate = hit;

    Rng noise(derive_seed(config.seed, "trace-noise", static_cast<uint64_t>(step)));
    row.cycles *= std::exp(noise.normal(0.0, config.sigma));
    row.dram_reads *= std::exp(noise.normal(0.0, config.sigma));
    row.dram_writes *= std::exp(noise.normal(0.0, config.sigma));

    trace.rows.push_back(row);
    trace.labels.push_back(w);
    ++step;
  }
  return trace;
}

double latency_of(const RuntimeTrace& trace) {
  if (trace.rows.empty()) throw TraceError("latency_of: empty trace");
  double total = 0.0;
  for (const TraceRow& r : trace.rows) total += r.cycles;
  return total;
}

std::string trace_to_csv(const RuntimeTrace& trace) {
  std::string out = "step,cycles,dram_reads,dram_writes,cache_hit_rate\n";
  for (const TraceRow& r : trace.rows) {
    out += std::to_string(r.step);
    out += ',';
    out += fmt_double(r.cycles);
    out += ',';
    out += fmt_double(r.dram_reads);
    out += ',';
    out += fmt_double(r.dram_writes);
    out += ',';
    out += fmt_double(r.cache_hit_rate);
    out += '\n';
  }
  return out;
}

std::string labels_to_csv(const RuntimeTrace& trace) {
  std::string out = "step,kind,in_ch,out_ch,k,s,p\n";
  for (size_t i = 0; i < trace.labels.size(); ++i) {
    const LayerWord& w = trace.labels[i];
    out += std::to_string(i);
    out += ',';
    out += op_kind_name(w.kind);
    for (int v : {w.in_ch, w.out_ch, w.kernel, w.stride, w.padding}) {
      out += ',';
      out += std::to_string(v);
    }
    out += '\n';
  }
  return out;
}

RuntimeTrace trace_from_csv(std::string_view trace_csv, std::string_view labels_csv) {
  RuntimeTrace trace;
  bool header = true;
  for (std::string_view line : split_lines(trace_csv)) {
    if (header) {
      header = false;
      continue;
    }
    auto f = split_line(line, ',');
    if (f.size() != 5) throw TraceError("trace csv: malformed row");
    TraceRow r;
    r.step = static_cast<int>(parse_double(f[0]));
    r.cycles = parse_double(f[1]);
    r.dram_reads = parse_double(f[2]);
    r.dram_writes = parse_double(f[3]);
    r.cache_hit_rate = parse_double(f[4]);
    trace.rows.push_back(r);
  }
  if (!labels_csv.empty()) {
    header = true;
    for (std::string_view line : split_lines(labels_csv)) {
      if (header) {
        header = false;
        continue;
      }
      auto f = split_line(line, ',');
      if (f.size() != 7) throw TraceError("labels csv: malformed row");
      auto kind = op_kind_from_name(f[1]);
      if (!kind) throw TraceError("labels csv: unknown kind " + std::string(f[1]));
      LayerWord w;
      w.kind = *kind;
      w.in_ch = static_cast<int>(parse_double(f[2]));
      w.out_ch = static_cast<int>(parse_double(f[3]));
      w.kernel = static_cast<int>(parse_double(f[4]));
      w.stride = static_cast<int>(parse_double(f[5]));
      w.padding = static_cast<int>(parse_double(f[6]));
      trace.labels.push_back(w);
    }
    if (trace.labels.size() != trace.rows.size()) {
      throw TraceError("labels csv: row count does not match the trace");
    }
  }
  return trace;
}

void save_trace(const RuntimeTrace& trace, const std::string& trace_path,
                const std::string& labels_path) {
  write_file(trace_path, trace_to_csv(trace));
  if (!labels_path.empty()) write_file(labels_path, labels_to_csv(trace));
}

RuntimeTrace load_trace(const std::string& trace_path, const std::string& labels_path) {
  return trace_from_csv(read_file(trace_path),
                        labels_path.empty() ? std::string() : read_file(labels_path));
}

}  // namespace obfrev
