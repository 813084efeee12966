#include "obfrev/interp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "obfrev/rng.hpp"

namespace obfrev {

namespace {

[[noreturn]] void fail(int node, const std::string& what) {
  throw ForwardError("node " + std::to_string(node) + ": " + what);
}

const NodeParams& params_for(const ParamSet& params, int node) {
  auto it = params.by_node.find(node);
  if (it == params.by_node.end()) fail(node, "missing parameters");
  return it->second;
}

void check_size(int node, const std::vector<double>& v, size_t expected, const char* what) {
  if (v.size() != expected) {
    fail(node, std::string(what) + " has " + std::to_string(v.size()) + " values, expected " +
                   std::to_string(expected));
  }
}

Tensor conv2d(int node, const LayerWord& w, const Tensor& x, const NodeParams& p,
              TensorShape out_shape) {
  const int C = x.shape.ch, H = x.shape.h, W = x.shape.w;
  const int K = w.kernel, S = w.stride, P = w.padding;
  check_size(node, p.weight, static_cast<size_t>(w.out_ch) * C * K * K, "conv weight");
  check_size(node, p.bias, static_cast<size_t>(w.out_ch), "conv bias");

  Tensor y(out_shape);
  const double* wp = p.weight.data();
  const double* xp = x.data.data();
  for (int oc = 0; oc < w.out_ch; ++oc) {
    for (int oy = 0; oy < out_shape.h; ++oy) {
      for (int ox = 0; ox < out_shape.w; ++ox) {
        double acc = p.bias[static_cast<size_t>(oc)];
        for (int ic = 0; ic < C; ++ic) {
          const double* wrow = wp + ((static_cast<size_t>(oc) * C + ic) * K) * K;
          const double* xch = xp + static_cast<size_t>(ic) * H * W;
          for (int ky = 0; ky < K; ++ky) {
            int iy = oy * S + ky - P;
            if (iy < 0 || iy >= H) continue;
            const double* xrow = xch + static_cast<size_t>(iy) * W;
            const double* wk = wrow + static_cast<size_t>(ky) * K;
            for (int kx = 0; kx < K; ++kx) {
              int ix = ox * S + kx - P;
              if (ix < 0 || ix >= W) continue;
              acc += wk[kx] * xrow[ix];
            }
          }
        }
        y.at(oc, oy, ox) = acc;
      }
    }
  }
  return y;
}

Tensor fully_connected(int node, const LayerWord& w, const Tensor& x, const NodeParams& p) {
  check_size(node, p.weight, static_cast<size_t>(w.out_ch) * w.in_ch, "fc weight");
  check_size(node, p.bias, static_cast<size_t>(w.out_ch), "fc bias");
  if (static_cast<int64_t>(x.data.size()) != w.in_ch) {
    fail(node, "fc input has " + std::to_string(x.data.size()) + " features, expected " +
                   std::to_string(w.in_ch));
  }
  Tensor y(TensorShape{w.out_ch, 1, 1, false});
  for (int o = 0; o < w.out_ch; ++o) {
    double acc = p.bias[static_cast<size_t>(o)];
    const double* row = p.weight.data() + static_cast<size_t>(o) * w.in_ch;
    for (int i = 0; i < w.in_ch; ++i) acc += row[i] * x.data[static_cast<size_t>(i)];
    y.data[static_cast<size_t>(o)] = acc;
  }
  return y;
}

Tensor batch_norm(int node, const Tensor& x, const NodeParams& p) {
  const int C = x.shape.ch;
  check_size(node, p.bn_scale, static_cast<size_t>(C), "bn scale");
  check_size(node, p.bn_shift, static_cast<size_t>(C), "bn shift");
  check_size(node, p.bn_mean, static_cast<size_t>(C), "bn mean");
  check_size(node, p.bn_var, static_cast<size_t>(C), "bn var");
  Tensor y(x.shape);
  const int plane = x.shape.h * x.shape.w;
  for (int c = 0; c < C; ++c) {
    double var = p.bn_var[static_cast<size_t>(c)];
    if (!(var > 0.0)) fail(node, "bn variance must be strictly positive");
    double t = p.bn_scale[static_cast<size_t>(c)] / std::sqrt(var + kBnEpsilon);
    double mean = p.bn_mean[static_cast<size_t>(c)];
    double shift = p.bn_shift[static_cast<size_t>(c)];
    const double* src = x.data.data() + static_cast<size_t>(c) * plane;
    double* dst = y.data.data() + static_cast<size_t>(c) * plane;
    for (int i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * t + shift;
  }
  return y;
}

Tensor pool(const LayerWord& w, const Tensor& x, TensorShape out_shape, bool is_max) {
  Tensor y(out_shape);
  const int K = w.kernel, S = w.stride, P = w.padding;
  for (int c = 0; c < out_shape.ch; ++c) {
    for (int oy = 0; oy < out_shape.h; ++oy) {
      for (int ox = 0; ox < out_shape.w; ++ox) {
        if (is_max) {
          double best = -std::numeric_limits<double>::infinity();
          for (int ky = 0; ky < K; ++ky) {
            int iy = oy * S + ky - P;
            if (iy < 0 || iy >= x.shape.h) continue;
            for (int kx = 0; kx < K; ++kx) {
              int ix = ox * S + kx - P;
              if (ix < 0 || ix >= x.shape.w) continue;
              best = std::max(best, x.at(c, iy, ix));
            }
          }
          y.at(c, oy, ox) = best;
        } else {
          // Average over the full window; out-of-bounds taps contribute zero.
          double sum = 0.0;
          for (int ky = 0; ky < K; ++ky) {
            int iy = oy * S + ky - P;
            if (iy < 0 || iy >= x.shape.h) continue;
            for (int kx = 0; kx < K; ++kx) {
              int ix = ox * S + kx - P;
              if (ix < 0 || ix >= x.shape.w) continue;
              sum += x.at(c, iy, ix);
            }
          }
          y.at(c, oy, ox) = sum / (K * K);
        }
      }
    }
  }
  return y;
}

Tensor softmax(const Tensor& x) {
  Tensor y(x.shape);
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x.data) mx = std::max(mx, v);
  double sum = 0.0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    y.data[i] = std::exp(x.data[i] - mx);
    sum += y.data[i];
  }
  for (double& v : y.data) v /= sum;
  return y;
}

}  // namespace

Tensor forward(const ComputationGraph& graph, const ParamSet& params, const Tensor& input) {
  ValidationReport report;
  auto shapes = propagate_shapes(graph, &report);
  if (!shapes) throw ForwardError("invalid graph\n" + report.summary());

  TensorShape expect{graph.input_shape[0], graph.input_shape[1], graph.input_shape[2], true};
  if (!(input.shape == expect)) {
    throw ForwardError("input shape does not match the graph input shape");
  }
  if (static_cast<int64_t>(input.data.size()) != expect.volume()) {
    throw ForwardError("input data length does not match its shape");
  }
  if (graph.nodes.empty()) return input;  // input wired to output

  std::unordered_map<int, Tensor> values;
  values.reserve(graph.nodes.size());
  int last = -1;
  for (int id : topological_order(graph)) {
    const GraphNode& n = *graph.find(id);
    const LayerWord& w = n.word;
    std::vector<int> prods = graph.producers(id);

    // Assemble this node's input.
    Tensor in;
    if (prods.empty()) {
      in = input;
    } else if (w.kind == OpKind::kAdd) {
      in = values.at(prods[0]);
      for (size_t i = 1; i < prods.size(); ++i) {
        const Tensor& t = values.at(prods[i]);
        for (size_t j = 0; j < in.data.size(); ++j) in.data[j] += t.data[j];
      }
    } else if (w.kind == OpKind::kConcat) {
      TensorShape s = values.at(prods[0]).shape;
      s.ch = w.out_ch;
      in = Tensor(s);
      size_t off = 0;
      for (int p : prods) {
        const Tensor& t = values.at(p);
        std::copy(t.data.begin(), t.data.end(), in.data.begin() + static_cast<int64_t>(off));
        off += t.data.size();
      }
    } else {
      const Tensor& t = values.at(prods[0]);
      auto slice = shapes->slice_offset.find(id);
      if (slice == shapes->slice_offset.end()) {
        in = t;
      } else if (w.kind == OpKind::kFc) {
        // Feature-range slice of the (implicitly flattened) producer.
        in = Tensor(TensorShape{w.in_ch, 1, 1, false});
        std::copy_n(t.data.begin() + slice->second, w.in_ch, in.data.begin());
      } else {
        // Channel-range slice.
        TensorShape s = t.shape;
        s.ch = w.in_ch;
        in = Tensor(s);
        size_t plane = static_cast<size_t>(t.shape.h) * t.shape.w;
        std::copy_n(t.data.begin() + static_cast<int64_t>(slice->second * plane),
                    static_cast<size_t>(w.in_ch) * plane, in.data.begin());
      }
    }

    // Flatten in front of fc layers.
    if (w.kind == OpKind::kFc && in.shape.spatial) {
      in.shape = TensorShape{static_cast<int>(in.shape.volume()), 1, 1, false};
    }

    Tensor out;
    TensorShape out_shape = shapes->out_shape.at(id);
    switch (w.kind) {
      case OpKind::kConv2d:
        out = conv2d(id, w, in, params_for(params, id), out_shape);
        break;
      case OpKind::kFc:
        out = fully_connected(id, w, in, params_for(params, id));
        break;
      case OpKind::kBn:
        out = batch_norm(id, in, params_for(params, id));
        break;
      case OpKind::kRelu:
        out = in;
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        break;
      case OpKind::kMaxPool:
      case OpKind::kAvgPool:
        out = pool(w, in, out_shape, w.kind == OpKind::kMaxPool);
        break;
      case OpKind::kSoftmax:
        out = softmax(in);
        break;
      case OpKind::kAdd:
      case OpKind::kConcat:
      case OpKind::kIdentity:
        out = std::move(in);
        break;
    }

    for (double v : out.data) {
      if (!std::isfinite(v)) fail(id, "non-finite intermediate value");
    }
    values.emplace(id, std::move(out));
    last = id;
  }

  std::vector<int> snks = graph.sinks();
  int sink = snks.size() == 1 ? snks[0] : last;
  Tensor result = values.at(sink);
  if (result.volume() != graph.output_classes) {
    fail(sink, "output volume " + std::to_string(result.volume()) +
                   " does not equal output_classes " + std::to_string(graph.output_classes));
  }
  return result;
}

Tensor random_input(const ComputationGraph& graph, uint64_t seed) {
  Tensor t(TensorShape{graph.input_shape[0], graph.input_shape[1], graph.input_shape[2], true});
  Rng rng(seed);
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

EquivalenceReport equivalence_check(const ComputationGraph& a, const ParamSet& pa,
                                    const ComputationGraph& b, const ParamSet& pb, int trials,
                                    uint64_t seed, double tol) {
  if (a.input_shape != b.input_shape || a.output_classes != b.output_classes) {
    throw ForwardError("equivalence_check: graphs disagree on input shape or class count");
  }
  EquivalenceReport report;
  report.trials = trials;
  for (int t = 0; t < trials; ++t) {
    Tensor input = random_input(a, derive_seed(seed, "equiv-input", static_cast<uint64_t>(t)));
    Tensor ya = forward(a, pa, input);
    Tensor yb = forward(b, pb, input);
    if (ya.data.size() != yb.data.size()) {
      throw ForwardError("equivalence_check: output sizes differ");
    }
    for (size_t i = 0; i < ya.data.size(); ++i) {
      double va = ya.data[i], vb = yb.data[i];
      if (va == vb) continue;
      double rel = std::abs(va - vb) / std::max(std::abs(va), std::abs(vb));
      report.max_rel_err = std::max(report.max_rel_err, rel);
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace obfrev
