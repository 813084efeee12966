#include "obfrev/params.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "obfrev/rng.hpp"

namespace obfrev {

namespace {
constexpr char kMagic[] = "NUPARAMS1";
constexpr size_t kMagicLen = 9;

void fill_uniform(Rng& rng, std::vector<double>& v, size_t n, double lo, double hi) {
  v.resize(n);
  for (double& x : v) x = rng.uniform(lo, hi);
}
}  // namespace

ParamSet random_params(const ComputationGraph& graph, uint64_t seed) {
  ParamSet params;
  for (const GraphNode& n : graph.nodes) {
    const LayerWord& w = n.word;
    Rng rng(derive_seed(seed, "params", static_cast<uint64_t>(n.id)));
    NodeParams p;
    switch (w.kind) {
      case OpKind::kConv2d:
        fill_uniform(rng, p.weight,
                     static_cast<size_t>(w.out_ch) * w.in_ch * w.kernel * w.kernel, -1.0, 1.0);
        fill_uniform(rng, p.bias, static_cast<size_t>(w.out_ch), -1.0, 1.0);
        break;
      case OpKind::kFc:
        fill_uniform(rng, p.weight, static_cast<size_t>(w.out_ch) * w.in_ch, -1.0, 1.0);
        fill_uniform(rng, p.bias, static_cast<size_t>(w.out_ch), -1.0, 1.0);
        break;
      case OpKind::kBn:
        fill_uniform(rng, p.bn_scale, static_cast<size_t>(w.out_ch), -1.0, 1.0);
        fill_uniform(rng, p.bn_shift, static_cast<size_t>(w.out_ch), -1.0, 1.0);
        fill_uniform(rng, p.bn_mean, static_cast<size_t>(w.out_ch), -1.0, 1.0);
        fill_uniform(rng, p.bn_var, static_cast<size_t>(w.out_ch), 0.1, 1.1);
        break;
      default:
        continue;  // parameter-free kinds
    }
    params.by_node.emplace(n.id, std::move(p));
  }
  return params;
}

int64_t ContainerBlob::element_count() const {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

size_t ContainerBlob::element_size() const { return dtype == "f32" ? 4 : 8; }

ContainerBlob ContainerBlob::from_f64(std::string name, std::vector<int64_t> shape,
                                      const std::vector<double>& values) {
  ContainerBlob b{std::move(name), "f64", std::move(shape), {}};
  b.raw.resize(values.size() * sizeof(double));
  std::memcpy(b.raw.data(), values.data(), b.raw.size());
  return b;
}

ContainerBlob ContainerBlob::from_f32(std::string name, std::vector<int64_t> shape,
                                      const std::vector<float>& values) {
  ContainerBlob b{std::move(name), "f32", std::move(shape), {}};
  b.raw.resize(values.size() * sizeof(float));
  std::memcpy(b.raw.data(), values.data(), b.raw.size());
  return b;
}

std::vector<double> ContainerBlob::as_f64() const {
  if (dtype != "f64") throw std::runtime_error("blob " + name + " is not f64");
  std::vector<double> out(raw.size() / sizeof(double));
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

std::vector<float> ContainerBlob::as_f32() const {
  if (dtype != "f32") throw std::runtime_error("blob " + name + " is not f32");
  std::vector<float> out(raw.size() / sizeof(float));
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

const ContainerBlob* Container::find(const std::string& name) const {
  for (const ContainerBlob& b : blobs) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

void Container::save(const std::string& path) const {
  nlohmann::ordered_json head;
  head["version"] = 1;
  head["meta"] = meta_json.empty() ? nlohmann::ordered_json::object()
                                   : nlohmann::ordered_json::parse(meta_json);
  head["blobs"] = nlohmann::ordered_json::array();
  for (const ContainerBlob& b : blobs) {
    nlohmann::ordered_json jb;
    jb["name"] = b.name;
    jb["dtype"] = b.dtype;
    jb["shape"] = b.shape;
    head["blobs"].push_back(std::move(jb));
  }
  std::string header = head.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, kMagicLen);
  uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const ContainerBlob& b : blobs) {
    if (b.raw.size() != static_cast<size_t>(b.element_count()) * b.element_size()) {
      throw std::runtime_error("blob " + b.name + " shape does not match its data size");
    }
    out.write(b.raw.data(), static_cast<std::streamsize>(b.raw.size()));
  }
  if (!out) throw std::runtime_error("write failure on " + path);
}

Container Container::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);

  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw std::runtime_error(path + ": bad magic, not a NUPARAMS1 container");
  }
  uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1ull << 30)) {
    throw std::runtime_error(path + ": corrupt header length");
  }
  std::string header(len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(len))) {
    throw std::runtime_error(path + ": truncated header");
  }

  nlohmann::json head;
  try {
    head = nlohmann::json::parse(header);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": header is not valid JSON: " + e.what());
  }

  Container c;
  c.meta_json = head.value("meta", nlohmann::json::object()).dump();
  for (const auto& jb : head.at("blobs")) {
    ContainerBlob b;
    b.name = jb.at("name").get<std::string>();
    b.dtype = jb.at("dtype").get<std::string>();
    if (b.dtype != "f64" && b.dtype != "f32") {
      throw std::runtime_error(path + ": blob " + b.name + " has unknown dtype " + b.dtype);
    }
    b.shape = jb.at("shape").get<std::vector<int64_t>>();
    size_t bytes = static_cast<size_t>(b.element_count()) * b.element_size();
    b.raw.resize(bytes);
    if (!in.read(b.raw.data(), static_cast<std::streamsize>(bytes))) {
      throw std::runtime_error(path + ": truncated blob " + b.name);
    }
    c.blobs.push_back(std::move(b));
  }
  return c;
}

void save_params(const ParamSet& params, const std::string& path) {
  Container c;
  c.meta_json = "{\"kind\":\"paramset\"}";
  auto push = [&](int node, const char* field, const std::vector<double>& v) {
    if (v.empty()) return;
    c.blobs.push_back(ContainerBlob::from_f64(
        "node/" + std::to_string(node) + "/" + field, {static_cast<int64_t>(v.size())}, v));
  };
  for (const auto& [node, p] : params.by_node) {
    push(node, "weight", p.weight);
    push(node, "bias", p.bias);
    push(node, "bn_scale", p.bn_scale);
    push(node, "bn_shift", p.bn_shift);
    push(node, "bn_mean", p.bn_mean);
    push(node, "bn_var", p.bn_var);
  }
  c.save(path);
}

ParamSet load_params(const std::string& path) {
  Container c = Container::load(path);
  ParamSet params;
  for (const ContainerBlob& b : c.blobs) {
    size_t p1 = b.name.find('/');
    size_t p2 = b.name.rfind('/');
    if (p1 == std::string::npos || p2 == p1 || b.name.substr(0, p1) != "node") {
      throw std::runtime_error(path + ": unexpected blob name " + b.name);
    }
    int node = std::stoi(b.name.substr(p1 + 1, p2 - p1 - 1));
    std::string field = b.name.substr(p2 + 1);
    NodeParams& p = params.by_node[node];
    std::vector<double>* dst = nullptr;
    if (field == "weight") dst = &p.weight;
    else if (field == "bias") dst = &p.bias;
    else if (field == "bn_scale") dst = &p.bn_scale;
    else if (field == "bn_shift") dst = &p.bn_shift;
    else if (field == "bn_mean") dst = &p.bn_mean;
    else if (field == "bn_var") dst = &p.bn_var;
    else throw std::runtime_error(path + ": unexpected field " + field);
    *dst = b.as_f64();
  }
  return params;
}

}  // namespace obfrev
