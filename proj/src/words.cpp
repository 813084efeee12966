#include "obfrev/words.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

namespace obfrev {

namespace {

constexpr std::array<const char*, kNumOpKinds> kKindNames = {
    "conv2d", "fc", "relu", "bn", "maxpool", "avgpool", "add", "concat", "softmax", "identity"};

constexpr std::string_view kUnkToken = "<unk>";

std::string render_dim(int v) {
  if (v == LayerWord::kUnknownDim) return std::string(kUnkToken);
  return std::to_string(v);
}

int parse_dim(std::string_view tok, size_t word_index) {
  if (tok == kUnkToken) return LayerWord::kUnknownDim;
  int value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(word_index, "non-integer token '" + std::string(tok) + "'");
  }
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

const char* op_kind_name(OpKind k) { return kKindNames[static_cast<size_t>(k)]; }

std::optional<OpKind> op_kind_from_name(std::string_view name) {
  for (size_t i = 0; i < kKindNames.size(); ++i) {
    if (name == kKindNames[i]) return static_cast<OpKind>(i);
  }
  return std::nullopt;
}

bool kind_has_spatial_params(OpKind k) {
  return k == OpKind::kConv2d || k == OpKind::kMaxPool || k == OpKind::kAvgPool;
}

bool kind_is_merge(OpKind k) { return k == OpKind::kAdd || k == OpKind::kConcat; }

void LayerWord::canonicalize() {
  if (!kind_has_spatial_params(kind)) {
    kernel = 0;
    stride = 0;
    padding = 0;
  }
}

std::string LayerWord::render() const {
  std::string out = op_kind_name(kind);
  for (int v : {in_ch, out_ch, kernel, stride, padding}) {
    out += ' ';
    out += render_dim(v);
  }
  return out;
}

std::vector<std::string> LayerWord::tokens() const {
  std::vector<std::string> toks;
  toks.reserve(kTokensPerWord);
  toks.emplace_back(op_kind_name(kind));
  for (int v : {in_ch, out_ch, kernel, stride, padding}) toks.push_back(render_dim(v));
  return toks;
}

LayerWord conv_word(int in_ch, int out_ch, int kernel, int stride, int padding) {
  return LayerWord{OpKind::kConv2d, in_ch, out_ch, kernel, stride, padding};
}
LayerWord fc_word(int in_ch, int out_ch) { return LayerWord{OpKind::kFc, in_ch, out_ch, 0, 0, 0}; }
LayerWord relu_word(int ch) { return LayerWord{OpKind::kRelu, ch, ch, 0, 0, 0}; }
LayerWord bn_word(int ch) { return LayerWord{OpKind::kBn, ch, ch, 0, 0, 0}; }
LayerWord maxpool_word(int ch, int kernel, int stride, int padding) {
  return LayerWord{OpKind::kMaxPool, ch, ch, kernel, stride, padding};
}
LayerWord avgpool_word(int ch, int kernel, int stride, int padding) {
  return LayerWord{OpKind::kAvgPool, ch, ch, kernel, stride, padding};
}
LayerWord add_word(int ch) { return LayerWord{OpKind::kAdd, ch, ch, 0, 0, 0}; }
LayerWord concat_word(int ch) { return LayerWord{OpKind::kConcat, ch, ch, 0, 0, 0}; }
LayerWord softmax_word(int ch) { return LayerWord{OpKind::kSoftmax, ch, ch, 0, 0, 0}; }
LayerWord identity_word(int ch) { return LayerWord{OpKind::kIdentity, ch, ch, 0, 0, 0}; }

std::string LayerSequence::render() const {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ", ";
    out += words[i].render();
  }
  return out;
}

std::vector<std::string> LayerSequence::tokens(bool with_sentinels) const {
  std::vector<std::string> toks;
  toks.reserve(token_count(with_sentinels));
  if (with_sentinels) toks.emplace_back("<start>");
  for (const LayerWord& w : words) {
    for (auto& t : w.tokens()) toks.push_back(std::move(t));
  }
  if (with_sentinels) toks.emplace_back("<end>");
  return toks;
}

LayerSequence parse_sequence(std::string_view text) {
  LayerSequence seq;
  if (trim(text).empty()) return seq;

  size_t word_index = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t comma = text.find(',', pos);
    std::string_view piece =
        comma == std::string_view::npos ? text.substr(pos) : text.substr(pos, comma - pos);
    piece = trim(piece);
    if (piece.empty()) throw ParseError(word_index, "empty word");

    std::vector<std::string_view> toks;
    size_t tp = 0;
    while (tp < piece.size()) {
      size_t sp = piece.find(' ', tp);
      std::string_view tok = sp == std::string_view::npos ? piece.substr(tp) : piece.substr(tp, sp - tp);
      if (!tok.empty()) toks.push_back(tok);
      if (sp == std::string_view::npos) break;
      tp = sp + 1;
    }
    if (toks.size() != kTokensPerWord) {
      throw ParseError(word_index,
                       "expected " + std::to_string(kTokensPerWord) + " tokens, got " + std::to_string(toks.size()));
    }
    auto kind = op_kind_from_name(toks[0]);
    if (!kind) throw ParseError(word_index, "unknown operator '" + std::string(toks[0]) + "'");

    LayerWord w;
    w.kind = *kind;
    w.in_ch = parse_dim(toks[1], word_index);
    w.out_ch = parse_dim(toks[2], word_index);
    w.kernel = parse_dim(toks[3], word_index);
    w.stride = parse_dim(toks[4], word_index);
    w.padding = parse_dim(toks[5], word_index);
    w.canonicalize();
    seq.words.push_back(w);

    if (comma == std::string_view::npos) break;
    pos = comma + 1;
    ++word_index;
  }
  return seq;
}

void save_sequences(const std::vector<LayerSequence>& seqs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const LayerSequence& s : seqs) out << s.render() << '\n';
}

std::vector<LayerSequence> load_sequences(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<LayerSequence> seqs;
  std::string line;
  while (std::getline(in, line)) seqs.push_back(parse_sequence(line));
  return seqs;
}

}  // namespace obfrev
