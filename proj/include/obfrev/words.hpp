#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace obfrev {

enum class OpKind : uint8_t {
  kConv2d = 0,
  kFc,
  kRelu,
  kBn,
  kMaxPool,
  kAvgPool,
  kAdd,
  kConcat,
  kSoftmax,
  kIdentity,
};

inline constexpr int kNumOpKinds = 10;

/// Token budget for one rendered sequence, sentinels included.
inline constexpr size_t kMaxSequenceTokens = 500;

/// Tokens per rendered word: kind plus five integer fields.
inline constexpr size_t kTokensPerWord = 6;

const char* op_kind_name(OpKind k);
std::optional<OpKind> op_kind_from_name(std::string_view name);

/// conv2d, maxpool and avgpool carry kernel/stride/padding; everything else
/// only carries channel sizes.
bool kind_has_spatial_params(OpKind k);

/// add and concat merge several producers.
bool kind_is_merge(OpKind k);

/// One operator with its dimension parameters; the element ("word") of the
/// sequence encoding. A dimension that a recovery step could not pin is
/// stored as kUnknownDim and renders as "<unk>".
struct LayerWord {
  OpKind kind = OpKind::kIdentity;
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 0;
  int stride = 0;
  int padding = 0;

  static constexpr int kUnknownDim = -1;

  bool operator==(const LayerWord&) const = default;

  /// Zeroes the fields that carry no meaning for this kind so rendering is
  /// deterministic.
  void canonicalize();

  std::string render() const;
  std::vector<std::string> tokens() const;
};

LayerWord conv_word(int in_ch, int out_ch, int kernel, int stride, int padding);
LayerWord fc_word(int in_ch, int out_ch);
LayerWord relu_word(int ch);
LayerWord bn_word(int ch);
LayerWord maxpool_word(int ch, int kernel = 2, int stride = 2, int padding = 0);
LayerWord avgpool_word(int ch, int kernel = 2, int stride = 2, int padding = 0);
LayerWord add_word(int ch);
LayerWord concat_word(int ch);
LayerWord softmax_word(int ch);
LayerWord identity_word(int ch);

struct ParseError : std::runtime_error {
  ParseError(size_t word, const std::string& what)
      : std::runtime_error("word " + std::to_string(word) + ": " + what), word_index(word) {}
  size_t word_index;
};

/// Ordered list of layer words. <start>/<end> sentinels exist only at the
/// token level, when a sequence is prepared for translation.
struct LayerSequence {
  std::vector<LayerWord> words;

  bool operator==(const LayerSequence&) const = default;

  size_t size() const { return words.size(); }
  bool empty() const { return words.empty(); }

  /// Words joined by ", ", tokens inside a word by single spaces.
  std::string render() const;

  /// 6 tokens per word, plus the two sentinels if requested.
  size_t token_count(bool with_sentinels = true) const {
    return kTokensPerWord * words.size() + (with_sentinels ? 2 : 0);
  }

  /// Flat token stream, optionally framed by <start>/<end>.
  std::vector<std::string> tokens(bool with_sentinels = false) const;
};

/// Inverse of LayerSequence::render. Accepts arbitrary whitespace around
/// commas; canonicalizes each word. Throws ParseError with the word index.
LayerSequence parse_sequence(std::string_view text);

/// One sequence per LF-terminated line.
void save_sequences(const std::vector<LayerSequence>& seqs, const std::string& path);
std::vector<LayerSequence> load_sequences(const std::string& path);

}  // namespace obfrev
