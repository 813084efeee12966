#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "obfrev/words.hpp"

namespace obfrev {

/// Token-index map over layer-sequence tokens. Indices 0..3 are reserved for
/// <start>, <end>, <pad>, <unk> and are stable across save/load; everything
/// else is assigned in first-occurrence order.
class Vocabulary {
 public:
  static constexpr int kStart = 0;
  static constexpr int kEnd = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  Vocabulary();

  /// Every token occurring in the corpus gets an index and a count; the
  /// reserved tokens are present with count 0. Throws on an empty corpus.
  static Vocabulary build(const std::vector<LayerSequence>& corpus);

  /// Index for a token; unknown tokens map to kUnk.
  int lookup(std::string_view token) const;

  const std::string& token(int index) const { return tokens_.at(static_cast<size_t>(index)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  int64_t count(int index) const { return counts_.at(static_cast<size_t>(index)); }

  void add_occurrence(std::string_view token);

  /// Sequence as token indices, optionally framed by <start>/<end>.
  std::vector<int> encode(const LayerSequence& seq, bool with_sentinels) const;

  /// One line per token: "<token> <index> <count>".
  std::string serialize() const;
  void save(const std::string& path) const;
  static Vocabulary deserialize(std::string_view text);
  static Vocabulary load(const std::string& path);

  /// FNV-1a over the serialized form; embedded in model checkpoints.
  uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::vector<int64_t> counts_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace obfrev
