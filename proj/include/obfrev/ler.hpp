#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "obfrev/words.hpp"

namespace obfrev {

/// Levenshtein distance (insertions, deletions, substitutions) over whole
/// words: a word with one wrong dimension token counts as one substitution.
int edit_distance(std::span<const LayerWord> a, std::span<const LayerWord> b);
inline int edit_distance(const LayerSequence& a, const LayerSequence& b) {
  return edit_distance(std::span(a.words), std::span(b.words));
}

/// Generic variant for any equality-comparable item type.
template <typename T>
int edit_distance_items(std::span<const T> a, std::span<const T> b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      int del = prev[j] + 1;
      int ins = cur[j - 1] + 1;
      cur[j] = sub < del ? (sub < ins ? sub : ins) : (del < ins ? del : ins);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// Layer error rate: edit distance between the prediction and the ground
/// truth, normalized by the ground-truth length. May exceed 1. Throws on an
/// empty ground truth.
double ler(const LayerSequence& predicted, const LayerSequence& truth);

}  // namespace obfrev
