#include "obfrev/ler.hpp"

namespace obfrev {

int edit_distance(std::span<const LayerWord> a, std::span<const LayerWord> b) {
  return edit_distance_items(a, b);
}

double ler(const LayerSequence& predicted, const LayerSequence& truth) {
  if (truth.empty()) throw std::invalid_argument("ler: empty ground-truth sequence");
  return static_cast<double>(edit_distance(predicted, truth)) /
         static_cast<double>(truth.size());
}

}  // namespace obfrev
