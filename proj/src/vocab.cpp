#include "obfrev/vocab.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "obfrev/rng.hpp"

namespace obfrev {

namespace {
constexpr const char* kReservedNames[] = {"<start>", "<end>", "<pad>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const char* name : kReservedNames) {
    index_.emplace(name, static_cast<int>(tokens_.size()));
    tokens_.emplace_back(name);
    counts_.push_back(0);
  }
}

Vocabulary Vocabulary::build(const std::vector<LayerSequence>& corpus) {
  if (corpus.empty()) throw std::runtime_error("vocabulary: empty corpus");
  Vocabulary v;
  for (const LayerSequence& seq : corpus) {
    for (const std::string& tok : seq.tokens(/*with_sentinels=*/false)) {
      v.add_occurrence(tok);
    }
  }
  return v;
}

int Vocabulary::lookup(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::add_occurrence(std::string_view token) {
  auto [it, inserted] = index_.try_emplace(std::string(token), static_cast<int>(tokens_.size()));
  if (inserted) {
    tokens_.emplace_back(token);
    counts_.push_back(0);
  }
  ++counts_[static_cast<size_t>(it->second)];
}

std::vector<int> Vocabulary::encode(const LayerSequence& seq, bool with_sentinels) const {
  std::vector<int> ids;
  ids.reserve(seq.token_count(with_sentinels));
  if (with_sentinels) ids.push_back(kStart);
  for (const LayerWord& w : seq.words) {
    for (const std::string& tok : w.tokens()) ids.push_back(lookup(tok));
  }
  if (with_sentinels) ids.push_back(kEnd);
  return ids;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (size_t i = 0; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += ' ';
    out += std::to_string(i);
    out += ' ';
    out += std::to_string(counts_[i]);
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << serialize();
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
  Vocabulary v;
  v.tokens_.clear();
  v.counts_.clear();
  v.index_.clear();

  size_t pos = 0;
  size_t line_no = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = nl == std::string_view::npos ? text.substr(pos) : text.substr(pos, nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    if (line.empty()) continue;

    size_t s1 = line.find(' ');
    size_t s2 = line.rfind(' ');
    if (s1 == std::string_view::npos || s2 == s1) {
      throw std::runtime_error("vocabulary: malformed line " + std::to_string(line_no));
    }
    std::string token(line.substr(0, s1));
    int idx = 0;
    int64_t cnt = 0;
    auto mid = line.substr(s1 + 1, s2 - s1 - 1);
    auto tail = line.substr(s2 + 1);
    if (std::from_chars(mid.data(), mid.data() + mid.size(), idx).ec != std::errc() ||
        std::from_chars(tail.data(), tail.data() + tail.size(), cnt).ec != std::errc()) {
      throw std::runtime_error("vocabulary: malformed line " + std::to_string(line_no));
    }
    if (idx != static_cast<int>(v.tokens_.size())) {
      throw std::runtime_error("vocabulary: non-contiguous index at line " + std::to_string(line_no));
    }
    v.index_.emplace(token, idx);
    v.tokens_.push_back(std::move(token));
    v.counts_.push_back(cnt);
    ++line_no;
  }
  for (int i = 0; i < kNumReserved; ++i) {
    if (v.size() <= i || v.tokens_[static_cast<size_t>(i)] != kReservedNames[i]) {
      throw std::runtime_error("vocabulary: reserved tokens missing or misplaced");
    }
  }
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

uint64_t Vocabulary::hash() const { return fnv1a64(serialize()); }

}  // namespace obfrev
