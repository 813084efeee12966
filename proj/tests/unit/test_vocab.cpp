#include "obfrev/vocab.hpp"

#include <cstdio>

#include "doctest.h"

using namespace obfrev;

TEST_CASE("vocabulary counts tokens, not words") {
  // One word "relu 64 64 0 0 0": tokens {relu, 64, 0} plus the reserved four;
  // "64" occurs twice, "0" three times.
  std::vector<LayerSequence> corpus{parse_sequence("relu 64 64 0 0 0")};
  Vocabulary v = Vocabulary::build(corpus);
  CHECK(v.size() == Vocabulary::kNumReserved + 3);
  CHECK(v.count(v.lookup("64")) == 2);
  CHECK(v.count(v.lookup("0")) == 3);
  CHECK(v.count(v.lookup("relu")) == 1);
  CHECK(v.count(Vocabulary::kStart) == 0);
  CHECK(v.count(Vocabulary::kEnd) == 0);
}

TEST_CASE("duplicate sequences double counts without growing the vocabulary") {
  LayerSequence s = parse_sequence("conv2d 3 64 3 1 1");
  Vocabulary once = Vocabulary::build({s});
  Vocabulary twice = Vocabulary::build({s, s});
  CHECK(once.size() == twice.size());
  CHECK(twice.count(twice.lookup("conv2d")) == 2 * once.count(once.lookup("conv2d")));
}

TEST_CASE("tokens missing from the vocabulary map to <unk>") {
  Vocabulary v = Vocabulary::build({parse_sequence("relu 64 64 0 0 0")});
  CHECK(v.lookup("maxpool") == Vocabulary::kUnk);
  CHECK(v.lookup("127") == Vocabulary::kUnk);
  CHECK(v.lookup("relu") != Vocabulary::kUnk);
}

TEST_CASE("reserved indices are fixed") {
  Vocabulary v;
  CHECK(v.lookup("<start>") == Vocabulary::kStart);
  CHECK(v.lookup("<end>") == Vocabulary::kEnd);
  CHECK(v.lookup("<pad>") == Vocabulary::kPad);
  CHECK(v.lookup("<unk>") == Vocabulary::kUnk);
}

TEST_CASE("empty corpus is rejected") {
  CHECK_THROWS(Vocabulary::build({}));
}

TEST_CASE("save/load/save produces byte-identical files") {
  Vocabulary v = Vocabulary::build(
      {parse_sequence("conv2d 3 64 3 1 1, relu 64 64 0 0 0, fc 256 10 0 0 0")});
  std::string first = v.serialize();
  Vocabulary loaded = Vocabulary::deserialize(first);
  CHECK(loaded.serialize() == first);
  CHECK(loaded.hash() == v.hash());
  CHECK(loaded.lookup("fc") == v.lookup("fc"));
}

TEST_CASE("encode frames with sentinels and maps OOV to <unk>") {
  Vocabulary v = Vocabulary::build({parse_sequence("relu 64 64 0 0 0")});
  std::vector<int> ids = v.encode(parse_sequence("relu 32 64 0 0 0"), true);
  REQUIRE(ids.size() == 8);
  CHECK(ids.front() == Vocabulary::kStart);
  CHECK(ids.back() == Vocabulary::kEnd);
  CHECK(ids[2] == Vocabulary::kUnk);  // "32" unseen
}
