#include "obfrev/nmt.hpp"

#include <cstdio>

#include "doctest.h"
#include "obfrev/generator.hpp"
#include "obfrev/rng.hpp"

using namespace obfrev;

namespace {

// Short random layer sequences drawn from a narrow generator config.
std::vector<LayerSequence> tiny_corpus(int n, uint64_t seed) {
  GeneratorConfig cfg;
  cfg.conv_count_min = 1;
  cfg.conv_count_max = 3;
  cfg.fc_count_min = 1;
  cfg.fc_count_max = 1;
  cfg.conv_channel_choices = {8, 16, 32};
  cfg.fc_dim_choices = {16, 32};
  cfg.input_shape = {3, 8, 8};
  std::vector<LayerSequence> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(encode_sequence(
        generate_random_dnn(cfg, derive_seed(seed, "nmt-corpus", static_cast<uint64_t>(i)))));
  }
  return out;
}

NmtConfig tiny_config() {
  NmtConfig cfg;
  cfg.embedding_dim = 16;
  cfg.hidden = 32;
  cfg.epochs = 30;
  cfg.seed = 5;
  cfg.stop_at_token_acc = 0.995;
  return cfg;
}

}  // namespace

TEST_CASE("analytic gradients match central differences per component") {
  auto reports = nmt_gradient_check(12, 60, 3);
  REQUIRE(reports.size() == 7);
  for (const auto& r : reports) {
    INFO(r.component);
    CHECK(r.max_rel_err <= 1e-4);
  }
}

TEST_CASE("a tiny copy task trains to high accuracy and exact translation") {
  std::vector<LayerSequence> corpus = tiny_corpus(60, 1);
  std::vector<std::pair<LayerSequence, LayerSequence>> pairs;
  for (const LayerSequence& s : corpus) pairs.emplace_back(s, s);
  Vocabulary vocab = Vocabulary::build(corpus);

  Seq2SeqModel model = train_nmt(pairs, vocab, tiny_config());
  CHECK(model.log().back().token_acc >= 0.99);

  // Memorization check on members of the training set.
  int exact = 0;
  for (int i = 0; i < 10; ++i) {
    Translation tr = model.translate(pairs[static_cast<size_t>(i)].first);
    exact += tr.well_formed && tr.sequence == pairs[static_cast<size_t>(i)].second;
  }
  CHECK(exact >= 8);

  SUBCASE("translation is deterministic") {
    Translation a = model.translate(pairs[0].first);
    Translation b = model.translate(pairs[0].first);
    CHECK(a.tokens == b.tokens);
    CHECK(a.sequence == b.sequence);
  }

  SUBCASE("checkpoints reproduce translations bit-identically") {
    std::string path = "nmt_ckpt_test.bin";
    model.save(path);
    Seq2SeqModel back = Seq2SeqModel::load(path);
    for (int i = 0; i < 5; ++i) {
      CHECK(back.translate(pairs[static_cast<size_t>(i)].first).tokens ==
            model.translate(pairs[static_cast<size_t>(i)].first).tokens);
    }
    CHECK(back.vocabulary().hash() == vocab.hash());

    // A different vocabulary must be refused.
    Vocabulary other = Vocabulary::build({parse_sequence("relu 4 4 0 0 0")});
    CHECK_THROWS_AS(Seq2SeqModel::load(path, other), NmtError);

    // Truncation may not produce a partial model.
    FILE* f = fopen(path.c_str(), "rb");
    REQUIRE(f);
    fseek(f, 0, SEEK_END);
    long size = ftell(f);
    fseek(f, 0, SEEK_SET);
    std::vector<char> bytes(static_cast<size_t>(size));
    REQUIRE(fread(bytes.data(), 1, bytes.size(), f) == bytes.size());
    fclose(f);
    FILE* out = fopen(path.c_str(), "wb");
    fwrite(bytes.data(), 1, bytes.size() / 3, out);
    fclose(out);
    CHECK_THROWS(Seq2SeqModel::load(path));
    remove(path.c_str());
  }
}

TEST_CASE("teacher-forced loss decreases monotonically on one repeated batch") {
  std::vector<LayerSequence> corpus = tiny_corpus(4, 9);
  std::vector<std::pair<LayerSequence, LayerSequence>> pairs;
  for (const LayerSequence& s : corpus) pairs.emplace_back(s, s);
  Vocabulary vocab = Vocabulary::build(corpus);

  NmtConfig cfg = tiny_config();
  cfg.batch = 4;  // one batch per epoch: each epoch is one optimizer step
  cfg.epochs = 50;
  cfg.lr = 0.3;
  cfg.stop_at_token_acc = -1.0;
  Seq2SeqModel model = train_nmt(pairs, vocab, cfg);
  const auto& log = model.log();
  REQUIRE(log.size() == 50);
  for (size_t i = 1; i < log.size(); ++i) {
    CHECK(log[i].loss < log[i - 1].loss + 1e-12);
  }
}

TEST_CASE("training rejects bad inputs") {
  Vocabulary vocab = Vocabulary::build({parse_sequence("relu 4 4 0 0 0")});
  CHECK_THROWS_AS(train_nmt({}, vocab, tiny_config()), NmtError);

  // A pair over the token cap is rejected up front.
  LayerSequence longseq;
  for (int i = 0; i < 90; ++i) longseq.words.push_back(relu_word(4));
  NmtConfig cfg = tiny_config();
  CHECK_THROWS_AS(train_nmt({{longseq, longseq}}, vocab, cfg), NmtError);

  Seq2SeqModel untrained;
  CHECK_THROWS_AS(untrained.translate(parse_sequence("relu 4 4 0 0 0")), NmtError);
}

TEST_CASE("decoding terminates within the cap and flags malformed output") {
  // One epoch on junk: the decoder will not have learned <end> placement.
  std::vector<LayerSequence> corpus = tiny_corpus(8, 13);
  std::vector<std::pair<LayerSequence, LayerSequence>> pairs;
  for (size_t i = 0; i + 1 < corpus.size(); i += 2) {
    pairs.emplace_back(corpus[i], corpus[i + 1]);
  }
  Vocabulary vocab = Vocabulary::build(corpus);
  NmtConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.stop_at_token_acc = -1.0;
  Seq2SeqModel model = train_nmt(pairs, vocab, cfg);

  Translation tr = model.translate(corpus[0]);
  CHECK(tr.tokens.size() <= kMaxSequenceTokens);

  // Word arity always holds for the words that were assembled.
  for (const LayerWord& w : tr.sequence.words) {
    CHECK(w.tokens().size() == kTokensPerWord);
  }
}
