#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "promptkd/corpus.hpp"
#include "promptkd/vocab.hpp"

using namespace promptkd;

namespace {

Corpus tiny_corpus(const std::string& arg1, const std::string& arg2,
                   const std::string& conn) {
  const SenseHierarchy h =
      SenseHierarchy::load(std::string(PROMPTKD_TEST_DATA_DIR) + "/sense_hierarchy.tsv");
  Instance inst;
  inst.id = "t0";
  inst.arg1 = arg1;
  inst.arg2 = arg2;
  inst.connective = conn;
  inst.senses.push_back(h.resolve("Comparison.Contrast"));
  inst.split = Split::kTrain;
  Corpus c;
  c.instances.push_back(inst);
  return c;
}

}  // namespace

TEST_CASE("special tokens occupy fixed ids") {
  Vocabulary v;
  CHECK(v.size() == 5);
  CHECK(v.token(Vocabulary::kPad) == "[PAD]");
  CHECK(v.token(Vocabulary::kCls) == "[CLS]");
  CHECK(v.token(Vocabulary::kSep) == "[SEP]");
  CHECK(v.token(Vocabulary::kMask) == "[MASK]");
  CHECK(v.token(Vocabulary::kUnk) == "[UNK]");
}

TEST_CASE("build_vocabulary applies the count threshold") {
  const Corpus c = tiny_corpus("a a", "a b", "b c");
  // counts: a=3, b=2, c=1
  Vocabulary v = build_vocabulary(c, 2);
  CHECK(v.size() == 7);  // specials + {a, b}
  CHECK(v.frozen_base_size() == 7);
  CHECK(v.find("a") == 5);  // highest count first
  CHECK(v.find("b") == 6);
  CHECK(v.find("c") == -1);
  CHECK(tokenize(v, "c")[0] == Vocabulary::kUnk);

  SUBCASE("threshold above every count leaves only specials") {
    Vocabulary specials_only = build_vocabulary(c, 100);
    CHECK(specials_only.size() == 5);
  }
  SUBCASE("same corpus twice gives identical maps") {
    Vocabulary again = build_vocabulary(c, 2);
    for (int i = 0; i < v.size(); ++i) CHECK(v.token(i) == again.token(i));
  }
  SUBCASE("lowercasing merges case variants") {
    Vocabulary lc = build_vocabulary(tiny_corpus("The THE", "the x", "y z"), 3);
    CHECK(lc.find("the") >= 0);
    CHECK(lc.find("The") == -1);
  }
}

TEST_CASE("add_token appends dense ids to the extension region") {
  Vocabulary v = build_vocabulary(tiny_corpus("a", "b", "c"), 1);
  const int base = v.frozen_base_size();
  CHECK(v.add_token("[A]_1") == base);
  CHECK(v.add_token("[V]_1") == base + 1);
  CHECK_THROWS_WITH_AS(v.add_token("[A]_1"), doctest::Contains("duplicate"),
                       std::runtime_error);
  // 21 answers + 6 [V] + k connectives => base + 27 + k
  Vocabulary w = build_vocabulary(tiny_corpus("a", "b", "c"), 1);
  const int wbase = w.frozen_base_size();
  for (int i = 1; i <= 21; ++i) w.add_token("[A]_" + std::to_string(i));
  for (int i = 1; i <= 6; ++i) w.add_token("[V]_" + std::to_string(i));
  const int k = 5;
  for (int i = 0; i < k; ++i) w.add_token("[C]_conn" + std::to_string(i));
  CHECK(w.size() == wbase + 27 + k);
}

TEST_CASE("tokenize lowercases, splits and maps unknowns") {
  Vocabulary v = build_vocabulary(tiny_corpus("the cat", "sat down", "so"), 1);
  const std::vector<int> ids = tokenize(v, "The cat");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == v.find("the"));
  CHECK(ids[1] == v.find("cat"));
  CHECK(tokenize(v, "").empty());
  CHECK(tokenize(v, "zzz")[0] == Vocabulary::kUnk);
  // raw text can never produce a special id
  for (int id : tokenize(v, "[MASK] [PAD] [CLS]"))
    CHECK(id == Vocabulary::kUnk);
}

TEST_CASE("detokenize inverts tokenize for in-vocabulary text") {
  const SenseHierarchy h =
      SenseHierarchy::load(std::string(PROMPTKD_TEST_DATA_DIR) + "/sense_hierarchy.tsv");
  SyntheticSpec spec;
  spec.seed = 21;
  spec.n_train = 50;
  spec.n_dev = 5;
  spec.n_test = 5;
  const Corpus corpus = generate_synthetic(spec, h);
  Vocabulary v = build_vocabulary(corpus, 1);
  for (const Instance& inst : corpus.instances) {
    CHECK(detokenize(v, tokenize(v, inst.arg1)) == lowercase(inst.arg1));
    CHECK(detokenize(v, tokenize(v, inst.connective)) == lowercase(inst.connective));
  }
}

TEST_CASE("vocabulary serialization round trips") {
  Vocabulary v = build_vocabulary(tiny_corpus("alpha beta", "gamma", "on the contrary"), 1);
  v.add_token("[V]_1");
  v.add_token("[C]_on the contrary");  // multi-word surface stays one line
  const std::string path =
      (std::filesystem::temp_directory_path() / "pkd_vocab.txt").string();
  v.save(path);
  const Vocabulary loaded = Vocabulary::load(path);
  REQUIRE(loaded.size() == v.size());
  CHECK(loaded.frozen_base_size() == v.frozen_base_size());
  for (int i = 0; i < v.size(); ++i) CHECK(loaded.token(i) == v.token(i));
  CHECK(loaded.find("[C]_on the contrary") == v.find("[C]_on the contrary"));
}
