#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "promptkd/corpus.hpp"

using namespace promptkd;

namespace {

const std::string kDataDir = PROMPTKD_TEST_DATA_DIR;

SenseHierarchy hierarchy() {
  return SenseHierarchy::load(kDataDir + "/sense_hierarchy.tsv");
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Instance make_instance(const std::string& id, const std::string& third, Split split,
                       const SenseHierarchy& h) {
  Instance inst;
  inst.id = id;
  inst.arg1 = "alpha beta";
  inst.arg2 = "gamma delta";
  inst.connective = "so";
  inst.senses.push_back(h.resolve(third));
  inst.split = split;
  return inst;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("bundled hierarchy has the PDTB 3.0 shape") {
  const SenseHierarchy h = hierarchy();
  CHECK(h.num_top() == 4);
  CHECK(h.num_second() == 20);
  CHECK(h.num_third() == 31);
  // every third belongs to one second, every second to one top
  std::set<std::string> thirds;
  for (const auto& row : h.rows()) {
    CHECK(thirds.insert(row.third).second);
    CHECK(row.third.rfind(row.top + ".", 0) == 0);
    CHECK(row.second.rfind(row.top + ".", 0) == 0);
  }
}

TEST_CASE("sense resolution") {
  const SenseHierarchy h = hierarchy();
  const SenseLabel contrast = h.resolve("Comparison.Contrast");
  CHECK(contrast.top == "Comparison");
  CHECK(contrast.second == "Comparison.Contrast");
  CHECK(contrast.third == "Comparison.Contrast");
  const SenseLabel reason = h.resolve("Contingency.Cause.Reason");
  CHECK(reason.second == "Contingency.Cause");
  CHECK_THROWS_WITH_AS(h.resolve("Temporal.Foo.Bar"),
                       doctest::Contains("unknown sense label"), std::runtime_error);
  // ambiguous second-level path is not a valid sense
  CHECK_THROWS(h.resolve("Comparison.Concession"));
}

TEST_CASE("load_corpus parses a small file") {
  const SenseHierarchy h = hierarchy();
  const std::string path = temp_path("pkd_corpus_small.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id":"a","arg1":"it rained","arg2":"we stayed in","conn":"because","senses":["Contingency.Cause.Reason"],"split":"train"})"
        << "\n";
    out << R"({"id":"b","arg1":"one two","arg2":"three","conn":"but","senses":["Comparison.Contrast"],"split":"dev"})"
        << "\n";
    out << R"({"id":"c","arg1":"x","arg2":"y","conn":"then","senses":["Temporal.Asynchronous.Precedence","Comparison.Contrast"],"split":"test"})"
        << "\n";
  }
  const Corpus corpus = load_corpus(path, h);
  REQUIRE(corpus.instances.size() == 3);
  CHECK(corpus.instances[0].connective == "because");
  CHECK(corpus.instances[1].split == Split::kDev);
  CHECK(corpus.instances[2].senses.size() == 2);
  CHECK(corpus.instances[2].first_sense().top == "Temporal");
}

TEST_CASE("load_corpus error paths carry line numbers") {
  const SenseHierarchy h = hierarchy();
  const std::string path = temp_path("pkd_corpus_bad.jsonl");

  SUBCASE("unknown sense") {
    std::ofstream(path) << R"({"id":"a","arg1":"x","arg2":"y","conn":"so","senses":["Temporal.Foo.Bar"],"split":"train"})"
                        << "\n";
    CHECK_THROWS_WITH_AS(load_corpus(path, h), doctest::Contains(":1:"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(load_corpus(path, h), doctest::Contains("unknown sense"),
                         std::runtime_error);
  }
  SUBCASE("duplicate id") {
    {
      std::ofstream out(path);
      out << R"({"id":"a","arg1":"x","arg2":"y","conn":"so","senses":["Comparison.Contrast"],"split":"train"})"
          << "\n"
          << R"({"id":"a","arg1":"x","arg2":"y","conn":"so","senses":["Comparison.Contrast"],"split":"train"})"
          << "\n";
    }
    CHECK_THROWS_WITH_AS(load_corpus(path, h), doctest::Contains("duplicate id"),
                         std::runtime_error);
  }
  SUBCASE("malformed json") {
    std::ofstream(path) << "{not json\n";
    CHECK_THROWS_WITH_AS(load_corpus(path, h), doctest::Contains("malformed record"),
                         std::runtime_error);
  }
  SUBCASE("empty argument") {
    std::ofstream(path) << R"({"id":"a","arg1":"   ","arg2":"y","conn":"so","senses":["Comparison.Contrast"],"split":"train"})"
                        << "\n";
    CHECK_THROWS_WITH_AS(load_corpus(path, h), doctest::Contains("arg1 empty"),
                         std::runtime_error);
  }
  SUBCASE("no senses") {
    std::ofstream(path) << R"({"id":"a","arg1":"x","arg2":"y","conn":"so","senses":[],"split":"train"})"
                        << "\n";
    CHECK_THROWS(load_corpus(path, h));
  }
}

TEST_CASE("save/load round trip is the identity") {
  const SenseHierarchy h = hierarchy();
  SyntheticSpec spec;
  spec.seed = 3;
  spec.n_train = 40;
  spec.n_dev = 10;
  spec.n_test = 10;
  const Corpus corpus = generate_synthetic(spec, h);
  const std::string path = temp_path("pkd_corpus_rt.jsonl");
  save_corpus(corpus, path);
  const Corpus reloaded = load_corpus(path, h);
  CHECK(corpus == reloaded);
}

TEST_CASE("corpus_stats counts by first sense") {
  const SenseHierarchy h = hierarchy();
  SUBCASE("empty corpus") {
    const CorpusStats stats = corpus_stats(Corpus{});
    for (int s = 0; s < kNumSplits; ++s) {
      CHECK(stats.totals[s] == 0);
      for (int t = 0; t < kNumTopRelations; ++t) CHECK(stats.counts[s][t] == 0);
    }
  }
  SUBCASE("small mixed corpus") {
    Corpus corpus;
    corpus.instances.push_back(make_instance("1", "Expansion.Conjunction", Split::kTrain, h));
    corpus.instances.push_back(make_instance("2", "Expansion.Equivalence", Split::kTrain, h));
    corpus.instances.push_back(make_instance("3", "Temporal.Synchronous", Split::kTest, h));
    // multi-sense: first sense (Expansion) decides the count
    Instance multi = make_instance("4", "Expansion.Disjunction", Split::kTrain, h);
    multi.senses.push_back(h.resolve("Comparison.Contrast"));
    corpus.instances.push_back(multi);
    const CorpusStats stats = corpus_stats(corpus);
    CHECK(stats.counts[0][static_cast<int>(TopRelation::kExpansion)] == 3);
    CHECK(stats.counts[0][static_cast<int>(TopRelation::kComparison)] == 0);
    CHECK(stats.counts[2][static_cast<int>(TopRelation::kTemporal)] == 1);
    CHECK(stats.totals[0] == 3);
    CHECK(stats.totals[2] == 1);
  }
}

TEST_CASE("stats reproduce the PDTB 3.0 table layout on a mock export") {
  const SenseHierarchy h = hierarchy();
  struct RowSpec {
    Split split;
    std::array<int, 4> counts;  // Expansion, Comparison, Contingency, Temporal
  };
  const std::array<RowSpec, 3> table = {{{Split::kTrain, {8645, 1937, 5916, 1447}},
                                         {Split::kDev, {748, 190, 579, 136}},
                                         {Split::kTest, {643, 154, 529, 148}}}};
  const std::array<std::string, 4> third_of = {
      "Expansion.Conjunction", "Comparison.Contrast", "Contingency.Cause.Reason",
      "Temporal.Synchronous"};
  Corpus corpus;
  int next_id = 0;
  for (const RowSpec& row : table)
    for (int t = 0; t < 4; ++t)
      for (int i = 0; i < row.counts[static_cast<size_t>(t)]; ++i)
        corpus.instances.push_back(make_instance(std::to_string(next_id++),
                                                 third_of[static_cast<size_t>(t)], row.split,
                                                 h));
  const CorpusStats stats = corpus_stats(corpus);
  CHECK(stats.totals[0] == 17945);
  CHECK(stats.totals[1] == 1653);
  CHECK(stats.totals[2] == 1474);
  CHECK(stats.counts[0][static_cast<int>(TopRelation::kExpansion)] == 8645);
  CHECK(stats.counts[0][static_cast<int>(TopRelation::kTemporal)] == 1447);
  const std::string csv = stats_to_csv(stats);
  CHECK(csv.find("train,8645,1937,5916,1447,17945") != std::string::npos);
  CHECK(csv.find("test,643,154,529,148,1474") != std::string::npos);
}

TEST_CASE("synthetic generation is a pure function of the spec") {
  const SenseHierarchy h = hierarchy();
  SyntheticSpec spec;
  spec.seed = 7;
  spec.n_train = 120;
  spec.n_dev = 30;
  spec.n_test = 30;
  const Corpus a = generate_synthetic(spec, h);
  const Corpus b = generate_synthetic(spec, h);
  CHECK(a == b);

  const std::string pa = temp_path("pkd_synth_a.jsonl");
  const std::string pb = temp_path("pkd_synth_b.jsonl");
  save_corpus(a, pa);
  save_corpus(b, pb);
  CHECK(slurp(pa) == slurp(pb));

  spec.seed = 8;
  CHECK_FALSE(generate_synthetic(spec, h) == a);
}

TEST_CASE("synthetic connectives follow the noise rate") {
  const SenseHierarchy h = hierarchy();
  SyntheticSpec spec;
  spec.seed = 11;
  spec.n_train = 1000;
  spec.n_dev = 0;
  spec.n_test = 0;
  spec.connectives_per_third_sense = 2;

  auto mismatch_fraction = [&](const Corpus& corpus) {
    int mismatched = 0;
    for (const Instance& inst : corpus.instances) {
      const int sense = h.third_index(inst.first_sense().third);
      REQUIRE(sense >= 0);
      const auto pool = synthetic_connective_pool(sense, spec.connectives_per_third_sense);
      if (std::find(pool.begin(), pool.end(), inst.connective) == pool.end()) ++mismatched;
    }
    return static_cast<double>(mismatched) / static_cast<double>(corpus.instances.size());
  };

  SUBCASE("noise_rate 0 keeps every connective in its sense pool") {
    spec.noise_rate = 0.0;
    CHECK(mismatch_fraction(generate_synthetic(spec, h)) == 0.0);
  }
  SUBCASE("noise_rate 0.2 lands within the binomial window") {
    spec.noise_rate = 0.2;
    const double f = mismatch_fraction(generate_synthetic(spec, h));
    CHECK(f > 0.16);
    CHECK(f < 0.24);
  }
}

TEST_CASE("every instance resolves to exactly one top level via the hierarchy") {
  const SenseHierarchy h = hierarchy();
  SyntheticSpec spec;
  spec.seed = 5;
  spec.n_train = 200;
  spec.n_dev = 20;
  spec.n_test = 20;
  const Corpus corpus = generate_synthetic(spec, h);
  const CorpusStats stats = corpus_stats(corpus);
  CHECK(stats.totals[0] == 200);
  CHECK(stats.totals[1] == 20);
  CHECK(stats.totals[2] == 20);
  for (const Instance& inst : corpus.instances) {
    const SenseLabel resolved = h.resolve(inst.first_sense().third);
    CHECK(resolved.top == inst.first_sense().top);
  }
  CHECK(corpus.split_view(Split::kTrain).size() == 200);
  CHECK(corpus.split_view(Split::kDev).size() == 20);
}
