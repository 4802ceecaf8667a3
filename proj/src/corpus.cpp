#include "promptkd/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "promptkd/mat.hpp"
#include "promptkd/rng.hpp"

namespace promptkd {

using ordered_json = nlohmann::ordered_json;

const std::array<std::string, 4> kTopRelationNames = {"Comparison", "Contingency",
                                                      "Expansion", "Temporal"};

int top_relation_index(const std::string& name) {
  for (int i = 0; i < kNumTopRelations; ++i)
    if (kTopRelationNames[i] == name) return i;
  throw std::runtime_error("unknown top-level relation: " + name);
}

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  throw std::runtime_error("bad split");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw std::runtime_error("unknown split: " + name);
}

SenseHierarchy SenseHierarchy::load(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open sense hierarchy file: " + path);
  std::vector<Row> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Row row;
    bool ok = static_cast<bool>(std::getline(ss, row.top, '\t')) &&
              static_cast<bool>(std::getline(ss, row.second, '\t')) &&
              static_cast<bool>(std::getline(ss, row.third));
    check(ok && !row.top.empty() && !row.second.empty() && !row.third.empty(),
          "malformed hierarchy row at line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  return from_rows(std::move(rows));
}

SenseHierarchy SenseHierarchy::from_rows(std::vector<Row> rows) {
  SenseHierarchy h;
  h.rows_ = std::move(rows);
  std::unordered_map<std::string, std::string> second_to_top;
  for (size_t i = 0; i < h.rows_.size(); ++i) {
    const Row& r = h.rows_[i];
    top_relation_index(r.top);  // validates the name
    check(!h.by_third_.count(r.third), "duplicate third-level sense: " + r.third);
    h.by_third_[r.third] = static_cast<int>(i);
    auto [it, inserted] = second_to_top.emplace(r.second, r.top);
    check(inserted || it->second == r.top,
          "second-level sense under two top levels: " + r.second);
  }
  return h;
}

int SenseHierarchy::num_top() const {
  std::set<std::string> tops;
  for (const Row& r : rows_) tops.insert(r.top);
  return static_cast<int>(tops.size());
}

int SenseHierarchy::num_second() const {
  std::set<std::string> seconds;
  for (const Row& r : rows_) seconds.insert(r.second);
  return static_cast<int>(seconds.size());
}

bool SenseHierarchy::contains_third(const std::string& third_path) const {
  return by_third_.count(third_path) > 0;
}

int SenseHierarchy::third_index(const std::string& third_path) const {
  auto it = by_third_.find(third_path);
  return it == by_third_.end() ? -1 : it->second;
}

SenseLabel SenseHierarchy::resolve(const std::string& sense_path) const {
  auto it = by_third_.find(sense_path);
  check(it != by_third_.end(), "unknown sense label: " + sense_path);
  const Row& r = rows_[static_cast<size_t>(it->second)];
  return SenseLabel{r.top, r.second, r.third};
}

std::vector<const Instance*> Corpus::split_view(Split s) const {
  std::vector<const Instance*> out;
  for (const Instance& inst : instances)
    if (inst.split == s) out.push_back(&inst);
  return out;
}

namespace {

int count_tokens(const std::string& text) {
  std::istringstream ss(text);
  std::string tok;
  int n = 0;
  while (ss >> tok) ++n;
  return n;
}

void validate_instance(const Instance& inst, const std::string& where) {
  check(!inst.senses.empty(), where + ": instance has no sense labels");
  check(count_tokens(inst.arg1) > 0, where + ": arg1 empty after tokenization");
  check(count_tokens(inst.arg2) > 0, where + ": arg2 empty after tokenization");
}

}  // namespace

Corpus load_corpus(const std::string& path, const SenseHierarchy& hierarchy) {
  std::ifstream in(path);
  check(in.good(), "cannot open corpus file: " + path);
  Corpus corpus;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    ordered_json rec;
    try {
      rec = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": malformed record: " + e.what());
    }
    Instance inst;
    try {
      inst.id = rec.at("id").get<std::string>();
      inst.arg1 = rec.at("arg1").get<std::string>();
      inst.arg2 = rec.at("arg2").get<std::string>();
      inst.connective = rec.at("conn").get<std::string>();
      for (const auto& s : rec.at("senses"))
        inst.senses.push_back(hierarchy.resolve(s.get<std::string>()));
      inst.split = split_from_name(rec.at("split").get<std::string>());
    } catch (const ordered_json::exception& e) {
      throw std::runtime_error(where + ": malformed record: " + e.what());
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    check(seen_ids.insert(inst.id).second, where + ": duplicate id: " + inst.id);
    validate_instance(inst, where);
    corpus.instances.push_back(std::move(inst));
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "cannot write corpus file: " + path);
  for (const Instance& inst : corpus.instances) {
    ordered_json rec;
    rec["id"] = inst.id;
    rec["arg1"] = inst.arg1;
    rec["arg2"] = inst.arg2;
    rec["conn"] = inst.connective;
    ordered_json senses = ordered_json::array();
    for (const SenseLabel& s : inst.senses) senses.push_back(s.third);
    rec["senses"] = senses;
    rec["split"] = split_name(inst.split);
    out << rec.dump() << "\n";
  }
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats stats;
  for (const Instance& inst : corpus.instances) {
    const int s = static_cast<int>(inst.split);
    const int t = top_relation_index(inst.first_sense().top);
    ++stats.counts[s][t];
    ++stats.totals[s];
  }
  return stats;
}

std::string stats_to_csv(const CorpusStats& stats) {
  // Column order follows the usual corpus statistics table.
  std::ostringstream out;
  out << "split,expansion,comparison,contingency,temporal,total\n";
  const std::array<std::string, 3> names = {"train", "dev", "test"};
  for (int s = 0; s < kNumSplits; ++s) {
    out << names[s] << "," << stats.counts[s][static_cast<int>(TopRelation::kExpansion)]
        << "," << stats.counts[s][static_cast<int>(TopRelation::kComparison)] << ","
        << stats.counts[s][static_cast<int>(TopRelation::kContingency)] << ","
        << stats.counts[s][static_cast<int>(TopRelation::kTemporal)] << ","
        << stats.totals[s] << "\n";
  }
  return out.str();
}

namespace {

// Argument evidence: each argument carries one marker word drawn from the
// sense's marker vocabulary with probability kMarkerRate, otherwise from a
// random sense's vocabulary. Several words per sense keep individual words
// rare, so relations are learnable from arguments alone but noisy, while
// connectives remain the stronger signal.
constexpr double kMarkerRate = 0.6;
constexpr int kMarkerWordsPerSense = 4;

std::string marker_token(int third_index, int variant) {
  return "m" + std::to_string(third_index) + "v" + std::to_string(variant);
}

}  // namespace

std::vector<std::string> synthetic_connective_pool(int third_index, int per_sense) {
  std::vector<std::string> pool;
  for (int j = 0; j < per_sense; ++j) {
    const std::string stem = "c" + std::to_string(third_index) + "x" + std::to_string(j);
    if (j % 3 == 1) {
      pool.push_back(stem + "a " + stem + "b");
    } else if (j % 3 == 2) {
      pool.push_back(stem + "a " + stem + "b " + stem + "c");
    } else {
      pool.push_back(stem);
    }
  }
  return pool;
}

Corpus generate_synthetic(const SyntheticSpec& spec, const SenseHierarchy& hierarchy) {
  check(spec.connectives_per_third_sense >= 1, "connectives_per_third_sense must be >= 1");
  check(spec.noise_rate >= 0.0 && spec.noise_rate <= 1.0, "noise_rate must be in [0,1]");
  check(spec.arg_len_min >= 1 && spec.arg_len_max >= spec.arg_len_min,
        "bad arg_len_range");
  check(spec.content_vocab_size >= 1, "content_vocab_size must be >= 1");

  const int n_senses = hierarchy.num_third();
  std::vector<std::vector<std::string>> pools(static_cast<size_t>(n_senses));
  for (int s = 0; s < n_senses; ++s)
    pools[s] = synthetic_connective_pool(s, spec.connectives_per_third_sense);

  Rng rng(spec.seed);
  Corpus corpus;

  auto draw_marker = [&](int sense) {
    int src = sense;
    if (!rng.bernoulli(kMarkerRate))
      src = static_cast<int>(rng.below(static_cast<uint64_t>(n_senses)));
    return marker_token(src, static_cast<int>(rng.below(kMarkerWordsPerSense)));
  };

  auto make_arg = [&](int sense) {
    const int len = rng.range_int(spec.arg_len_min, spec.arg_len_max);
    std::vector<std::string> toks(static_cast<size_t>(len));
    for (auto& t : toks)
      t = "w" + std::to_string(rng.below(static_cast<uint64_t>(spec.content_vocab_size)));
    toks[rng.below(static_cast<uint64_t>(len))] = draw_marker(sense);
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
      if (i) out += ' ';
      out += toks[i];
    }
    return out;
  };

  auto emit_split = [&](Split split, int n) {
    for (int i = 0; i < n; ++i) {
      const int sense = static_cast<int>(rng.below(static_cast<uint64_t>(n_senses)));
      int conn_sense = sense;
      if (rng.bernoulli(spec.noise_rate)) {
        conn_sense = static_cast<int>(rng.below(static_cast<uint64_t>(n_senses - 1)));
        if (conn_sense >= sense) ++conn_sense;
      }
      const auto& pool = pools[static_cast<size_t>(conn_sense)];
      Instance inst;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%05d", i);
      inst.id = split_name(split) + "-" + buf;
      // Arguments express the relation the connective signals, so noisy
      // instances stay internally coherent; only their sense label disagrees.
      inst.arg1 = make_arg(conn_sense);
      inst.arg2 = make_arg(conn_sense);
      inst.connective = pool[rng.below(pool.size())];
      const auto& row = hierarchy.rows()[static_cast<size_t>(sense)];
      inst.senses.push_back(SenseLabel{row.top, row.second, row.third});
      inst.split = split;
      corpus.instances.push_back(std::move(inst));
    }
  };

  emit_split(Split::kTrain, spec.n_train);
  emit_split(Split::kDev, spec.n_dev);
  emit_split(Split::kTest, spec.n_test);
  return corpus;
}

}  // namespace promptkd
