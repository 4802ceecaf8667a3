#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace promptkd {

// Top-level relation order used for score aggregation, confusion matrices
// and tie breaking.
enum class TopRelation { kComparison = 0, kContingency = 1, kExpansion = 2, kTemporal = 3 };
inline constexpr int kNumTopRelations = 4;
extern const std::array<std::string, 4> kTopRelationNames;
int top_relation_index(const std::string& name);

enum class Split { kTrain = 0, kDev = 1, kTest = 2 };
inline constexpr int kNumSplits = 3;
std::string split_name(Split s);
Split split_from_name(const std::string& name);

// A sense annotation; `second` and `third` are full dotted paths
// (second-level relations without children repeat as their own third level).
struct SenseLabel {
  std::string top;
  std::string second;
  std::string third;
  bool operator==(const SenseLabel&) const = default;
};

class SenseHierarchy {
 public:
  struct Row {
    std::string top;
    std::string second;
    std::string third;
  };

  static SenseHierarchy load(const std::string& path);
  static SenseHierarchy from_rows(std::vector<Row> rows);

  const std::vector<Row>& rows() const { return rows_; }
  int num_top() const;
  int num_second() const;
  int num_third() const { return static_cast<int>(rows_.size()); }

  bool contains_third(const std::string& third_path) const;
  // Resolve a dotted sense path to a full label; throws on unknown senses.
  SenseLabel resolve(const std::string& sense_path) const;
  // Index of a third-level path in row order; -1 when absent.
  int third_index(const std::string& third_path) const;

 private:
  std::vector<Row> rows_;
  std::unordered_map<std::string, int> by_third_;
};

struct Instance {
  std::string id;
  std::string arg1;
  std::string arg2;
  std::string connective;
  std::vector<SenseLabel> senses;
  Split split = Split::kTrain;
  bool operator==(const Instance&) const = default;

  const SenseLabel& first_sense() const { return senses.front(); }
};

struct Corpus {
  std::vector<Instance> instances;

  std::vector<const Instance*> split_view(Split s) const;
  bool operator==(const Corpus&) const = default;
};

struct CorpusStats {
  // counts[split][top_relation], first sense of each instance
  std::array<std::array<int, kNumTopRelations>, kNumSplits> counts{};
  std::array<int, kNumSplits> totals{};
};

struct SyntheticSpec {
  uint64_t seed = 7;
  int n_train = 2000;
  int n_dev = 500;
  int n_test = 500;
  int content_vocab_size = 120;
  int connectives_per_third_sense = 2;
  double noise_rate = 0.25;
  int arg_len_min = 4;
  int arg_len_max = 12;
};

Corpus load_corpus(const std::string& path, const SenseHierarchy& hierarchy);
void save_corpus(const Corpus& corpus, const std::string& path);
CorpusStats corpus_stats(const Corpus& corpus);
// Table-2-shaped CSV (rows per split, columns Expansion/Comparison/
// Contingency/Temporal/Total).
std::string stats_to_csv(const CorpusStats& stats);

Corpus generate_synthetic(const SyntheticSpec& spec, const SenseHierarchy& hierarchy);
// Connective pool of one third-level sense (row index into the hierarchy),
// as used by the synthetic generator.
std::vector<std::string> synthetic_connective_pool(int third_index, int per_sense);

}  // namespace promptkd
