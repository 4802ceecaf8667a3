#pragma once

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "promptkd/corpus.hpp"
#include "promptkd/encoder.hpp"
#include "promptkd/vocab.hpp"

namespace promptkd {

enum class TemplateKind {
  kContinuousStudent,
  kContinuousTeacher,
  kDiscreteStudent,
  kInjectionStudent,
};

struct TemplateSpec {
  TemplateKind kind = TemplateKind::kContinuousStudent;
  int m = 6;  // number of [V] tokens, half before and half after the slot
  int arg1_max = 50;
  int total_len = 100;

  bool continuous() const { return kind != TemplateKind::kDiscreteStudent; }
  void validate() const {
    check(m >= 0 && m % 2 == 0, "template m must be even");
    check(arg1_max >= 1 && total_len >= m + 4, "template lengths too small");
  }
};

struct PromptInstance {
  std::vector<int> ids;         // length total_len, padded with [PAD]
  std::vector<uint8_t> attn_mask;
  int slot_pos = -1;            // position of [MASK] or [C]_x
  std::string instance_id;
};

struct MappingRow {
  std::string third;
  std::string answer_name;
  std::string top;
};

class MappingTable {
 public:
  static MappingTable load(const std::string& path);
  static MappingTable from_rows(std::vector<MappingRow> rows);

  const std::vector<MappingRow>& rows() const { return rows_; }
  // Distinct answer names in first-appearance order.
  std::vector<std::string> answer_names() const;
  // Throws unless the table partitions exactly the hierarchy's third-level
  // senses and each answer maps to one top-level relation.
  void validate_against(const SenseHierarchy& hierarchy) const;

 private:
  std::vector<MappingRow> rows_;
};

enum class AnswerGranularity { kTop4, kSecond20, kPaper21, kThird31, kSubstantive };
std::string granularity_name(AnswerGranularity g);
AnswerGranularity granularity_from_name(const std::string& name);

struct AnswerGroup {
  int token_id = -1;
  std::string name;                // token surface, e.g. "[A]_2"
  std::vector<std::string> thirds; // covered third-level sense paths
  TopRelation top = TopRelation::kComparison;
};

struct AnswerSpace {
  AnswerGranularity granularity = AnswerGranularity::kPaper21;
  std::vector<AnswerGroup> answers;

  int n() const { return static_cast<int>(answers.size()); }
  std::vector<int> token_ids() const;
  // -1 when the sense is not covered.
  int answer_index_of_third(const std::string& third_path) const;
};

struct ConnectiveInventory {
  struct Entry {
    std::string surface;  // normalized connective
    int token_id = -1;    // [C]_x token
    int sub_tokens = 0;   // t_x
  };
  std::vector<Entry> entries;
  std::map<std::string, int> by_surface;

  bool has(const std::string& normalized) const { return by_surface.count(normalized) > 0; }
  const Entry& entry(const std::string& normalized) const;
};

// Lowercases and collapses internal whitespace; connective identity key.
std::string normalize_connective(const std::string& raw);

PromptInstance build_student_prompt(const Instance& instance, const TemplateSpec& spec,
                                    const Vocabulary& vocab);
PromptInstance build_teacher_prompt(const Instance& instance, const TemplateSpec& spec,
                                    const Vocabulary& vocab,
                                    const ConnectiveInventory& inventory);

// Creates the answer space for a granularity, adding virtual answer tokens
// to the vocabulary (except for the substantive space, which reuses frozen
// base tokens chosen from training connectives and therefore needs the
// corpus).
AnswerSpace build_answer_space(const SenseHierarchy& hierarchy, const MappingTable& mapping,
                               AnswerGranularity granularity, Vocabulary& vocab,
                               const Corpus* corpus = nullptr);

int gold_answer(const Instance& instance, const AnswerSpace& space);

struct RelationScores {
  std::array<double, kNumTopRelations> scores{};
  TopRelation predicted = TopRelation::kComparison;
};
RelationScores aggregate_relation_scores(const std::vector<double>& answer_probs,
                                         const AnswerSpace& space);

// Adds the [V]_1..[V]_m template tokens and grows the embedding table.
template <typename T>
std::vector<int> add_virtual_template_tokens(Vocabulary& vocab, int m,
                                             EncoderParams<T>& params, uint64_t seed) {
  std::vector<int> ids;
  for (int i = 1; i <= m; ++i) ids.push_back(vocab.add_token("[V]_" + std::to_string(i)));
  Rng rng(mix_seed(seed, 0x7f01));
  params.grow_vocab(vocab.size(), rng);
  return ids;
}

// Creates one integrated-connective token per distinct connective surface in
// the corpus (training split first) and initializes its embedding to the
// arithmetic mean of its sub-token embeddings.
template <typename T>
ConnectiveInventory register_integrated_connectives(const Corpus& corpus, Vocabulary& vocab,
                                                    EncoderParams<T>& params) {
  ConnectiveInventory inv;
  std::vector<std::vector<int>> sub_ids_per_entry;
  for (Split split : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const Instance* inst : corpus.split_view(split)) {
      const std::string surface = normalize_connective(inst->connective);
      check(!surface.empty(), "empty connective on instance " + inst->id);
      if (inv.has(surface)) continue;
      std::vector<int> sub_ids = tokenize(vocab, surface);
      ConnectiveInventory::Entry entry;
      entry.surface = surface;
      entry.token_id = vocab.add_token("[C]_" + surface);
      entry.sub_tokens = static_cast<int>(sub_ids.size());
      inv.by_surface[surface] = static_cast<int>(inv.entries.size());
      inv.entries.push_back(entry);
      sub_ids_per_entry.push_back(std::move(sub_ids));
    }
  }
  Rng rng(mix_seed(0x1c, static_cast<uint64_t>(vocab.size())));
  params.grow_vocab(vocab.size(), rng);
  for (size_t e = 0; e < inv.entries.size(); ++e) {
    const auto& sub_ids = sub_ids_per_entry[e];
    std::vector<T> mean(static_cast<size_t>(params.config.d_model), T(0));
    for (int id : sub_ids) {
      const std::vector<T> row = get_token_embedding(params, id);
      for (size_t c = 0; c < mean.size(); ++c) mean[c] += row[c];
    }
    for (auto& v : mean) v /= static_cast<T>(sub_ids.size());
    set_token_embedding(params, inv.entries[e].token_id, mean);
  }
  return inv;
}

// Initializes each virtual answer embedding to the mean of the
// integrated-connective embeddings over the training instances of its
// third-level sense group. Empty groups keep their Gaussian initialization
// and log a warning.
template <typename T>
void init_virtual_answers(const AnswerSpace& space, const Corpus& corpus,
                          const ConnectiveInventory& inventory, EncoderParams<T>& params) {
  check(space.granularity != AnswerGranularity::kSubstantive,
        "substantive answers reuse existing token embeddings");
  const int d = params.config.d_model;
  std::vector<std::vector<T>> sums(static_cast<size_t>(space.n()),
                                   std::vector<T>(static_cast<size_t>(d), T(0)));
  std::vector<int> counts(static_cast<size_t>(space.n()), 0);
  for (const Instance* inst : corpus.split_view(Split::kTrain)) {
    const int a = space.answer_index_of_third(inst->first_sense().third);
    if (a < 0) continue;
    const auto& entry = inventory.entry(normalize_connective(inst->connective));
    const std::vector<T> row = get_token_embedding(params, entry.token_id);
    for (int c = 0; c < d; ++c) sums[static_cast<size_t>(a)][static_cast<size_t>(c)] += row[static_cast<size_t>(c)];
    ++counts[static_cast<size_t>(a)];
  }
  for (int a = 0; a < space.n(); ++a) {
    if (counts[static_cast<size_t>(a)] == 0) {
      std::cerr << "warning: answer group " << space.answers[static_cast<size_t>(a)].name
                << " has no training instances; keeping random initialization\n";
      continue;
    }
    std::vector<T>& sum = sums[static_cast<size_t>(a)];
    for (auto& v : sum) v /= static_cast<T>(counts[static_cast<size_t>(a)]);
    set_token_embedding(params, space.answers[static_cast<size_t>(a)].token_id, sum);
  }
}

}  // namespace promptkd
