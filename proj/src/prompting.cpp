#include "promptkd/prompting.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace promptkd {

MappingTable MappingTable::load(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open mapping table: " + path);
  std::vector<MappingRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    MappingRow row;
    bool ok = static_cast<bool>(std::getline(ss, row.third, '\t')) &&
              static_cast<bool>(std::getline(ss, row.answer_name, '\t')) &&
              static_cast<bool>(std::getline(ss, row.top));
    check(ok && !row.third.empty() && !row.answer_name.empty() && !row.top.empty(),
          "malformed mapping row at line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  return from_rows(std::move(rows));
}

MappingTable MappingTable::from_rows(std::vector<MappingRow> rows) {
  MappingTable t;
  t.rows_ = std::move(rows);
  return t;
}

std::vector<std::string> MappingTable::answer_names() const {
  std::vector<std::string> names;
  for (const MappingRow& r : rows_)
    if (std::find(names.begin(), names.end(), r.answer_name) == names.end())
      names.push_back(r.answer_name);
  return names;
}

void MappingTable::validate_against(const SenseHierarchy& hierarchy) const {
  std::set<std::string> seen;
  std::map<std::string, std::string> answer_top;
  for (const MappingRow& r : rows_) {
    check(hierarchy.contains_third(r.third), "mapping table: unknown sense " + r.third);
    check(seen.insert(r.third).second, "mapping table: duplicate sense " + r.third);
    check(hierarchy.resolve(r.third).top == r.top,
          "mapping table: top level disagrees with hierarchy for " + r.third);
    auto [it, inserted] = answer_top.emplace(r.answer_name, r.top);
    check(inserted || it->second == r.top,
          "mapping table: answer " + r.answer_name + " maps to two top levels");
  }
  check(static_cast<int>(seen.size()) == hierarchy.num_third(),
        "mapping table does not cover every third-level sense");
}

std::string granularity_name(AnswerGranularity g) {
  switch (g) {
    case AnswerGranularity::kTop4: return "top4";
    case AnswerGranularity::kSecond20: return "second20";
    case AnswerGranularity::kPaper21: return "paper21";
    case AnswerGranularity::kThird31: return "third31";
    case AnswerGranularity::kSubstantive: return "substantive";
  }
  throw std::runtime_error("bad granularity");
}

AnswerGranularity granularity_from_name(const std::string& name) {
  for (AnswerGranularity g :
       {AnswerGranularity::kTop4, AnswerGranularity::kSecond20, AnswerGranularity::kPaper21,
        AnswerGranularity::kThird31, AnswerGranularity::kSubstantive})
    if (granularity_name(g) == name) return g;
  throw std::runtime_error("unknown answer granularity: " + name);
}

std::vector<int> AnswerSpace::token_ids() const {
  std::vector<int> ids;
  for (const AnswerGroup& g : answers) ids.push_back(g.token_id);
  return ids;
}

int AnswerSpace::answer_index_of_third(const std::string& third_path) const {
  for (size_t i = 0; i < answers.size(); ++i) {
    const auto& thirds = answers[i].thirds;
    if (std::find(thirds.begin(), thirds.end(), third_path) != thirds.end())
      return static_cast<int>(i);
  }
  return -1;
}

const ConnectiveInventory::Entry& ConnectiveInventory::entry(
    const std::string& normalized) const {
  auto it = by_surface.find(normalized);
  check(it != by_surface.end(), "unregistered connective: " + normalized);
  return entries[static_cast<size_t>(it->second)];
}

std::string normalize_connective(const std::string& raw) {
  std::string out;
  for (const std::string& tok : whitespace_tokens(lowercase(raw))) {
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

namespace {

PromptInstance build_prompt(const Instance& instance, const TemplateSpec& spec,
                            const Vocabulary& vocab, int slot_token) {
  spec.validate();
  const int m = spec.continuous() ? spec.m : 0;
  std::vector<int> a1 = tokenize(vocab, instance.arg1);
  if (static_cast<int>(a1.size()) > spec.arg1_max) a1.resize(static_cast<size_t>(spec.arg1_max));
  check(!a1.empty(), "instance " + instance.id + ": arg1 empty after tokenization");
  const int budget2 = spec.total_len - 3 - m - static_cast<int>(a1.size());
  std::vector<int> a2 = tokenize(vocab, instance.arg2);
  if (static_cast<int>(a2.size()) > budget2)
    a2.resize(static_cast<size_t>(std::max(budget2, 0)));
  check(!a2.empty(), "instance " + instance.id + ": arg2 empty after truncation");

  std::vector<int> v_ids;
  for (int i = 1; i <= m; ++i) {
    int id = vocab.find("[V]_" + std::to_string(i));
    check(id >= 0, "template token [V]_" + std::to_string(i) + " not in vocabulary");
    v_ids.push_back(id);
  }

  PromptInstance out;
  out.instance_id = instance.id;
  out.ids.reserve(static_cast<size_t>(spec.total_len));
  out.ids.push_back(Vocabulary::kCls);
  out.ids.insert(out.ids.end(), a1.begin(), a1.end());
  for (int i = 0; i < m / 2; ++i) out.ids.push_back(v_ids[static_cast<size_t>(i)]);
  out.slot_pos = static_cast<int>(out.ids.size());
  out.ids.push_back(slot_token);
  for (int i = m / 2; i < m; ++i) out.ids.push_back(v_ids[static_cast<size_t>(i)]);
  out.ids.insert(out.ids.end(), a2.begin(), a2.end());
  out.ids.push_back(Vocabulary::kSep);
  out.attn_mask.assign(out.ids.size(), 1);
  out.ids.resize(static_cast<size_t>(spec.total_len), Vocabulary::kPad);
  out.attn_mask.resize(static_cast<size_t>(spec.total_len), 0);
  return out;
}

}  // namespace

PromptInstance build_student_prompt(const Instance& instance, const TemplateSpec& spec,
                                    const Vocabulary& vocab) {
  check(spec.kind == TemplateKind::kContinuousStudent ||
            spec.kind == TemplateKind::kDiscreteStudent,
        "build_student_prompt expects a student template kind");
  return build_prompt(instance, spec, vocab, Vocabulary::kMask);
}

PromptInstance build_teacher_prompt(const Instance& instance, const TemplateSpec& spec,
                                    const Vocabulary& vocab,
                                    const ConnectiveInventory& inventory) {
  const auto& entry = inventory.entry(normalize_connective(instance.connective));
  return build_prompt(instance, spec, vocab, entry.token_id);
}

namespace {

AnswerSpace space_from_groups(AnswerGranularity granularity,
                              std::vector<std::pair<std::string, std::vector<std::string>>> groups,
                              const SenseHierarchy& hierarchy, Vocabulary& vocab) {
  AnswerSpace space;
  space.granularity = granularity;
  for (auto& [name, thirds] : groups) {
    AnswerGroup g;
    g.name = name;
    g.token_id = vocab.add_token(name);
    g.top = static_cast<TopRelation>(
        top_relation_index(hierarchy.resolve(thirds.front()).top));
    g.thirds = std::move(thirds);
    space.answers.push_back(std::move(g));
  }
  return space;
}

AnswerSpace build_substantive_space(const SenseHierarchy& hierarchy,
                                    const MappingTable& mapping, Vocabulary& vocab,
                                    const Corpus& corpus) {
  // Mirror the paper21 grouping but answer with an existing (frozen-base)
  // token: the most frequent single training connective word of each group.
  AnswerSpace space;
  space.granularity = AnswerGranularity::kSubstantive;
  std::vector<std::string> names = mapping.answer_names();
  std::set<int> taken;
  for (const std::string& name : names) {
    AnswerGroup g;
    g.name = name;
    for (const MappingRow& r : mapping.rows())
      if (r.answer_name == name) g.thirds.push_back(r.third);
    g.top = static_cast<TopRelation>(
        top_relation_index(hierarchy.resolve(g.thirds.front()).top));

    std::map<std::string, int> word_counts;
    for (const Instance* inst : corpus.split_view(Split::kTrain)) {
      if (std::find(g.thirds.begin(), g.thirds.end(), inst->first_sense().third) ==
          g.thirds.end())
        continue;
      for (const std::string& w : whitespace_tokens(normalize_connective(inst->connective)))
        ++word_counts[w];
    }
    std::vector<std::pair<std::string, int>> ranked(word_counts.begin(), word_counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    g.token_id = -1;
    for (const auto& [word, n] : ranked) {
      const int id = vocab.find(word);
      if (id < Vocabulary::kNumSpecials || id >= vocab.frozen_base_size()) continue;
      if (taken.count(id)) continue;
      g.token_id = id;
      taken.insert(id);
      break;
    }
    check(g.token_id >= 0,
          "no usable substantive answer token for group " + name);
    space.answers.push_back(std::move(g));
  }
  return space;
}

}  // namespace

AnswerSpace build_answer_space(const SenseHierarchy& hierarchy, const MappingTable& mapping,
                               AnswerGranularity granularity, Vocabulary& vocab,
                               const Corpus* corpus) {
  mapping.validate_against(hierarchy);
  using Groups = std::vector<std::pair<std::string, std::vector<std::string>>>;
  switch (granularity) {
    case AnswerGranularity::kPaper21: {
      Groups groups;
      for (const std::string& name : mapping.answer_names()) {
        std::vector<std::string> thirds;
        for (const MappingRow& r : mapping.rows())
          if (r.answer_name == name) thirds.push_back(r.third);
        groups.emplace_back(name, std::move(thirds));
      }
      return space_from_groups(granularity, std::move(groups), hierarchy, vocab);
    }
    case AnswerGranularity::kTop4: {
      Groups groups;
      for (const std::string& top : kTopRelationNames) {
        std::vector<std::string> thirds;
        for (const auto& row : hierarchy.rows())
          if (row.top == top) thirds.push_back(row.third);
        groups.emplace_back("[A]_" + std::to_string(groups.size() + 1), std::move(thirds));
      }
      return space_from_groups(granularity, std::move(groups), hierarchy, vocab);
    }
    case AnswerGranularity::kSecond20: {
      Groups groups;
      std::vector<std::string> seconds;
      for (const auto& row : hierarchy.rows())
        if (std::find(seconds.begin(), seconds.end(), row.second) == seconds.end())
          seconds.push_back(row.second);
      for (const std::string& second : seconds) {
        std::vector<std::string> thirds;
        for (const auto& row : hierarchy.rows())
          if (row.second == second) thirds.push_back(row.third);
        groups.emplace_back("[A]_" + std::to_string(groups.size() + 1), std::move(thirds));
      }
      return space_from_groups(granularity, std::move(groups), hierarchy, vocab);
    }
    case AnswerGranularity::kThird31: {
      Groups groups;
      for (const auto& row : hierarchy.rows())
        groups.emplace_back("[A]_" + std::to_string(groups.size() + 1),
                            std::vector<std::string>{row.third});
      return space_from_groups(granularity, std::move(groups), hierarchy, vocab);
    }
    case AnswerGranularity::kSubstantive: {
      check(corpus != nullptr, "substantive answer space needs a corpus");
      return build_substantive_space(hierarchy, mapping, vocab, *corpus);
    }
  }
  throw std::runtime_error("bad granularity");
}

int gold_answer(const Instance& instance, const AnswerSpace& space) {
  const int idx = space.answer_index_of_third(instance.first_sense().third);
  check(idx >= 0, "sense " + instance.first_sense().third + " not covered by answer space");
  return idx;
}

RelationScores aggregate_relation_scores(const std::vector<double>& answer_probs,
                                         const AnswerSpace& space) {
  check(static_cast<int>(answer_probs.size()) == space.n(),
        "answer probability vector has wrong length");
  double sum = 0.0;
  for (double p : answer_probs) {
    check(p >= 0.0, "answer probabilities must be nonnegative");
    sum += p;
  }
  check(std::abs(sum - 1.0) <= 1e-5, "answer probabilities must sum to 1");
  RelationScores out;
  for (size_t i = 0; i < answer_probs.size(); ++i)
    out.scores[static_cast<size_t>(space.answers[i].top)] += answer_probs[i];
  int best = 0;
  for (int r = 1; r < kNumTopRelations; ++r)
    if (out.scores[static_cast<size_t>(r)] > out.scores[static_cast<size_t>(best)]) best = r;
  out.predicted = static_cast<TopRelation>(best);
  return out;
}

}  // namespace promptkd
