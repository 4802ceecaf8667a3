#include "promptkd/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "promptkd/mat.hpp"

namespace promptkd {

namespace {
const std::array<std::string, Vocabulary::kNumSpecials> kSpecialSurfaces = {
    "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};
}

Vocabulary::Vocabulary() {
  for (const std::string& s : kSpecialSurfaces) append(s);
  frozen_base_size_ = kNumSpecials;
}

void Vocabulary::append(const std::string& surface) {
  token_to_id_.emplace(surface, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(surface);
}

int Vocabulary::find(const std::string& surface) const {
  auto it = token_to_id_.find(surface);
  return it == token_to_id_.end() ? -1 : it->second;
}

int Vocabulary::add_token(const std::string& surface) {
  check(!surface.empty(), "cannot add empty token");
  check(find(surface) < 0, "duplicate token: " + surface);
  append(surface);
  return size() - 1;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  check(out.good(), "cannot write vocabulary file: " + path);
  out << frozen_base_size_ << "\n";
  for (const std::string& tok : id_to_token_) out << tok << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open vocabulary file: " + path);
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "empty vocabulary file: " + path);
  Vocabulary vocab;
  vocab.token_to_id_.clear();
  vocab.id_to_token_.clear();
  vocab.frozen_base_size_ = std::stoi(line);
  while (std::getline(in, line)) vocab.append(line);
  check(vocab.size() >= kNumSpecials && vocab.frozen_base_size_ >= kNumSpecials,
        "corrupt vocabulary file: " + path);
  for (int i = 0; i < kNumSpecials; ++i)
    check(vocab.token(i) == kSpecialSurfaces[static_cast<size_t>(i)],
          "corrupt vocabulary file (specials): " + path);
  return vocab;
}

std::string lowercase(const std::string& text) {
  std::string out = text;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::istringstream ss(text);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

Vocabulary build_vocabulary(const Corpus& corpus, int min_count) {
  check(!corpus.instances.empty(), "cannot build vocabulary from an empty corpus");
  std::map<std::string, int> counts;  // ordered for deterministic tie breaking
  auto count_text = [&](const std::string& text) {
    for (const std::string& tok : whitespace_tokens(lowercase(text))) ++counts[tok];
  };
  for (const Instance& inst : corpus.instances) {
    count_text(inst.arg1);
    count_text(inst.arg2);
    count_text(inst.connective);
  }
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [tok, n] : kept) vocab.append(tok);
  vocab.frozen_base_size_ = vocab.size();
  return vocab;
}

std::vector<int> tokenize(const Vocabulary& vocab, const std::string& text) {
  std::vector<int> ids;
  for (const std::string& tok : whitespace_tokens(lowercase(text))) {
    int id = vocab.find(tok);
    ids.push_back(id >= 0 ? id : Vocabulary::kUnk);
  }
  return ids;
}

std::string detokenize(const Vocabulary& vocab, const std::vector<int>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

}  // namespace promptkd
