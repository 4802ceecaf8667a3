#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "promptkd/corpus.hpp"

namespace promptkd {

// Whitespace tokenizer vocabulary. Base region (specials + corpus tokens) is
// frozen after construction; virtual tokens ([V]_i, [A]_x, [C]_x) are
// appended to the extension region.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kMask = 3;
  static constexpr int kUnk = 4;
  static constexpr int kNumSpecials = 5;

  Vocabulary();

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int frozen_base_size() const { return frozen_base_size_; }
  const std::string& token(int id) const { return id_to_token_.at(static_cast<size_t>(id)); }

  // -1 when absent
  int find(const std::string& surface) const;
  bool contains(const std::string& surface) const { return find(surface) >= 0; }

  // Appends a virtual token to the extension region; the caller must grow
  // the encoder embedding tables to match. Throws on duplicates.
  int add_token(const std::string& surface);

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend Vocabulary build_vocabulary(const Corpus& corpus, int min_count);

 private:
  void append(const std::string& surface);
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  int frozen_base_size_ = 0;
};

Vocabulary build_vocabulary(const Corpus& corpus, int min_count);

std::string lowercase(const std::string& text);
std::vector<std::string> whitespace_tokens(const std::string& text);

// Lowercase, split on whitespace, map unknown words to [UNK].
std::vector<int> tokenize(const Vocabulary& vocab, const std::string& text);
std::string detokenize(const Vocabulary& vocab, const std::vector<int>& ids);

}  // namespace promptkd
