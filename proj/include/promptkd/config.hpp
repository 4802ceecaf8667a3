#pragma once

#include <map>
#include <string>
#include <vector>

namespace promptkd {

// Flat key-value configuration with dotted keys (`train.batch_size = 32`),
// `#` comments, and deterministic serialization of the resolved snapshot.
class Config {
 public:
  static Config load(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key,
                                       const std::vector<std::string>& fallback) const;

  std::string to_string() const;  // sorted keys, one per line

 private:
  std::map<std::string, std::string> values_;
};

std::vector<std::string> split_commas(const std::string& text);

}  // namespace promptkd
