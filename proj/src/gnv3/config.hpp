#pragma once

#include <map>
#include <string>

namespace gnv3 {

// Minimal INI-style config: [section] headers, key = value lines, '#' or ';'
// comments. Later duplicates of a key overwrite earlier ones.
class IniFile {
 public:
  static IniFile parse(const std::string& text);
  static IniFile parse_file(const std::string& path);

  bool has(const std::string& sec, const std::string& key) const;
  std::string get(const std::string& sec, const std::string& key,
                  const std::string& def) const;
  // Required lookup: throws bad_format naming the missing key.
  std::string require(const std::string& sec, const std::string& key) const;

  double get_double(const std::string& sec, const std::string& key, double def) const;
  int64_t get_int(const std::string& sec, const std::string& key, int64_t def) const;
  bool get_bool(const std::string& sec, const std::string& key, bool def) const;

  void set(const std::string& sec, const std::string& key, const std::string& v);
  // Deterministic (sorted) round-trippable text form.
  std::string serialize() const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace gnv3
