#include "gnv3/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "gnv3/common.hpp"

namespace gnv3 {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

IniFile IniFile::parse(const std::string& text) {
  IniFile f;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      GNV3_CHECK(line.back() == ']', ErrorCode::bad_format,
                 "config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      GNV3_CHECK(!section.empty(), ErrorCode::bad_format,
                 "config line " + std::to_string(lineno) + ": empty section name");
      f.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    GNV3_CHECK(eq != std::string::npos, ErrorCode::bad_format,
               "config line " + std::to_string(lineno) + ": expected key = value");
    GNV3_CHECK(!section.empty(), ErrorCode::bad_format,
               "config line " + std::to_string(lineno) +
                   ": key outside of any [section]");
    const std::string key = trim(line.substr(0, eq));
    GNV3_CHECK(!key.empty(), ErrorCode::bad_format,
               "config line " + std::to_string(lineno) + ": empty key");
    f.sections_[section][key] = trim(line.substr(eq + 1));
  }
  return f;
}

IniFile IniFile::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  GNV3_CHECK_IO(in.good(), "cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

bool IniFile::has(const std::string& sec, const std::string& key) const {
  const auto s = sections_.find(sec);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::string IniFile::get(const std::string& sec, const std::string& key,
                         const std::string& def) const {
  const auto s = sections_.find(sec);
  if (s == sections_.end()) return def;
  const auto k = s->second.find(key);
  return k == s->second.end() ? def : k->second;
}

std::string IniFile::require(const std::string& sec, const std::string& key) const {
  GNV3_CHECK(has(sec, key), ErrorCode::bad_format,
             "config is missing [" + sec + "] " + key);
  return get(sec, key, "");
}

double IniFile::get_double(const std::string& sec, const std::string& key,
                           double def) const {
  if (!has(sec, key)) return def;
  const std::string v = get(sec, key, "");
  size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  GNV3_CHECK(pos == v.size() && pos > 0, ErrorCode::bad_format,
             "config [" + sec + "] " + key + ": '" + v + "' is not a number");
  return out;
}

int64_t IniFile::get_int(const std::string& sec, const std::string& key,
                         int64_t def) const {
  if (!has(sec, key)) return def;
  const std::string v = get(sec, key, "");
  size_t pos = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  GNV3_CHECK(pos == v.size() && pos > 0, ErrorCode::bad_format,
             "config [" + sec + "] " + key + ": '" + v + "' is not an integer");
  return out;
}

bool IniFile::get_bool(const std::string& sec, const std::string& key,
                       bool def) const {
  if (!has(sec, key)) return def;
  std::string v = get(sec, key, "");
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail(ErrorCode::bad_format,
       "config [" + sec + "] " + key + ": '" + v + "' is not a boolean");
}

void IniFile::set(const std::string& sec, const std::string& key,
                  const std::string& v) {
  sections_[sec][key] = v;
}

std::string IniFile::serialize() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [sec, kv] : sections_) {
    if (!first) out << "\n";
    first = false;
    out << "[" << sec << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  }
  return out.str();
}

}  // namespace gnv3
