#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace obfrev {

/// Shortest round-trip decimal form; keeps CSV artifacts bit-reproducible.
std::string fmt_double(double v);
double parse_double(std::string_view s);

std::vector<std::string_view> split_line(std::string_view line, char sep);
std::vector<std::string_view> split_lines(std::string_view text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

/// Flat "key = value" config files; '#' starts a comment. Keys may be dotted
/// (section.key). Later assignments win.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace obfrev
