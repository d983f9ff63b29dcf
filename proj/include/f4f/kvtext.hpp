#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace f4f {

// Structured key-value text: `key = value` lines grouped under `[section]`
// headers, `#` comments, order-preserving. Used for experiment configs and
// checkpoint headers.
struct KvSection {
  std::string name;  // "" for the implicit leading section
  std::vector<std::pair<std::string, std::string>> entries;

  std::optional<std::string> get(const std::string& key) const;
  const std::string& require(const std::string& key) const;
  bool has(const std::string& key) const { return get(key).has_value(); }
};

struct KvText {
  std::vector<KvSection> sections;

  KvSection* find(const std::string& name);
  const KvSection* find(const std::string& name) const;
  const KvSection& require_section(const std::string& name) const;
  KvSection& section(const std::string& name);  // creates when absent

  void set(const std::string& section_name, const std::string& key,
           const std::string& value);

  std::string serialize() const;
  static KvText parse(const std::string& text);
};

// Numeric parsing helpers with error messages naming the offending key.
long kv_long(const KvSection& s, const std::string& key);
double kv_double(const KvSection& s, const std::string& key);
std::string format_double(double v);  // round-trip exact (17 significant digits)

}  // namespace f4f
