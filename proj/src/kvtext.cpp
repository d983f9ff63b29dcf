#include "f4f/kvtext.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

namespace f4f {

namespace {
std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}
}  // namespace

std::optional<std::string> KvSection::get(const std::string& key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& KvSection::require(const std::string& key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  throw std::invalid_argument("missing key '" + key + "' in section [" + name + "]");
}

KvSection* KvText::find(const std::string& name) {
  for (auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const KvSection* KvText::find(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const KvSection& KvText::require_section(const std::string& name) const {
  const KvSection* s = find(name);
  if (s == nullptr) throw std::invalid_argument("missing section [" + name + "]");
  return *s;
}

KvSection& KvText::section(const std::string& name) {
  if (KvSection* s = find(name)) return *s;
  sections.push_back(KvSection{name, {}});
  return sections.back();
}

void KvText::set(const std::string& section_name, const std::string& key,
                 const std::string& value) {
  KvSection& s = section(section_name);
  for (auto& [k, v] : s.entries) {
    if (k == key) {
      v = value;
      return;
    }
  }
  s.entries.emplace_back(key, value);
}

std::string KvText::serialize() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& s : sections) {
    if (!s.name.empty()) {
      if (!first) os << "\n";
      os << "[" << s.name << "]\n";
    }
    for (const auto& [k, v] : s.entries) os << k << " = " << v << "\n";
    first = false;
  }
  return os.str();
}

KvText KvText::parse(const std::string& text) {
  KvText out;
  out.sections.push_back(KvSection{"", {}});
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::invalid_argument("line " + std::to_string(lineno) + ": malformed section header");
      }
      out.sections.push_back(KvSection{trim(line.substr(1, line.size() - 2)), {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    out.sections.back().entries.emplace_back(trim(line.substr(0, eq)),
                                             trim(line.substr(eq + 1)));
  }
  if (out.sections.front().name.empty() && out.sections.front().entries.empty()) {
    out.sections.erase(out.sections.begin());
  }
  return out;
}

long kv_long(const KvSection& s, const std::string& key) {
  const std::string& v = s.require(key);
  long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("key '" + key + "': not an integer: " + v);
  }
  return out;
}

double kv_double(const KvSection& s, const std::string& key) {
  const std::string& v = s.require(key);
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("key '" + key + "': not a number: " + v);
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace f4f
